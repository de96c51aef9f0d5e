#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{Point3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use simpose::io::{self, FrameLabel};
use simpose::mesh::TriangleMesh;
use simpose::{BoundingBox2D, CameraIntrinsics, DepthImage, Mask, PoseSE3, Raster, RgbImage};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simpose"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn simpose")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn camera(w: usize, h: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(1.2 * w as f64, 1.2 * w as f64, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0).unwrap()
}

pub struct Rendered {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub mask: Mask,
    pub bbox: BoundingBox2D,
}

/// Ray-cast sphere of `radius` centered at the pose translation; color encodes
/// the object-frame surface normal, background is a dim checker with no depth.
pub fn render_sphere(k: &CameraIntrinsics, w: usize, h: usize, pose: &PoseSE3, radius: f64) -> Rendered {
    let c = *pose.translation();
    let hit = |u: usize, v: usize| -> Option<Point3<f64>> {
        let d = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
        let a = d.norm_squared();
        let b = d.dot(&c);
        let disc = b * b - a * (c.norm_squared() - radius * radius);
        (disc >= 0.0).then(|| Point3::from(d * ((b - disc.sqrt()) / a)))
    };
    let depth = DepthImage::from_fn_sanitized(w, h, |u, v| hit(u, v).map_or(0.0, |p| p.z as f32));
    let rgb = RgbImage::from_fn(w, h, |u, v| match hit(u, v) {
        Some(p) => {
            let n = pose.rotation().transpose() * (p.coords - c) / radius;
            [0, 1, 2].map(|i| ((n[i] + 1.0) * 127.5).round() as u8)
        }
        None => {
            let g = if (u / 8 + v / 8) % 2 == 0 { 40 } else { 70 };
            [g, g, g + 10]
        }
    });
    let mask = depth.validity_mask();
    let (mut lo, mut hi) = ((w, h), (0, 0));
    for v in 0..h {
        for u in 0..w {
            if mask.at(u, v) {
                lo = (lo.0.min(u), lo.1.min(v));
                hi = (hi.0.max(u), hi.1.max(v));
            }
        }
    }
    let bbox = BoundingBox2D::new(lo.0 as f64, lo.1 as f64, hi.0 as f64, hi.1 as f64).unwrap();
    Rendered { rgb, depth, mask, bbox }
}

pub fn random_rotation(rng: &mut impl Rng) -> PoseSE3 {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    PoseSE3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI), Vector3::zeros())
}

pub const SPHERE_RADIUS: f64 = 0.05;

/// Writes `n` frames plus a one-object registry; returns the manifest path.
/// `offsets[i]` shifts frame i's object center by that many pixels from the image center.
pub fn write_dataset(dir: &Path, w: usize, h: usize, n: usize, seed: u64, offsets: &[(f64, f64)]) -> PathBuf {
    let k = camera(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::new();
    for i in 0..n {
        let (du, dv) = offsets.get(i).copied().unwrap_or((0.0, 0.0));
        let rot = random_rotation(&mut rng);
        let z = rng.random_range(0.5..0.7);
        let t = Vector3::new(du * z / k.fx, dv * z / k.fy, z);
        let pose = PoseSE3::new(*rot.rotation(), t).unwrap();
        let r = render_sphere(&k, w, h, &pose, SPHERE_RADIUS);
        let id = format!("{i:04}");
        io::write_rgb_png(dir.join(format!("rgb/{id}.png")), &r.rgb).unwrap();
        io::write_depth_png(dir.join(format!("depth/{id}.png")), &r.depth).unwrap();
        io::write_mask_png(dir.join(format!("mask/{id}.png")), &r.mask).unwrap();
        io::write_json(dir.join(format!("labels/{id}.json")), &FrameLabel::new("ball", &k, &pose, &r.bbox)).unwrap();
        frames.push(json!({
            "id": id,
            "rgb": format!("rgb/{id}.png"),
            "depth": format!("depth/{id}.png"),
            "label": format!("labels/{id}.json"),
            "mask": format!("mask/{id}.png"),
        }));
    }
    io::write_mesh_ply(dir.join("models/ball.ply"), &TriangleMesh::sphere(SPHERE_RADIUS, 2)).unwrap();
    io::write_keypoints(dir.join("models/ball_kp.json"), &dyadic_keypoints()).unwrap();
    let manifest = json!({
        "schema_version": 1,
        "root": ".",
        "frames": frames,
        "objects": {
            "ball": {"mesh": "models/ball.ply", "keypoints": "models/ball_kp.json", "diameter": 2.0 * SPHERE_RADIUS, "symmetric": true}
        }
    });
    let path = dir.join("manifest.json");
    io::write_json(&path, &manifest).unwrap();
    path
}

/// Eight non-coplanar keypoints with exactly representable coordinates.
pub fn dyadic_keypoints() -> Vec<Point3<f64>> {
    vec![
        Point3::new(0.03125, 0.0, 0.0),
        Point3::new(-0.03125, 0.015625, 0.0),
        Point3::new(0.0, 0.03125, 0.0078125),
        Point3::new(0.0, -0.03125, 0.015625),
        Point3::new(0.0078125, 0.0, 0.03125),
        Point3::new(-0.015625, 0.0078125, -0.03125),
        Point3::new(0.015625, 0.015625, 0.015625),
        Point3::new(-0.0078125, -0.015625, -0.0078125),
    ]
}

/// SHA-256 of every file under `root`, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(base).unwrap().to_string_lossy().into_owned(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn identity_config(dir: &Path) -> PathBuf {
    let p = dir.join("identity.json");
    io::write_json(&p, &simpose::augment::AugmentConfig::identity()).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
