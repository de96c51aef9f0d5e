//! Two-finger grasp candidates from a mesh, and online selection against a scene cloud.
//!
//! Gripper frame: `x` is the closing axis (from contact a toward contact b),
//! the origin is the contact midpoint, and `approach_axis` (perpendicular to
//! `x`) points from the hand toward the object. The collision box models the
//! hand body: its axes are the gripper axes and its front face sits
//! `finger_depth` behind the contact midpoint along the approach axis.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Point3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::se3::PoseSE3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperModel {
    pub max_width: f64,
    pub finger_depth: f64,
    /// Hand box extents along the gripper x, y, z axes.
    pub bounding_box: [f64; 3],
    pub approach_axis: [f64; 3],
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            max_width: 0.08,
            finger_depth: 0.04,
            bounding_box: [0.2, 0.08, 0.1],
            approach_axis: [0.0, 0.0, 1.0],
        }
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.bounding_box.iter().all(|d| *d > 0.0 && d.is_finite());
        if !(self.max_width > 0.0 && self.finger_depth > 0.0 && dims_ok) {
            return Err(Error::InvalidArgument("gripper dimensions must be > 0".into()));
        }
        let a = self.approach();
        if (a.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("gripper approach_axis must be unit".into()));
        }
        if a.x.abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "gripper approach_axis must be perpendicular to the closing (x) axis".into(),
            ));
        }
        Ok(())
    }

    pub fn approach(&self) -> Vector3<f64> {
        Vector3::from(self.approach_axis)
    }

    /// Hand box center in the gripper frame.
    pub fn box_center(&self) -> Vector3<f64> {
        let a = self.approach();
        let half_along: f64 = (0..3).map(|i| a[i].abs() * self.bounding_box[i] / 2.0).sum();
        -a * (self.finger_depth + half_along)
    }

    /// The hand box placed at `pose` (gripper frame to target frame).
    pub fn box_at(&self, pose: &PoseSE3) -> OrientedBox {
        OrientedBox {
            center: Point3::from(pose.translation() + pose.rotation() * self.box_center()),
            axes: *pose.rotation(),
            half: Vector3::from(self.bounding_box) / 2.0,
        }
    }
}

/// Box with orthonormal axes (matrix columns) and half extents along them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Point3<f64>,
    pub axes: Matrix3<f64>,
    pub half: Vector3<f64>,
}

impl OrientedBox {
    fn local(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - self.center)
    }

    /// Euclidean distance from `p` to the solid box; 0 inside.
    pub fn distance_to_point(&self, p: &Point3<f64>) -> f64 {
        let l = self.local(p);
        let outside = Vector3::from_fn(|i, _| (l[i].abs() - self.half[i]).max(0.0));
        outside.norm()
    }

    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let ext = Vector3::from_fn(|i, _| (0..3).map(|j| self.axes[(i, j)].abs() * self.half[j]).sum());
        (self.center - ext, self.center + ext)
    }

    /// Separating-axis test against a solid triangle. Touching counts as intersecting.
    pub fn intersects_triangle(&self, tri: &[Point3<f64>; 3]) -> bool {
        let v = tri.map(|p| self.local(&p));
        let h = self.half;
        let separated_on = |axis: Vector3<f64>| -> bool {
            if axis.norm_squared() < 1e-30 {
                return false;
            }
            let p = v.map(|x| axis.dot(&x));
            let r: f64 = (0..3).map(|i| h[i] * axis[i].abs()).sum();
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            lo > r || hi < -r
        };
        for i in 0..3 {
            let lo = v[0][i].min(v[1][i]).min(v[2][i]);
            let hi = v[0][i].max(v[1][i]).max(v[2][i]);
            if lo > h[i] || hi < -h[i] {
                return false;
            }
        }
        let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
        if separated_on(edges[0].cross(&edges[1])) {
            return false;
        }
        for e in &edges {
            for i in 0..3 {
                if separated_on(Vector3::ith(i, 1.0).cross(e)) {
                    return false;
                }
            }
        }
        true
    }
}

/// Triangles with cached bounds for box queries.
#[derive(Debug, Clone)]
pub struct CollisionMesh {
    triangles: Vec<[Point3<f64>; 3]>,
    bounds: Vec<(Point3<f64>, Point3<f64>)>,
}

impl CollisionMesh {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let triangles: Vec<_> = (0..mesh.triangles().len()).map(|i| mesh.triangle(i)).collect();
        let bounds = triangles
            .iter()
            .map(|t| (t[0].inf(&t[1]).inf(&t[2]), t[0].sup(&t[1]).sup(&t[2])))
            .collect();
        Self { triangles, bounds }
    }

    pub fn intersects(&self, obb: &OrientedBox) -> bool {
        let (lo, hi) = obb.aabb();
        self.triangles.iter().zip(&self.bounds).any(|(t, (tlo, thi))| {
            (0..3).all(|i| tlo[i] <= hi[i] && thi[i] >= lo[i]) && obb.intersects_triangle(t)
        })
    }

    /// Every triangle, no bounds culling.
    pub fn intersects_bruteforce(&self, obb: &OrientedBox) -> bool {
        self.triangles.iter().any(|t| obb.intersects_triangle(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPose {
    /// Gripper frame expressed in the object (or, after selection, camera) frame.
    pub pose: PoseSE3,
    pub width: f64,
    pub contact_a: Point3<f64>,
    pub contact_b: Point3<f64>,
    /// Clearance to the nearest obstacle, set by selection; `+∞` when unobstructed.
    pub quality: f64,
    pub rotation_index: usize,
    pub antipodal: bool,
}

impl GraspPose {
    pub fn midpoint(&self) -> Point3<f64> {
        Point3::from((self.contact_a.coords + self.contact_b.coords) / 2.0)
    }

    /// Approach direction in the frame `pose` is expressed in.
    pub fn approach(&self, gripper: &GripperModel) -> Vector3<f64> {
        self.pose.rotation() * gripper.approach()
    }

    /// Same grasp with pose and contacts mapped by `t` (e.g. object to camera).
    pub fn transformed(&self, t: &PoseSE3) -> GraspPose {
        GraspPose {
            pose: t.compose(&self.pose),
            contact_a: t.apply(&self.contact_a),
            contact_b: t.apply(&self.contact_b),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspGenConfig {
    pub surface_samples: usize,
    pub rotations_per_axis: usize,
    /// Degrees.
    pub perpendicularity_max_angle: f64,
    /// Degrees.
    pub curvature_max_angle: f64,
    /// Neighbourhood radius for the curvature test; defaults to half the finger depth.
    #[serde(default)]
    pub curvature_radius: Option<f64>,
    pub anchor_cell: f64,
    #[serde(default = "yes")]
    pub check_collision: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl Default for GraspGenConfig {
    fn default() -> Self {
        Self {
            surface_samples: 400,
            rotations_per_axis: 24,
            perpendicularity_max_angle: 15.0,
            curvature_max_angle: 30.0,
            curvature_radius: None,
            anchor_cell: 0.05,
            check_collision: true,
            seed: 0,
        }
    }
}

impl GraspGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotations_per_axis < 1 {
            return Err(Error::InvalidArgument("rotations_per_axis must be >= 1".into()));
        }
        for (name, a) in [
            ("perpendicularity_max_angle", self.perpendicularity_max_angle),
            ("curvature_max_angle", self.curvature_max_angle),
        ] {
            if !(a > 0.0 && a < 90.0) {
                return Err(Error::InvalidArgument(format!("{name} must be in (0, 90), got {a}")));
            }
        }
        if self.surface_samples < 2 {
            return Err(Error::InvalidArgument("surface_samples must be >= 2".into()));
        }
        if let Some(r) = self.curvature_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("curvature_radius must be > 0".into()));
            }
        }
        if !(self.anchor_cell > 0.0) {
            return Err(Error::InvalidArgument("anchor_cell must be > 0".into()));
        }
        Ok(())
    }

    fn radius(&self, gripper: &GripperModel) -> f64 {
        self.curvature_radius.unwrap_or(0.5 * gripper.finger_depth)
    }
}

/// Surface points with unit outward normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

/// Area-weighted uniform samples. Normals interpolate vertex normals when the
/// mesh has them, else use the face normal.
pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    let areas: Vec<f64> = (0..mesh.triangles().len()).map(|i| mesh.face_area(i)).collect();
    let dist = WeightedIndex::new(&areas)
        .map_err(|_| Error::DegenerateMesh("mesh has no triangle with positive area".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let f = dist.sample(&mut rng);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let [p0, p1, p2] = mesh.triangle(f);
        points.push(Point3::from(p0.coords * w[0] + p1.coords * w[1] + p2.coords * w[2]));
        let face_n = mesh.face_normal(f).expect("positive-area face has a normal");
        let n = match mesh.vertex_normals() {
            Some(vn) => {
                let t = mesh.triangles()[f];
                (vn[t[0]] * w[0] + vn[t[1]] * w[1] + vn[t[2]] * w[2])
                    .try_normalize(1e-12)
                    .unwrap_or(face_n)
            }
            None => face_n,
        };
        normals.push(n);
    }
    Ok(SurfaceSamples { points, normals })
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Per sample: do all samples within `radius` have normals within `max_angle` (radians)?
pub fn smooth_neighbourhood(samples: &SurfaceSamples, radius: f64, max_angle: f64) -> Vec<bool> {
    let key = |p: &Point3<f64>| -> [i64; 3] { p.coords.map(|c| (c / radius).floor() as i64).into() };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in samples.points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    (0..samples.points.len())
        .into_par_iter()
        .map(|i| {
            let p = samples.points[i];
            let n = samples.normals[i];
            let k = key(&p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                            continue;
                        };
                        for &j in cell {
                            if (samples.points[j] - p).norm_squared() <= r2
                                && angle_between(&samples.normals[j], &n) > max_angle
                            {
                                return false;
                            }
                        }
                    }
                }
            }
            true
        })
        .collect()
}

/// Antipodal condition on a contact pair: the normal at `a` within `max_angle`
/// of `-(b - a)`, the normal at `b` within `max_angle` of `b - a`.
pub fn is_antipodal_pair(
    a: &Point3<f64>,
    na: &Vector3<f64>,
    b: &Point3<f64>,
    nb: &Vector3<f64>,
    max_angle: f64,
) -> bool {
    let Some(d) = (b - a).try_normalize(1e-12) else {
        return false;
    };
    angle_between(na, &-d) <= max_angle && angle_between(nb, &d) <= max_angle
}

fn perpendicular_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let i = d.iamin();
    let e = Vector3::ith(i, 1.0);
    let y = (e - d * d.dot(&e)).normalize();
    (y, d.cross(&y))
}

/// `rotations` poses about the line from `a` to `b`, each followed by its
/// antipodal twin (same approach, closing axis reversed, contacts swapped).
pub fn grasps_for_line(a: &Point3<f64>, b: &Point3<f64>, gripper: &GripperModel, rotations: usize) -> Vec<GraspPose> {
    let diff = b - a;
    let width = diff.norm();
    let d = diff / width;
    let (y0, z0) = perpendicular_basis(&d);
    let mid = Point3::from((a.coords + b.coords) / 2.0);
    let ap = gripper.approach();
    let flip = ap * ap.transpose() * 2.0 - Matrix3::identity();
    let mut out = Vec::with_capacity(2 * rotations);
    for k in 0..rotations {
        let theta = std::f64::consts::TAU * k as f64 / rotations as f64;
        let (s, c) = theta.sin_cos();
        let r = Matrix3::from_columns(&[d, y0 * c + z0 * s, z0 * c - y0 * s]);
        let base = GraspPose {
            pose: PoseSE3::new(r, mid.coords).expect("orthonormal by construction"),
            width,
            contact_a: *a,
            contact_b: *b,
            quality: 0.0,
            rotation_index: k,
            antipodal: false,
        };
        let twin = GraspPose {
            pose: PoseSE3::new(r * flip, mid.coords).expect("orthonormal by construction"),
            contact_a: *b,
            contact_b: *a,
            antipodal: true,
            ..base
        };
        out.push(base);
        out.push(twin);
    }
    out
}

/// Candidate grasps before anchor downsampling.
pub fn generate_grasp_candidates(
    mesh: &TriangleMesh,
    gripper: &GripperModel,
    cfg: &GraspGenConfig,
) -> Result<Vec<GraspPose>> {
    gripper.validate()?;
    cfg.validate()?;
    let samples = sample_surface(mesh, cfg.surface_samples, cfg.seed)?;
    let smooth = smooth_neighbourhood(&samples, cfg.radius(gripper), cfg.curvature_max_angle.to_radians());
    let perp = cfg.perpendicularity_max_angle.to_radians();
    let n = samples.points.len();
    let max_w2 = gripper.max_width * gripper.max_width;
    let collision = CollisionMesh::new(mesh);

    let out: Vec<Vec<GraspPose>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut local = Vec::new();
            if !smooth[i] {
                return local;
            }
            let (pa, na) = (&samples.points[i], &samples.normals[i]);
            for j in i + 1..n {
                let (pb, nb) = (&samples.points[j], &samples.normals[j]);
                let d2 = (pb - pa).norm_squared();
                if d2 == 0.0 || d2 > max_w2 || !smooth[j] || !is_antipodal_pair(pa, na, pb, nb, perp) {
                    continue;
                }
                local.extend(
                    grasps_for_line(pa, pb, gripper, cfg.rotations_per_axis)
                        .into_iter()
                        .filter(|g| !cfg.check_collision || !collision.intersects(&gripper.box_at(&g.pose))),
                );
            }
            local
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Keeps, per (anchor point, rotation index, antipodal flag), the first grasp.
/// Anchors sit at integer multiples of `anchor_cell`; each midpoint goes to the
/// nearest one. Order is preserved.
pub fn downsample_anchors(grasps: &[GraspPose], anchor_cell: f64) -> Vec<GraspPose> {
    let mut seen = HashSet::new();
    grasps
        .iter()
        .filter(|g| {
            let m = g.midpoint();
            let cell: [i64; 3] = m.coords.map(|c| (c / anchor_cell).round() as i64).into();
            seen.insert((cell, g.rotation_index, g.antipodal))
        })
        .copied()
        .collect()
}

/// Candidates plus anchor downsampling. `EmptyResult` when nothing survives.
pub fn generate_grasps(mesh: &TriangleMesh, gripper: &GripperModel, cfg: &GraspGenConfig) -> Result<Vec<GraspPose>> {
    let candidates = generate_grasp_candidates(mesh, gripper, cfg)?;
    let kept = downsample_anchors(&candidates, cfg.anchor_cell);
    if kept.is_empty() {
        return Err(Error::EmptyResult("no grasp passes the validity filters".into()));
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    /// Degrees.
    pub max_approach_angle: f64,
    /// Meters.
    pub collision_radius: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            max_approach_angle: 45.0,
            collision_radius: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedGrasp {
    /// Index into the candidate list.
    pub index: usize,
    /// Camera frame, `quality` holding the clearance.
    pub grasp: GraspPose,
}

/// Chooses the admissible grasp farthest from the obstacle points.
///
/// Obstacles are scene points whose mask entry is false. A grasp is admissible
/// when its approach is within `max_approach_angle` of `tool_axis` and its hand
/// box keeps at least `collision_radius` from every obstacle. Ties go to the
/// lower index.
pub fn select_grasp(
    grasps: &[GraspPose],
    gripper: &GripperModel,
    object_pose: &PoseSE3,
    scene: &PointCloud,
    object_mask: &[bool],
    tool_axis: &Vector3<f64>,
    cfg: &SelectConfig,
) -> Result<Option<SelectedGrasp>> {
    gripper.validate()?;
    if object_mask.len() != scene.len() {
        return Err(Error::ShapeError(format!(
            "mask has {} entries for {} scene points",
            object_mask.len(),
            scene.len()
        )));
    }
    let tool = tool_axis
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidArgument("tool axis must be nonzero".into()))?;
    let max_angle = cfg.max_approach_angle.to_radians();
    let obstacles: Vec<Point3<f64>> = scene
        .points()
        .iter()
        .zip(object_mask)
        .filter(|(_, m)| !**m)
        .map(|(p, _)| *p)
        .collect();

    let scored: Vec<Option<GraspPose>> = grasps
        .par_iter()
        .map(|g| {
            let lifted = g.transformed(object_pose);
            if angle_between(&lifted.approach(gripper), &tool) > max_angle {
                return None;
            }
            let obb = gripper.box_at(&lifted.pose);
            let clearance = obstacles
                .iter()
                .map(|p| obb.distance_to_point(p))
                .fold(f64::INFINITY, f64::min);
            (clearance >= cfg.collision_radius).then_some(GraspPose {
                quality: clearance,
                ..lifted
            })
        })
        .collect();
    let mut best: Option<SelectedGrasp> = None;
    for (index, g) in scored.into_iter().enumerate() {
        if let Some(g) = g {
            if best.is_none_or(|b| g.quality > b.grasp.quality) {
                best = Some(SelectedGrasp { index, grasp: g });
            }
        }
    }
    Ok(best)
}

/// One grasp in a grasp file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
    pub width: f64,
    pub contacts: [[f64; 3]; 2],
    #[serde(default)]
    pub rotation_index: usize,
    #[serde(default)]
    pub antipodal: bool,
}

impl From<&GraspPose> for GraspRecord {
    fn from(g: &GraspPose) -> Self {
        Self {
            rotation: g.pose.rotation_array(),
            translation: g.pose.translation_array(),
            width: g.width,
            contacts: [g.contact_a.into(), g.contact_b.into()],
            rotation_index: g.rotation_index,
            antipodal: g.antipodal,
        }
    }
}

impl GraspRecord {
    pub fn to_grasp(&self) -> Result<GraspPose> {
        let a = Point3::from(self.contacts[0]);
        let b = Point3::from(self.contacts[1]);
        if !(self.width > 0.0) || ((a - b).norm() - self.width).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "grasp width {} does not match its contacts",
                self.width
            )));
        }
        Ok(GraspPose {
            pose: PoseSE3::from_arrays(&self.rotation, &self.translation)?,
            width: self.width,
            contact_a: a,
            contact_b: b,
            quality: 0.0,
            rotation_index: self.rotation_index,
            antipodal: self.antipodal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn unit_box(center: Point3<f64>) -> OrientedBox {
        OrientedBox {
            center,
            axes: Matrix3::identity(),
            half: Vector3::new(0.5, 0.5, 0.5),
        }
    }

    #[test]
    fn sat_basic_cases() {
        let b = unit_box(Point3::origin());
        let far = [Point3::new(2.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0), Point3::new(2.0, 1.0, 0.0)];
        assert!(!b.intersects_triangle(&far));
        let through = [Point3::new(-2.0, -2.0, 0.0), Point3::new(2.0, -2.0, 0.0), Point3::new(0.0, 3.0, 0.0)];
        assert!(b.intersects_triangle(&through));
        // Near a corner but only the triangle's edge axis separates it.
        let diag = [Point3::new(0.9, 0.0, 0.9), Point3::new(0.0, 0.9, 0.9), Point3::new(0.9, 0.9, 0.0)];
        assert!(!b.intersects_triangle(&diag));
        let inside = [Point3::new(0.1, 0.1, 0.1), Point3::new(0.2, 0.1, 0.1), Point3::new(0.1, 0.2, 0.1)];
        assert!(b.intersects_triangle(&inside));
    }

    #[test]
    fn point_box_distance_hand_values() {
        let b = unit_box(Point3::origin());
        assert_eq!(b.distance_to_point(&Point3::new(0.1, 0.2, 0.3)), 0.0);
        assert!((b.distance_to_point(&Point3::new(1.5, 0.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((b.distance_to_point(&Point3::new(1.5, 1.5, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
        let rotated = OrientedBox {
            axes: *PoseSE3::rot_z(std::f64::consts::FRAC_PI_4).rotation(),
            ..b
        };
        let d = rotated.distance_to_point(&Point3::new(1.0, 1.0, 0.0));
        assert!((d - (2f64.sqrt() - 0.5)).abs() < 1e-12);
    }

    fn random_obb(rng: &mut ChaCha8Rng) -> OrientedBox {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let pose = PoseSE3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rng.random::<f64>() * 3.0, Vector3::zeros());
        OrientedBox {
            center: Point3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            axes: *pose.rotation(),
            half: Vector3::new(0.1 + rng.random::<f64>() * 0.3, 0.1 + rng.random::<f64>() * 0.3, 0.1 + rng.random::<f64>() * 0.3),
        }
    }

    #[test]
    fn sat_agrees_with_dense_sampling() {
        // Any sampled triangle point inside the box proves intersection; SAT
        // saying "separate" must never contradict that.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        for _ in 0..400 {
            let obb = random_obb(&mut rng);
            let tri: [Point3<f64>; 3] = std::array::from_fn(|_| {
                Point3::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
            });
            let sat = obb.intersects_triangle(&tri);
            let steps = 40;
            let sampled = (0..=steps).any(|i| {
                (0..=steps - i).any(|j| {
                    let (u, v) = (i as f64 / steps as f64, j as f64 / steps as f64);
                    let p = Point3::from(tri[0].coords * (1.0 - u - v) + tri[1].coords * u + tri[2].coords * v);
                    obb.distance_to_point(&p) == 0.0
                })
            });
            if sampled {
                assert!(sat);
                hits += 1;
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn accelerated_collision_matches_bruteforce() {
        let mesh = TriangleMesh::ellipsoid(Vector3::new(0.05, 0.03, 0.035), 2);
        let cm = CollisionMesh::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut obb = random_obb(&mut rng);
            obb.center = Point3::from(obb.center.coords * 0.2);
            obb.half *= 0.2;
            assert_eq!(cm.intersects(&obb), cm.intersects_bruteforce(&obb));
        }
    }

    #[test]
    fn fixed_line_gives_24_plus_24() {
        let g = GripperModel::default();
        let a = Point3::new(0.01, -0.02, 0.0);
        let b = Point3::new(0.03, 0.01, 0.02);
        let poses = grasps_for_line(&a, &b, &g, 24);
        assert_eq!(poses.len(), 48);
        let primary: Vec<_> = poses.iter().filter(|p| !p.antipodal).collect();
        let twins: Vec<_> = poses.iter().filter(|p| p.antipodal).collect();
        assert_eq!((primary.len(), twins.len()), (24, 24));
        let d = (b - a).normalize();
        for w in primary.windows(2) {
            let rel = w[0].pose.inverse().compose(&w[1].pose);
            assert!((rel.rotation().angle_to_axis_angle_deg() - 15.0).abs() < 1e-9);
            // Relative rotation is about the line (the local x axis).
            let world_axis = w[0].pose.rotation() * Vector3::x();
            assert!((world_axis - d).norm() < 1e-12);
            assert!((w[1].pose.rotation() * Vector3::x() - d).norm() < 1e-12);
        }
        for (p, t) in primary.iter().zip(&twins) {
            assert_eq!((p.contact_a, p.contact_b), (t.contact_b, t.contact_a));
            assert!((t.pose.rotation() * Vector3::x() + d).norm() < 1e-12);
            assert!((p.approach(&g) - t.approach(&g)).norm() < 1e-12);
            assert!((p.width - (b - a).norm()).abs() < 1e-15);
        }
    }

    trait AngleDeg {
        fn angle_to_axis_angle_deg(&self) -> f64;
    }

    impl AngleDeg for Matrix3<f64> {
        fn angle_to_axis_angle_deg(&self) -> f64 {
            ((self.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
        }
    }

    #[test]
    fn thin_box_pinches_thin_dimension() {
        let mesh = TriangleMesh::cuboid(Vector3::new(0.02, 0.1, 0.1));
        let gripper = GripperModel {
            max_width: 0.05,
            finger_depth: 0.06,
            ..GripperModel::default()
        };
        let cfg = GraspGenConfig {
            surface_samples: 300,
            curvature_radius: Some(0.005),
            anchor_cell: 1e-6,
            seed: 2,
            ..GraspGenConfig::default()
        };
        let grasps = generate_grasps(&mesh, &gripper, &cfg).unwrap();
        assert!(!grasps.is_empty());
        for g in &grasps {
            assert!((0.019..=0.021).contains(&g.width), "{}", g.width);
            let d = (g.contact_b - g.contact_a).normalize();
            assert!(d.x.abs() > 0.9);
        }
    }

    #[test]
    fn sphere_lines_pass_through_center() {
        let mesh = TriangleMesh::sphere(0.03, 4);
        let gripper = GripperModel {
            max_width: 0.07,
            finger_depth: 0.04,
            ..GripperModel::default()
        };
        let cfg = GraspGenConfig {
            surface_samples: 1500,
            perpendicularity_max_angle: 1.0,
            curvature_radius: Some(0.01),
            anchor_cell: 1e-6,
            ..GraspGenConfig::default()
        };
        let grasps = generate_grasp_candidates(&mesh, &gripper, &cfg).unwrap();
        assert!(!grasps.is_empty());
        for g in &grasps {
            let d = (g.contact_b - g.contact_a).normalize();
            let off = g.contact_a.coords - d * g.contact_a.coords.dot(&d);
            assert!(off.norm() < 1e-3, "{}", off.norm());
        }
    }

    #[test]
    fn every_candidate_has_its_twin() {
        let mesh = TriangleMesh::ellipsoid(Vector3::new(0.05, 0.03, 0.035), 3);
        let cfg = GraspGenConfig {
            surface_samples: 200,
            ..GraspGenConfig::default()
        };
        let c = generate_grasp_candidates(&mesh, &GripperModel::default(), &cfg).unwrap();
        let twins: HashSet<_> = c
            .iter()
            .filter(|g| g.antipodal)
            .map(|g| (g.contact_b.coords.map(f64::to_bits).data.0, g.contact_a.coords.map(f64::to_bits).data.0, g.rotation_index))
            .collect();
        for g in c.iter().filter(|g| !g.antipodal) {
            let key = (g.contact_a.coords.map(f64::to_bits).data.0, g.contact_b.coords.map(f64::to_bits).data.0, g.rotation_index);
            assert!(twins.contains(&key));
        }
    }

    #[test]
    fn downsampling_extremes() {
        let g = GripperModel::default();
        let mut all = Vec::new();
        for i in 0..5 {
            let a = Point3::new(i as f64 * 0.1, 0.0, 0.0);
            all.extend(grasps_for_line(&a, &(a + Vector3::new(0.0, 0.05, 0.0)), &g, 24));
        }
        assert_eq!(downsample_anchors(&all, f64::INFINITY).len(), 48);
        assert_eq!(downsample_anchors(&all, 1e-4), all);
        let first_line: Vec<_> = all[..48].to_vec();
        assert_eq!(downsample_anchors(&all, f64::INFINITY), first_line);
    }

    #[test]
    fn duck_scale_mesh_yields_under_100() {
        let mesh = TriangleMesh::ellipsoid(Vector3::new(0.05, 0.03, 0.035), 3);
        let grasps = generate_grasps(&mesh, &GripperModel::default(), &GraspGenConfig::default()).unwrap();
        assert!(!grasps.is_empty() && grasps.len() < 100, "{}", grasps.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let mesh = TriangleMesh::ellipsoid(Vector3::new(0.05, 0.03, 0.035), 2);
        let cfg = GraspGenConfig {
            surface_samples: 150,
            seed: 4,
            ..GraspGenConfig::default()
        };
        let a = generate_grasp_candidates(&mesh, &GripperModel::default(), &cfg).unwrap();
        let b = generate_grasp_candidates(&mesh, &GripperModel::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_gripper_gives_empty_result() {
        let mesh = TriangleMesh::cuboid(Vector3::new(0.1, 0.1, 0.1));
        let gripper = GripperModel {
            max_width: 0.05,
            ..GripperModel::default()
        };
        let r = generate_grasps(&mesh, &gripper, &GraspGenConfig::default());
        assert!(matches!(r, Err(Error::EmptyResult(_))));
    }

    fn down_grasp(x: f64) -> GraspPose {
        // Closing along object x, approach along camera +z when the object pose is identity.
        let g = grasps_for_line(&Point3::new(x - 0.02, 0.0, 0.0), &Point3::new(x + 0.02, 0.0, 0.0), &GripperModel::default(), 4);
        *g.iter()
            .find(|p| !p.antipodal && (p.approach(&GripperModel::default()) - Vector3::z()).norm() < 1e-9)
            .unwrap()
    }

    #[test]
    fn empty_scene_picks_unobstructed_grasp() {
        let grasps = [down_grasp(0.0)];
        let scene = PointCloud::new(vec![]);
        let s = select_grasp(&grasps, &GripperModel::default(), &PoseSE3::identity(), &scene, &[], &Vector3::z(), &SelectConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(s.index, 0);
        assert!(s.grasp.quality.is_infinite());
    }

    #[test]
    fn approach_filter_rejects() {
        let grasps = [down_grasp(0.0)];
        let scene = PointCloud::new(vec![]);
        let s = select_grasp(&grasps, &GripperModel::default(), &PoseSE3::identity(), &scene, &[], &-Vector3::z(), &SelectConfig::default()).unwrap();
        assert!(s.is_none());
    }

    #[test]
    fn blocked_scene_gives_none() {
        let g = GripperModel::default();
        let grasps = [down_grasp(0.0), down_grasp(0.3)];
        let pts: Vec<_> = grasps.iter().map(|x| g.box_at(&x.pose).center).collect();
        let scene = PointCloud::new(pts);
        let s = select_grasp(&grasps, &g, &PoseSE3::identity(), &scene, &[false, false], &Vector3::z(), &SelectConfig::default()).unwrap();
        assert!(s.is_none());
    }

    #[test]
    fn clearance_ranking_hand_example() {
        // Each grasp at x = 0, 1, 2 has one obstacle straight above its box
        // (toward -z, behind the box top face) at 5, 20 and 50 mm.
        let g = GripperModel::default();
        let grasps = [down_grasp(0.0), down_grasp(1.0), down_grasp(2.0)];
        let mut pts = Vec::new();
        for (gr, gap) in grasps.iter().zip([0.005, 0.02, 0.05]) {
            let obb = g.box_at(&gr.pose);
            let top = obb.center.z - obb.half.z;
            pts.push(Point3::new(obb.center.x, obb.center.y, top - gap));
        }
        let scene = PointCloud::new(pts);
        let cfg = SelectConfig {
            max_approach_angle: 10.0,
            collision_radius: 0.01,
        };
        let s = select_grasp(&grasps, &g, &PoseSE3::identity(), &scene, &[false; 3], &Vector3::z(), &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(s.index, 2);
        // Grasp 2 sees every obstacle; the nearest is the 50 mm one above it.
        assert!((s.grasp.quality - 0.05).abs() < 1e-12);
        // With only the 5 mm candidate available nothing qualifies.
        let alone = select_grasp(&grasps[..1], &g, &PoseSE3::identity(), &PointCloud::new(scene.points()[..1].to_vec()), &[false], &Vector3::z(), &cfg).unwrap();
        assert!(alone.is_none());
    }

    #[test]
    fn object_points_are_not_obstacles() {
        let g = GripperModel::default();
        let grasps = [down_grasp(0.0)];
        let inside = g.box_at(&grasps[0].pose).center;
        let scene = PointCloud::new(vec![inside]);
        let s = select_grasp(&grasps, &g, &PoseSE3::identity(), &scene, &[true], &Vector3::z(), &SelectConfig::default()).unwrap();
        assert!(s.unwrap().grasp.quality.is_infinite());
        assert!(select_grasp(&grasps, &g, &PoseSE3::identity(), &scene, &[], &Vector3::z(), &SelectConfig::default()).is_err());
    }

    #[test]
    fn grasp_record_roundtrip() {
        let g = down_grasp(0.1);
        let rec = GraspRecord::from(&g);
        let json = serde_json::to_string(&rec).unwrap();
        let back: GraspRecord = serde_json::from_str(&json).unwrap();
        let g2 = back.to_grasp().unwrap();
        assert_eq!(g2.pose, g.pose);
        assert_eq!(g2.width, g.width);
        let legacy = r#"{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0],"width":0.04,"contacts":[[-0.02,0,0],[0.02,0,0]]}"#;
        assert!(serde_json::from_str::<GraspRecord>(legacy).unwrap().to_grasp().is_ok());
    }

    proptest! {
        #[test]
        fn selection_postconditions(seed in 0u64..40) {
            let g = GripperModel::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grasps: Vec<_> = (0..6).map(|i| {
                let a = Point3::new(rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, 0.0);
                grasps_for_line(&a, &(a + Vector3::new(0.04, 0.0, 0.01)), &g, 8)[i * 2]
            }).collect();
            let pts: Vec<_> = (0..30).map(|_| Point3::new(rng.random::<f64>() * 0.6 - 0.3, rng.random::<f64>() * 0.6 - 0.3, rng.random::<f64>() * 0.6 - 0.3)).collect();
            let mask: Vec<bool> = (0..30).map(|i| i % 5 == 0).collect();
            let cfg = SelectConfig { max_approach_angle: 90.0, collision_radius: 0.005 };
            let pose = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 0.5));
            let scene = PointCloud::new(pts.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.5)).collect());
            if let Some(s) = select_grasp(&grasps, &g, &pose, &scene, &mask, &Vector3::z(), &cfg).unwrap() {
                prop_assert!(s.grasp.quality >= cfg.collision_radius);
                let ang = angle_between(&s.grasp.approach(&g), &Vector3::z()).to_degrees();
                prop_assert!(ang <= cfg.max_approach_angle + 1e-9);
            }
        }
    }
}
