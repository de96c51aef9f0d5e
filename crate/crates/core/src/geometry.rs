//! Preprocessing between the detector ROI and the keypoint voter.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bbox::BoundingBox2D;
use crate::camera::CameraIntrinsics;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::image::{DepthImage, Raster, RgbImage};

/// Square crop window. `origin` may be negative or the window may overhang the
/// image when the square does not fit; those pixels are zero-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub origin: (i64, i64),
    pub side: usize,
    pub base: usize,
}

impl CropSpec {
    /// Intrinsics of the crop after resizing it to `target` pixels.
    pub fn adjust_intrinsics(&self, k: &CameraIntrinsics, target: usize) -> CameraIntrinsics {
        let s = target as f64 / self.side as f64;
        let cx = k.cx - self.origin.0 as f64;
        let cy = k.cy - self.origin.1 as f64;
        CameraIntrinsics {
            fx: k.fx * s,
            fy: k.fy * s,
            cx: (cx + 0.5) * s - 0.5,
            cy: (cy + 0.5) * s - 0.5,
        }
    }
}

/// Smallest multiple-of-`base` square that contains the box, centered on it.
///
/// The square is shifted the least amount needed to stay inside the image
/// when it fits; along an axis where it cannot fit it stays centered.
pub fn square_crop_spec(
    bbox: &BoundingBox2D,
    base: usize,
    image_dims: (usize, usize),
) -> Result<CropSpec> {
    if base == 0 {
        return Err(Error::InvalidArgument("crop base must be >= 1".into()));
    }
    bbox.validate()?;
    let extent = bbox.width().max(bbox.height());
    let blocks = ((extent / base as f64).ceil() as usize).max(1);
    let side = base * blocks;
    let (cx, cy) = bbox.center();
    let place = |center: f64, limit: usize| -> i64 {
        let start = (center - side as f64 / 2.0).round() as i64;
        if side <= limit {
            start.clamp(0, (limit - side) as i64)
        } else {
            start
        }
    };
    Ok(CropSpec {
        origin: (place(cx, image_dims.0), place(cy, image_dims.1)),
        side,
        base,
    })
}

pub fn crop_square<R: Raster>(img: &R, spec: &CropSpec) -> R {
    let (ox, oy) = spec.origin;
    R::from_fn(spec.side, spec.side, |u, v| {
        img.get_or_empty(ox + u as i64, oy + v as i64)
    })
}

/// Nearest-neighbor resize of a square raster. Output pixel `i` samples
/// source index `floor((i + 0.5) · side / target)`.
pub fn resize_nearest<R: Raster>(img: &R, target: usize) -> Result<R> {
    let (w, h) = img.dims();
    if w != h {
        return Err(Error::ShapeError(format!("resize expects a square image, got {w}x{h}")));
    }
    if target == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1".into()));
    }
    let scale = w as f64 / target as f64;
    let src = |i: usize| (((i as f64 + 0.5) * scale).floor() as usize).min(w - 1);
    Ok(R::from_fn(target, target, |u, v| img.get(src(u), src(v))))
}

fn check_dims(depth: &DepthImage, rgb: Option<&RgbImage>) -> Result<()> {
    if let Some(rgb) = rgb {
        if rgb.dims() != depth.dims() {
            return Err(Error::ShapeError(format!(
                "rgb {:?} and depth {:?} dims differ",
                rgb.dims(),
                depth.dims()
            )));
        }
    }
    Ok(())
}

/// Back-projects every valid pixel in row-major order.
pub fn depth_to_cloud(
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    rgb: Option<&RgbImage>,
) -> Result<PointCloud> {
    check_dims(depth, rgb)?;
    let (w, h) = depth.dims();
    let mut points = Vec::with_capacity(depth.valid_count());
    let mut colors = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let z = depth.at(u, v);
            if z > 0.0 {
                points.push(intrinsics.back_project(u as f64, v as f64, z as f64));
                if let Some(rgb) = rgb {
                    let [r, g, b] = rgb.pixel(u, v);
                    colors.push(Vector3::new(r as f64, g as f64, b as f64) / 255.0);
                }
            }
        }
    }
    let cloud = PointCloud::new(points);
    if rgb.is_some() {
        cloud.with_colors(colors)
    } else {
        Ok(cloud)
    }
}

const FALLBACK_NORMAL: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

/// Per-pixel surface normals from the structured depth grid, one per valid
/// pixel in the same order as [`depth_to_cloud`].
///
/// Tangents are central differences of back-projected neighbors, falling back
/// to one-sided differences when a neighbor is invalid. Pixels without a
/// tangent along either axis get `(0, 0, -1)`. Normals are flipped to face the
/// camera.
pub fn normals_from_depth(depth: &DepthImage, intrinsics: &CameraIntrinsics) -> Vec<Vector3<f64>> {
    let (w, h) = depth.dims();
    let point = |u: i64, v: i64| -> Option<Point3<f64>> {
        if u < 0 || v < 0 || u >= w as i64 || v >= h as i64 {
            return None;
        }
        let z = depth.at(u as usize, v as usize);
        (z > 0.0).then(|| intrinsics.back_project(u as f64, v as f64, z as f64))
    };
    let tangent = |prev: Option<Point3<f64>>, here: Point3<f64>, next: Option<Point3<f64>>| match (prev, next) {
        (Some(a), Some(b)) => Some((b - a) * 0.5),
        (None, Some(b)) => Some(b - here),
        (Some(a), None) => Some(here - a),
        (None, None) => None,
    };
    let rows: Vec<Vec<Vector3<f64>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let v = v as i64;
            let mut row = Vec::new();
            for u in 0..w as i64 {
                let Some(p) = point(u, v) else { continue };
                let du = tangent(point(u - 1, v), p, point(u + 1, v));
                let dv = tangent(point(u, v - 1), p, point(u, v + 1));
                let n = match (du, dv) {
                    (Some(du), Some(dv)) => du.cross(&dv).try_normalize(1e-300),
                    _ => None,
                };
                let n = match n {
                    Some(n) if n.dot(&p.coords) > 0.0 => -n,
                    Some(n) => n,
                    None => FALLBACK_NORMAL,
                };
                row.push(n);
            }
            row
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// Back-projected cloud with colors (when given) and structured normals.
pub fn depth_to_enriched_cloud(
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    rgb: Option<&RgbImage>,
) -> Result<PointCloud> {
    let cloud = depth_to_cloud(depth, intrinsics, rgb)?;
    cloud.with_normals(normals_from_depth(depth, intrinsics))
}

/// Uniform sample of `n` points without replacement, kept in input order.
pub fn subsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("subsample count must be >= 1".into()));
    }
    if cloud.len() <= n {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec();
    indices.sort_unstable();
    Ok(cloud.select(&indices))
}

/// Keeps points whose foreground score is strictly above `threshold`.
pub fn filter_by_mask(cloud: &PointCloud, scores: &[f64], threshold: f64) -> Result<PointCloud> {
    if scores.len() != cloud.len() {
        return Err(Error::ShapeError(format!(
            "{} scores for {} points",
            scores.len(),
            cloud.len()
        )));
    }
    let keep: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}
