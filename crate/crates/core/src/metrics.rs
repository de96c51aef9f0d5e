//! Pose error metrics and dataset inspection statistics.

use std::collections::HashMap;

use nalgebra::Point3;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::color::rgb_to_hsv;
use crate::error::{Error, Result};
use crate::image::{DepthImage, Raster, RgbImage};
use crate::se3::PoseSE3;

fn check_nonempty(points: &[Point3<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("model point set is empty".into()));
    }
    Ok(())
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_metric(model_points: &[Point3<f64>], pred: &PoseSE3, gt: &PoseSE3) -> Result<f64> {
    check_nonempty(model_points)?;
    let sum: f64 = model_points
        .iter()
        .map(|v| (pred.apply(v) - gt.apply(v)).norm())
        .sum();
    Ok(sum / model_points.len() as f64)
}

/// Mean over predicted points of the distance to the closest ground-truth point.
///
/// Exact `O(N²)` scan. The per-point minima are computed in parallel and summed
/// in index order, so the result does not depend on the thread count.
pub fn adds_metric(model_points: &[Point3<f64>], pred: &PoseSE3, gt: &PoseSE3) -> Result<f64> {
    check_nonempty(model_points)?;
    let p: Vec<Point3<f64>> = model_points.iter().map(|v| pred.apply(v)).collect();
    let g: Vec<Point3<f64>> = model_points.iter().map(|v| gt.apply(v)).collect();
    let minima: Vec<f64> = p
        .par_iter()
        .map(|a| g.iter().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(minima.iter().sum::<f64>() / minima.len() as f64)
}

/// Uniform hash grid for exact nearest-neighbor queries.
struct PointGrid<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    origin: Point3<f64>,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    max_ring: i64,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Point3<f64>]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let volume = ext.iter().map(|e| e.max(1e-9)).product::<f64>();
        let cell = (volume / points.len() as f64).cbrt().max(ext.max() / 256.0).max(1e-9);
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let key = |p: &Point3<f64>| {
            let r = (p - lo) / cell;
            (r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64)
        };
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p)).or_default().push(i);
        }
        let max_ring = (ext.max() / cell).ceil() as i64 + 1;
        Self {
            points,
            cell,
            origin: lo,
            cells,
            max_ring,
        }
    }

    fn nearest_distance(&self, q: &Point3<f64>) -> f64 {
        let r = (q - self.origin) / self.cell;
        let c = (r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64);
        // Distance from q to the outside of its own cell bounds how far
        // unvisited rings can be.
        let own_lo = (q - self.origin)
            - nalgebra::Vector3::new(c.0 as f64, c.1 as f64, c.2 as f64) * self.cell;
        let margin = own_lo
            .iter()
            .map(|d| d.min(self.cell - d))
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let mut best = f64::INFINITY;
        let outside = [c.0, c.1, c.2]
            .iter()
            .any(|v| *v < -2 || *v > self.max_ring + 2);
        if outside {
            for p in self.points {
                best = best.min((q - p).norm());
            }
            return best;
        }
        for ring in 0..=self.max_ring + 3 {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(idx) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            for &i in idx {
                                best = best.min((q - self.points[i]).norm());
                            }
                        }
                    }
                }
            }
            if best <= ring as f64 * self.cell + margin {
                break;
            }
        }
        best
    }
}

/// Grid-accelerated [`adds_metric`]. Nearest-neighbor search is exact, so the
/// result equals the brute-force value up to summation order (identical here).
pub fn adds_metric_grid(model_points: &[Point3<f64>], pred: &PoseSE3, gt: &PoseSE3) -> Result<f64> {
    check_nonempty(model_points)?;
    let g: Vec<Point3<f64>> = model_points.iter().map(|v| gt.apply(v)).collect();
    let grid = PointGrid::new(&g);
    let minima: Vec<f64> = model_points
        .par_iter()
        .map(|v| grid.nearest_distance(&pred.apply(v)))
        .collect();
    Ok(minima.iter().sum::<f64>() / minima.len() as f64)
}

/// Both error measures for one frame and the success flags at `threshold · diameter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddResult {
    pub add: f64,
    pub adds: f64,
    pub diameter: f64,
    pub add_success: bool,
    pub adds_success: bool,
}

impl AddResult {
    pub fn from_errors(add: f64, adds: f64, diameter: f64, threshold_fraction: f64) -> Self {
        let limit = threshold_fraction * diameter;
        Self {
            add,
            adds,
            diameter,
            add_success: add < limit,
            adds_success: adds < limit,
        }
    }

    pub fn error(&self, symmetric: bool) -> f64 {
        if symmetric {
            self.adds
        } else {
            self.add
        }
    }
}

pub fn evaluate_pose(
    model_points: &[Point3<f64>],
    pred: &PoseSE3,
    gt: &PoseSE3,
    diameter: f64,
    threshold_fraction: f64,
) -> Result<AddResult> {
    if !(diameter > 0.0) {
        return Err(Error::InvalidArgument(format!("diameter must be > 0, got {diameter}")));
    }
    let add = add_metric(model_points, pred, gt)?;
    let adds = adds_metric(model_points, pred, gt)?;
    Ok(AddResult::from_errors(add, adds, diameter, threshold_fraction))
}

/// Fraction of results whose error (ADD-S when `symmetric`, else ADD) is
/// strictly below `threshold_fraction · diameter`.
pub fn success_rate(results: &[AddResult], symmetric: bool, threshold_fraction: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no results to score".into()));
    }
    let hits = results
        .iter()
        .filter(|r| r.error(symmetric) < threshold_fraction * r.diameter)
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Radially averaged power spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    /// Bin centers in cycles per pixel.
    pub frequencies: Vec<f64>,
    /// Mean `|F|²/(W·H)` of the frequency samples in each bin, averaged over images.
    pub power: Vec<f64>,
    /// Frequency samples per bin (same for every image).
    pub counts: Vec<usize>,
}

impl SpectrumProfile {
    /// Count-weighted mean power; equals the mean per-image variance (Parseval).
    pub fn total_power(&self) -> f64 {
        let n: usize = self.counts.iter().sum();
        self.power
            .iter()
            .zip(&self.counts)
            .map(|(p, c)| p * *c as f64)
            .sum::<f64>()
            / n as f64
    }

    /// Bin containing frequency `f` (cycles/pixel).
    pub fn bin_of(&self, f: f64) -> usize {
        radial_bin(f, self.power.len())
    }
}

fn radial_bin(f: f64, bins: usize) -> usize {
    ((f / 0.5 * bins as f64).floor() as usize).min(bins - 1)
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

/// Per-bin power of one image after mean-filling holes and removing the mean.
fn image_spectrum(depth: &DepthImage, bins: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let (w, h) = depth.dims();
    let valid: Vec<f64> = depth.data().iter().filter(|z| **z > 0.0).map(|z| *z as f64).collect();
    let fill = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    let filled: Vec<f64> = depth
        .data()
        .iter()
        .map(|z| if *z > 0.0 { *z as f64 } else { fill })
        .collect();
    let mean = filled.iter().sum::<f64>() / filled.len() as f64;
    let mut buf: Vec<Complex<f64>> = filled.iter().map(|x| Complex::new(x - mean, 0.0)).collect();

    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for u in 0..w {
        for v in 0..h {
            col[v] = buf[v * w + u];
        }
        col_fft.process(&mut col);
        for v in 0..h {
            buf[v * w + u] = col[v];
        }
    }

    let norm = (w * h) as f64;
    let mut sums = vec![0.0; bins];
    for v in 0..h {
        let fy = signed_frequency(v, h);
        for u in 0..w {
            let fx = signed_frequency(u, w);
            let b = radial_bin((fx * fx + fy * fy).sqrt(), bins);
            sums[b] += buf[v * w + u].norm_sqr() / norm;
        }
    }
    sums
}

fn bin_counts(w: usize, h: usize, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for v in 0..h {
        let fy = signed_frequency(v, h);
        for u in 0..w {
            let fx = signed_frequency(u, w);
            counts[radial_bin((fx * fx + fy * fy).sqrt(), bins)] += 1;
        }
    }
    counts
}

/// Average radial power spectral density of a set of depth images.
///
/// Bin edges are linear in `|f|` from 0 to Nyquist (0.5 cycles/pixel); corner
/// frequencies above Nyquist fold into the last bin so the profile still sums
/// to the full signal power.
pub fn depth_psd(depths: &[DepthImage], bins: usize) -> Result<SpectrumProfile> {
    let first = depths
        .first()
        .ok_or_else(|| Error::InputError("no depth images given".into()))?;
    if bins == 0 {
        return Err(Error::InputError("bin count must be >= 1".into()));
    }
    let (w, h) = first.dims();
    if w == 0 || h == 0 {
        return Err(Error::InputError("empty depth image".into()));
    }
    if let Some(d) = depths.iter().find(|d| d.dims() != (w, h)) {
        return Err(Error::InputError(format!(
            "depth images differ in size: {:?} vs {:?}",
            d.dims(),
            (w, h)
        )));
    }
    let counts = bin_counts(w, h, bins);
    let per_image: Vec<Vec<f64>> = depths
        .par_iter()
        .map_init(FftPlanner::new, |planner, d| image_spectrum(d, bins, planner))
        .collect();
    let mut power = vec![0.0; bins];
    for sums in &per_image {
        for (p, s) in power.iter_mut().zip(sums) {
            *p += s;
        }
    }
    for (p, c) in power.iter_mut().zip(&counts) {
        *p = if *c > 0 {
            *p / (*c as f64 * depths.len() as f64)
        } else {
            0.0
        };
    }
    let frequencies = (0..bins).map(|b| (b as f64 + 0.5) * 0.5 / bins as f64).collect();
    Ok(SpectrumProfile {
        frequencies,
        power,
        counts,
    })
}

/// Pooled HSV brightness (V) and saturation (S) statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbStatistics {
    pub brightness_mean: f64,
    pub brightness_std: f64,
    pub saturation_mean: f64,
    pub saturation_std: f64,
}

pub fn rgb_statistics(images: &[RgbImage]) -> Result<RgbStatistics> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no rgb images given".into()));
    }
    // (n, Σv, Σv², Σs, Σs²) per image, combined in list order.
    let partial: Vec<(usize, f64, f64, f64, f64)> = images
        .par_iter()
        .map(|img| {
            let mut acc = (0usize, 0.0, 0.0, 0.0, 0.0);
            for px in img.data().chunks_exact(3) {
                let (_, s, v) = rgb_to_hsv(
                    px[0] as f64 / 255.0,
                    px[1] as f64 / 255.0,
                    px[2] as f64 / 255.0,
                );
                acc.0 += 1;
                acc.1 += v;
                acc.2 += v * v;
                acc.3 += s;
                acc.4 += s * s;
            }
            acc
        })
        .collect();
    let (n, sv, svv, ss, sss) = partial.iter().fold((0usize, 0.0, 0.0, 0.0, 0.0), |a, b| {
        (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3, a.4 + b.4)
    });
    if n == 0 {
        return Err(Error::EmptyInput("rgb images contain no pixels".into()));
    }
    let n = n as f64;
    let std = |sum: f64, sq: f64| ((sq / n) - (sum / n).powi(2)).max(0.0).sqrt();
    Ok(RgbStatistics {
        brightness_mean: sv / n,
        brightness_std: std(sv, svv),
        saturation_mean: ss / n,
        saturation_std: std(ss, sss),
    })
}
