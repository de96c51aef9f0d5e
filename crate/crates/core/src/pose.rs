//! Deterministic keypoint voting and rigid fitting.
//!
//! Voting replaces iterative clustering with a fixed-cost procedure: keep the
//! `top_n` points with the smallest predicted offsets, reject candidates farther
//! from their mean than one standard deviation of those distances, and average
//! the rest. The resulting camera-frame keypoints are aligned to the model
//! keypoints with a weighted Kabsch fit.

use nalgebra::{Matrix3, Point3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::PoseSE3;

/// Per-point network output: positions, offsets toward each of `K` keypoints,
/// and foreground scores.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointPrediction {
    points: Vec<Point3<f64>>,
    /// Row-major `N × K`.
    offsets: Vec<Vector3<f64>>,
    scores: Vec<f64>,
    num_keypoints: usize,
}

impl KeypointPrediction {
    pub fn new(
        points: Vec<Point3<f64>>,
        offsets: Vec<Vector3<f64>>,
        scores: Vec<f64>,
        num_keypoints: usize,
    ) -> Result<Self> {
        if num_keypoints < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 keypoints, got {num_keypoints}"
            )));
        }
        let n = points.len();
        if offsets.len() != n * num_keypoints || scores.len() != n {
            return Err(Error::ShapeError(format!(
                "{n} points need {} offsets and {n} scores, got {} and {}",
                n * num_keypoints,
                offsets.len(),
                scores.len()
            )));
        }
        Ok(Self {
            points,
            offsets,
            scores,
            num_keypoints,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn offset(&self, point: usize, keypoint: usize) -> &Vector3<f64> {
        &self.offsets[point * self.num_keypoints + keypoint]
    }
}

/// `K ≥ 3` keypoints, not all collinear.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    keypoints: Vec<Point3<f64>>,
}

/// Relative singular-value cutoff below which a point set counts as collinear.
const RANK_TOL: f64 = 1e-9;

fn second_singular_ratio(points: &[Point3<f64>], weights: Option<&[f64]>) -> f64 {
    let c = centroid(points, weights);
    let mut cov = Matrix3::zeros();
    for (i, p) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let d = p - c;
        cov += w * d * d.transpose();
    }
    let mut s: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] <= 0.0 {
        0.0
    } else {
        (s[1] / s[0]).sqrt()
    }
}

impl KeypointSet {
    pub fn new(keypoints: Vec<Point3<f64>>) -> Result<Self> {
        if keypoints.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "keypoint set needs K >= 3, got {}",
                keypoints.len()
            )));
        }
        if second_singular_ratio(&keypoints, None) < RANK_TOL {
            return Err(Error::DegenerateConfiguration(
                "keypoints are collinear or coincident".into(),
            ));
        }
        Ok(Self { keypoints })
    }

    /// Voted sets may legitimately collapse (e.g. under heavy noise); only the
    /// model side of a fit has to be non-degenerate.
    pub fn new_unchecked_rank(keypoints: Vec<Point3<f64>>) -> Result<Self> {
        if keypoints.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "keypoint set needs K >= 3, got {}",
                keypoints.len()
            )));
        }
        Ok(Self { keypoints })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.keypoints
    }

    pub fn transformed(&self, pose: &PoseSE3) -> KeypointSet {
        KeypointSet {
            keypoints: self.keypoints.iter().map(|p| pose.apply(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteConfig {
    pub top_n: usize,
    pub score_threshold: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self {
            top_n: 128,
            score_threshold: 0.5,
        }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n < 1 {
            return Err(Error::InvalidArgument("top_n must be >= 1".into()));
        }
        Ok(())
    }
}

fn centroid(points: &[Point3<f64>], weights: Option<&[f64]>) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        acc += w * p.coords;
        total += w;
    }
    Point3::from(acc / total)
}

/// Mean of candidates after the one-sigma distance filter.
///
/// `σ` is the population standard deviation of the distances `‖c - μ‖`. A
/// candidate survives when its distance is at most `σ`. If nothing survives,
/// `μ` is returned.
pub fn filtered_mean(candidates: &[Point3<f64>]) -> Point3<f64> {
    let mu = centroid(candidates, None);
    let dist: Vec<f64> = candidates.iter().map(|c| (c - mu).norm()).collect();
    let n = dist.len() as f64;
    let mean_d = dist.iter().sum::<f64>() / n;
    let sigma = (dist.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / n).sqrt();
    let survivors: Vec<Point3<f64>> = candidates
        .iter()
        .zip(&dist)
        .filter(|(_, d)| **d <= sigma)
        .map(|(c, _)| *c)
        .collect();
    if survivors.is_empty() {
        mu
    } else {
        centroid(&survivors, None)
    }
}

/// Indices of the `top_n` foreground points with the smallest offset norm
/// toward `keypoint`, ties broken by ascending index.
fn select_candidates(
    pred: &KeypointPrediction,
    foreground: &[usize],
    keypoint: usize,
    top_n: usize,
) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = foreground
        .iter()
        .map(|&i| (pred.offset(i, keypoint).norm(), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(top_n);
    ranked.into_iter().map(|(_, i)| i).collect()
}

/// Camera-frame keypoints voted from per-point offsets.
pub fn vote_keypoints(pred: &KeypointPrediction, cfg: &VoteConfig) -> Result<KeypointSet> {
    cfg.validate()?;
    let foreground: Vec<usize> = (0..pred.len())
        .filter(|&i| pred.scores[i] > cfg.score_threshold)
        .collect();
    if foreground.len() < cfg.top_n {
        return Err(Error::InsufficientPoints {
            needed: cfg.top_n,
            available: foreground.len(),
        });
    }
    let keypoints = (0..pred.num_keypoints)
        .map(|k| {
            let candidates: Vec<Point3<f64>> = select_candidates(pred, &foreground, k, cfg.top_n)
                .into_iter()
                .map(|i| pred.points[i] + pred.offset(i, k))
                .collect();
            filtered_mean(&candidates)
        })
        .collect();
    KeypointSet::new_unchecked_rank(keypoints)
}

/// Weighted least-squares rigid transform taking `model` onto `observed`.
///
/// Kabsch via SVD of the weighted cross-covariance with a determinant sign
/// correction, so the result is always a proper rotation. `weights = None`
/// means unit weights and runs the same arithmetic.
pub fn fit_rigid(
    model: &KeypointSet,
    observed: &KeypointSet,
    weights: Option<&[f64]>,
) -> Result<PoseSE3> {
    let k = model.len();
    if observed.len() != k {
        return Err(Error::ShapeError(format!(
            "model has {k} keypoints, observed has {}",
            observed.len()
        )));
    }
    let unit;
    let w: &[f64] = match weights {
        Some(w) => {
            if w.len() != k {
                return Err(Error::ShapeError(format!("{} weights for {k} keypoints", w.len())));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(
                    "weights must be non-negative with a positive sum".into(),
                ));
            }
            w
        }
        None => {
            unit = vec![1.0; k];
            &unit
        }
    };
    if second_singular_ratio(model.points(), Some(w)) < RANK_TOL {
        return Err(Error::DegenerateConfiguration(
            "model keypoints (with nonzero weight) are collinear".into(),
        ));
    }
    let src_c = centroid(model.points(), Some(w));
    let dst_c = centroid(observed.points(), Some(w));
    let mut h = Matrix3::zeros();
    for ((p, q), wi) in model.points().iter().zip(observed.points()).zip(w) {
        h += *wi * (p - src_c) * (q - dst_c).transpose();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = dst_c.coords - rotation * src_c.coords;
    PoseSE3::new(rotation, translation)
}

/// `vote_keypoints` followed by `fit_rigid`.
pub fn estimate_pose(
    pred: &KeypointPrediction,
    model: &KeypointSet,
    cfg: &VoteConfig,
) -> Result<PoseSE3> {
    if pred.num_keypoints() != model.len() {
        return Err(Error::ShapeError(format!(
            "prediction has {} keypoints, model has {}",
            pred.num_keypoints(),
            model.len()
        )));
    }
    let voted = vote_keypoints(pred, cfg)?;
    fit_rigid(model, &voted, None)
}
