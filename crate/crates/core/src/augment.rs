//! Domain randomization of synthetic RGBD frames.
//!
//! RGB: hue, saturation, brightness, contrast, an optional sharpen/blur,
//! per-channel Gaussian noise and per-channel Perlin noise, in that order.
//! Depth: Gaussian + Perlin shift along the viewing axis, Sobel-edge warping,
//! Perlin hole punching and a synthetic background behind the object, in that
//! order. Rotation augmentation turns the image about its center and updates
//! the pose and box labels.
//!
//! Every random choice is drawn from the config seed, so each operation is a
//! pure function of `(input, config)`.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox2D;
use crate::camera::CameraIntrinsics;
use crate::color::{hsv_to_rgb, rgb_to_hsv};
use crate::error::{Error, Result};
use crate::image::{DepthImage, Mask, Raster, RgbImage};
use crate::noise::{
    derive_seed, grid_gaussian_field, hash_key, keyed_normal, perlin_field, perlin_mask,
    GridNoiseParams, PerlinParams,
};
use crate::se3::PoseSE3;

/// Closed interval `[low, high]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn fixed(x: f64) -> Self {
        Range(x, x)
    }

    pub fn low(&self) -> f64 {
        self.0
    }

    pub fn high(&self) -> f64 {
        self.1
    }

    /// Always consumes one draw so later draws do not shift when a range collapses.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        self.0 + (self.1 - self.0) * u
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(Error::InvalidArgument(format!(
                "{name}: range [{}, {}] needs finite low <= high",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

/// Ranges from which one set of Perlin parameters is drawn per call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerlinRange {
    pub frequency: Range,
    pub amplitude: Range,
    #[serde(default = "single_octave")]
    pub octaves: [u32; 2],
}

fn single_octave() -> [u32; 2] {
    [1, 1]
}

impl PerlinRange {
    pub fn disabled() -> Self {
        Self {
            frequency: Range::fixed(1.0),
            amplitude: Range::fixed(0.0),
            octaves: [1, 1],
        }
    }

    pub fn fixed(frequency: f64, amplitude: f64, octaves: u32) -> Self {
        Self {
            frequency: Range::fixed(frequency),
            amplitude: Range::fixed(amplitude),
            octaves: [octaves, octaves],
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, seed: u64) -> PerlinParams {
        let frequency = self.frequency.sample(rng);
        let amplitude = self.amplitude.sample(rng);
        let octaves = rng.random_range(self.octaves[0]..=self.octaves[1]);
        PerlinParams {
            frequency,
            amplitude,
            octaves,
            seed,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        self.frequency.validate(&format!("{name}.frequency"))?;
        self.amplitude.validate(&format!("{name}.amplitude"))?;
        if self.frequency.low() <= 0.0 {
            return Err(Error::InvalidArgument(format!("{name}.frequency must be > 0")));
        }
        if self.amplitude.low() < 0.0 {
            return Err(Error::InvalidArgument(format!("{name}.amplitude must be >= 0")));
        }
        if self.octaves[0] < 1 || self.octaves[0] > self.octaves[1] {
            return Err(Error::InvalidArgument(format!(
                "{name}.octaves must satisfy 1 <= low <= high"
            )));
        }
        Ok(())
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{name} = {p} outside [0, 1]")));
    }
    Ok(())
}

/// Photometric randomization. Intensities are on the 0–255 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgbAugmentConfig {
    pub brightness_delta: Range,
    pub saturation_scale_range: Range,
    pub hue_delta_degrees: Range,
    pub contrast_scale_range: Range,
    pub sharpen_prob: f64,
    pub blur_prob: f64,
    pub gaussian_sigma_range: Range,
    pub perlin_params_range: PerlinRange,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RgbAugmentConfig {
    fn default() -> Self {
        Self {
            brightness_delta: Range(-25.0, 25.0),
            saturation_scale_range: Range(0.7, 1.3),
            hue_delta_degrees: Range(-8.0, 8.0),
            contrast_scale_range: Range(0.8, 1.2),
            sharpen_prob: 0.2,
            blur_prob: 0.2,
            gaussian_sigma_range: Range(0.0, 6.0),
            perlin_params_range: PerlinRange {
                frequency: Range(2.0, 16.0),
                amplitude: Range(0.0, 12.0),
                octaves: [1, 3],
            },
            seed: 0,
        }
    }
}

impl RgbAugmentConfig {
    /// A config under which `augment_rgb` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            brightness_delta: Range::fixed(0.0),
            saturation_scale_range: Range::fixed(1.0),
            hue_delta_degrees: Range::fixed(0.0),
            contrast_scale_range: Range::fixed(1.0),
            sharpen_prob: 0.0,
            blur_prob: 0.0,
            gaussian_sigma_range: Range::fixed(0.0),
            perlin_params_range: PerlinRange::disabled(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.brightness_delta.validate("rgb.brightness_delta")?;
        self.saturation_scale_range.validate("rgb.saturation_scale_range")?;
        self.hue_delta_degrees.validate("rgb.hue_delta_degrees")?;
        self.contrast_scale_range.validate("rgb.contrast_scale_range")?;
        self.gaussian_sigma_range.validate("rgb.gaussian_sigma_range")?;
        self.perlin_params_range.validate("rgb.perlin_params_range")?;
        check_probability("rgb.sharpen_prob", self.sharpen_prob)?;
        check_probability("rgb.blur_prob", self.blur_prob)?;
        if self.sharpen_prob + self.blur_prob > 1.0 {
            return Err(Error::InvalidArgument(
                "rgb.sharpen_prob + rgb.blur_prob must not exceed 1".into(),
            ));
        }
        if self.saturation_scale_range.low() < 0.0
            || self.contrast_scale_range.low() < 0.0
            || self.gaussian_sigma_range.low() < 0.0
        {
            return Err(Error::InvalidArgument(
                "rgb scales and sigmas must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub max_tilt_radians: f64,
    pub grid_a: GridNoiseParams,
    pub grid_b: GridNoiseParams,
    /// Gap between the farthest foreground point and the nearest background point.
    pub offset_behind: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            max_tilt_radians: 0.35,
            grid_a: GridNoiseParams {
                grid_cols: 4,
                grid_rows: 4,
                sigma: 0.01,
                seed: 0,
            },
            grid_b: GridNoiseParams {
                grid_cols: 16,
                grid_rows: 12,
                sigma: 0.003,
                seed: 1,
            },
            offset_behind: 0.02,
        }
    }
}

impl BackgroundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.offset_behind > 0.0 && self.offset_behind.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "background.offset_behind must be > 0, got {}",
                self.offset_behind
            )));
        }
        if !(0.0..1.5).contains(&self.max_tilt_radians) {
            return Err(Error::InvalidArgument(format!(
                "background.max_tilt_radians must be in [0, 1.5), got {}",
                self.max_tilt_radians
            )));
        }
        self.grid_a.validate()?;
        self.grid_b.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthAugmentConfig {
    /// Per-pixel Gaussian noise, meters.
    pub gaussian_sigma: f64,
    /// Smooth shift along the viewing axis; amplitude in meters.
    pub shift_perlin: PerlinRange,
    /// Displacement field for edge warping; the drawn amplitude is the fraction
    /// of `warp_max_shift` used.
    pub warp_perlin: PerlinRange,
    /// Upper bound on edge displacement, pixels.
    pub warp_max_shift: f64,
    /// Sobel gradient magnitude (meters per pixel, unnormalized kernel) that marks an edge.
    pub sobel_threshold: f64,
    /// Extra dilation of the one-pixel edge band.
    #[serde(default)]
    pub edge_dilation: usize,
    /// `None` disables background synthesis.
    #[serde(default)]
    pub background: Option<BackgroundConfig>,
    pub hole_perlin: PerlinRange,
    pub hole_threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DepthAugmentConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.002,
            shift_perlin: PerlinRange {
                frequency: Range(2.0, 12.0),
                amplitude: Range(0.0, 0.01),
                octaves: [1, 3],
            },
            warp_perlin: PerlinRange {
                frequency: Range(4.0, 16.0),
                amplitude: Range(0.5, 1.0),
                octaves: [1, 2],
            },
            warp_max_shift: 3.0,
            sobel_threshold: 0.1,
            edge_dilation: 0,
            background: Some(BackgroundConfig::default()),
            hole_perlin: PerlinRange {
                frequency: Range(4.0, 16.0),
                amplitude: Range::fixed(1.0),
                octaves: [1, 2],
            },
            hole_threshold: 0.6,
            seed: 0,
        }
    }
}

impl DepthAugmentConfig {
    /// A config under which `augment_depth` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            gaussian_sigma: 0.0,
            shift_perlin: PerlinRange::disabled(),
            warp_perlin: PerlinRange::disabled(),
            warp_max_shift: 0.0,
            sobel_threshold: 1.0,
            edge_dilation: 0,
            background: None,
            hole_perlin: PerlinRange::disabled(),
            hole_threshold: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidArgument("depth.gaussian_sigma must be >= 0".into()));
        }
        if !(self.warp_max_shift >= 0.0 && self.warp_max_shift.is_finite()) {
            return Err(Error::InvalidArgument("depth.warp_max_shift must be >= 0".into()));
        }
        if !(self.sobel_threshold > 0.0) {
            return Err(Error::InvalidArgument("depth.sobel_threshold must be > 0".into()));
        }
        if !self.hole_threshold.is_finite() {
            return Err(Error::InvalidArgument("depth.hole_threshold must be finite".into()));
        }
        self.shift_perlin.validate("depth.shift_perlin")?;
        self.warp_perlin.validate("depth.warp_perlin")?;
        self.hole_perlin.validate("depth.hole_perlin")?;
        if let Some(bg) = &self.background {
            bg.validate()?;
        }
        Ok(())
    }
}

/// When a rotated frame counts as "object out of view".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscardRule {
    /// Rotated box center outside the image.
    #[default]
    CenterOutside,
    /// Center rule, plus: the clipped box keeps less than `fraction` of its area.
    MinVisibleFraction { fraction: f64 },
}

impl DiscardRule {
    pub fn validate(&self) -> Result<()> {
        if let DiscardRule::MinVisibleFraction { fraction } = self {
            check_probability("rotation_discard.fraction", *fraction)?;
        }
        Ok(())
    }
}

/// Complete augmentation document: RGB, depth and rotation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub rgb: RgbAugmentConfig,
    #[serde(default)]
    pub depth: DepthAugmentConfig,
    #[serde(default)]
    pub rotation_discard: DiscardRule,
}

fn schema_v1() -> u32 {
    1
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            rgb: RgbAugmentConfig::default(),
            depth: DepthAugmentConfig::default(),
            rotation_discard: DiscardRule::default(),
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            rgb: RgbAugmentConfig::identity(),
            depth: DepthAugmentConfig::identity(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported augmentation config schema_version {}",
                self.schema_version
            )));
        }
        self.rgb.validate()?;
        self.depth.validate()?;
        self.rotation_discard.validate()
    }

    /// Same settings with RGB and depth seeds mixed with `seed`.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.rgb.seed = hash_key(seed, &[self.rgb.seed, 1]);
        c.depth.seed = hash_key(seed, &[self.depth.seed, 2]);
        c
    }
}

/// One labelled RGBD sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub pose: PoseSE3,
    pub bbox: BoundingBox2D,
    pub mask: Option<Mask>,
}

impl AnnotatedFrame {
    pub fn new(
        rgb: RgbImage,
        depth: DepthImage,
        intrinsics: CameraIntrinsics,
        pose: PoseSE3,
        bbox: BoundingBox2D,
        mask: Option<Mask>,
    ) -> Result<Self> {
        if rgb.dims() != depth.dims() {
            return Err(Error::ShapeError(format!(
                "rgb {:?} and depth {:?} differ",
                rgb.dims(),
                depth.dims()
            )));
        }
        if let Some(m) = &mask {
            if m.dims() != depth.dims() {
                return Err(Error::ShapeError("mask dims differ from depth".into()));
            }
        }
        bbox.validate()?;
        let (w, h) = depth.dims();
        if bbox.x_min < 0.0 || bbox.y_min < 0.0 || bbox.x_max > w as f64 || bbox.y_max > h as f64 {
            return Err(Error::InvalidArgument(format!(
                "bbox {:?} outside {w}x{h} image",
                bbox.to_array()
            )));
        }
        intrinsics.validate()?;
        Ok(Self {
            rgb,
            depth,
            intrinsics,
            pose,
            bbox,
            mask,
        })
    }
}

// ---------------------------------------------------------------------------
// RGB

/// 3x3 convolution with clamped borders on a float RGB buffer.
fn convolve3(buf: &[f64], w: usize, h: usize, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; buf.len()];
    for v in 0..h {
        for u in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (kv, row) in kernel.iter().enumerate() {
                    let sv = (v as i64 + kv as i64 - 1).clamp(0, h as i64 - 1) as usize;
                    for (ku, k) in row.iter().enumerate() {
                        let su = (u as i64 + ku as i64 - 1).clamp(0, w as i64 - 1) as usize;
                        acc += k * buf[3 * (sv * w + su) + c];
                    }
                }
                out[3 * (v * w + u) + c] = acc;
            }
        }
    }
    out
}

const SHARPEN: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]];
const BLUR: [[f64; 3]; 3] = [
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
    [2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0],
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
];

/// Photometric randomization with output clamped to `[0, 255]`.
pub fn augment_rgb(img: &RgbImage, cfg: &RgbAugmentConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "rgb"));
    let hue = cfg.hue_delta_degrees.sample(&mut rng);
    let sat = cfg.saturation_scale_range.sample(&mut rng);
    let brightness = cfg.brightness_delta.sample(&mut rng);
    let contrast = cfg.contrast_scale_range.sample(&mut rng);
    let filter_draw: f64 = rng.random();
    let sigma = cfg.gaussian_sigma_range.sample(&mut rng);
    let perlin = cfg
        .perlin_params_range
        .sample(&mut rng, derive_seed(cfg.seed, "rgb-perlin"));

    let mut buf: Vec<f64> = img.data().iter().map(|x| *x as f64).collect();

    if hue != 0.0 || sat != 1.0 {
        for px in buf.chunks_exact_mut(3) {
            let (hh, s, v) = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
            let (r, g, b) = hsv_to_rgb(hh + hue, (s * sat).clamp(0.0, 1.0), v);
            px[0] = r * 255.0;
            px[1] = g * 255.0;
            px[2] = b * 255.0;
        }
    }
    if brightness != 0.0 {
        buf.iter_mut().for_each(|x| *x += brightness);
    }
    if contrast != 1.0 && !buf.is_empty() {
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        buf.iter_mut().for_each(|x| *x = (*x - mean) * contrast + mean);
    }
    if filter_draw < cfg.sharpen_prob {
        buf = convolve3(&buf, w, h, &SHARPEN);
    } else if filter_draw < cfg.sharpen_prob + cfg.blur_prob {
        buf = convolve3(&buf, w, h, &BLUR);
    }
    if sigma > 0.0 {
        let seed = derive_seed(cfg.seed, "rgb-gauss");
        for (i, x) in buf.iter_mut().enumerate() {
            *x += sigma * keyed_normal(seed, i as u64, 0);
        }
    }
    if perlin.amplitude > 0.0 {
        for c in 0..3 {
            let field = perlin_field(
                w,
                h,
                &PerlinParams {
                    seed: hash_key(perlin.seed, &[c as u64]),
                    ..perlin
                },
            );
            for (i, n) in field.data().iter().enumerate() {
                buf[3 * i + c] += n;
            }
        }
    }
    let data = buf.iter().map(|x| x.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::new(w, h, data)
}

// ---------------------------------------------------------------------------
// Depth

/// Gaussian and smooth Perlin shift along the viewing axis on valid pixels.
pub fn augment_depth_noise(depth: &DepthImage, cfg: &DepthAugmentConfig) -> Result<DepthImage> {
    cfg.validate()?;
    let (w, h) = depth.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "depth-shift"));
    let params = cfg
        .shift_perlin
        .sample(&mut rng, derive_seed(cfg.seed, "depth-shift-field"));
    let field = perlin_field(w, h, &params);
    let gauss_seed = derive_seed(cfg.seed, "depth-gauss");
    let sigma = cfg.gaussian_sigma;
    let data = depth
        .data()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if z <= 0.0 {
                return 0.0;
            }
            let mut out = z as f64 + field.data()[i];
            if sigma > 0.0 {
                out += sigma * keyed_normal(gauss_seed, i as u64, 0);
            }
            out.max(0.0) as f32
        })
        .collect();
    DepthImage::new(w, h, data)
}

/// Unnormalized 3x3 Sobel magnitude above `threshold`, borders clamped.
pub fn sobel_edges(depth: &DepthImage, threshold: f64) -> Mask {
    let (w, h) = depth.dims();
    let z = |u: i64, v: i64| -> f64 {
        let u = u.clamp(0, w as i64 - 1) as usize;
        let v = v.clamp(0, h as i64 - 1) as usize;
        depth.at(u, v) as f64
    };
    Mask::from_fn(w, h, |u, v| {
        let (u, v) = (u as i64, v as i64);
        let gx = (z(u + 1, v - 1) + 2.0 * z(u + 1, v) + z(u + 1, v + 1))
            - (z(u - 1, v - 1) + 2.0 * z(u - 1, v) + z(u - 1, v + 1));
        let gy = (z(u - 1, v + 1) + 2.0 * z(u, v + 1) + z(u + 1, v + 1))
            - (z(u - 1, v - 1) + 2.0 * z(u, v - 1) + z(u + 1, v - 1));
        (gx * gx + gy * gy).sqrt() > threshold
    })
}

/// Moves edge pixels: `out[p] = in[p + round(d(p))]` on the mask, identity elsewhere.
/// Reads from outside the image give an invalid pixel.
pub fn apply_edge_warp(
    depth: &DepthImage,
    edges: &Mask,
    displacement: impl Fn(usize, usize) -> Vector2<f64>,
) -> DepthImage {
    DepthImage::from_fn(depth.width(), depth.height(), |u, v| {
        if !edges.at(u, v) {
            return depth.at(u, v);
        }
        let d = displacement(u, v);
        depth.get_or_empty(u as i64 + d.x.round() as i64, v as i64 + d.y.round() as i64)
    })
}

/// Warps pixels on depth edges along a Perlin displacement field bounded by
/// `warp_max_shift`.
pub fn warp_depth_edges(depth: &DepthImage, cfg: &DepthAugmentConfig) -> Result<DepthImage> {
    cfg.validate()?;
    if cfg.warp_max_shift == 0.0 {
        return Ok(depth.clone());
    }
    let (w, h) = depth.dims();
    let edges = sobel_edges(depth, cfg.sobel_threshold).dilate(cfg.edge_dilation);
    if edges.count() == 0 {
        return Ok(depth.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "depth-warp"));
    let params = cfg
        .warp_perlin
        .sample(&mut rng, derive_seed(cfg.seed, "depth-warp-field"));
    let scale = cfg.warp_max_shift * params.amplitude.min(1.0);
    let unit = PerlinParams {
        amplitude: 1.0,
        ..params
    };
    let fx = perlin_field(w, h, &unit);
    let fy = perlin_field(
        w,
        h,
        &PerlinParams {
            seed: hash_key(params.seed, &[1]),
            ..unit
        },
    );
    let max = cfg.warp_max_shift;
    Ok(apply_edge_warp(depth, &edges, |u, v| {
        let d = Vector2::new(fx.at(u, v), fy.at(u, v)) * scale;
        let n = d.norm();
        if n > max {
            d * (max / n)
        } else {
            d
        }
    }))
}

/// Invalidates pixels under a thresholded Perlin map.
pub fn punch_holes(depth: &DepthImage, cfg: &DepthAugmentConfig) -> Result<DepthImage> {
    cfg.validate()?;
    let (w, h) = depth.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "depth-holes"));
    let params = cfg
        .hole_perlin
        .sample(&mut rng, derive_seed(cfg.seed, "depth-holes-field"));
    let holes = perlin_mask(w, h, &params, cfg.hole_threshold);
    let data = depth
        .data()
        .iter()
        .zip(holes.data())
        .map(|(z, hole)| if *hole { 0.0 } else { *z })
        .collect();
    DepthImage::new(w, h, data)
}

/// Fills invalid pixels with a noisy tilted plane placed just behind the object.
///
/// The plane passes through the optical axis with a random tilt of at most
/// `max_tilt_radians` about a random in-plane axis; two interpolated Gaussian
/// grids are added, then the whole surface is shifted so its nearest filled
/// pixel lies exactly `offset_behind` beyond the farthest foreground pixel.
/// Foreground is `foreground ∩ valid` when a mask is given, else every valid pixel.
pub fn synthesize_background(
    depth: &DepthImage,
    foreground: Option<&Mask>,
    intrinsics: &CameraIntrinsics,
    cfg: &BackgroundConfig,
    seed: u64,
) -> Result<DepthImage> {
    cfg.validate()?;
    let (w, h) = depth.dims();
    if let Some(m) = foreground {
        if m.dims() != depth.dims() {
            return Err(Error::ShapeError("foreground mask dims differ from depth".into()));
        }
    }
    let fg_max = depth
        .data()
        .iter()
        .enumerate()
        .filter(|(i, z)| **z > 0.0 && foreground.is_none_or(|m| m.data()[*i]))
        .map(|(_, z)| *z as f64)
        .fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.max(z))))
        .ok_or(Error::NoForeground)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "background"));
    let tilt = rng.random::<f64>() * cfg.max_tilt_radians;
    let azimuth = rng.random::<f64>() * std::f64::consts::TAU;
    let slope = tilt.tan();
    let (ca, sa) = (azimuth.cos(), azimuth.sin());
    let grid_a = grid_gaussian_field(
        w,
        h,
        &GridNoiseParams {
            seed: hash_key(seed, &[cfg.grid_a.seed, 0xA]),
            ..cfg.grid_a
        },
    );
    let grid_b = grid_gaussian_field(
        w,
        h,
        &GridNoiseParams {
            seed: hash_key(seed, &[cfg.grid_b.seed, 0xB]),
            ..cfg.grid_b
        },
    );
    // Plane z = 1 / (1 - slope·(x_n cos a + y_n sin a)) in normalized image coordinates.
    let raw = |u: usize, v: usize| -> f64 {
        let xn = (u as f64 - intrinsics.cx) / intrinsics.fx;
        let yn = (v as f64 - intrinsics.cy) / intrinsics.fy;
        let denom = (1.0 - slope * (xn * ca + yn * sa)).max(0.05);
        1.0 / denom + grid_a.at(u, v) + grid_b.at(u, v)
    };
    let mut surface = vec![0.0f64; w * h];
    let mut min_fill = f64::INFINITY;
    for v in 0..h {
        for u in 0..w {
            if depth.at(u, v) <= 0.0 {
                let z = raw(u, v);
                surface[v * w + u] = z;
                min_fill = min_fill.min(z);
            }
        }
    }
    if !min_fill.is_finite() {
        return Ok(depth.clone());
    }
    let shift = fg_max + cfg.offset_behind - min_fill;
    let data = depth
        .data()
        .iter()
        .zip(&surface)
        .map(|(z, s)| if *z > 0.0 { *z } else { (s + shift) as f32 })
        .collect();
    DepthImage::new(w, h, data)
}

/// Full depth pipeline: noise, edge warp, holes, then background.
///
/// Background synthesis is skipped when no foreground pixel survives the
/// earlier stages.
pub fn augment_depth(
    depth: &DepthImage,
    foreground: Option<&Mask>,
    intrinsics: &CameraIntrinsics,
    cfg: &DepthAugmentConfig,
) -> Result<DepthImage> {
    let noisy = augment_depth_noise(depth, cfg)?;
    let warped = warp_depth_edges(&noisy, cfg)?;
    let holed = punch_holes(&warped, cfg)?;
    match &cfg.background {
        Some(bg) => match synthesize_background(
            &holed,
            foreground,
            intrinsics,
            bg,
            derive_seed(cfg.seed, "depth-background"),
        ) {
            Err(Error::NoForeground) => Ok(holed),
            other => other,
        },
        None => Ok(holed),
    }
}

// ---------------------------------------------------------------------------
// Rotation

/// Image-plane rotation about the pixel-grid center. `apply` maps source pixel
/// coordinates to rotated ones; content turns counter-clockwise on screen for a
/// positive angle.
#[derive(Debug, Clone, Copy)]
struct ImageRotation {
    center: Vector2<f64>,
    cos: f64,
    sin: f64,
}

impl ImageRotation {
    fn new(width: usize, height: usize, angle: f64) -> Self {
        Self {
            center: Vector2::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    /// Forward map: `c + Rot(-θ)(p - c)`.
    fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        let d = p - self.center;
        self.center + Vector2::new(self.cos * d.x + self.sin * d.y, -self.sin * d.x + self.cos * d.y)
    }

    /// Inverse map used for resampling: `c + Rot(θ)(q - c)`.
    fn source_of(&self, q: Vector2<f64>) -> Vector2<f64> {
        let d = q - self.center;
        self.center + Vector2::new(self.cos * d.x - self.sin * d.y, self.sin * d.x + self.cos * d.y)
    }
}

fn rotate_nearest<R: Raster>(img: &R, rot: &ImageRotation) -> R {
    R::from_fn(img.width(), img.height(), |u, v| {
        let p = rot.source_of(Vector2::new(u as f64, v as f64));
        img.get_or_empty(p.x.round() as i64, p.y.round() as i64)
    })
}

/// Rotates image content by `angle` about the image center and adjusts the labels.
///
/// The camera-frame pose becomes `Rz(-angle) · pose`. The box becomes the hull
/// of its rotated corners clipped to the image. Returns `None` when the frame
/// is discarded under `rule`.
pub fn rotate_frame_with(frame: &AnnotatedFrame, angle: f64, rule: DiscardRule) -> Option<AnnotatedFrame> {
    let (w, h) = frame.depth.dims();
    let rot = ImageRotation::new(w, h, angle);
    let b = &frame.bbox;
    let corners = [
        Vector2::new(b.x_min, b.y_min),
        Vector2::new(b.x_max, b.y_min),
        Vector2::new(b.x_min, b.y_max),
        Vector2::new(b.x_max, b.y_max),
    ]
    .map(|c| rot.apply(c));
    let (cx, cy) = b.center();
    let center = rot.apply(Vector2::new(cx, cy));
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
    if !(0.0..=wmax).contains(&center.x) || !(0.0..=hmax).contains(&center.y) {
        return None;
    }
    let lo = corners.iter().fold(Vector2::repeat(f64::INFINITY), |a, c| a.inf(c));
    let hi = corners.iter().fold(Vector2::repeat(f64::NEG_INFINITY), |a, c| a.sup(c));
    let hull_area = (hi.x - lo.x) * (hi.y - lo.y);
    let clipped = BoundingBox2D {
        x_min: lo.x.clamp(0.0, wmax),
        y_min: lo.y.clamp(0.0, hmax),
        x_max: hi.x.clamp(0.0, wmax),
        y_max: hi.y.clamp(0.0, hmax),
        class_id: b.class_id,
        confidence: b.confidence,
    };
    if clipped.validate().is_err() {
        return None;
    }
    if let DiscardRule::MinVisibleFraction { fraction } = rule {
        if clipped.area() < fraction * hull_area {
            return None;
        }
    }
    Some(AnnotatedFrame {
        rgb: rotate_nearest(&frame.rgb, &rot),
        depth: rotate_nearest(&frame.depth, &rot),
        intrinsics: frame.intrinsics,
        pose: PoseSE3::rot_z(-angle).compose(&frame.pose),
        bbox: clipped,
        mask: frame.mask.as_ref().map(|m| rotate_nearest(m, &rot)),
    })
}

pub fn rotate_frame(frame: &AnnotatedFrame, angle: f64) -> Option<AnnotatedFrame> {
    rotate_frame_with(frame, angle, DiscardRule::CenterOutside)
}

/// A surviving rotation: its index `k` in `0..count` and angle `2πk/count`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedFrame {
    pub index: usize,
    pub angle: f64,
    pub frame: AnnotatedFrame,
}

/// Rotations at `2πk/count`, `k = 0..count`, with discarded ones left out.
pub fn generate_rotations_with(
    frame: &AnnotatedFrame,
    count: usize,
    rule: DiscardRule,
) -> Result<Vec<RotatedFrame>> {
    if count < 1 {
        return Err(Error::InvalidArgument("rotation count must be >= 1".into()));
    }
    Ok((0..count)
        .filter_map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / count as f64;
            rotate_frame_with(frame, angle, rule).map(|f| RotatedFrame {
                index: k,
                angle,
                frame: f,
            })
        })
        .collect())
}

pub fn generate_rotations(frame: &AnnotatedFrame, count: usize) -> Result<Vec<AnnotatedFrame>> {
    Ok(generate_rotations_with(frame, count, DiscardRule::CenterOutside)?
        .into_iter()
        .map(|r| r.frame)
        .collect())
}
