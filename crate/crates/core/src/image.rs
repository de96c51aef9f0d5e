//! Dense pixel rasters. Row-major everywhere; pixel `(u, v)` is `(column, row)`.

use crate::error::{Error, Result};

/// Common access for the raster types so resampling code can be written once.
pub trait Raster: Sized {
    type Pixel: Copy + PartialEq;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn get(&self, u: usize, v: usize) -> Self::Pixel;
    /// Pixel value used for padding (zero / invalid).
    fn empty_pixel() -> Self::Pixel;
    fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> Self::Pixel) -> Self;

    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn get_or_empty(&self, u: i64, v: i64) -> Self::Pixel {
        if u < 0 || v < 0 || u >= self.width() as i64 || v >= self.height() as i64 {
            Self::empty_pixel()
        } else {
            self.get(u as usize, v as usize)
        }
    }
}

/// Depth raster in meters. `0.0` is the single "no measurement" value.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeError(format!(
                "depth data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(value.is_finite() && value >= 0.0);
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds from values that may be negative or non-finite; those become invalid.
    pub fn from_fn_sanitized(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let z = f(u, v);
                data.push(if z.is_finite() && z > 0.0 { z } else { 0.0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.at(u, v) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    pub fn validity_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|d| *d > 0.0).collect(),
        }
    }
}

impl Raster for DepthImage {
    type Pixel = f32;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn get(&self, u: usize, v: usize) -> f32 {
        self.at(u, v)
    }
    fn empty_pixel() -> f32 {
        0.0
    }
    fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f32) -> Self {
        Self::from_fn_sanitized(width, height, f)
    }
}

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::ShapeError(format!(
                "rgb data has {} bytes, expected 3x{}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

impl Raster for RgbImage {
    type Pixel = [u8; 3];

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn get(&self, u: usize, v: usize) -> [u8; 3] {
        self.pixel(u, v)
    }
    fn empty_pixel() -> [u8; 3] {
        [0, 0, 0]
    }
    fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for v in 0..height {
            for u in 0..width {
                data.extend_from_slice(&f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }
}

/// Binary per-pixel map (segmentation masks, hole masks, edge masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeError(format!(
                "mask has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|m| **m).count()
    }

    /// Fraction of set pixels.
    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    /// Square-neighborhood dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        Mask::from_fn(self.width, self.height, |u, v| {
            for dv in -r..=r {
                for du in -r..=r {
                    if self.get_or_empty(u as i64 + du, v as i64 + dv) {
                        return true;
                    }
                }
            }
            false
        })
    }
}

impl Raster for Mask {
    type Pixel = bool;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn get(&self, u: usize, v: usize) -> bool {
        self.at(u, v)
    }
    fn empty_pixel() -> bool {
        false
    }
    fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }
}
