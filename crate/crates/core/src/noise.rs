//! Seeded procedural noise fields.
//!
//! Every random value here comes from a counter-based generator keyed by the
//! seed and the lattice/pixel coordinates, so a field value does not depend on
//! the order in which pixels are evaluated. Rows are generated in parallel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;

/// Amplitude ratio between successive octaves.
pub const PERSISTENCE: f64 = 0.5;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a seed and a sequence of counters.
#[inline]
pub fn hash_key(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |h, k| mix64(h ^ k))
}

/// Derives an independent sub-seed for a named stream.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the seed.
    let t = tag
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    hash_key(seed, &[t])
}

/// Uniform in `[0, 1)` from 53 high bits.
#[inline]
pub fn unit_uniform(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw keyed by `(seed, a, b)` (Box-Muller).
#[inline]
pub fn keyed_normal(seed: u64, a: u64, b: u64) -> f64 {
    let h1 = hash_key(seed, &[a, b, 0]);
    let h2 = hash_key(seed, &[a, b, 1]);
    let u1 = 1.0 - unit_uniform(h1);
    let u2 = unit_uniform(h2);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Dense real-valued H×W field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    fn from_row_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut data = vec![0.0; width * height];
        if width > 0 {
            data.par_chunks_mut(width).enumerate().for_each(|(v, row)| {
                for (u, out) in row.iter_mut().enumerate() {
                    *out = f(u, v);
                }
            });
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerlinParams {
    /// Lattice cycles across the image width.
    pub frequency: f64,
    /// Output half-range.
    pub amplitude: f64,
    #[serde(default = "one_octave")]
    pub octaves: u32,
    #[serde(default)]
    pub seed: u64,
}

fn one_octave() -> u32 {
    1
}

impl PerlinParams {
    pub fn new(frequency: f64, amplitude: f64, octaves: u32, seed: u64) -> Result<Self> {
        let p = Self {
            frequency,
            amplitude,
            octaves,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "perlin frequency must be > 0, got {}",
                self.frequency
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "perlin amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if self.octaves < 1 {
            return Err(Error::InvalidArgument("perlin octaves must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridNoiseParams {
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GridNoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_cols < 2 || self.grid_rows < 2 {
            return Err(Error::InvalidArgument(format!(
                "noise grid must be at least 2x2, got {}x{}",
                self.grid_cols, self.grid_rows
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid noise sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Unit gradients at multiples of 45°.
const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (0.0, -1.0),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

/// One octave of improved (quintic-fade) gradient noise.
struct PerlinLattice {
    perm: [u8; 512],
}

impl PerlinLattice {
    fn new(seed: u64, octave: u32) -> Self {
        let mut table: [u8; 256] = std::array::from_fn(|i| i as u8);
        // Fisher-Yates driven by the keyed hash.
        for i in (1..256).rev() {
            let j = (hash_key(seed, &[octave as u64, i as u64]) % (i as u64 + 1)) as usize;
            table.swap(i, j);
        }
        let mut perm = [0u8; 512];
        perm[..256].copy_from_slice(&table);
        perm[256..].copy_from_slice(&table);
        Self { perm }
    }

    #[inline]
    fn gradient(&self, ix: i64, iy: i64) -> (f64, f64) {
        let x = (ix & 255) as usize;
        let y = (iy & 255) as usize;
        let h = self.perm[self.perm[x] as usize + y];
        GRADIENTS[(h & 7) as usize]
    }

    /// Raw noise in roughly `[-1/√2, 1/√2]`.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (ix, iy) = (x0 as i64, y0 as i64);
        let (fx, fy) = (x - x0, y - y0);
        let dot = |gx: i64, gy: i64, dx: f64, dy: f64| {
            let g = self.gradient(gx, gy);
            g.0 * dx + g.1 * dy
        };
        let n00 = dot(ix, iy, fx, fy);
        let n10 = dot(ix + 1, iy, fx - 1.0, fy);
        let n01 = dot(ix, iy + 1, fx, fy - 1.0);
        let n11 = dot(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
        let (su, sv) = (fade(fx), fade(fy));
        lerp(lerp(n00, n10, su), lerp(n01, n11, su), sv)
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Multi-octave Perlin field bounded by `params.amplitude`.
///
/// Lattice coordinates are `(pixel center) * frequency / width` on both axes so
/// cells stay square. Octaves double in frequency and halve in weight; the sum
/// is divided by the total weight so the bound is independent of the octave count.
pub fn perlin_field(width: usize, height: usize, params: &PerlinParams) -> Field {
    if params.amplitude == 0.0 || width == 0 || height == 0 {
        return Field::zeros(width, height);
    }
    let octaves = params.octaves.max(1);
    let lattices: Vec<PerlinLattice> = (0..octaves)
        .map(|o| PerlinLattice::new(params.seed, o))
        .collect();
    let weight_sum: f64 = (0..octaves).map(|o| PERSISTENCE.powi(o as i32)).sum();
    let scale = params.frequency / width as f64;
    let amplitude = params.amplitude;
    Field::from_row_fn(width, height, |u, v| {
        let x = (u as f64 + 0.5) * scale;
        let y = (v as f64 + 0.5) * scale;
        let mut acc = 0.0;
        let mut weight = 1.0;
        let mut freq = 1.0;
        for lattice in &lattices {
            acc += weight * lattice.sample(x * freq, y * freq);
            weight *= PERSISTENCE;
            freq *= 2.0;
        }
        let n = (acc / weight_sum) * std::f64::consts::SQRT_2;
        amplitude * n.clamp(-1.0, 1.0)
    })
}

/// Bilinearly interpolated field of i.i.d. `N(0, sigma²)` grid nodes.
///
/// Node `(i, j)` sits on pixel `(i·(W-1)/(cols-1), j·(H-1)/(rows-1))`, so the
/// four corner pixels carry the four corner node values exactly.
pub fn grid_gaussian_field(width: usize, height: usize, params: &GridNoiseParams) -> Field {
    let cols = params.grid_cols.max(2);
    let rows = params.grid_rows.max(2);
    if params.sigma == 0.0 || width == 0 || height == 0 {
        return Field::zeros(width, height);
    }
    let nodes: Vec<f64> = (0..rows)
        .flat_map(|j| (0..cols).map(move |i| (i, j)))
        .map(|(i, j)| params.sigma * keyed_normal(params.seed, i as u64, j as u64))
        .collect();
    let sx = if width > 1 {
        (cols - 1) as f64 / (width - 1) as f64
    } else {
        0.0
    };
    let sy = if height > 1 {
        (rows - 1) as f64 / (height - 1) as f64
    } else {
        0.0
    };
    Field::from_row_fn(width, height, |u, v| {
        let gx = u as f64 * sx;
        let gy = v as f64 * sy;
        let i0 = (gx.floor() as usize).min(cols - 2);
        let j0 = (gy.floor() as usize).min(rows - 2);
        let tx = gx - i0 as f64;
        let ty = gy - j0 as f64;
        let n = |i: usize, j: usize| nodes[j * cols + i];
        let top = lerp(n(i0, j0), n(i0 + 1, j0), tx);
        let bottom = lerp(n(i0, j0 + 1), n(i0 + 1, j0 + 1), tx);
        lerp(top, bottom, ty)
    })
}

/// Pixels where the Perlin field exceeds `threshold`.
pub fn perlin_mask(width: usize, height: usize, params: &PerlinParams, threshold: f64) -> Mask {
    let field = perlin_field(width, height, params);
    Mask::new(
        width,
        height,
        field.data().iter().map(|&x| x > threshold).collect(),
    )
    .expect("field dims")
}
