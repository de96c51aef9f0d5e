use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use simpose::image::{DepthImage, RgbImage};
use simpose::io;
use simpose::metrics::{depth_psd, rgb_statistics, RgbStatistics, SpectrumProfile};
use simpose::noise::derive_seed;

use crate::manifest::{Dataset, SCHEMA_VERSION};
use crate::{exit, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Manifest of real captures.
    #[arg(long)]
    real: PathBuf,
    /// Manifest of synthetic frames.
    #[arg(long)]
    synth: PathBuf,
    /// Frames sampled from each set.
    #[arg(long, default_value_t = 50)]
    sample_n: usize,
    /// Radial frequency bins.
    #[arg(long, default_value_t = 32)]
    bins: usize,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Also write `psd.svg` into this directory.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SetReport {
    manifest: String,
    frames_available: usize,
    frames_used: Vec<String>,
    rgb: RgbStatistics,
    psd: SpectrumProfile,
}

#[derive(Debug, Serialize)]
struct RgbDelta {
    brightness_mean: f64,
    brightness_std: f64,
    saturation_mean: f64,
    saturation_std: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    schema_version: u32,
    seed: u64,
    bins: usize,
    real: SetReport,
    synth: SetReport,
    /// synth minus real.
    rgb_delta: RgbDelta,
    psd_delta: Vec<f64>,
    warnings: Vec<String>,
}

fn sample_set(path: &Path, n: usize, seed: u64, bins: usize, warnings: &mut Vec<String>) -> Result<SetReport> {
    let ds = Dataset::load(path)?;
    let total = ds.frames().len();
    if total == 0 {
        bail!("{}: manifest has no frames", path.display());
    }
    let picked: Vec<usize> = if n >= total {
        if n > total {
            let w = format!("{}: requested {n} frames, only {total} available; using all", path.display());
            eprintln!("warning: {w}");
            warnings.push(w);
        }
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "inspect-sample"));
        let mut idx = rand::seq::index::sample(&mut rng, total, n).into_vec();
        idx.sort_unstable();
        idx
    };
    let loaded: Vec<(RgbImage, DepthImage)> = picked
        .par_iter()
        .map(|&i| {
            let f = &ds.frames()[i];
            Ok((io::read_rgb(ds.path(&f.rgb))?, io::read_depth_png(ds.path(&f.depth))?))
        })
        .collect::<Result<_>>()?;
    let (rgbs, depths): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    Ok(SetReport {
        manifest: path.display().to_string(),
        frames_available: total,
        frames_used: picked.iter().map(|&i| ds.frames()[i].id.clone()).collect(),
        rgb: rgb_statistics(&rgbs).with_context(|| format!("rgb statistics for {}", path.display()))?,
        psd: depth_psd(&depths, bins).with_context(|| format!("depth spectrum for {}", path.display()))?,
    })
}

pub fn run(global: &Global, args: Args) -> Result<ExitCode> {
    if args.bins < 1 || args.sample_n < 1 {
        bail!("--bins and --sample-n must be >= 1");
    }
    let seed = global.seed();
    let mut warnings = Vec::new();
    let real = sample_set(&args.real, args.sample_n, seed, args.bins, &mut warnings)?;
    let synth = sample_set(&args.synth, args.sample_n, seed, args.bins, &mut warnings)?;
    let rgb_delta = RgbDelta {
        brightness_mean: synth.rgb.brightness_mean - real.rgb.brightness_mean,
        brightness_std: synth.rgb.brightness_std - real.rgb.brightness_std,
        saturation_mean: synth.rgb.saturation_mean - real.rgb.saturation_mean,
        saturation_std: synth.rgb.saturation_std - real.rgb.saturation_std,
    };
    let psd_delta = synth.psd.power.iter().zip(&real.psd.power).map(|(s, r)| s - r).collect();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        seed,
        bins: args.bins,
        real,
        synth,
        rgb_delta,
        psd_delta,
        warnings,
    };
    if let Some(dir) = &args.svg_dir {
        let svg = psd_svg(&report.real.psd, &report.synth.psd);
        io::write_file(dir.join("psd.svg"), svg.as_bytes())?;
    }
    io::write_json(&args.out, &report)?;
    Ok(ExitCode::from(exit::OK))
}

/// Log-power against frequency, one polyline per set.
fn psd_svg(real: &SpectrumProfile, synth: &SpectrumProfile) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let logs = |p: &SpectrumProfile| -> Vec<f64> { p.power.iter().map(|x| x.max(1e-20).log10()).collect() };
    let (lr, ls) = (logs(real), logs(synth));
    let lo = lr.iter().chain(&ls).cloned().fold(f64::INFINITY, f64::min);
    let hi = lr.iter().chain(&ls).cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let line = |p: &SpectrumProfile, l: &[f64], color: &str| -> String {
        let mut pts = String::new();
        for (f, y) in p.frequencies.iter().zip(l) {
            let x = pad + f / 0.5 * (w - 2.0 * pad);
            let y = h - pad - (y - lo) / span * (h - 2.0 * pad);
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
        format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.trim_end())
    };
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    let _ = writeln!(
        s,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    s.push_str(&line(real, &lr, "#1f77b4"));
    s.push_str(&line(synth, &ls, "#d62728"));
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"30\">log10 power vs cycles/pixel (blue real, red synthetic)</text>");
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"{}\">0</text>", h - 30.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">0.5</text>", w - pad - 10.0, h - 30.0);
    s.push_str("</svg>\n");
    s
}
