use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use simpose::augment::{augment_depth, augment_rgb, generate_rotations_with, AnnotatedFrame, AugmentConfig};
use simpose::io::{self, FrameLabel};
use simpose::noise::{derive_seed, hash_key};

use crate::manifest::{file_stem, Dataset, FrameEntry, Manifest, SCHEMA_VERSION};
use crate::{exit, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Input dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; receives images, labels, manifest.json and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Rotations per frame, evenly spaced over a full turn.
    #[arg(long, default_value_t = 16)]
    rotations: usize,
}

#[derive(Debug, Serialize)]
struct Discard {
    frame_id: String,
    rotation_index: usize,
}

#[derive(Debug, Serialize)]
struct Failure {
    frame_id: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct Summary {
    schema_version: u32,
    seed: u64,
    rotations: usize,
    frames_in: usize,
    frames_out: usize,
    discarded: usize,
    failed: usize,
    discards: Vec<Discard>,
    failures: Vec<Failure>,
}

#[derive(Default)]
struct Outcome {
    written: Vec<FrameEntry>,
    discards: Vec<Discard>,
    failure: Option<String>,
}

/// Per-rotation seed; depends only on the master seed, frame id and rotation index.
pub fn frame_seed(master: u64, frame_id: &str, rotation_index: usize) -> u64 {
    hash_key(derive_seed(master, frame_id), &[rotation_index as u64])
}

fn load_frame(ds: &Dataset, f: &FrameEntry) -> Result<(AnnotatedFrame, String)> {
    let rgb = io::read_rgb(ds.path(&f.rgb))?;
    let depth = io::read_depth_png(ds.path(&f.depth))?;
    let label = io::read_label(ds.path(&f.label))?;
    let mask = f.mask.as_ref().map(|m| io::read_mask_png(ds.path(m))).transpose()?;
    let frame = AnnotatedFrame::new(rgb, depth, label.intrinsics()?, label.pose()?, label.bounding_box()?, mask)?;
    Ok((frame, label.object_id))
}

fn process(ds: &Dataset, f: &FrameEntry, cfg: &AugmentConfig, master: u64, rotations: usize, out: &Path) -> Outcome {
    let mut outcome = Outcome::default();
    let result = (|| -> Result<()> {
        let (frame, object_id) = load_frame(ds, f)?;
        let kept = generate_rotations_with(&frame, rotations, cfg.rotation_discard)?;
        let mut next = 0;
        for k in 0..rotations {
            if kept.get(next).is_some_and(|r| r.index == k) {
                next += 1;
            } else {
                outcome.discards.push(Discard {
                    frame_id: f.id.clone(),
                    rotation_index: k,
                });
            }
        }
        let mut pending = Vec::new();
        for r in kept {
            let c = cfg.seeded(frame_seed(master, &f.id, r.index));
            let fr = &r.frame;
            let rgb = augment_rgb(&fr.rgb, &c.rgb)?;
            let depth = augment_depth(&fr.depth, fr.mask.as_ref(), &fr.intrinsics, &c.depth)?;
            let stem = format!("{}_r{:02}", file_stem(&f.id), r.index);
            let entry = FrameEntry {
                id: format!("{}/r{:02}", f.id, r.index),
                rgb: PathBuf::from("rgb").join(format!("{stem}.png")),
                depth: PathBuf::from("depth").join(format!("{stem}.png")),
                label: PathBuf::from("labels").join(format!("{stem}.json")),
                mask: fr.mask.as_ref().map(|_| PathBuf::from("mask").join(format!("{stem}.png"))),
            };
            let label = FrameLabel::new(&object_id, &fr.intrinsics, &fr.pose, &fr.bbox);
            pending.push((entry, rgb, depth, label, fr.mask.clone()));
        }
        for (entry, rgb, depth, label, mask) in pending {
            io::write_rgb_png(out.join(&entry.rgb), &rgb)?;
            io::write_depth_png(out.join(&entry.depth), &depth)?;
            io::write_json(out.join(&entry.label), &label)?;
            if let (Some(m), Some(p)) = (&mask, &entry.mask) {
                io::write_mask_png(out.join(p), m)?;
            }
            outcome.written.push(entry);
        }
        Ok(())
    })();
    if let Err(e) = result {
        outcome.failure = Some(format!("{e:#}"));
        outcome.written.clear();
        outcome.discards.clear();
    }
    outcome
}

pub fn run(global: &Global, args: Args) -> Result<ExitCode> {
    let ds = Dataset::load(&args.manifest)?;
    let cfg: AugmentConfig = global.config()?;
    cfg.validate().context("invalid augmentation config")?;
    if args.rotations < 1 {
        bail!("--rotations must be >= 1");
    }
    let master = global.seed();
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let outcomes: Vec<Outcome> = ds
        .frames()
        .par_iter()
        .map(|f| process(&ds, f, &cfg, master, args.rotations, &args.out))
        .collect();

    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        root: PathBuf::from("."),
        frames: Vec::new(),
        objects: ds.manifest.objects.clone(),
    };
    // Object assets stay where they are; point at them from the new root.
    for o in manifest.objects.values_mut() {
        o.mesh = absolute(&ds.path(&o.mesh))?;
        if let Some(k) = o.keypoints.as_mut() {
            *k = absolute(&ds.path(k))?;
        }
    }
    let mut summary = Summary {
        schema_version: SCHEMA_VERSION,
        seed: master,
        rotations: args.rotations,
        frames_in: ds.frames().len(),
        frames_out: 0,
        discarded: 0,
        failed: 0,
        discards: Vec::new(),
        failures: Vec::new(),
    };
    for (f, o) in ds.frames().iter().zip(outcomes) {
        if let Some(error) = o.failure {
            eprintln!("warning: frame {:?} failed: {error}", f.id);
            summary.failures.push(Failure {
                frame_id: f.id.clone(),
                error,
            });
        }
        manifest.frames.extend(o.written);
        summary.discards.extend(o.discards);
    }
    summary.frames_out = manifest.frames.len();
    summary.discarded = summary.discards.len();
    summary.failed = summary.failures.len();
    io::write_json(args.out.join("manifest.json"), &manifest)?;
    io::write_json(args.out.join("summary.json"), &summary)?;
    Ok(ExitCode::from(if summary.failed > 0 { exit::INPUT_ERROR } else { exit::OK }))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}
