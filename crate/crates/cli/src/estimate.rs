use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use simpose::io::{self, PredictionSidecar};
use simpose::pose::{fit_rigid, vote_keypoints, KeypointSet, VoteConfig};

use crate::manifest::Dataset;
use crate::{exit, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory of `<stem>.json` sidecars with matching `<stem>.bin` blobs.
    #[arg(long)]
    predictions: PathBuf,
    /// Object keypoints as `OBJECT_ID=path.json`; repeatable.
    #[arg(long = "keypoints", value_parser = parse_keypoint_arg)]
    keypoints: Vec<(String, PathBuf)>,
    /// Take keypoint files from this manifest's object registry.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output JSON-lines, one row per sidecar in file-name order.
    #[arg(long)]
    out: PathBuf,
    /// Leave out per-stage timings so the output is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

fn parse_keypoint_arg(s: &str) -> Result<(String, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or("expected OBJECT_ID=PATH")?;
    Ok((id.to_string(), PathBuf::from(path)))
}

/// Milliseconds per stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub preprocessing: f64,
    pub voting: f64,
    pub fit: f64,
}

/// One frame: a pose, or an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRow {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    #[serde(rename = "pred_R", default, skip_serializing_if = "Option::is_none")]
    pub pred_r: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_t: Option<[f64; 3]>,
    #[serde(rename = "gt_R", default, skip_serializing_if = "Option::is_none")]
    pub gt_r: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_t: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<Timing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn estimate_one(path: &Path, models: &BTreeMap<String, KeypointSet>, cfg: &VoteConfig, timing: bool) -> PoseRow {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut row = PoseRow {
        frame_id: stem,
        object_id: None,
        pred_r: None,
        pred_t: None,
        gt_r: None,
        gt_t: None,
        timing_ms: None,
        error: None,
    };
    let t0 = Instant::now();
    let file = match io::read_prediction(path) {
        Ok(f) => f,
        Err(e) => {
            // Keep ids from the sidecar when only the blob is bad.
            if let Ok(sc) = io::read_json::<PredictionSidecar>(path) {
                row.frame_id = sc.frame_id;
                row.object_id = Some(sc.object_id);
            }
            row.error = Some(e.to_string());
            return row;
        }
    };
    let preprocessing = ms(t0);
    row.frame_id = file.sidecar.frame_id.clone();
    row.object_id = Some(file.sidecar.object_id.clone());
    if let Some(gt) = &file.sidecar.gt {
        row.gt_r = Some(gt.rotation);
        row.gt_t = Some(gt.translation);
    }
    let Some(model) = models.get(&file.sidecar.object_id) else {
        row.error = Some(format!("no keypoints for object {:?}", file.sidecar.object_id));
        return row;
    };
    if model.len() != file.prediction.num_keypoints() {
        row.error = Some(format!(
            "prediction has {} keypoints, model has {}",
            file.prediction.num_keypoints(),
            model.len()
        ));
        return row;
    }
    let t1 = Instant::now();
    let voted = match vote_keypoints(&file.prediction, cfg) {
        Ok(v) => v,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let voting = ms(t1);
    let t2 = Instant::now();
    match fit_rigid(model, &voted, None) {
        Ok(pose) => {
            let fit = ms(t2);
            row.pred_r = Some(pose.rotation_array());
            row.pred_t = Some(pose.translation_array());
            if timing {
                row.timing_ms = Some(Timing {
                    preprocessing,
                    voting,
                    fit,
                });
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

pub fn run(global: &Global, args: Args) -> Result<ExitCode> {
    let cfg: VoteConfig = global.config()?;
    cfg.validate().context("invalid vote config")?;
    let mut sources: Vec<(String, PathBuf)> = Vec::new();
    if let Some(m) = &args.manifest {
        let ds = Dataset::load(m)?;
        for (id, o) in &ds.manifest.objects {
            if let Some(k) = &o.keypoints {
                sources.push((id.clone(), ds.path(k)));
            }
        }
    }
    sources.extend(args.keypoints.iter().cloned());
    let mut models = BTreeMap::new();
    for (id, path) in sources {
        let pts = io::read_keypoints(&path)?;
        let set = KeypointSet::new(pts).with_context(|| format!("keypoints {}", path.display()))?;
        models.insert(id, set);
    }
    if models.is_empty() {
        bail!("no keypoint files given (use --keypoints or --manifest)");
    }
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(&args.predictions)
        .with_context(|| format!("reading {}", args.predictions.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    sidecars.retain(|p| p.extension().is_some_and(|e| e == "json"));
    sidecars.sort();
    if sidecars.is_empty() {
        bail!("no prediction sidecars in {}", args.predictions.display());
    }
    let rows: Vec<PoseRow> = sidecars
        .par_iter()
        .map(|p| estimate_one(p, &models, &cfg, !args.no_timing))
        .collect();
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} frames failed", rows.len());
    }
    io::write_file(&args.out, &io::to_json_lines(&rows)?)?;
    Ok(ExitCode::from(exit::OK))
}
