use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use simpose::io;
use simpose::metrics::evaluate_pose;
use simpose::se3::PoseSE3;

use crate::estimate::PoseRow;
use crate::manifest::{Dataset, SCHEMA_VERSION};
use crate::{exit, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Predicted poses, JSON-lines (`frame_id`, `object_id`, `pred_R`, `pred_t`).
    #[arg(long)]
    poses: PathBuf,
    /// Ground truth, JSON-lines (`frame_id`, `gt_R`, `gt_t`); optional when
    /// the pose rows carry their own ground truth.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Manifest whose object registry supplies meshes, diameters and symmetry flags.
    #[arg(long)]
    manifest: PathBuf,
    /// Success threshold as a fraction of the object diameter.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct GtRow {
    frame_id: String,
    #[serde(rename = "gt_R", alias = "R")]
    rotation: [f64; 9],
    #[serde(rename = "gt_t", alias = "t")]
    translation: [f64; 3],
}

#[derive(Debug, Serialize)]
struct ObjectRow {
    object_id: String,
    symmetric: bool,
    metric: &'static str,
    frames: usize,
    successes: usize,
    /// Frames whose estimate failed; counted as misses.
    failed_estimates: usize,
    success_rate: f64,
}

#[derive(Debug, Serialize)]
struct AllRow {
    frames: usize,
    successes: usize,
    /// Pooled over frames.
    success_rate: f64,
    /// Unweighted mean of the per-object rates.
    mean_object_rate: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    schema_version: u32,
    threshold: f64,
    objects: Vec<ObjectRow>,
    all: AllRow,
}

struct Job {
    object_id: String,
    pred: Option<PoseSE3>,
    gt: PoseSE3,
}

pub fn run(_global: &Global, args: Args) -> Result<ExitCode> {
    if !(args.threshold > 0.0) {
        bail!("--threshold must be > 0");
    }
    let ds = Dataset::load(&args.manifest)?;
    let rows: Vec<PoseRow> = io::read_json_lines(&args.poses)?;
    let gt_rows: HashMap<String, GtRow> = match &args.gt {
        Some(p) => io::read_json_lines::<GtRow>(p)?
            .into_iter()
            .map(|g| (g.frame_id.clone(), g))
            .collect(),
        None => HashMap::new(),
    };

    let mut jobs = Vec::with_capacity(rows.len());
    for row in &rows {
        let object_id = row
            .object_id
            .clone()
            .ok_or_else(|| anyhow!("frame {:?}: pose row has no object_id", row.frame_id))?;
        ds.object(&object_id)?;
        let gt = match (&row.gt_r, &row.gt_t) {
            (Some(r), Some(t)) => PoseSE3::from_arrays(r, t)?,
            _ => {
                let g = gt_rows
                    .get(&row.frame_id)
                    .ok_or_else(|| anyhow!("no ground truth for frame {:?}", row.frame_id))?;
                PoseSE3::from_arrays(&g.rotation, &g.translation)?
            }
        };
        let pred = match (&row.pred_r, &row.pred_t, &row.error) {
            (Some(r), Some(t), None) => Some(
                PoseSE3::from_arrays(r, t).with_context(|| format!("frame {:?}: predicted pose", row.frame_id))?,
            ),
            (_, _, Some(_)) => None,
            _ => bail!("frame {:?}: pose row has neither a pose nor an error", row.frame_id),
        };
        jobs.push(Job { object_id, pred, gt });
    }

    let mut meshes: BTreeMap<String, Vec<Point3<f64>>> = BTreeMap::new();
    for j in &jobs {
        if !meshes.contains_key(&j.object_id) {
            let o = ds.object(&j.object_id)?;
            let mesh = io::read_mesh(ds.path(&o.mesh))?;
            meshes.insert(j.object_id.clone(), mesh.vertices().to_vec());
        }
    }

    let hits: Vec<Option<bool>> = jobs
        .par_iter()
        .map(|j| -> Result<Option<bool>> {
            let Some(pred) = &j.pred else { return Ok(None) };
            let o = ds.object(&j.object_id)?;
            let r = evaluate_pose(&meshes[&j.object_id], pred, &j.gt, o.diameter, args.threshold)?;
            Ok(Some(if o.symmetric { r.adds_success } else { r.add_success }))
        })
        .collect::<Result<_>>()?;

    let mut per: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (j, h) in jobs.iter().zip(&hits) {
        let e = per.entry(&j.object_id).or_default();
        e.0 += 1;
        match h {
            Some(true) => e.1 += 1,
            Some(false) => {}
            None => e.2 += 1,
        }
    }
    let objects: Vec<ObjectRow> = per
        .iter()
        .map(|(id, (n, s, f))| {
            let symmetric = ds.manifest.objects[*id].symmetric;
            ObjectRow {
                object_id: id.to_string(),
                symmetric,
                metric: if symmetric { "ADD-S" } else { "ADD" },
                frames: *n,
                successes: *s,
                failed_estimates: *f,
                success_rate: *s as f64 / *n as f64,
            }
        })
        .collect();
    let frames: usize = objects.iter().map(|o| o.frames).sum();
    let successes: usize = objects.iter().map(|o| o.successes).sum();
    let all = AllRow {
        frames,
        successes,
        success_rate: if frames > 0 { successes as f64 / frames as f64 } else { 0.0 },
        mean_object_rate: if objects.is_empty() {
            0.0
        } else {
            objects.iter().map(|o| o.success_rate).sum::<f64>() / objects.len() as f64
        },
    };
    io::write_json(
        &args.out,
        &Report {
            schema_version: SCHEMA_VERSION,
            threshold: args.threshold,
            objects,
            all,
        },
    )?;
    Ok(ExitCode::from(exit::OK))
}
