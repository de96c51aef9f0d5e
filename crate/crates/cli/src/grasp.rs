use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use serde::Serialize;

use simpose::error::Error;
use simpose::grasp::{generate_grasps, select_grasp, GraspGenConfig, GraspRecord, GripperModel, SelectConfig};
use simpose::io::{self, PoseRecord};

use crate::manifest::SCHEMA_VERSION;
use crate::{exit, Global};

#[derive(clap::Args, Debug)]
pub struct GraspsArgs {
    /// Object mesh (.obj or .ply), meters, object frame.
    #[arg(long)]
    mesh: PathBuf,
    /// Gripper description JSON; defaults to a generic parallel-jaw hand.
    #[arg(long)]
    gripper: Option<PathBuf>,
    /// Output grasp file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct SelectArgs {
    /// Grasp file in the object frame.
    #[arg(long)]
    grasps: PathBuf,
    /// Object pose in the camera frame: JSON with `R` (row-major) and `t`.
    #[arg(long)]
    pose: PathBuf,
    /// Scene cloud, camera frame.
    #[arg(long)]
    scene: PathBuf,
    /// JSON array of booleans, true where the scene point belongs to the object.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    gripper: Option<PathBuf>,
    /// Current tool approach direction in the camera frame, `x,y,z`.
    #[arg(long, default_value = "0,0,1", value_parser = parse_vec3)]
    tool_axis: Vector3<f64>,
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

fn load_gripper(path: &Option<PathBuf>) -> Result<GripperModel> {
    let g = match path {
        Some(p) => io::read_json(p)?,
        None => GripperModel::default(),
    };
    g.validate().context("invalid gripper")?;
    Ok(g)
}

pub fn run_grasps(global: &Global, args: GraspsArgs) -> Result<ExitCode> {
    let mut cfg: GraspGenConfig = global.config()?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate().context("invalid grasp generation config")?;
    let gripper = load_gripper(&args.gripper)?;
    let mesh = io::read_mesh(&args.mesh)?;
    match generate_grasps(&mesh, &gripper, &cfg) {
        Ok(grasps) => {
            let records: Vec<GraspRecord> = grasps.iter().map(GraspRecord::from).collect();
            io::write_json(&args.out, &records)?;
            eprintln!("{} grasps written to {}", records.len(), args.out.display());
            Ok(ExitCode::from(exit::OK))
        }
        Err(Error::EmptyResult(msg)) => {
            eprintln!("no grasp found: {msg}");
            Ok(ExitCode::from(exit::NO_GRASP))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct Chosen {
    schema_version: u32,
    index: usize,
    #[serde(flatten)]
    grasp: GraspRecord,
    /// Meters to the nearest obstacle; null when the scene has no obstacle point.
    clearance: Option<f64>,
}

pub fn run_select(global: &Global, args: SelectArgs) -> Result<ExitCode> {
    let cfg: SelectConfig = global.config()?;
    if !(cfg.collision_radius >= 0.0 && cfg.max_approach_angle >= 0.0) {
        bail!("select config values must be non-negative");
    }
    let gripper = load_gripper(&args.gripper)?;
    let records: Vec<GraspRecord> = io::read_json(&args.grasps)?;
    let grasps = records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_grasp().with_context(|| format!("grasp {i}")))
        .collect::<Result<Vec<_>>>()?;
    let pose = io::read_json::<PoseRecord>(&args.pose)?.to_pose()?;
    let scene = io::read_cloud_ply(&args.scene)?;
    let mask: Vec<bool> = io::read_json(&args.mask)?;
    match select_grasp(&grasps, &gripper, &pose, &scene, &mask, &args.tool_axis, &cfg)? {
        Some(s) => {
            let out = Chosen {
                schema_version: SCHEMA_VERSION,
                index: s.index,
                grasp: GraspRecord::from(&s.grasp),
                clearance: s.grasp.quality.is_finite().then_some(s.grasp.quality),
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::from(exit::OK))
        }
        None => {
            eprintln!("no grasp survives the approach and clearance filters");
            Ok(ExitCode::from(exit::NO_GRASP))
        }
    }
}
