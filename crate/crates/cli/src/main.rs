use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod augment;
mod estimate;
mod evaluate;
mod grasp;
mod inspect;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "simpose", version, about = "Synthetic RGBD dataset tooling, pose voting, ADD(S) evaluation and grasp planning")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Subcommand-specific JSON configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rotate and randomize every frame of a dataset.
    Augment(augment::Args),
    /// Compare image statistics and depth spectra of two datasets.
    Inspect(inspect::Args),
    /// Vote keypoints and fit poses from prediction blobs.
    Estimate(estimate::Args),
    /// ADD / ADD-S success rates per object.
    Evaluate(evaluate::Args),
    /// Generate grasp candidates for a mesh.
    Grasps(grasp::GraspsArgs),
    /// Pick one grasp against an observed scene.
    Select(grasp::SelectArgs),
}

/// Settings shared by all subcommands.
pub struct Global {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Loads `--config` if given, else the default.
    pub fn config<T: serde::de::DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.config {
            Some(p) => simpose::io::read_json(p).with_context(|| format!("loading config {}", p.display())),
            None => Ok(T::default()),
        }
    }
}

pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT_ERROR: u8 = 1;
    pub const NO_GRASP: u8 = 2;
}

fn run(cli: Cli) -> Result<ExitCode> {
    let global = Global {
        seed: cli.seed,
        config: cli.config,
    };
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Augment(a) => augment::run(&global, a),
        Command::Inspect(a) => inspect::run(&global, a),
        Command::Estimate(a) => estimate::run(&global, a),
        Command::Evaluate(a) => evaluate::run(&global, a),
        Command::Grasps(a) => grasp::run_grasps(&global, a),
        Command::Select(a) => grasp::run_select(&global, a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::INPUT_ERROR)
        }
    }
}
