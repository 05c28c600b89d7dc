mod bench;
mod commands;
mod config;
mod preview;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::error;
use xembody::sampler::PerturbationMode;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "xembody", version, about = "Robot and viewpoint augmentation for robot demonstration datasets")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,
    /// Abort a trajectory on its first failed frame and exit with status 2
    /// if any trajectory failed.
    #[arg(long, global = true)]
    strict: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render robots at shared gripper poses under shared cameras.
    GenPaired(GenPairedArgs),
    /// Generate synthetic demonstrations for one robot.
    GenDemo(GenDemoArgs),
    /// Replace the robot in every frame of a dataset.
    RoAug(RoAugArgs),
    /// Re-render every frame from a perturbed camera.
    ViAug(ViAugArgs),
    /// Build the four-way cross-product dataset.
    Compose(ComposeArgs),
    /// Print dataset statistics as JSON.
    Stats(StatsArgs),
    /// Write a contact sheet of a trajectory's frames.
    Preview(PreviewArgs),
    /// Measure stage throughput.
    Bench(BenchArgs),
    /// Move poses and actions through a rigid transform.
    Align(AlignArgs),
    /// Convert per-episode image folders and pose tables into a dataset.
    Import(ImportArgs),
    /// Print a dataset's manifest digest.
    Digest(DigestArgs),
    /// Serve stage requests on stdin/stdout with the geometric stages.
    #[command(hide = true)]
    PluginServe,
}

#[derive(Debug, Args)]
pub struct GenPairedArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub robots: Vec<String>,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of background images for pasted variants.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[arg(long)]
    pub cameras_per_pose: Option<usize>,
    #[arg(long)]
    pub size: Option<u32>,
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenDemoArgs {
    #[arg(long)]
    pub robot: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub size: Option<u32>,
    #[arg(long)]
    pub task: Option<String>,
    /// Dataset name (default: the output directory's name).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct RoAugArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub brightness_range: Option<u32>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ViAugArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// consistent or inconsistent.
    #[arg(long)]
    pub mode: Option<PerturbationMode>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Four datasets in role order: D1 on S, D2 on T, D2 moved to S, D1 moved to T.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Also write the JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "traj")]
    pub trajectory: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Frames to show, evenly spaced over the trajectory.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_frames: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub columns: u32,
    /// Tint masked pixels.
    #[arg(long)]
    pub masks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchStage {
    Segment,
    Translate,
    Inpaint,
    Reproject,
    All,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = BenchStage::All)]
    pub stage: BenchStage,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub frames: u32,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u32).range(8..))]
    pub size: u32,
    /// Also write the measurements as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// tx,ty,tz,qw,qx,qy,qz
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub transform: Vec<f64>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct DigestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Some trajectories failed in strict mode; outputs hold the rest.
#[derive(Debug)]
pub struct PartialFailure {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} trajectories failed", self.failed, self.total)
    }
}

impl std::error::Error for PartialFailure {}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = usize::from(w);
    }
    cfg.strict |= cli.strict;
    cfg.roaug.strict |= cfg.strict;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    let workers = cfg.resolved_workers();
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("starting worker pool")?;
    match cli.command {
        Command::GenPaired(a) => commands::gen_paired(a, cfg, workers),
        Command::GenDemo(a) => commands::gen_demo(a, cfg, workers),
        Command::RoAug(a) => commands::ro_aug(a, cfg, workers),
        Command::ViAug(a) => commands::vi_aug(a, cfg, workers),
        Command::Compose(a) => commands::compose(a, cfg, workers),
        Command::Stats(a) => commands::stats(a),
        Command::Preview(a) => preview::preview(a),
        Command::Bench(a) => bench::bench(a, &cfg, workers),
        Command::Align(a) => commands::align(a, cfg, workers),
        Command::Import(a) => commands::import(a, cfg, workers),
        Command::Digest(a) => commands::digest(a),
        Command::PluginServe => commands::plugin_serve(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            if e.downcast_ref::<PartialFailure>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
