//! `stereo` command line: weather data generation, evaluation, toy training,
//! feature inspection and synthetic datasets.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use stereo_core::CoreError;
use stereo_datagen::{BackendError, DatagenError};
use stereo_nets::NetError;

use crate::config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "stereo", version, about = "Weather-robust stereo matching toolkit")]
pub struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Re-render a stereo dataset under weather prompts, keeping its disparity
    Generate(GenerateArgs),
    /// Score predictions against ground truth (EPE and D1 per weather subset)
    Eval(EvalArgs),
    /// Train the small stereo network on a dataset
    TrainToy(TrainArgs),
    /// Write per-scale feature statistics and PCA images for one image
    InspectFeatures(InspectArgs),
    /// Write a shifted-texture stereo dataset with exact disparity
    MakeSynthetic(SynthArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON config; flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub src_root: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out_root: Option<PathBuf>,
    /// Comma separated: rainy,foggy,snowy,cloudy,sunny
    #[arg(long)]
    pub conditions: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mock or real (HTTP endpoints from the config)
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `<id>.pfm` predictions
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Model checkpoint to run instead of reading predictions
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub gt_root: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// and (default) or or
    #[arg(long)]
    pub d1_mode: Option<String>,
    /// Average per frame instead of pooling pixels
    #[arg(long)]
    pub frame_weighted: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate training-set EPE every this many steps (0 = only at the end)
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop as soon as an evaluation reaches this EPE
    #[arg(long)]
    pub target_epe: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RGB image to encode
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Use the encoder of this checkpoint instead of seeded weights
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_root: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// HxW, both multiples of 32
    #[arg(long)]
    pub resolution: Option<String>,
    /// constant:<d>, gradient:<from>:<to>, blocky:<min>:<max>:<block> or mixed:<max>
    #[arg(long)]
    pub pattern: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Error class and exit code of a failed run.
pub fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return ("config", 2);
        }
        if let Some(e) = cause.downcast_ref::<DatagenError>() {
            return match e {
                DatagenError::Config(_) | DatagenError::Unwritable { .. } => ("config", 2),
                DatagenError::Backend(_) => ("backend", 1),
                _ => ("data", 1),
            };
        }
        if cause.is::<BackendError>() {
            return ("backend", 1);
        }
        if cause.is::<NetError>() {
            return ("model", 1);
        }
        if cause.is::<CoreError>() {
            return ("data", 1);
        }
        if cause.is::<std::io::Error>() {
            return ("io", 1);
        }
    }
    ("runtime", 1)
}

fn init_logging(level: &str) -> Result<(), String> {
    let filter = log::LevelFilter::from_str(level).map_err(|_| format!("invalid log level {level:?}"))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = init_logging(&cli.log_level) {
        eprintln!("error[usage]: {msg}");
        return 2;
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::TrainToy(a) => commands::train::run(a),
        Command::InspectFeatures(a) => commands::inspect::run(a),
        Command::MakeSynthetic(a) => commands::synthetic::run(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let (class, code) = classify(&e);
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("error[{class}]: {msg}");
            code
        }
    }
}
