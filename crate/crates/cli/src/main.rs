//! `hggdp`: data generation, masks, training, reconstruction, evaluation and
//! ablation sweeps for score-based MRI reconstruction.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Malformed or inconsistent configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const DATA_DIR_ENV: &str = "HGGDP_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "hggdp", version, about = "Score-based MRI reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent reconstructions.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Logging interval in iterations.
    #[arg(long, global = true)]
    pub log_every: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a k-space sampling mask.
    MakeMask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<hggdp::MaskKind>,
        /// `HxW` or a single side length.
        #[arg(long)]
        size: Option<String>,
        /// Acceleration factor.
        #[arg(short = 'R', long = "acceleration")]
        acceleration: Option<f64>,
    },
    /// Train a score network on patches of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Reconstruct an image from undersampled k-space.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        kspace: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Compare a reconstruction against a reference and emit a CSV row.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "image")]
        id: String,
        #[arg(long, default_value = "")]
        mask_kind: String,
        #[arg(short = 'R', long = "acceleration", default_value_t = 0.0)]
        acceleration: f64,
    },
    /// Sweep one reconstruction setting over a grid and tabulate metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dimension: Option<config::AblationDimension>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<String>>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Number of held-out images to use.
        #[arg(long)]
        images: Option<usize>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hggdp::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(buf, "{} {} {}", record.level(), record.module_path().unwrap_or("-"), record.args())
        })
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::MakeMask { common, kind, size, acceleration } => {
            commands::make_mask(&common, kind, size.as_deref(), acceleration)
        }
        Command::Train { common, manifest } => commands::train(&common, manifest),
        Command::Reconstruct { common, checkpoint, kspace, image, mask, ground_truth } => {
            commands::reconstruct(&common, checkpoint, kspace, image, mask, ground_truth)
        }
        Command::Evaluate { common, recon, reference, id, mask_kind, acceleration } => {
            commands::evaluate(&common, &recon, &reference, id, mask_kind, acceleration)
        }
        Command::Ablate { common, dimension, grid, manifest, checkpoint, checkpoint_dir, images } => {
            commands::ablate(&common, dimension, grid, manifest, checkpoint, checkpoint_dir, images)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
