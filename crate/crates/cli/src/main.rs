//! Pipeline entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
//! Structured progress goes to standard error; data only to files under
//! the output directory, which always receives the resolved config
//! snapshot (`config.txt`) first.

mod commands;

use clap::{Parser, Subcommand};
use starcycle::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "starcycle", version, about = "Star-field enhancement pipeline")]
struct Cli {
    /// key=value config file layered over defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; every subsystem derives its stream from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (also the dataset root for synth/fetch)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Never touch the network; cutouts come from cache/fixtures only
    #[arg(long, global = true)]
    offline: bool,

    /// Extra config overrides, highest precedence (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic star-field pairs in the dataset layout
    Synth {
        /// Number of clean/degraded pairs
        #[arg(long)]
        count: Option<usize>,
        /// Image side in pixels (multiple of 8)
        #[arg(long)]
        side: Option<usize>,
        /// Stars per field
        #[arg(long)]
        stars: Option<usize>,
    },
    /// Fetch ground-truth reference cutouts for every catalog object
    Fetch,
    /// Crop mobil frames to square inputs using bbox sidecars
    Preprocess {
        /// Dataset root holding <object>/mobil and <object>.bbox sidecars
        #[arg(long)]
        data: PathBuf,
        /// Output square side
        #[arg(long)]
        target: Option<usize>,
    },
    /// Expand reference images into 36 deterministic variants each
    Augment {
        /// Directory scanned recursively for images
        #[arg(long)]
        input: PathBuf,
    },
    /// Cycle-consistent adversarial training
    Train {
        /// Dataset root in the <object>/{mobil,gt} layout
        #[arg(long)]
        data: PathBuf,
        /// Resume from a training checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Epochs (overrides config)
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Enhance every image in a directory with a trained generator
    Infer {
        /// Training checkpoint (.strc)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input images
        #[arg(long)]
        input: PathBuf,
    },
    /// FID / PSNR / morphology report between two image sets
    Evaluate {
        /// Directory of generated images
        #[arg(long)]
        generated: PathBuf,
        /// Directory of reference images
        #[arg(long)]
        reference: PathBuf,
        /// Label for the report rows
        #[arg(long, default_value = "model")]
        tag: String,
    },
}

/// Errors that are the caller's fault: bad flags, bad config, missing
/// inputs. Everything else is a runtime failure.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve_config(cli: &Cli) -> Result<RunConfig, UsageError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(|e| UsageError(e.to_string()))?;
    }
    cfg.apply_env();
    for kv in &cli.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.apply_kv(key.trim(), value.trim())
            .map_err(|e| UsageError(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if cli.offline {
        cfg.offline = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&cli)?;

    // Subcommand flags are the outermost config layer.
    match &cli.command {
        Command::Synth { count, side, stars } => {
            if let Some(c) = count {
                cfg.synth_count = *c;
            }
            if let Some(s) = side {
                cfg.side = *s;
            }
            if let Some(s) = stars {
                cfg.synth_stars = *s;
            }
        }
        Command::Preprocess { target, .. } => {
            if let Some(t) = target {
                cfg.preprocess_target = *t;
            }
        }
        Command::Train { epochs, .. } => {
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
        }
        _ => {}
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;

    commands::write_run_snapshot(&cfg)?;
    match cli.command {
        Command::Synth { .. } => commands::synth(&cfg),
        Command::Fetch => commands::fetch(&cfg),
        Command::Preprocess { data, .. } => commands::preprocess(&cfg, &data),
        Command::Augment { input } => commands::augment(&cfg, &input),
        Command::Train { data, resume, .. } => commands::train(&cfg, &data, resume.as_deref()),
        Command::Infer { checkpoint, input } => commands::infer(&cfg, &checkpoint, &input),
        Command::Evaluate {
            generated,
            reference,
            tag,
        } => commands::evaluate(&cfg, &generated, &reference, &tag),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
