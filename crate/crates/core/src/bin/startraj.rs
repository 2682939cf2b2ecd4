//! Command-line entry point.
//!
//! Configuration resolves in three layers: built-in defaults, then the
//! `--config` key=value file, then explicit flags (which share the config
//! keys' names).

use clap::{Args, Parser, Subcommand};
use startraj::commands;
use startraj::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "startraj",
    about = "Interaction-aware vehicle trajectory prediction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each one overrides the config-file key
/// of the same name.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// flat key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    raw: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    d_emb: Option<String>,
    #[arg(long)]
    d_head: Option<String>,
    #[arg(long)]
    val_size: Option<String>,
    /// two_channel, dynamics_only or interaction_only
    #[arg(long)]
    variant: Option<String>,
    /// stp or mtp
    #[arg(long)]
    mode: Option<String>,
    /// generate N synthetic samples instead of reading raw data
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long)]
    deterministic: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    dump_predictions: Option<String>,
    #[arg(long)]
    drop_incomplete_neighbors: Option<String>,
    #[arg(long)]
    grad_clip: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> startraj::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let pairs: [(&str, &Option<String>); 19] = [
            ("raw", &self.raw),
            ("data_dir", &self.data_dir),
            ("out_dir", &self.out_dir),
            ("checkpoint", &self.checkpoint),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("d_emb", &self.d_emb),
            ("d_head", &self.d_head),
            ("val_size", &self.val_size),
            ("variant", &self.variant),
            ("mode", &self.mode),
            ("synthetic", &self.synthetic),
            ("deterministic", &self.deterministic),
            ("workers", &self.workers),
            ("dump_predictions", &self.dump_predictions),
            ("drop_incomplete_neighbors", &self.drop_incomplete_neighbors),
            ("grad_clip", &self.grad_clip),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build dataset files from raw trajectory tables or synthetically
    Preprocess(Overrides),
    /// Train a model variant and checkpoint each epoch
    Train(Overrides),
    /// Score a checkpoint and the constant-velocity baseline
    Evaluate(Overrides),
    /// Dump per-sample predicted trajectories
    Predict(Overrides),
    /// Score only the constant-velocity baseline
    Baseline(Overrides),
}

fn run() -> startraj::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Preprocess(o) => {
            commands::cmd_preprocess(&o.resolve()?)?;
        }
        Command::Train(o) => {
            commands::cmd_train(&o.resolve()?)?;
        }
        Command::Evaluate(o) => {
            commands::cmd_evaluate(&o.resolve()?)?;
        }
        Command::Predict(o) => {
            commands::cmd_predict(&o.resolve()?)?;
        }
        Command::Baseline(o) => {
            commands::cmd_baseline(&o.resolve()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
