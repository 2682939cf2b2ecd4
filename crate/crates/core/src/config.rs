//! Run configuration: a flat key=value file, every key overridable by a
//! command-line flag of the same name. The resolved configuration is copied
//! next to a command's outputs so runs stay auditable and reproducible.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stp,
    Mtp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stp => "stp",
            Mode::Mtp => "mtp",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stp" => Ok(Mode::Stp),
            "mtp" => Ok(Mode::Mtp),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected stp or mtp)"
            ))),
        }
    }
}

/// Everything a command needs; see `keys()` for the file/flag names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// raw trajectory table (file) or directory of per-segment tables
    pub raw: Option<PathBuf>,
    /// where dataset record files live
    pub data_dir: PathBuf,
    /// where checkpoints and reports go
    pub out_dir: PathBuf,
    /// explicit checkpoint path; defaults to `<out_dir>/best.sgtr`
    pub checkpoint: Option<PathBuf>,
    /// mandatory; there is no default seed
    pub seed: Option<u64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub d_emb: usize,
    pub d_head: usize,
    pub val_size: usize,
    pub variant: Variant,
    pub mode: Mode,
    /// generate this many synthetic samples instead of reading raw data
    pub synthetic: Option<usize>,
    pub deterministic: bool,
    pub workers: usize,
    pub dump_predictions: bool,
    /// preprocessing: drop history-incomplete neighbors instead of skipping
    /// the frame
    pub drop_incomplete_neighbors: bool,
    pub grad_clip: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            raw: None,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            seed: None,
            lr: 0.001,
            epochs: 50,
            batch: 128,
            d_emb: 32,
            d_head: 32,
            val_size: 10_000,
            variant: Variant::TwoChannel,
            mode: Mode::Stp,
            synthetic: None,
            deterministic: true,
            workers: 1,
            dump_predictions: false,
            drop_incomplete_neighbors: false,
            grad_clip: None,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got '{other}'"))),
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_emb: self.d_emb,
            d_head: self.d_head,
        }
    }

    /// The mandatory seed.
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is mandatory: set it in the config file or pass --seed".into()))
    }

    /// Applies one key=value pair; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("key {key}: {what} '{value}'"));
        match key {
            "raw" => self.raw = Some(PathBuf::from(value)),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "seed" => self.seed = Some(value.parse().map_err(|_| bad("bad integer"))?),
            "lr" => self.lr = value.parse().map_err(|_| bad("bad float"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("bad integer"))?,
            "batch" => self.batch = value.parse().map_err(|_| bad("bad integer"))?,
            "d_emb" => self.d_emb = value.parse().map_err(|_| bad("bad integer"))?,
            "d_head" => self.d_head = value.parse().map_err(|_| bad("bad integer"))?,
            "val_size" => self.val_size = value.parse().map_err(|_| bad("bad integer"))?,
            "variant" => self.variant = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "synthetic" => {
                // accepts both `5000` and `n=5000`
                let v = value.strip_prefix("n=").unwrap_or(value);
                self.synthetic = Some(v.parse().map_err(|_| bad("bad integer"))?);
            }
            "deterministic" => self.deterministic = parse_bool(value)?,
            "workers" => self.workers = value.parse().map_err(|_| bad("bad integer"))?,
            "dump_predictions" => self.dump_predictions = parse_bool(value)?,
            "drop_incomplete_neighbors" => self.drop_incomplete_neighbors = parse_bool(value)?,
            "grad_clip" => self.grad_clip = Some(value.parse().map_err(|_| bad("bad float"))?),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Loads `key = value` lines; '#' starts a comment, blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Serializes the resolved configuration, keys sorted, for the audit copy.
    pub fn render(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("batch", self.batch.to_string()),
            ("d_emb", self.d_emb.to_string()),
            ("d_head", self.d_head.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("deterministic", self.deterministic.to_string()),
            (
                "drop_incomplete_neighbors",
                self.drop_incomplete_neighbors.to_string(),
            ),
            ("dump_predictions", self.dump_predictions.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("mode", self.mode.name().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("val_size", self.val_size.to_string()),
            ("variant", self.variant.name().to_string()),
            ("workers", self.workers.to_string()),
        ];
        if let Some(p) = &self.raw {
            pairs.push(("raw", p.display().to_string()));
        }
        if let Some(p) = &self.checkpoint {
            pairs.push(("checkpoint", p.display().to_string()));
        }
        if let Some(s) = self.seed {
            pairs.push(("seed", s.to_string()));
        }
        if let Some(n) = self.synthetic {
            pairs.push(("synthetic", n.to_string()));
        }
        if let Some(c) = self.grad_clip {
            pairs.push(("grad_clip", c.to_string()));
        }
        pairs.sort_by_key(|(k, _)| *k);
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
