//! Command implementations behind the CLI. Each command resolves its inputs
//! from a [`RunConfig`], writes its artifacts plus a copy of the resolved
//! configuration, and removes partial outputs when it fails.

use crate::checkpoint;
use crate::config::{Mode, RunConfig};
use crate::data::codec::{read_samples, split_and_serialize, write_samples};
use crate::data::ngsim::{ingest, select_targets, ExtractOptions, Extractor};
use crate::data::synth::{synth_dataset, synth_dataset_mtp};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, evaluate_baseline, write_error_files, write_loss_curve, write_predictions,
    write_rmse_table, EvalOptions, EvalReport,
};
use crate::model::ModelParams;
use crate::train::{train, TrainLog, TrainOptions};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

/// Removes the files registered with it unless disarmed; keeps failed runs
/// from leaving partial artifacts behind.
struct OutputGuard {
    files: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            armed: true,
        }
    }

    fn track(&mut self, p: &Path) -> PathBuf {
        self.files.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn disarm(mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for f in &self.files {
                let _ = fs::remove_file(f);
            }
        }
    }
}

fn write_config_copy(dir: &Path, cfg: &RunConfig, guard: &mut OutputGuard) -> Result<()> {
    let path = guard.track(&dir.join("run_config.txt"));
    fs::write(path, cfg.render())?;
    Ok(())
}

pub fn train_file(cfg: &RunConfig) -> PathBuf {
    cfg.data_dir.join("train.sgds")
}

pub fn val_file(cfg: &RunConfig) -> PathBuf {
    cfg.data_dir.join("val.sgds")
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("best.sgtr"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub name: String,
    pub vehicles: usize,
    pub targets: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub segments: Vec<SegmentSummary>,
    pub total_samples: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

/// Builds the dataset files: either from raw trajectory tables (one table per
/// segment) or synthetically, then splits off the seeded validation set.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    let seed = cfg.seed()?;
    fs::create_dir_all(&cfg.data_dir)?;
    let mut guard = OutputGuard::new();

    let (samples, segments) = match cfg.synthetic {
        Some(n) => {
            if n == 0 {
                return Err(Error::contract("synthetic sample count must be positive"));
            }
            let samples = match cfg.mode {
                Mode::Stp => synth_dataset(n, seed)?,
                Mode::Mtp => synth_dataset_mtp(n, seed)?,
            };
            let mut segs: Vec<SegmentSummary> = Vec::new();
            for s in &samples {
                match segs.iter_mut().find(|g| g.name == s.meta.segment) {
                    Some(g) => g.samples += 1,
                    None => segs.push(SegmentSummary {
                        name: s.meta.segment.clone(),
                        vehicles: 0,
                        targets: 0,
                        samples: 1,
                    }),
                }
            }
            (samples, segs)
        }
        None => {
            let raw = cfg
                .raw
                .as_ref()
                .ok_or_else(|| Error::Config("preprocess needs raw= or synthetic=".into()))?;
            if cfg.mode == Mode::Mtp {
                return Err(Error::Config(
                    "raw multi-target preprocessing is driven by mode=stp segments; \
                     use synthetic= for mtp datasets"
                        .into(),
                ));
            }
            let mut inputs: Vec<PathBuf> = if raw.is_dir() {
                fs::read_dir(raw)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.is_file())
                    .collect()
            } else {
                vec![raw.clone()]
            };
            inputs.sort();
            if inputs.is_empty() {
                return Err(Error::Config(format!(
                    "no raw input files under {}",
                    raw.display()
                )));
            }

            let mut all = Vec::new();
            let mut segs = Vec::new();
            for input in &inputs {
                let name = input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "segment".to_string());
                let file = fs::File::open(input)?;
                let tracks = ingest(BufReader::new(file))?;
                let targets = select_targets(&tracks);
                let extractor = Extractor::new(&tracks);
                let opts = ExtractOptions {
                    segment: name.clone(),
                    drop_incomplete_neighbors: cfg.drop_incomplete_neighbors,
                };
                let samples = extractor.extract_all(&targets, &opts)?;
                println!(
                    "segment {name}: {} vehicles, {} targets, {} samples",
                    tracks.len(),
                    targets.len(),
                    samples.len()
                );
                segs.push(SegmentSummary {
                    name,
                    vehicles: tracks.len(),
                    targets: targets.len(),
                    samples: samples.len(),
                });
                all.extend(samples);
            }
            (all, segs)
        }
    };

    println!("total samples: {}", samples.len());
    let train_path = guard.track(&train_file(cfg));
    let val_path = guard.track(&val_file(cfg));
    let (train_n, val_n) = split_and_serialize(&samples, seed, cfg.val_size, &train_path, &val_path)?;
    println!("split: {train_n} train, {val_n} validation");
    write_config_copy(&cfg.data_dir, cfg, &mut guard)?;
    guard.disarm();
    Ok(PreprocessSummary {
        segments,
        total_samples: samples.len(),
        train_samples: train_n,
        val_samples: val_n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

/// Trains from the dataset files, checkpointing each epoch; the
/// best-validation checkpoint lands in `best.sgtr`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let seed = cfg.seed()?;
    let train_set = read_samples(&train_file(cfg))?;
    let val_path = val_file(cfg);
    let val_set: Option<Vec<Sample>> = if val_path.exists() {
        Some(read_samples(&val_path)?)
    } else {
        None
    };

    fs::create_dir_all(&cfg.out_dir)?;
    let mut guard = OutputGuard::new();
    let mut params = ModelParams::init(cfg.variant, cfg.model_config(), seed);
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        seed,
        workers: cfg.workers,
        deterministic: cfg.deterministic,
        grad_clip: cfg.grad_clip,
        checkpoint_dir: Some(cfg.out_dir.clone()),
        quiet: false,
    };
    let log = train(&mut params, &train_set, val_set.as_deref(), &opts)?;

    let curve_path = guard.track(&cfg.out_dir.join("curve.csv"));
    write_loss_curve(&curve_path, &log.curve)?;
    write_config_copy(&cfg.out_dir, cfg, &mut guard)?;
    guard.disarm();
    Ok(TrainSummary {
        log,
        checkpoint: cfg.out_dir.join("best.sgtr"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub model: EvalReport,
    pub baseline: EvalReport,
}

fn print_report(r: &EvalReport) {
    print!("{:<20}", r.label);
    for v in r.rmse {
        print!("\t{v:.4}");
    }
    println!();
}

/// Scores the checkpoint and the constant-velocity baseline on the
/// validation file and writes the report artifacts.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary> {
    let set = read_samples(&val_file(cfg))?;
    let saved = checkpoint::load(&checkpoint_path(cfg))?;
    if saved.params.variant != cfg.variant {
        log::info!(
            "checkpoint variant {} overrides configured {}",
            saved.params.variant.name(),
            cfg.variant.name()
        );
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let mut guard = OutputGuard::new();

    let opts = EvalOptions {
        batch: cfg.batch.max(1),
        workers: cfg.workers,
    };
    let model = evaluate(&saved.params, &set, &opts)?;
    let baseline = evaluate_baseline(&set)?;

    println!("method\t\t\t1s\t2s\t3s\t4s\t5s  (RMSE, meters)");
    print_report(&model);
    print_report(&baseline);

    let table = guard.track(&cfg.out_dir.join("report.tsv"));
    write_rmse_table(&table, &[&model, &baseline])?;
    for h in crate::eval::HORIZONS_S {
        guard.track(&cfg.out_dir.join(format!("model_errors_{h}s.txt")));
        guard.track(&cfg.out_dir.join(format!("baseline_errors_{h}s.txt")));
    }
    write_error_files(&cfg.out_dir, "model", &model)?;
    write_error_files(&cfg.out_dir, "baseline", &baseline)?;
    if cfg.dump_predictions {
        let preds = guard.track(&cfg.out_dir.join("predictions.tsv"));
        write_predictions(&preds, &set, &saved.params)?;
    }
    write_config_copy(&cfg.out_dir, cfg, &mut guard)?;
    guard.disarm();
    Ok(EvaluateSummary { model, baseline })
}

/// Writes per-sample predicted trajectories for plotting.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PathBuf> {
    let set = read_samples(&val_file(cfg))?;
    let saved = checkpoint::load(&checkpoint_path(cfg))?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut guard = OutputGuard::new();
    let path = guard.track(&cfg.out_dir.join("predictions.tsv"));
    write_predictions(&path, &set, &saved.params)?;
    write_config_copy(&cfg.out_dir, cfg, &mut guard)?;
    guard.disarm();
    println!("wrote {}", path.display());
    Ok(path)
}

/// Scores only the constant-velocity baseline.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<EvalReport> {
    let set = read_samples(&val_file(cfg))?;
    let report = evaluate_baseline(&set)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut guard = OutputGuard::new();
    println!("method\t\t\t1s\t2s\t3s\t4s\t5s  (RMSE, meters)");
    print_report(&report);
    let table = guard.track(&cfg.out_dir.join("baseline.tsv"));
    write_rmse_table(&table, &[&report])?;
    for h in crate::eval::HORIZONS_S {
        guard.track(&cfg.out_dir.join(format!("baseline_errors_{h}s.txt")));
    }
    write_error_files(&cfg.out_dir, "baseline", &report)?;
    write_config_copy(&cfg.out_dir, cfg, &mut guard)?;
    guard.disarm();
    Ok(report)
}

/// Round-trips a sample list through a record file; used by tests and the
/// FFI surface.
pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    write_samples(path, samples)
}
