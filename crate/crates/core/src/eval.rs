//! RMSE evaluation, the box-plot mean, the constant-velocity baseline and
//! report files.
//!
//! Two error summaries are reported per horizon: the root of the mean squared
//! Euclidean error over the evaluation set, and the plain mean of the
//! per-sample Euclidean errors (the statistic behind box-plot markers). The
//! former is never smaller than the latter.

use crate::data::{Sample, T_FUT, T_HIST};
use crate::error::{Error, Result};
use crate::model::{forward_batch, ModelParams, Prediction};
use crate::train::EpochStats;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Reported horizons, seconds.
pub const HORIZONS_S: [usize; 5] = [1, 2, 3, 4, 5];

/// Future-step index (0-based) of a horizon: steps are 0.5 s apart, so t_p
/// seconds is step 2 * t_p, i.e. index 2 * t_p - 1.
pub fn horizon_index(t_p: usize) -> Result<usize> {
    if !(1..=5).contains(&t_p) {
        return Err(Error::contract(format!(
            "horizon must be 1..=5 seconds, got {t_p}"
        )));
    }
    Ok(2 * t_p - 1)
}

fn euclid_errors(preds: &[Prediction], truths: &[[[f64; 2]; T_FUT]], t_p: usize) -> Result<Vec<f64>> {
    if preds.len() != truths.len() {
        return Err(Error::contract(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let k = horizon_index(t_p)?;
    Ok(preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let dx = p.points[k][0] - t[k][0];
            let dy = p.points[k][1] - t[k][1];
            (dx * dx + dy * dy).sqrt()
        })
        .collect())
}

/// Root-mean-square Euclidean error at horizon `t_p` seconds.
pub fn rmse_horizon(preds: &[Prediction], truths: &[[[f64; 2]; T_FUT]], t_p: usize) -> Result<f64> {
    let errs = euclid_errors(preds, truths, t_p)?;
    Ok((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

/// Per-sample Euclidean errors and their plain mean at horizon `t_p`.
pub fn boxplot_mean(
    preds: &[Prediction],
    truths: &[[[f64; 2]; T_FUT]],
    t_p: usize,
) -> Result<(Vec<f64>, f64)> {
    let errs = euclid_errors(preds, truths, t_p)?;
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok((errs, mean))
}

/// Extrapolates the last history step's velocity. History steps are 0.2 s and
/// future steps 0.5 s apart, hence the 2.5 factor per future step.
pub fn constant_velocity_baseline(sample: &Sample) -> Vec<Prediction> {
    sample
        .targets
        .iter()
        .map(|t| {
            let h = &sample.histories[t.node];
            let vx = h[T_HIST - 1][0] - h[T_HIST - 2][0];
            let vy = h[T_HIST - 1][1] - h[T_HIST - 2][1];
            let mut points = [[0.0; 2]; T_FUT];
            for (k, p) in points.iter_mut().enumerate() {
                let f = 2.5 * (k + 1) as f64;
                *p = [vx * f, vy * f];
            }
            Prediction { points }
        })
        .collect()
}

/// Per-horizon error table plus the per-vehicle error samples behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    /// predicted vehicles scored (every target of every sample)
    pub n: usize,
    /// RMSE per horizon 1..=5 s
    pub rmse: [f64; 5],
    /// mean Euclidean error per horizon
    pub box_mean: [f64; 5],
    /// per-vehicle Euclidean error at each horizon
    pub errors: Vec<[f64; 5]>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub batch: usize,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch: 256,
            workers: 1,
        }
    }
}

/// Ground-truth displacement futures of every target, batch order.
fn truth_displacements(samples: &[Sample]) -> Vec<[[f64; 2]; T_FUT]> {
    samples
        .iter()
        .flat_map(|s| {
            s.targets.iter().map(|t| {
                let cur = s.current_of(t.node);
                let mut out = [[0.0; 2]; T_FUT];
                for (k, p) in t.future.iter().enumerate() {
                    out[k] = [p[0] - cur[0], p[1] - cur[1]];
                }
                out
            })
        })
        .collect()
}

fn report_from(label: &str, preds: &[Prediction], truths: &[[[f64; 2]; T_FUT]]) -> Result<EvalReport> {
    let mut rmse = [0.0; 5];
    let mut box_mean = [0.0; 5];
    let mut errors = vec![[0.0; 5]; preds.len()];
    for (hi, &t_p) in HORIZONS_S.iter().enumerate() {
        let errs = euclid_errors(preds, truths, t_p)?;
        rmse[hi] = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        box_mean[hi] = errs.iter().sum::<f64>() / errs.len() as f64;
        for (e, row) in errs.iter().zip(errors.iter_mut()) {
            row[hi] = *e;
        }
    }
    Ok(EvalReport {
        label: label.to_string(),
        n: preds.len(),
        rmse,
        box_mean,
        errors,
    })
}

/// Full-set forward passes and the per-horizon error table.
pub fn evaluate(params: &ModelParams, set: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let batches: Vec<&[Sample]> = set.chunks(opts.batch.max(1)).collect();
    let preds_nested: Vec<Vec<Vec<Prediction>>> = if opts.workers <= 1 {
        batches
            .iter()
            .map(|b| forward_batch(params, b))
            .collect::<Result<_>>()?
    } else {
        batches
            .par_iter()
            .map(|b| forward_batch(params, b))
            .collect::<Result<_>>()?
    };
    let preds: Vec<Prediction> = preds_nested.into_iter().flatten().flatten().collect();
    let truths = truth_displacements(set);
    report_from(params.variant.name(), &preds, &truths)
}

/// Scores the constant-velocity baseline on the same footing as the model.
pub fn evaluate_baseline(set: &[Sample]) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let preds: Vec<Prediction> = set.iter().flat_map(|s| constant_velocity_baseline(s)).collect();
    let truths = truth_displacements(set);
    report_from("constant_velocity", &preds, &truths)
}

/// Writes the tab-separated horizon table, one row per report.
pub fn write_rmse_table(path: &Path, reports: &[&EvalReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "method\t1s\t2s\t3s\t4s\t5s")?;
    for r in reports {
        write!(f, "{}", r.label)?;
        for v in r.rmse {
            write!(f, "\t{v:.4}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// One error file per horizon (`<prefix>_errors_<h>s.txt`, one float per
/// line) for external box-plot rendering.
pub fn write_error_files(dir: &Path, prefix: &str, report: &EvalReport) -> Result<()> {
    for (hi, &h) in HORIZONS_S.iter().enumerate() {
        let path = dir.join(format!("{prefix}_errors_{h}s.txt"));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for row in &report.errors {
            writeln!(f, "{:.6}", row[hi])?;
        }
        f.flush()?;
    }
    Ok(())
}

/// Loss-curve CSV: epoch, train loss, validation RMSE at 5 s.
pub fn write_loss_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_rmse_5s")?;
    for s in curve {
        match s.val_rmse5 {
            Some(v) => writeln!(f, "{},{:.9},{:.9}", s.epoch, s.train_loss, v)?,
            None => writeln!(f, "{},{:.9},", s.epoch, s.train_loss)?,
        }
    }
    f.flush()?;
    Ok(())
}

/// Per-sample predicted trajectories (and truths) for plotting.
pub fn write_predictions(path: &Path, set: &[Sample], params: &ModelParams) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "sample\tsegment\tnode\tstep\tpred_x\tpred_y\ttruth_x\ttruth_y"
    )?;
    for (si, batch) in set.chunks(256).enumerate() {
        let preds = forward_batch(params, batch)?;
        for (bi, (s, sample_preds)) in batch.iter().zip(preds).enumerate() {
            let idx = si * 256 + bi;
            for (t, pred) in s.targets.iter().zip(sample_preds) {
                let cur = s.current_of(t.node);
                for k in 0..T_FUT {
                    writeln!(
                        f,
                        "{idx}\t{}\t{}\t{k}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                        s.meta.segment,
                        t.node,
                        pred.points[k][0] + cur[0],
                        pred.points[k][1] + cur[1],
                        t.future[k][0],
                        t.future[k][1],
                    )?;
                }
            }
        }
    }
    f.flush()?;
    Ok(())
}
