//! Adam optimization and the training loop.

use crate::checkpoint;
use crate::data::{Sample, T_FUT};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{forward_on_tape, BatchPlan, ModelParams, Prediction, COORDS};
use crate::tensor::{ParamSet, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::PathBuf;

/// Adam with bias correction; moment buffers mirror the parameter set's
/// tensor list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P, lr: f64) -> Self {
        let m = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect::<Vec<_>>();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: m.clone(),
            v: m,
        }
    }

    /// One update from the gradients accumulated in the parameters' buffers.
    /// Gradients are left untouched; callers zero them per step (or keep
    /// accumulating across micro-batches).
    pub fn apply<P: ParamSet>(&mut self, params: &mut P) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (name, t)) in params.tensors_mut().into_iter().enumerate() {
            let g = t
                .grad()
                .ok_or_else(|| Error::contract(format!("parameter {name} has no gradient")))?
                .to_vec();
            if g.len() != self.m[i].len() {
                return Err(Error::contract(format!(
                    "optimizer state for {name} has length {}, gradient {}",
                    self.m[i].len(),
                    g.len()
                )));
            }
            let data = t.data_mut();
            for e in 0..g.len() {
                let m = &mut self.m[i][e];
                let v = &mut self.v[i][e];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[e];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[e] * g[e];
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                data[e] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Mean squared error over the 10 steps x 2 coordinates, in m^2.
pub fn mse_loss(pred: &Prediction, truth: &[[f64; 2]]) -> Result<f64> {
    if truth.len() != T_FUT {
        return Err(Error::contract(format!(
            "truth has {} steps, prediction {T_FUT}",
            truth.len()
        )));
    }
    let mut s = 0.0;
    for (p, t) in pred.points.iter().zip(truth) {
        s += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
    }
    Ok(s / (T_FUT * COORDS) as f64)
}

/// Records the batch MSE loss on the tape: the mean over all predicted
/// vehicles, steps and coordinates of the squared displacement error.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    outputs: &[crate::tensor::Var],
    plan: &BatchPlan,
) -> Result<crate::tensor::Var> {
    let rows = plan.n_targets();
    let mut total = None;
    for (k, &out) in outputs.iter().enumerate() {
        let truth = tape.constant(vec![rows, COORDS], plan.truth_steps[k].clone())?;
        let diff = tape.sub(out, truth)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let total = total.expect("T_FUT > 0");
    Ok(tape.scale(total, 1.0 / (rows * T_FUT * COORDS) as f64))
}

/// Forward + loss + backward on one chunk of samples; returns the loss (a
/// mean over the chunk's predicted vehicles), the per-parameter gradients
/// (tensors() order) and the number of predicted vehicles.
fn chunk_grads(params: &ModelParams, chunk: &[Sample]) -> Result<(f64, Vec<Vec<f64>>, usize)> {
    let plan = BatchPlan::new(chunk)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let outputs = forward_on_tape(&mut tape, &bound, &plan)?;
    let loss = batch_loss_on_tape(&mut tape, &outputs, &plan)?;
    let loss_val = tape.data(loss)[0];
    tape.backward(loss)?;
    let grads = bound
        .param_vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_default())
        .collect();
    Ok((loss_val, grads, plan.n_targets()))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub workers: usize,
    /// Ordered gradient reduction; bit-reproducible runs.
    pub deterministic: bool,
    /// Optional global L2 gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// When set, `last.sgtr` / `best.sgtr` are written under this directory
    /// each epoch and an interrupted run resumes from `last.sgtr`.
    pub checkpoint_dir: Option<PathBuf>,
    pub quiet: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 128,
            lr: 0.001,
            seed: 0,
            workers: 1,
            deterministic: true,
            grad_clip: None,
            checkpoint_dir: None,
            quiet: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub curve: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx
}

fn clip_grads(params: &mut ModelParams, max_norm: f64) {
    let norm: f64 = params
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.grad().unwrap_or(&[]).iter().map(|g| g * g))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in params.tensors_mut() {
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
}

/// Epoch loop with seeded shuffling and per-epoch checkpoints. Validation,
/// when provided, is scored each epoch at the 5 s horizon and the best
/// checkpoint is retained. Resumes from `last.sgtr` when the checkpoint
/// directory already holds one for fewer epochs.
pub fn train(
    params: &mut ModelParams,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if opts.batch == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let mut adam = AdamState::new(params, opts.lr);
    let mut start_epoch = 0usize;
    let mut log = TrainLog::default();
    let mut best_rmse = f64::INFINITY;

    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let last = dir.join("last.sgtr");
        if last.exists() {
            let saved = checkpoint::load(&last)?;
            if saved.params.variant == params.variant && saved.params.cfg == params.cfg {
                *params = saved.params;
                if let Some(a) = saved.adam {
                    adam = a;
                    adam.lr = opts.lr;
                }
                start_epoch = saved.epoch as usize;
                if !opts.quiet {
                    log::info!("resuming from epoch {start_epoch}");
                }
            }
        }
    }

    for epoch in start_epoch..opts.epochs {
        let order = epoch_order(train_set.len(), opts.seed, epoch);
        let mut loss_sum = 0.0;
        let mut rows_sum = 0usize;
        for batch_idx in order.chunks(opts.batch) {
            let batch: Vec<Sample> = batch_idx.iter().map(|&i| train_set[i].clone()).collect();
            params.zero_grads();
            if opts.workers <= 1 || batch.len() < 2 {
                let (loss, grads, rows) = chunk_grads(params, &batch)?;
                absorb(params, &grads)?;
                loss_sum += loss * rows as f64;
                rows_sum += rows;
            } else {
                let chunk_size = batch.len().div_ceil(opts.workers);
                let chunks: Vec<&[Sample]> = batch.chunks(chunk_size).collect();
                let results: Vec<(f64, Vec<Vec<f64>>, usize)> = if opts.deterministic {
                    // Collect in chunk order: reduction order is fixed.
                    chunks
                        .par_iter()
                        .map(|c| chunk_grads(params, c))
                        .collect::<Result<_>>()?
                } else {
                    let mut v: Vec<(usize, (f64, Vec<Vec<f64>>, usize))> = chunks
                        .par_iter()
                        .enumerate()
                        .map(|(i, c)| chunk_grads(params, c).map(|r| (i, r)))
                        .collect::<Result<_>>()?;
                    v.sort_by_key(|(i, _)| *i);
                    v.into_iter().map(|(_, r)| r).collect()
                };
                // Per-chunk losses and gradients are means over the chunk's
                // rows; re-weight to the batch mean.
                let total_rows: usize = results.iter().map(|(_, _, r)| r).sum();
                for (loss, grads, rows) in &results {
                    let w = *rows as f64 / total_rows as f64;
                    loss_sum += loss * *rows as f64;
                    for ((_, t), g) in params.tensors_mut().into_iter().zip(grads) {
                        let scaled: Vec<f64> = g.iter().map(|v| v * w).collect();
                        t.accumulate_grad(&scaled)?;
                    }
                }
                rows_sum += total_rows;
            }
            if let Some(c) = opts.grad_clip {
                clip_grads(params, c);
            }
            adam.apply(params)?;
        }
        let train_loss = loss_sum / rows_sum as f64;

        let val_rmse5 = match val_set {
            Some(vs) if !vs.is_empty() => {
                let report = eval::evaluate(params, vs, &eval::EvalOptions::default())?;
                Some(report.rmse[4])
            }
            _ => None,
        };
        log.curve.push(EpochStats {
            epoch,
            train_loss,
            val_rmse5,
        });
        if !opts.quiet {
            match val_rmse5 {
                Some(v) => log::info!("epoch {epoch}: loss {train_loss:.6}, val rmse@5s {v:.4}"),
                None => log::info!("epoch {epoch}: loss {train_loss:.6}"),
            }
        }

        let is_best = match val_rmse5 {
            Some(v) => {
                if v < best_rmse {
                    best_rmse = v;
                    true
                } else {
                    false
                }
            }
            // Without validation the latest epoch counts as best.
            None => true,
        };
        if is_best {
            log.best_epoch = Some(epoch);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            checkpoint::save(&dir.join("last.sgtr"), params, Some(&adam), (epoch + 1) as u32)?;
            if is_best {
                checkpoint::save(&dir.join("best.sgtr"), params, None, (epoch + 1) as u32)?;
            }
        }
    }
    Ok(log)
}

fn absorb(params: &mut ModelParams, grads: &[Vec<f64>]) -> Result<()> {
    for ((_, t), g) in params.tensors_mut().into_iter().zip(grads) {
        t.accumulate_grad(g)?;
    }
    Ok(())
}
