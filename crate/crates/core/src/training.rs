//! Objective, Adam, the training loop and evaluation.
//!
//! The objective is `(1/n) sum ||y_hat - y||^2 + lambda * KE`, where KE is the
//! batch-mean kinetic energy of the latent trajectories (zero for static
//! models). Batches are split into fixed-size chunks whose gradients are
//! computed in parallel and reduced in chunk order, so results do not depend
//! on the thread count.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::GradientVector;
use crate::error::{Error, Result};
use crate::metrics::{self, format_float, MetricRecord};
use crate::models::{ForwardGraph, Model};
use crate::rng::{self, stream};
use crate::signal::{dataset_values_to_grid, SignalDataset};
use crate::tensor::Tensor;

/// Rows per gradient chunk.
pub const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d::epochs")]
    pub epochs: usize,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::beta1")]
    pub beta1: f64,
    #[serde(default = "d::beta2")]
    pub beta2: f64,
    #[serde(default = "d::eps")]
    pub eps: f64,
    #[serde(default = "d::ke_weight")]
    pub ke_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d::eval_every")]
    pub eval_every: usize,
    /// Record real elapsed seconds in the history; off by default so history
    /// files are reproducible byte for byte.
    #[serde(default)]
    pub log_wall_time: bool,
}

mod d {
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        1024
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn ke_weight() -> f64 {
        1.0
    }
    pub fn eval_every() -> usize {
        10
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: d::epochs(),
            batch_size: d::batch_size(),
            lr: d::lr(),
            beta1: d::beta1(),
            beta2: d::beta2(),
            eps: d::eps(),
            ke_weight: d::ke_weight(),
            seed: 0,
            eval_every: d::eval_every(),
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam eps must be > 0"));
        }
        if !(self.ke_weight >= 0.0 && self.ke_weight.is_finite()) {
            return Err(Error::invalid("ke_weight must be finite and >= 0"));
        }
        Ok(())
    }

    /// Optimizer steps per epoch for `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub data: f64,
    pub ke: f64,
    pub total: f64,
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(CHUNK_ROWS).map(|s| (s, (s + CHUNK_ROWS).min(n))).collect()
}

fn chunk_eval(model: &Model, x: &Tensor, y: &Tensor, lambda: f64, grad: bool) -> Result<(LossParts, Option<GradientVector>)> {
    let mut g = ForwardGraph::build(model, x.rows(), Some(lambda));
    g.run(model, x, Some(y))?;
    let nodes = g.loss.expect("loss graph");
    let data = g.scalar(nodes.data);
    let ke = nodes.ke.map_or(0.0, |k| g.scalar(k));
    let total = g.scalar(nodes.total);
    if !data.is_finite() {
        return Err(Error::NonFinite("data loss".into()));
    }
    if !ke.is_finite() {
        return Err(Error::NonFinite("kinetic energy".into()));
    }
    let grads = if grad { Some(g.tape.backward(nodes.total)?) } else { None };
    Ok((LossParts { data, ke, total }, grads))
}

/// Loss (and optionally its gradient) over a batch, reduced across chunks as
/// a row-weighted mean.
fn batch_eval(model: &Model, x: &Tensor, y: &Tensor, lambda: f64, grad: bool) -> Result<(LossParts, Option<GradientVector>)> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let parts: Vec<Result<(f64, LossParts, Option<GradientVector>)>> = chunks(n)
        .into_par_iter()
        .map(|(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            let (l, g) = chunk_eval(model, &x.select_rows(&idx), &y.select_rows(&idx), lambda, grad)?;
            Ok(((e - s) as f64 / n as f64, l, g))
        })
        .collect();
    let mut loss = LossParts { data: 0.0, ke: 0.0, total: 0.0 };
    let mut acc: Option<GradientVector> = None;
    for p in parts {
        let (w, l, g) = p?;
        loss.data += w * l.data;
        loss.ke += w * l.ke;
        loss.total += w * l.total;
        if let Some(g) = g {
            match &mut acc {
                None => acc = Some(g.scaled(w)),
                Some(a) => a.add_scaled(&g, w),
            }
        }
    }
    Ok((loss, acc))
}

/// Objective on a batch: data loss plus `ke_weight` times the batch-mean
/// kinetic energy.
pub fn loss_total(model: &Model, batch: &SignalDataset, ke_weight: f64) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::invalid("loss on an empty batch"));
    }
    Ok(batch_eval(model, &batch.coords, &batch.targets, ke_weight, false)?.0)
}

/// Objective and its gradient with respect to every trainable block.
pub fn loss_and_grad(model: &Model, x: &Tensor, y: &Tensor, ke_weight: f64) -> Result<(LossParts, GradientVector)> {
    let (l, g) = batch_eval(model, x, y, ke_weight, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// First and second moment estimates for each trainable block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.trainable().map(|b| vec![0.0; b.tensor.len()]).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update of every trainable block.
pub fn adam_step(state: &mut AdamState, model: &mut Model, grads: &GradientVector, config: &TrainConfig) -> Result<()> {
    let n_blocks = model.trainable().count();
    if grads.entry_count() != n_blocks || state.m.len() != n_blocks {
        return Err(Error::invalid(format!(
            "adam: {n_blocks} trainable blocks, {} gradients, {} moment blocks",
            grads.entry_count(),
            state.m.len()
        )));
    }
    for (b, name) in model.trainable().zip(grads.names()) {
        if b.name != name {
            return Err(Error::invalid(format!("adam: gradient `{name}` does not match block `{}`", b.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, block) in model.trainable_mut().enumerate() {
        let g = grads.get(&block.name).expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if g.len() != m.len() || g.len() != block.tensor.len() {
            return Err(Error::invalid(format!("adam: size mismatch in block `{}`", block.name)));
        }
        let p = block.tensor.data_mut();
        for j in 0..g.len() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= config.lr * mh / (vh.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub data_loss: f64,
    pub ke_loss: f64,
    pub total_loss: f64,
    pub holdout_mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    /// Optimizer steps taken.
    pub steps: usize,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    /// CSV with columns `epoch, data_loss, ke_loss, total_loss, holdout_mse,
    /// seconds`; a missing holdout is an empty cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "data_loss", "ke_loss", "total_loss", "holdout_mse", "seconds"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                format_float(r.data_loss),
                format_float(r.ke_loss),
                format_float(r.total_loss),
                r.holdout_mse.map(format_float).unwrap_or_default(),
                format_float(r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Training stopped early; carries the history logged so far.
#[derive(Debug, thiserror::Error)]
#[error("training failed after {} logged records: {source}", history.records.len())]
pub struct TrainFailure {
    #[source]
    pub source: Error,
    pub history: TrainHistory,
}

impl TrainFailure {
    fn bare(source: Error) -> Self {
        TrainFailure { source, history: TrainHistory::default() }
    }
}

/// Predictions for every row of `x`, computed in chunks.
pub fn predict(model: &Model, x: &Tensor) -> Result<Tensor> {
    let outs: Vec<Result<Tensor>> = chunks(x.rows())
        .into_par_iter()
        .map(|(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            crate::models::forward(model, &x.select_rows(&idx))
        })
        .collect();
    let mut data = Vec::with_capacity(x.rows() * model.spec.out_dim);
    for o in outs {
        data.extend_from_slice(o?.data());
    }
    Ok(Tensor::from_parts(vec![x.rows(), model.spec.out_dim], data))
}

/// Adam over seeded per-epoch shuffles of the coordinates.
pub fn train(
    model: &Model,
    data: &SignalDataset,
    config: &TrainConfig,
    holdout: Option<&SignalDataset>,
) -> std::result::Result<(Model, TrainHistory), TrainFailure> {
    config.validate().map_err(TrainFailure::bare)?;
    if data.is_empty() {
        return Err(TrainFailure::bare(Error::invalid("training set is empty")));
    }
    let holdout = holdout.filter(|h| !h.is_empty());
    let mut model = model.clone();
    let mut adam = AdamState::new(&model);
    let mut history = TrainHistory::default();
    let start = Instant::now();
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::seeded_indexed(config.seed, stream::SHUFFLE, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let x = data.coords.select_rows(batch);
            let y = data.targets.select_rows(batch);
            let step = loss_and_grad(&model, &x, &y, config.ke_weight)
                .and_then(|(_, g)| adam_step(&mut adam, &mut model, &g, config));
            if let Err(e) = step {
                return Err(TrainFailure { source: e, history });
            }
            history.steps += 1;
            if !model.is_finite() {
                return Err(TrainFailure { source: Error::NonFinite("parameters after update".into()), history });
            }
        }
        let done = epoch + 1;
        if done % config.eval_every == 0 || done == config.epochs {
            let rec = (|| -> Result<HistoryRecord> {
                let l = loss_total(&model, data, config.ke_weight)?;
                let holdout_mse = holdout.map(|h| evaluate_mse(&model, h)).transpose()?;
                let seconds = if config.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
                Ok(HistoryRecord { epoch: done, data_loss: l.data, ke_loss: l.ke, total_loss: l.total, holdout_mse, seconds })
            })();
            match rec {
                Ok(r) => history.records.push(r),
                Err(e) => return Err(TrainFailure { source: e, history }),
            }
        }
    }
    Ok((model, history))
}

/// Mean squared error of the model on a dataset.
pub fn evaluate_mse(model: &Model, data: &SignalDataset) -> Result<f64> {
    let pred = predict(model, &data.coords)?;
    let sq: f64 = pred.data().iter().zip(data.targets.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / data.len() as f64)
}

/// Full-batch MSE and PSNR (peak 1), plus SSIM when the rows form a complete
/// 2D or 3D grid.
pub fn evaluate(model: &Model, data: &SignalDataset) -> Result<MetricRecord> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate on an empty dataset"));
    }
    let pred = predict(model, &data.coords)?;
    evaluate_predictions(&pred, data)
}

/// [`evaluate`] for precomputed predictions.
pub fn evaluate_predictions(pred: &Tensor, data: &SignalDataset) -> Result<MetricRecord> {
    let sq: f64 = pred.data().iter().zip(data.targets.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let mse = sq / data.len() as f64;
    let psnr_db = metrics::psnr(mse, 1.0)?;
    let ssim = match &data.grid_dims {
        Some(d) if d.len() >= 2 && data.is_full_grid() && data.targets.cols() == 1 => {
            let p = dataset_values_to_grid(data, pred)?;
            let t = dataset_values_to_grid(data, &data.targets)?;
            Some(metrics::ssim(&p, &t)?)
        }
        _ => None,
    };
    Ok(MetricRecord { mse, psnr_db, ssim })
}
