//! Objectives, the Adam optimizer, and the encode-first-half /
//! predict-second-half protocol.
//!
//! One run owns one model; batch forward passes fan out across workers but
//! every reduction is a fixed pairwise tree, so a run's numbers depend only
//! on (seed, configs, dataset), never on the thread count.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::dde::dataset::{DatasetSplit, Part};
use crate::models::{
    save_checkpoint, CheckpointMeta, DecoderConfig, EncoderConfig, Forward, Model, ModelError,
};
use crate::parallel::{map_indexed, tree_reduce};
use crate::rng::derive_rng;
use crate::series::TimeSeries;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error("series has {got} points, need at least {min}")]
    SeriesTooShort { got: usize, min: usize },
    #[error("shape mismatch: prediction has {pred} values, target has {target}")]
    ShapeMismatch { pred: usize, target: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}, lr {lr}")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mse,
    /// Unit-variance Gaussian likelihood: reconstruction term is half the
    /// MSE; the KL term enters with weight 1.
    Elbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Fraction of each trajectory given to the encoder.
    pub encode_fraction: f64,
    /// Global-norm gradient clip; None disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 128,
            epochs: 1000,
            seed: 0,
            objective: Objective::Mse,
            encode_fraction: 0.5,
            max_grad_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(TrainError::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".to_string()));
        }
        if !(self.encode_fraction > 0.0 && self.encode_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "encode fraction must lie strictly between 0 and 1, got {}",
                self.encode_fraction
            )));
        }
        if let Some(c) = self.max_grad_norm {
            if !c.is_finite() || c <= 0.0 {
                return Err(TrainError::Config(format!("bad gradient clip {c}")));
            }
        }
        Ok(())
    }
}

/// One trajectory cut for the extrapolation protocol: the first
/// ceil(fraction * n) points feed the encoder, the rest are prediction
/// targets. Both halves keep the original clock; the shifted views live in
/// `encoder_input` and `query_times`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTrajectory {
    pub encode: TimeSeries,
    pub predict: TimeSeries,
}

impl SplitTrajectory {
    /// Encoding half on the encoder's clock: first observation at time 0.
    pub fn encoder_input(&self) -> TimeSeries {
        shift_clock(&self.encode, self.encode.times()[0])
    }

    /// Prediction times on the decoder's clock: 0 is the end of the
    /// encoding half, so every query lands strictly after it.
    pub fn query_times(&self) -> Vec<f64> {
        let t_split = *self.encode.times().last().expect("encode half is never empty");
        self.predict.times().iter().map(|t| t - t_split).collect()
    }
}

fn shift_clock(series: &TimeSeries, t0: f64) -> TimeSeries {
    let times = series.times().iter().map(|t| t - t0).collect();
    TimeSeries::new(times, series.values().to_vec(), series.dim())
        .expect("shifting a valid clock keeps it valid")
}

/// Splits off the first ceil(fraction * n) points for encoding. The product
/// fraction * n is nudged down by 1e-9 before the ceiling so that products
/// which are integers up to roundoff stay at their mathematical value.
pub fn split_trajectory(
    series: &TimeSeries,
    fraction: f64,
) -> Result<SplitTrajectory, TrainError> {
    let n = series.len();
    if n < 4 {
        return Err(TrainError::SeriesTooShort { got: n, min: 4 });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Config(format!(
            "encode fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let k = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    if k >= n {
        return Err(TrainError::Config(format!(
            "encode fraction {fraction} leaves no prediction points for {n}-point series"
        )));
    }
    Ok(SplitTrajectory { encode: series.range(0, k), predict: series.range(k, n) })
}

/// Mean squared error over two equally shaped flat value arrays.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::ShapeMismatch { pred: pred.len(), target: target.len() });
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / pred.len() as f64)
}

/// First and second moment accumulators for Adam, flat over the parameter
/// vector. `step` counts completed steps and drives the bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One bias-corrected Adam update in place. A zero computed step leaves the
/// parameter bits untouched, so lr = 0 (and g = 0 throughout) are exact
/// no-ops on `params`; the moments still advance.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(TrainError::Config(format!(
            "Adam saw {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let delta = lr * m_hat / (v_hat.sqrt() + eps);
        if delta != 0.0 {
            params[i] -= delta;
        }
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Everything a forward pass needs for one trajectory, clocks already
/// shifted. Targets always come from the clean trajectory; the encoder
/// input is the corrupted copy when the dataset carries one.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    /// Normalized observed prefix, clock starting at 0.
    pub encoder_input: TimeSeries,
    /// Prediction times counted from the end of the prefix.
    pub query_times: Vec<f64>,
    /// Normalized prediction-half values of the clean trajectory, row-major.
    pub target: Vec<f64>,
}

/// Inputs and targets for trajectory `traj` of the dataset, normalized and
/// clock-shifted exactly as the training loop sees them. The input series
/// is cut at the clean trajectory's split *time* rather than its index: a
/// corrupted input may have a subsampled encoding half, but it retains the
/// boundary point, so the time cut is exact.
pub fn model_inputs(
    ds: &DatasetSplit,
    traj: usize,
    fraction: f64,
) -> Result<ModelInputs, TrainError> {
    let clean = ds.normalize(&ds.trajectories[traj]);
    let split = split_trajectory(&clean, fraction)?;
    let t_split = *split.encode.times().last().expect("nonempty");
    let input = ds.normalize(ds.input(traj));
    let cut = input.times().partition_point(|&t| t <= t_split);
    if cut == 0 {
        return Err(TrainError::Config(format!(
            "input trajectory {traj} has no points inside the encoding window"
        )));
    }
    let enc_raw = input.range(0, cut);
    Ok(ModelInputs {
        encoder_input: shift_clock(&enc_raw, enc_raw.times()[0]),
        query_times: split.query_times(),
        target: split.predict.values().to_vec(),
    })
}

fn build_samples(
    ds: &DatasetSplit,
    part: Part,
    fraction: f64,
) -> Result<Vec<ModelInputs>, TrainError> {
    ds.indices(part).iter().map(|&i| model_inputs(ds, i, fraction)).collect()
}

/// Scalar objective for one sample on the sample's own tape.
fn sample_objective(
    tape: &Tape,
    fwd: &Forward,
    target: &[f64],
    objective: Objective,
) -> Result<Tensor, TrainError> {
    let parts: Vec<&Tensor> = fwd.preds.iter().collect();
    let stacked = tape.concat(&parts)?;
    if stacked.len() != target.len() {
        return Err(TrainError::ShapeMismatch { pred: stacked.len(), target: target.len() });
    }
    let diff = tape.sub(&stacked, &tape.constant(&Tensor::vector(target.to_vec())))?;
    let mse = tape.mean(&tape.square(&diff)?)?;
    match objective {
        Objective::Mse => Ok(mse),
        Objective::Elbo => {
            let kl = fwd.kl.as_ref().ok_or_else(|| {
                TrainError::Config("ELBO objective needs a variational encoder".to_string())
            })?;
            Ok(tape.add(&tape.scale(&mse, 0.5)?, kl)?)
        }
    }
}

/// Per-epoch curves plus the numbers the experiment tables are built from.
/// `best_epoch` is 1-based; 0 means no epoch ever beat the initial weights
/// (including 0-epoch runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_loss: Vec<f64>,
    pub val_rmse: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: usize,
    pub final_test_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_rmse: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_test_rmse: f64,
    pub total_seconds: f64,
}

impl RunRecord {
    pub fn summary(&self) -> RunSummary {
        let best_val_rmse = if self.best_epoch == 0 {
            None
        } else {
            Some(self.val_rmse[self.best_epoch - 1])
        };
        RunSummary {
            epochs: self.train_loss.len(),
            best_epoch: self.best_epoch,
            best_val_rmse,
            final_train_loss: self.train_loss.last().copied(),
            final_test_rmse: self.final_test_rmse,
            total_seconds: self.epoch_seconds.iter().sum(),
        }
    }

    /// One row per epoch. With `include_timing` off the duration column is
    /// written as 0, which keeps re-runs byte-identical.
    pub fn write_csv(&self, path: &Path, include_timing: bool) -> Result<(), TrainError> {
        let mut out = String::from("epoch,train_loss,val_rmse,epoch_seconds\n");
        for e in 0..self.train_loss.len() {
            let secs = if include_timing { self.epoch_seconds[e] } else { 0.0 };
            writeln!(out, "{},{},{},{}", e + 1, self.train_loss[e], self.val_rmse[e], secs)
                .expect("string writes cannot fail");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.summary())?)?;
        Ok(())
    }
}

/// Best-val model with its metadata and curves.
#[derive(Debug)]
pub struct TrainResult {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub record: RunRecord,
}

impl TrainResult {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        save_checkpoint(dir, &self.model, &self.meta)?;
        Ok(())
    }
}

/// Mini-batch Adam over the shuffled train split with per-epoch validation
/// RMSE and best-model selection. The returned model carries the weights of
/// the epoch with the lowest validation RMSE, never simply the last.
pub fn train(
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    ds: &DatasetSplit,
    tc: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    tc.validate()?;
    let d = ds.norm_mean.len();
    let mut model = Model::new(encoder, decoder, d, tc.seed)?;
    if tc.objective == Objective::Elbo && !model.encoder.variational {
        return Err(TrainError::Config(
            "ELBO objective needs a variational encoder".to_string(),
        ));
    }
    let train_samples = build_samples(ds, Part::Train, tc.encode_fraction)?;
    let val_samples = build_samples(ds, Part::Val, tc.encode_fraction)?;
    if tc.epochs > 0 && train_samples.is_empty() {
        return Err(TrainError::Config("train split is empty".to_string()));
    }
    if tc.epochs > 0 && val_samples.is_empty() {
        return Err(TrainError::Config("validation split is empty".to_string()));
    }

    let n_train = train_samples.len();
    let n_params = model.store.param_count();
    let mut adam = AdamState::new(n_params);
    let mut record = RunRecord {
        train_loss: Vec::with_capacity(tc.epochs),
        val_rmse: Vec::with_capacity(tc.epochs),
        epoch_seconds: Vec::with_capacity(tc.epochs),
        best_epoch: 0,
        final_test_rmse: f64::NAN,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params: Vec<f64> = model.store.data().to_vec();

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..tc.epochs {
        let clock = Instant::now();
        let mut shuffle_rng = derive_rng(tc.seed, "shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for (batch_ix, batch) in order.chunks(tc.batch_size).enumerate() {
            let per_sample: Vec<Result<(f64, Vec<f64>), TrainError>> =
                map_indexed(batch.len(), |j| {
                    let slot = batch[j];
                    let s = &train_samples[slot];
                    let tape = Tape::new();
                    let mut eta = model.encoder.variational.then(|| {
                        derive_rng(
                            tc.seed,
                            "latent-eta",
                            epoch as u64 * n_train as u64 + slot as u64,
                        )
                    });
                    let fwd = model.forward(&tape, &s.encoder_input, &s.query_times, eta.as_mut())?;
                    let loss = sample_objective(&tape, &fwd, &s.target, tc.objective)?;
                    let grads = tape.backward(&loss)?;
                    let flat = model.store.flatten_grads(&fwd.bound, &grads)?;
                    Ok((loss.item(), flat))
                });
            let mut acc: Vec<(f64, Vec<f64>)> = Vec::with_capacity(per_sample.len());
            for r in per_sample {
                acc.push(r?);
            }
            let (batch_loss_sum, mut grad) = tree_reduce(acc, |(la, mut ga), (lb, gb)| {
                for (x, y) in ga.iter_mut().zip(&gb) {
                    *x += y;
                }
                (la + lb, ga)
            })
            .expect("batches are never empty");

            if !batch_loss_sum.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_ix,
                    lr: tc.lr,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= inv;
            }
            if let Some(max_norm) = tc.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    for g in &mut grad {
                        *g *= s;
                    }
                }
            }
            adam_step(
                model.store.data_mut(),
                &grad,
                &mut adam,
                tc.lr,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPS,
            )?;
            model.after_optimizer_step()?;
            loss_sum += batch_loss_sum;
        }

        let val = eval_samples(&model, &val_samples, None)?.pooled;
        record.train_loss.push(loss_sum / n_train as f64);
        record.val_rmse.push(val);
        record.epoch_seconds.push(clock.elapsed().as_secs_f64());
        if val < best_val {
            best_val = val;
            best_params.copy_from_slice(model.store.data());
            record.best_epoch = epoch + 1;
        }
    }

    model.store.data_mut().copy_from_slice(&best_params);
    let test = evaluate_rmse(&model, ds, Part::Test, tc.encode_fraction, false)?;
    record.final_test_rmse = test.pooled;
    let meta = CheckpointMeta {
        epochs: tc.epochs,
        best_epoch: record.best_epoch,
        best_val_rmse: (record.best_epoch > 0).then_some(best_val),
        seed: tc.seed,
    };
    Ok(TrainResult { model, meta, record })
}

/// Pooled and per-trajectory prediction RMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    /// Root of the mean squared error over every point of every trajectory.
    pub pooled: f64,
    /// Per-trajectory RMSE, in the order of the part's index list.
    pub per_trajectory: Vec<f64>,
}

/// Forward passes without a sampler: variational encoders use the posterior
/// mean, so repeated evaluation is deterministic. `denorm` maps predictions
/// and targets back to raw units before the error is taken.
fn eval_samples(
    model: &Model,
    samples: &[ModelInputs],
    denorm: Option<&DatasetSplit>,
) -> Result<RmseReport, TrainError> {
    let per: Vec<Result<(f64, usize), TrainError>> = map_indexed(samples.len(), |i| {
        let s = &samples[i];
        let tape = Tape::new();
        let fwd = model.forward(&tape, &s.encoder_input, &s.query_times, None)?;
        let mut pred: Vec<f64> = Vec::with_capacity(s.target.len());
        for p in &fwd.preds {
            pred.extend_from_slice(p.data());
        }
        if pred.len() != s.target.len() {
            return Err(TrainError::ShapeMismatch { pred: pred.len(), target: s.target.len() });
        }
        let mut target = s.target.clone();
        if let Some(ds) = denorm {
            ds.denormalize_values(&mut pred);
            ds.denormalize_values(&mut target);
        }
        let mut sse = 0.0;
        for (p, t) in pred.iter().zip(&target) {
            sse += (p - t) * (p - t);
        }
        Ok((sse, pred.len()))
    });
    let mut total_sse = 0.0;
    let mut total_count = 0usize;
    let mut per_trajectory = Vec::with_capacity(samples.len());
    for r in per {
        let (sse, k) = r?;
        total_sse += sse;
        total_count += k;
        per_trajectory.push((sse / k as f64).sqrt());
    }
    Ok(RmseReport { pooled: (total_sse / total_count as f64).sqrt(), per_trajectory })
}

/// Prediction-half RMSE of `model` over one part of the dataset, pooled
/// across all points (per-trajectory values are also reported). Normalized
/// units by default; `denormalize` reports in raw units instead.
pub fn evaluate_rmse(
    model: &Model,
    ds: &DatasetSplit,
    part: Part,
    encode_fraction: f64,
    denormalize: bool,
) -> Result<RmseReport, TrainError> {
    let d = ds.norm_mean.len();
    if model.data_dim != d {
        return Err(TrainError::Config(format!(
            "model is {}-dimensional, dataset is {d}-dimensional",
            model.data_dim
        )));
    }
    let samples = build_samples(ds, part, encode_fraction)?;
    if samples.is_empty() {
        return Err(TrainError::Config(format!("{part:?} split is empty")));
    }
    eval_samples(model, &samples, denormalize.then_some(ds))
}
