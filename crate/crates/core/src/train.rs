//! Loss, optimizer and training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchArchive;
use crate::error::{shape_err, Error, Result};
use crate::model::{DrfnModel, GradMap, ParamKind};
use crate::tensor::{Scalar, Tensor};

/// Relative improvement below which an epoch counts as stalled.
pub const PLATEAU_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_initial: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    /// Clipping constant; elements are clamped to `±clip_a / lr`.
    pub clip_a: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_iterations: Option<usize>,
    /// Stop after this many consecutive stalled epochs; 0 disables.
    pub plateau_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_initial: 0.1,
            lr_decay: 0.1,
            lr_step_epochs: 10,
            clip_a: 0.01,
            epochs: 50,
            seed: 0,
            max_iterations: None,
            plateau_epochs: 3,
        }
    }
}

impl TrainConfig {
    /// Settings for small models and archives. From He initialization the
    /// first gradients are large enough that every element clips, so each
    /// step moves a parameter by up to `clip_a` (ten times that with
    /// momentum); 0.01 diverges here, 1e-4 does not.
    pub fn desk() -> Self {
        TrainConfig {
            lr_initial: 0.01,
            clip_a: 1e-4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad("lr_initial must be positive");
        }
        if self.clip_a.is_nan() || self.clip_a <= 0.0 {
            return bad("clip_a must be positive");
        }
        if self.weight_decay < 0.0 || self.lr_decay <= 0.0 {
            return bad("weight_decay must be >= 0 and lr_decay > 0");
        }
        if self.lr_step_epochs == 0 {
            return bad("lr_step_epochs must be >= 1");
        }
        Ok(())
    }
}

/// `(1/2N) Σ ‖target − pred‖²` with `N` the batch size, and its gradient
/// `(pred − target) / N`.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    if pred.dims() != target.dims() {
        return shape_err(format!("loss: prediction {} vs target {}", pred.dims(), target.dims()));
    }
    let n = pred.dims().n as f64;
    let mut sse = 0.0;
    let mut grad = pred.clone();
    let inv_n = S::from_f64(1.0 / n);
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        sse += d.as_f64() * d.as_f64();
        *g = d * inv_n;
    }
    Ok((sse / (2.0 * n), grad))
}

/// Largest `f32` not above `clip_a / lr`, so clamped values never exceed
/// the real-valued bound.
pub fn clip_bound(lr: f64, clip_a: f64) -> f32 {
    let exact = clip_a / lr;
    let b = exact as f32;
    if b as f64 > exact {
        b.next_down()
    } else {
        b
    }
}

/// Clamps every element to `[−clip_a/lr, clip_a/lr]`.
pub fn clip_gradients(grads: &GradMap, lr: f64, clip_a: f64) -> GradMap {
    let mut out = grads.clone();
    clip_gradients_in_place(&mut out, lr, clip_a);
    out
}

pub fn clip_gradients_in_place(grads: &mut GradMap, lr: f64, clip_a: f64) {
    let b = clip_bound(lr, clip_a);
    for (_, g) in grads.iter_mut() {
        for v in g {
            *v = v.clamp(-b, b);
        }
    }
}

/// Momentum buffers keyed like the model registry.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: GradMap,
}

impl OptimizerState {
    pub fn new(model: &DrfnModel) -> Self {
        OptimizerState {
            velocity: GradMap::zeros_like(model.registry()),
        }
    }
}

/// One momentum step: `g' = g + decay·θ` (weights only), `v = μv + g'`,
/// `θ -= lr·v`.
pub fn sgd_step(model: &mut DrfnModel, grads: &GradMap, state: &mut OptimizerState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if state.velocity.len() != grads.len() || grads.keys().any(|k| state.velocity.get(k).is_none()) {
        return Err(Error::State("optimizer state does not match gradient keys".into()));
    }
    let (mu, wd, lr) = (cfg.momentum as f32, cfg.weight_decay as f32, lr as f32);
    model.update_params(grads, |name, kind, theta, g| {
        let v = state
            .velocity
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("no velocity for `{name}`")))?;
        let decay = if kind == ParamKind::Weight { wd } else { 0.0 };
        for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + (gi + decay * *t);
            *t -= lr * *vi;
        }
        Ok(())
    })
}

/// Staircase schedule `lr_initial · lr_decay^⌊epoch / lr_step_epochs⌋`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr_initial * cfg.lr_decay.powi((epoch / cfg.lr_step_epochs) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub enum Progress<'a> {
    Iteration(LossRecord),
    EpochEnd {
        epoch: usize,
        mean_loss: f64,
        model: &'a DrfnModel,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub epochs_completed: usize,
    pub stopped_on_plateau: bool,
}

/// One line per step, `iteration,epoch,lr,loss`, after a header.
pub fn format_loss_log(history: &[LossRecord]) -> String {
    let mut out = String::from("iteration,epoch,lr,loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.epoch, r.lr, r.loss);
    }
    out
}

/// Forward, loss, backward, clip and update on one batch. Returns the loss
/// before the update.
pub fn train_step(
    model: &mut DrfnModel,
    state: &mut OptimizerState,
    lr_batch: &Tensor,
    hr_batch: &Tensor,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (pred, tape) = model.forward(lr_batch)?;
    let (loss, grad) = mse_loss(&pred, hr_batch)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let mut grads = model.backward(&tape, &grad)?;
    clip_gradients_in_place(&mut grads, lr, cfg.clip_a);
    sgd_step(model, &grads, state, lr, cfg)?;
    Ok(loss)
}

/// Runs `cfg.epochs` passes over `archive` in seeded random order. The
/// sink sees every step and every finished epoch; an error from it stops
/// training.
pub fn train_loop(
    model: &mut DrfnModel,
    archive: &PatchArchive,
    cfg: &TrainConfig,
    mut sink: impl FnMut(Progress<'_>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if archive.is_empty() {
        return Err(Error::Config("training archive is empty".into()));
    }
    if archive.scale() != model.config().scale as usize {
        return Err(Error::Config(format!(
            "archive is x{}, model is x{}",
            archive.scale(),
            model.config().scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(model);
    let mut order: Vec<usize> = (0..archive.len()).collect();
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut report = TrainReport {
        history: Vec::new(),
        epochs_completed: 0,
        stopped_on_plateau: false,
    };
    let mut iteration = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(cfg.batch) {
            if cfg.max_iterations.is_some_and(|m| iteration >= m) {
                break 'epochs;
            }
            let (x, y) = archive.batch(chunk)?;
            let loss = train_step(model, &mut state, &x, &y, lr, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration, epoch, loss });
            }
            let rec = LossRecord { iteration, epoch, lr, loss };
            history.push(rec);
            sink(Progress::Iteration(rec))?;
            epoch_sum += loss;
            epoch_steps += 1;
            iteration += 1;
        }
        let mean_loss = epoch_sum / epoch_steps as f64;
        report.epochs_completed = epoch + 1;
        sink(Progress::EpochEnd {
            epoch,
            mean_loss,
            model: &*model,
        })?;
        if cfg.plateau_epochs > 0 {
            if mean_loss < best * (1.0 - PLATEAU_TOLERANCE) {
                best = mean_loss;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= cfg.plateau_epochs {
                    report.stopped_on_plateau = true;
                    break;
                }
            }
        }
    }
    report.history = history;
    Ok(report)
}
