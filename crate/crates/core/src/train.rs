//! Epoch loop with Adam, the warmup/plateau schedule, early stopping and a
//! best-validation snapshot; supervised fine-tuning on phase windows.

use std::io::Write;
use std::time::Instant;

use gaitlab_numerics::ops::mse_loss;
use gaitlab_numerics::{Adam, AdamConfig, LrSchedule, Module, Parameter, RngStream, ScheduleConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::model::{AnyModel, PhaseModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub batch_size: usize,
    /// Step between consecutive training windows.
    pub window_stride: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub start_factor: f64,
    pub plateau_patience: usize,
    pub decay: f64,
    pub min_factor: f64,
    /// Stop once the validation loss falls below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    /// Fine-tuning defaults.
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            epochs: 100,
            patience: 20,
            batch_size: 1024,
            window_stride: 1,
            lr: AdamConfig::default().lr,
            warmup_epochs: s.warmup_epochs,
            start_factor: s.start_factor,
            plateau_patience: s.plateau_patience,
            decay: s.decay,
            min_factor: s.min_factor,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            warmup_epochs: self.warmup_epochs,
            start_factor: self.start_factor,
            plateau_patience: self.plateau_patience,
            decay: self.decay,
            min_factor: self.min_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::invalid("epochs, batch_size and window_stride must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_factor: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    /// Set when training ended because `stop_below` was reached.
    #[serde(default)]
    pub reached_target: bool,
}

impl FitReport {
    pub fn train_curve(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }

    pub fn val_curve(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.val_loss).collect()
    }
}

/// A trainable loss over an indexed training set.
pub trait Objective: Module<f32> {
    fn train_len(&self) -> usize;

    /// Forward and backward on the given training items, accumulating
    /// gradients; returns the mean batch loss.
    fn train_batch(&mut self, ids: &[usize], rng: &mut RngStream) -> Result<f64>;

    /// Deterministic validation loss.
    fn val_loss(&mut self) -> Result<f64>;
}

fn check_loss(epoch: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Diverged { epoch, loss })
    }
}

/// Trains `obj` and leaves it holding the best-validation parameters.
/// One JSON record per epoch is written to `log` when given.
pub fn fit<O: Objective>(obj: &mut O, cfg: &TrainConfig, seed: u64, mut log: Option<&mut dyn Write>) -> Result<FitReport> {
    cfg.validate()?;
    if obj.train_len() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let root = RngStream::new(seed, 0);
    let mut order_rng = root.fork(1);
    let mut batch_rng = root.fork(2);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut schedule = LrSchedule::new(cfg.schedule());
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>)> = None;
    let mut order: Vec<usize> = (0..obj.train_len()).collect();
    let mut stopped_early = false;
    let mut reached_target = false;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let factor = schedule.factor();
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut seen = 0;
        for ids in order.chunks(cfg.batch_size) {
            obj.zero_grad();
            let loss = check_loss(epoch, obj.train_batch(ids, &mut batch_rng)?)?;
            adam.step(obj.params_mut(), factor)?;
            total += loss * ids.len() as f64;
            seen += ids.len();
        }
        let train_loss = total / seen as f64;
        let val_loss = check_loss(epoch, obj.val_loss()?)?;
        schedule.observe(val_loss);
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr_factor: factor,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::invalid(format!("writing training log: {e}")))?;
        }
        history.push(record);
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, obj.params().iter().map(|p| p.value.clone()).collect()));
        } else if epoch - best.as_ref().unwrap().0 >= cfg.patience {
            stopped_early = true;
            break;
        }
        if cfg.stop_below.is_some_and(|t| val_loss < t) {
            reached_target = true;
            break;
        }
    }
    let (best_epoch, best_val, values) = best.expect("at least one epoch");
    for (p, v) in obj.params_mut().into_iter().zip(values) {
        p.value = v;
    }
    Ok(FitReport {
        history,
        best_epoch,
        best_val,
        stopped_early,
        reached_target,
    })
}

/// MSE between predicted and true polar phase vectors.
pub struct PhaseObjective<'a> {
    pub model: AnyModel<f32>,
    pub train: &'a WindowSet,
    pub val: &'a WindowSet,
    pub eval_batch: usize,
}

/// Mean MSE of `model` over every window of `set`, in eval mode.
pub fn phase_mse(model: &AnyModel<f32>, set: &WindowSet, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let ids: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in ids.chunks(batch.max(1)) {
        let (x, y) = set.batch::<f32>(chunk)?;
        let pred = model.predict(&x)?;
        let (loss, _) = mse_loss(&pred, &y)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

impl Module<f32> for PhaseObjective<'_> {
    fn params(&self) -> Vec<&Parameter<f32>> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        self.model.params_mut()
    }
}

impl Objective for PhaseObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, ids: &[usize], rng: &mut RngStream) -> Result<f64> {
        let (x, y) = self.train.batch::<f32>(ids)?;
        let (pred, cache) = self.model.forward(&x, Some(rng))?;
        let (loss, grad) = mse_loss(&pred, &y)?;
        self.model.backward(&cache, &grad)?;
        Ok(loss as f64)
    }

    fn val_loss(&mut self) -> Result<f64> {
        phase_mse(&self.model, self.val, self.eval_batch)
    }
}

/// Fine-tunes `model` on phase-vector regression; returns the
/// best-validation model.
pub fn finetune(
    model: AnyModel<f32>,
    train: &WindowSet,
    val: &WindowSet,
    cfg: &TrainConfig,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<(AnyModel<f32>, FitReport)> {
    if train.channels() != model.config().channels || train.lookback != model.config().lookback {
        return Err(Error::invalid(format!(
            "windows [{}, {}] do not fit model [{}, {}]",
            train.channels(),
            train.lookback,
            model.config().channels,
            model.config().lookback
        )));
    }
    let mut obj = PhaseObjective {
        model,
        train,
        val,
        eval_batch: cfg.batch_size.max(64),
    };
    let report = fit(&mut obj, cfg, seed, log)?;
    Ok((obj.model, report))
}
