//! Learning-rate scaling: half-cosine warmup from 0.2 to 1.0 over the first
//! 20 epochs, then halving on a 10-epoch validation plateau, floored at 0.1.

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub start_factor: f64,
    pub plateau_patience: usize,
    pub decay: f64,
    pub min_factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 20,
            start_factor: 0.2,
            plateau_patience: 10,
            decay: 0.5,
            min_factor: 0.1,
        }
    }
}

/// Incremental form of [`lr_factor`], fed one validation loss per epoch.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    config: ScheduleConfig,
    plateau_factor: f64,
    best: f64,
    stale: usize,
    observed: usize,
}

impl LrSchedule {
    pub fn new(config: ScheduleConfig) -> Self {
        Self {
            config,
            plateau_factor: 1.0,
            best: f64::INFINITY,
            stale: 0,
            observed: 0,
        }
    }

    /// Factor for the epoch after the last observed one.
    pub fn factor(&self) -> f64 {
        let e = self.observed;
        let c = &self.config;
        if e <= c.warmup_epochs {
            if c.warmup_epochs == 0 {
                return 1.0;
            }
            let progress = e as f64 / c.warmup_epochs as f64;
            c.start_factor + (1.0 - c.start_factor) * (1.0 - (PI * progress).cos()) / 2.0
        } else {
            self.plateau_factor
        }
    }

    /// Records the validation loss of the epoch that just finished.
    /// Plateaus are only counted once the warmup ramp is over.
    pub fn observe(&mut self, val_loss: f64) {
        let epoch = self.observed;
        self.observed += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return;
        }
        if epoch < self.config.warmup_epochs {
            return;
        }
        self.stale += 1;
        if self.stale >= self.config.plateau_patience {
            self.plateau_factor = (self.plateau_factor * self.config.decay).max(self.config.min_factor);
            self.stale = 0;
        }
    }
}

/// Learning-rate factor for `epoch` given the validation losses of all
/// earlier epochs (`val_loss_history[i]` is epoch `i`). Entries at or beyond
/// `epoch` are ignored.
pub fn lr_factor(epoch: usize, val_loss_history: &[f64]) -> f64 {
    let mut s = LrSchedule::new(ScheduleConfig::default());
    for &loss in val_loss_history.iter().take(epoch) {
        s.observe(loss);
    }
    // Epochs beyond the recorded history keep the last plateau factor.
    s.observed = epoch;
    s.factor()
}
