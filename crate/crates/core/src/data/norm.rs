use serde::{Deserialize, Serialize};

use super::{Recording, IMU_CHANNELS};
use crate::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Per-IMU-channel z-score statistics from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population mean and standard deviation over every sample of every
/// training recording, accumulated in f64.
pub fn fit_norm_stats(train: &[Recording]) -> Result<NormStats> {
    let total: usize = train.iter().map(Recording::len).sum();
    if total == 0 {
        return Err(Error::invalid("cannot fit normalisation on empty training data"));
    }
    let mut mean = vec![0.0; IMU_CHANNELS];
    let mut std = vec![0.0; IMU_CHANNELS];
    for c in 0..IMU_CHANNELS {
        let sum: f64 = train.iter().flat_map(|r| r.channel(c)).map(|&v| v as f64).sum();
        let m = sum / total as f64;
        let ss: f64 = train
            .iter()
            .flat_map(|r| r.channel(c))
            .map(|&v| (v as f64 - m).powi(2))
            .sum();
        mean[c] = m;
        std[c] = (ss / total as f64).sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != IMU_CHANNELS || self.std.len() != IMU_CHANNELS {
            return Err(Error::invalid("normalisation stats must have 21 entries"));
        }
        if self.std.iter().any(|&s| !(s >= STD_FLOOR)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("normalisation stats must be finite with std >= 1e-8"));
        }
        Ok(())
    }

    pub fn normalize(&self, c: usize, v: f32) -> f32 {
        ((v as f64 - self.mean[c]) / self.std[c]) as f32
    }

    /// Normalises one 21-channel sample in place.
    pub fn apply_sample(&self, sample: &mut [f32]) {
        for (c, v) in sample.iter_mut().enumerate().take(IMU_CHANNELS) {
            *v = self.normalize(c, *v);
        }
    }

    /// Copy of `rec` with IMU channels normalised; labels untouched.
    pub fn apply(&self, rec: &Recording) -> Recording {
        let mut out = rec.clone();
        let t = rec.len();
        for (i, v) in out.channels.data_mut().iter_mut().enumerate() {
            *v = self.normalize(i / t, *v);
        }
        out
    }
}
