//! Gait phase state, its polar encoding and wrap-aware error metrics.
//!
//! Phase is a fraction of the gait cycle in the half-open interval `[0, 1)`;
//! rate is the phase increment per sample. Externally both are reported in
//! percent.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shortest stride accepted anywhere (0.2 s at 100 Hz).
pub const MIN_STRIDE_SAMPLES: usize = 20;
/// Rate clamp applied when decoding model outputs.
pub const MIN_RATE: f64 = 1e-4;
pub const MAX_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: f64,
    pub rate: f64,
}

impl PhaseState {
    pub fn new(phase: f64, rate: f64) -> Result<Self> {
        let s = Self { phase, rate };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.phase) {
            return Err(Error::invalid(format!("phase {} outside [0, 1)", self.phase)));
        }
        if !(self.rate > 0.0 && self.rate <= MAX_RATE) {
            return Err(Error::invalid(format!("rate {} outside (0, {MAX_RATE}]", self.rate)));
        }
        Ok(())
    }
}

/// `[cos 2πφ, sin 2πφ, φ′]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector(pub [f64; 3]);

/// Per-sample labels of one stride of `stride_len` samples: sample `n` gets
/// phase `n / L` and rate `1 / L`.
pub fn stride_phase_labels(stride_len: usize) -> Result<Vec<PhaseState>> {
    if stride_len < MIN_STRIDE_SAMPLES {
        return Err(Error::invalid(format!(
            "stride of {stride_len} samples is shorter than {MIN_STRIDE_SAMPLES}"
        )));
    }
    let l = stride_len as f64;
    Ok((0..stride_len)
        .map(|n| PhaseState {
            phase: n as f64 / l,
            rate: 1.0 / l,
        })
        .collect())
}

pub fn encode_polar(s: PhaseState) -> PhaseVector {
    let angle = TAU * s.phase;
    PhaseVector([angle.cos(), angle.sin(), s.rate])
}

/// Wraps any real phase into `[0, 1)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Inverse of [`encode_polar`]. The first two components need not lie on
/// the unit circle; the rate is clamped to `[MIN_RATE, MAX_RATE]`.
pub fn decode_polar(g: PhaseVector) -> Result<PhaseState> {
    let [c, s, r] = g.0;
    if c == 0.0 && s == 0.0 {
        return Err(Error::invalid("cannot decode phase from a zero vector"));
    }
    if !(c.is_finite() && s.is_finite() && r.is_finite()) {
        return Err(Error::invalid("non-finite phase vector"));
    }
    Ok(PhaseState {
        phase: wrap_phase(s.atan2(c) / TAU),
        rate: r.clamp(MIN_RATE, MAX_RATE),
    })
}

/// Shortest distance between two phases on the unit circle, in `[0, 0.5]`.
pub fn circular_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn check_pair(pred: &[PhaseState], truth: &[PhaseState]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("empty phase sequence"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "sequence lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Root mean square wrap-aware phase error, in percent.
pub fn phase_rmse(pred: &[PhaseState], truth: &[PhaseState]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| circular_error(p.phase, t.phase).powi(2))
        .sum();
    Ok((ss / pred.len() as f64).sqrt() * 100.0)
}

/// Phase RMSE without wrap handling (`|a − b|`), in percent. Reported next
/// to [`phase_rmse`] so both conventions are visible.
pub fn phase_rmse_naive(pred: &[PhaseState], truth: &[PhaseState]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p.phase - t.phase).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt() * 100.0)
}

/// Mean absolute rate error, in percent per sample.
pub fn rate_mae(pred: &[PhaseState], truth: &[PhaseState]) -> Result<f64> {
    check_pair(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p.rate - t.rate).abs()).sum();
    Ok(s / pred.len() as f64 * 100.0)
}
