use gaitlab_numerics::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::segment::{tag_at, TerrainTag};
use super::{Recording, IMU_CHANNELS, PHASE_CHANNELS};
use crate::phase::{encode_polar, PhaseVector};
use crate::{Error, Result};

/// Content of window rows 21..24.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseRows {
    /// True polar phase over the window (pre-training input).
    Truth,
    /// Three zero rows (fine-tuning and inference).
    Zeros,
    /// No phase rows at all; windows have 21 channels.
    Omitted,
}

impl PhaseRows {
    pub fn channels(self) -> usize {
        match self {
            PhaseRows::Omitted => IMU_CHANNELS,
            _ => IMU_CHANNELS + PHASE_CHANNELS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[C, L_B]`.
    pub x: Tensor<f32>,
    pub target: PhaseVector,
    pub subject_id: u32,
    pub terrain_tag: TerrainTag,
    /// Index of the window's last sample in the recording.
    pub end: usize,
}

fn window_count(len: usize, lookback: usize, stride: usize) -> Result<usize> {
    if lookback == 0 || stride == 0 {
        return Err(Error::invalid("window length and stride must be positive"));
    }
    if len < lookback {
        return Err(Error::invalid(format!("recording of {len} samples is shorter than window {lookback}")));
    }
    Ok((len - lookback) / stride + 1)
}

/// Writes the `[C, L_B]` window ending at `end` into `out`.
fn fill_window<F: Scalar>(rec: &Recording, end: usize, lookback: usize, rows: PhaseRows, out: &mut [F]) {
    let start = end + 1 - lookback;
    for c in 0..IMU_CHANNELS {
        let src = &rec.channel(c)[start..=end];
        for (o, &v) in out[c * lookback..(c + 1) * lookback].iter_mut().zip(src) {
            *o = F::of(v as f64);
        }
    }
    match rows {
        PhaseRows::Omitted => {}
        PhaseRows::Zeros => out[IMU_CHANNELS * lookback..].fill(F::zero()),
        PhaseRows::Truth => {
            for i in 0..lookback {
                let g = encode_polar(rec.phase_truth[start + i]).0;
                for (k, v) in g.iter().enumerate() {
                    out[(IMU_CHANNELS + k) * lookback + i] = F::of(*v);
                }
            }
        }
    }
}

/// Sliding windows of length `lookback` with step `stride`, starting at the
/// first full window.
pub fn build_windows(rec: &Recording, lookback: usize, stride: usize, rows: PhaseRows) -> Result<Vec<Window>> {
    let count = window_count(rec.len(), lookback, stride)?;
    let c = rows.channels();
    (0..count)
        .map(|w| {
            let end = w * stride + lookback - 1;
            let mut data = vec![0f32; c * lookback];
            fill_window(rec, end, lookback, rows, &mut data);
            Ok(Window {
                x: Tensor::from_vec(&[c, lookback], data)?,
                target: encode_polar(rec.phase_truth[end]),
                subject_id: rec.subject_id,
                terrain_tag: tag_at(rec, end, lookback),
                end,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowIndex {
    pub rec: usize,
    pub end: usize,
}

/// Lazily materialised windows over a set of (already normalised) recordings.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub recordings: Vec<Recording>,
    pub lookback: usize,
    pub rows: PhaseRows,
    pub index: Vec<WindowIndex>,
}

impl WindowSet {
    pub fn new(recordings: Vec<Recording>, lookback: usize, stride: usize, rows: PhaseRows) -> Result<Self> {
        let mut index = Vec::new();
        for (r, rec) in recordings.iter().enumerate() {
            let count = window_count(rec.len(), lookback, stride)?;
            index.extend((0..count).map(|w| WindowIndex {
                rec: r,
                end: w * stride + lookback - 1,
            }));
        }
        Ok(Self {
            recordings,
            lookback,
            rows,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.rows.channels()
    }

    pub fn target(&self, i: usize) -> PhaseVector {
        let w = self.index[i];
        encode_polar(self.recordings[w.rec].phase_truth[w.end])
    }

    /// Inputs `[B, C, L_B]` and targets `[B, 3]` for the given window ids.
    pub fn batch<F: Scalar>(&self, ids: &[usize]) -> Result<(Tensor<F>, Tensor<F>)> {
        let per = self.channels() * self.lookback;
        let mut x = vec![F::zero(); ids.len() * per];
        let mut y = Vec::with_capacity(ids.len() * 3);
        for (b, &i) in ids.iter().enumerate() {
            let w = self.index[i];
            fill_window(&self.recordings[w.rec], w.end, self.lookback, self.rows, &mut x[b * per..(b + 1) * per]);
            y.extend(self.target(i).0.iter().map(|&v| F::of(v)));
        }
        Ok((
            Tensor::from_vec(&[ids.len(), self.channels(), self.lookback], x)?,
            Tensor::from_vec(&[ids.len(), 3], y)?,
        ))
    }
}
