//! Recordings, the synthetic gait generator, CSV exchange, windowing,
//! normalisation, masking and subject-wise cross-validation splits.

mod csv_io;
mod generator;
mod mask;
mod norm;
mod segment;
mod splits;
mod windows;

use std::fmt;
use std::str::FromStr;

use gaitlab_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::phase::{stride_phase_labels, PhaseState};
use crate::{Error, Result};

pub use csv_io::{export_csv, import_csv, import_dataset, read_csv, recording_file_name, write_csv, CSV_FIXED_COLUMNS};
pub use generator::{synthesize_recording, GeneratorConfig, Harmonics, NoiseConfig, TerrainTemplate};
pub use mask::{apply_2d_mask, apply_channel_mask, mask_count, MaskSpec};
pub use norm::{fit_norm_stats, NormStats};
pub use segment::{segment_stable_vs_transition, tag_at, TerrainTag};
pub use splits::{loocv_splits, Fold, FOLD_COUNT};
pub use windows::{build_windows, PhaseRows, Window, WindowIndex, WindowSet};

pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const IMU_CHANNELS: usize = 21;
pub const PHASE_CHANNELS: usize = 3;
pub const TOTAL_CHANNELS: usize = IMU_CHANNELS + PHASE_CHANNELS;

/// IMU mounting sites, in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    LeftThigh,
    RightThigh,
    Pelvis,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::LeftThigh, Segment::RightThigh, Segment::Pelvis];

    pub fn prefix(self) -> &'static str {
        match self {
            Segment::LeftThigh => "L",
            Segment::RightThigh => "R",
            Segment::Pelvis => "P",
        }
    }
}

/// Per-IMU quantities, in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    AccX,
    AccY,
    AccZ,
    GyrX,
    GyrY,
    GyrZ,
    Pitch,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::AccX,
        Quantity::AccY,
        Quantity::AccZ,
        Quantity::GyrX,
        Quantity::GyrY,
        Quantity::GyrZ,
        Quantity::Pitch,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            Quantity::AccX => "accx",
            Quantity::AccY => "accy",
            Quantity::AccZ => "accz",
            Quantity::GyrX => "gyrx",
            Quantity::GyrY => "gyry",
            Quantity::GyrZ => "gyrz",
            Quantity::Pitch => "pitch",
        }
    }
}

/// Channel layout: `segment * 7 + quantity` for the 21 IMU rows; rows 21..24
/// hold `cos φ`, `sin φ` and `φ′` when phase channels are present.
pub fn channel_index(segment: Segment, quantity: Quantity) -> usize {
    let s = Segment::ALL.iter().position(|&x| x == segment).unwrap();
    let q = Quantity::ALL.iter().position(|&x| x == quantity).unwrap();
    s * Quantity::ALL.len() + q
}

/// `L_accx, L_accy, …, P_pitch`.
pub fn channel_names() -> Vec<String> {
    Segment::ALL
        .iter()
        .flat_map(|s| Quantity::ALL.iter().map(move |q| format!("{}_{}", s.prefix(), q.suffix())))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Terrain {
    /// Level walking.
    LW,
    /// Stair ascent.
    SA,
    /// Stair descent.
    SD,
    /// Slope ascent.
    SLA,
    /// Slope descent.
    SLD,
}

impl Terrain {
    pub const ALL: [Terrain; 5] = [Terrain::LW, Terrain::SA, Terrain::SD, Terrain::SLA, Terrain::SLD];

    pub fn as_str(self) -> &'static str {
        match self {
            Terrain::LW => "LW",
            Terrain::SA => "SA",
            Terrain::SD => "SD",
            Terrain::SLA => "SLA",
            Terrain::SLD => "SLD",
        }
    }
}

impl fmt::Display for Terrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Terrain::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown terrain label {s:?}")))
    }
}

/// A 100 Hz multi-channel walking recording with exact phase labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: u32,
    /// `[21, T]`, rows in [`channel_names`] order.
    pub channels: Tensor<f32>,
    pub terrain: Vec<Terrain>,
    /// Sample index of every stride start; the first is 0 and the last stride
    /// runs to the end of the recording.
    pub stride_starts: Vec<usize>,
    pub phase_truth: Vec<PhaseState>,
}

impl Recording {
    /// Builds a recording and derives `phase_truth` from the stride starts.
    pub fn new(subject_id: u32, channels: Tensor<f32>, terrain: Vec<Terrain>, stride_starts: Vec<usize>) -> Result<Self> {
        let [rows, len] = *channels.shape() else {
            return Err(Error::invalid("recording channels must be [21, T]"));
        };
        if rows != IMU_CHANNELS {
            return Err(Error::invalid(format!("expected {IMU_CHANNELS} channels, got {rows}")));
        }
        if terrain.len() != len {
            return Err(Error::invalid(format!("{} terrain labels for {len} samples", terrain.len())));
        }
        let phase_truth = phase_from_strides(&stride_starts, len)?;
        Ok(Self {
            subject_id,
            channels,
            terrain,
            stride_starts,
            phase_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.terrain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terrain.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let t = self.len();
        &self.channels.data()[c * t..(c + 1) * t]
    }

    pub fn sample(&self, c: usize, n: usize) -> f32 {
        self.channels.data()[c * self.len() + n]
    }

    /// Index of the stride containing sample `n`.
    pub fn stride_of(&self, n: usize) -> usize {
        self.stride_starts.partition_point(|&s| s <= n) - 1
    }

    /// Length in samples of stride `i`.
    pub fn stride_len(&self, i: usize) -> usize {
        let end = self.stride_starts.get(i + 1).copied().unwrap_or(self.len());
        end - self.stride_starts[i]
    }

    /// Re-derives labels from stride starts and compares bit for bit.
    pub fn validate(&self) -> Result<()> {
        let expected = phase_from_strides(&self.stride_starts, self.len())?;
        if expected != self.phase_truth {
            return Err(Error::invalid("phase_truth inconsistent with stride_starts"));
        }
        self.channels.check_finite("recording")?;
        Ok(())
    }
}

/// Concatenated per-stride labels for a recording of `len` samples.
pub fn phase_from_strides(stride_starts: &[usize], len: usize) -> Result<Vec<PhaseState>> {
    if stride_starts.first() != Some(&0) {
        return Err(Error::invalid("first stride must start at sample 0"));
    }
    let mut out = Vec::with_capacity(len);
    for (i, &start) in stride_starts.iter().enumerate() {
        let end = stride_starts.get(i + 1).copied().unwrap_or(len);
        if end <= start || end > len {
            return Err(Error::invalid(format!("stride starts not increasing at index {i}")));
        }
        out.extend(stride_phase_labels(end - start)?);
    }
    Ok(out)
}
