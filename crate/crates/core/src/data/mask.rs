use gaitlab_numerics::{RngStream, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which parts of a `[C, L]` window were zeroed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSpec {
    /// Sorted channel indices.
    Channels(Vec<usize>),
    /// Sorted `(channel, block)` pairs; block `b` covers `b*block_len..(b+1)*block_len`.
    Blocks { block_len: usize, blocks: Vec<(usize, usize)> },
}

impl MaskSpec {
    pub fn masked_elements(&self, lookback: usize) -> usize {
        match self {
            MaskSpec::Channels(c) => c.len() * lookback,
            MaskSpec::Blocks { block_len, blocks } => blocks.len() * block_len,
        }
    }

    /// Channels with at least one masked element.
    pub fn channels(&self) -> Vec<usize> {
        match self {
            MaskSpec::Channels(c) => c.clone(),
            MaskSpec::Blocks { blocks, .. } => {
                let mut c: Vec<usize> = blocks.iter().map(|b| b.0).collect();
                c.dedup();
                c
            }
        }
    }
}

/// `max(1, round(total · ratio))`, rounding half away from zero.
pub fn mask_count(total: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside (0, 1)")));
    }
    Ok(((total as f64 * ratio).round() as usize).clamp(1, total))
}

fn dims<F: Scalar>(x: &Tensor<F>) -> Result<(usize, usize)> {
    match *x.shape() {
        [c, l] if c > 0 && l > 0 => Ok((c, l)),
        _ => Err(Error::invalid(format!("mask input must be [C, L], got {:?}", x.shape()))),
    }
}

/// Zeroes `round(C·ratio)` (at least one) distinct channels chosen uniformly.
pub fn apply_channel_mask<F: Scalar>(x: &Tensor<F>, ratio: f64, rng: &mut RngStream) -> Result<(Tensor<F>, MaskSpec)> {
    let (c, l) = dims(x)?;
    let k = mask_count(c, ratio)?;
    let chosen = rng.sample_indices(c, k);
    let mut out = x.clone();
    for &ch in &chosen {
        out.data_mut()[ch * l..(ch + 1) * l].fill(F::zero());
    }
    Ok((out, MaskSpec::Channels(chosen)))
}

/// Zeroes `round(C·(L/block_len)·ratio)` (at least one) channel-time blocks.
pub fn apply_2d_mask<F: Scalar>(
    x: &Tensor<F>,
    ratio: f64,
    block_len: usize,
    rng: &mut RngStream,
) -> Result<(Tensor<F>, MaskSpec)> {
    let (c, l) = dims(x)?;
    if block_len == 0 || l % block_len != 0 {
        return Err(Error::invalid(format!("block length {block_len} does not divide window length {l}")));
    }
    let per_channel = l / block_len;
    let k = mask_count(c * per_channel, ratio)?;
    let blocks: Vec<(usize, usize)> = rng
        .sample_indices(c * per_channel, k)
        .into_iter()
        .map(|i| (i / per_channel, i % per_channel))
        .collect();
    let mut out = x.clone();
    for &(ch, b) in &blocks {
        let start = ch * l + b * block_len;
        out.data_mut()[start..start + block_len].fill(F::zero());
    }
    Ok((out, MaskSpec::Blocks { block_len, blocks }))
}
