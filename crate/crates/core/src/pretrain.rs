//! Channel-masked reconstruction pre-training and weight transfer.

use std::io::Write;

use gaitlab_numerics::{Linear, Module, Parameter, RngStream, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::data::{apply_2d_mask, apply_channel_mask, MaskSpec, PhaseRows, Recording, WindowSet, IMU_CHANNELS, TOTAL_CHANNELS};
use crate::model::{Backbone, BackboneCache, Encoder, EncoderLayerCache, TctstConfig, TctstModel};
use crate::train::{fit, FitReport, Objective, TrainConfig};
use crate::{Error, Result};

/// Named ablations of the default objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Encoder, decoder, channel masks, phase channels, raw-signal targets.
    Full,
    /// Without decoder layers.
    Wdl,
    /// Feature-level reconstruction targets.
    Fvr,
    /// Channel-time block masks.
    Nclm,
    /// Without phase channels.
    Wpsv,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::Wdl, Variant::Fvr, Variant::Nclm, Variant::Wpsv];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Wdl => "wdl",
            Variant::Fvr => "fvr",
            Variant::Nclm => "nclm",
            Variant::Wpsv => "wpsv",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown pre-training variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mask_ratio: f64,
    /// Window step used to build pre-training windows.
    pub window_stride: usize,
    pub use_decoder: bool,
    pub reconstruct_features: bool,
    pub mask_2d: bool,
    pub block_len: usize,
    pub include_phase_channels: bool,
    /// Seed of the fixed validation masks.
    pub val_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self::variant(Variant::Full)
    }
}

impl PretrainConfig {
    pub fn variant(v: Variant) -> Self {
        Self {
            mask_ratio: 0.3,
            window_stride: 10,
            use_decoder: v != Variant::Wdl,
            reconstruct_features: v == Variant::Fvr,
            mask_2d: v == Variant::Nclm,
            block_len: 10,
            include_phase_channels: v != Variant::Wpsv,
            val_seed: 0x5eed,
        }
    }

    pub fn channels(&self) -> usize {
        if self.include_phase_channels {
            TOTAL_CHANNELS
        } else {
            IMU_CHANNELS
        }
    }

    pub fn phase_rows(&self) -> PhaseRows {
        if self.include_phase_channels {
            PhaseRows::Truth
        } else {
            PhaseRows::Omitted
        }
    }

    /// Rows used by the downstream fine-tuning windows.
    pub fn finetune_rows(&self) -> PhaseRows {
        if self.include_phase_channels {
            PhaseRows::Zeros
        } else {
            PhaseRows::Omitted
        }
    }

    pub fn validate(&self, lookback: usize) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invalid(format!("mask ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if self.window_stride == 0 {
            return Err(Error::invalid("pre-training window stride must be positive"));
        }
        if self.mask_2d && (self.block_len == 0 || lookback % self.block_len != 0) {
            return Err(Error::invalid(format!("block length {} does not divide {lookback}", self.block_len)));
        }
        Ok(())
    }

    /// Masks one `[C, L]` sample.
    pub fn mask<F: Scalar>(&self, x: &Tensor<F>, rng: &mut RngStream) -> Result<(Tensor<F>, MaskSpec)> {
        if self.mask_2d {
            apply_2d_mask(x, self.mask_ratio, self.block_len, rng)
        } else {
            apply_channel_mask(x, self.mask_ratio, rng)
        }
    }
}

/// Per-element loss weights for one `[C, D]` sample so that the weighted
/// squared error equals the masked reconstruction loss. Feature targets
/// (`D != L`) weight whole channels.
fn mask_weights(mask: &MaskSpec, c: usize, d: usize, feature_level: bool) -> Result<Vec<f64>> {
    let mut w = vec![0.0; c * d];
    match mask {
        MaskSpec::Blocks { block_len, blocks } if !feature_level => {
            if blocks.is_empty() {
                return Err(Error::invalid("empty mask"));
            }
            let v = 1.0 / (blocks.len() * block_len) as f64;
            for &(ch, b) in blocks {
                w[ch * d + b * block_len..ch * d + (b + 1) * block_len].fill(v);
            }
        }
        _ => {
            let chans = mask.channels();
            if chans.is_empty() {
                return Err(Error::invalid("empty mask"));
            }
            let v = 1.0 / (chans.len() * d) as f64;
            for ch in chans {
                if ch >= c {
                    return Err(Error::invalid(format!("masked channel {ch} out of range")));
                }
                w[ch * d..(ch + 1) * d].fill(v);
            }
        }
    }
    Ok(w)
}

/// Mean over masked channels of each channel's mean squared error
/// (masked blocks for block masks).
pub fn reconstruction_loss<F: Scalar>(recon: &Tensor<F>, original: &Tensor<F>, mask: &MaskSpec) -> Result<f64> {
    original.expect_shape("reconstruction_loss", recon.shape())?;
    let [c, l] = *recon.shape() else {
        return Err(Error::invalid("reconstruction_loss expects [C, L]"));
    };
    let w = mask_weights(mask, c, l, false)?;
    Ok(recon
        .data()
        .iter()
        .zip(original.data())
        .zip(&w)
        .map(|((r, o), w)| w * (r.as_f64() - o.as_f64()).powi(2))
        .sum())
}

/// Batch loss (mean of per-sample masked losses) and its gradient with
/// respect to `out`.
pub fn masked_batch_loss<F: Scalar>(
    out: &Tensor<F>,
    target: &Tensor<F>,
    masks: &[MaskSpec],
    feature_level: bool,
) -> Result<(f64, Tensor<F>)> {
    target.expect_shape("masked loss", out.shape())?;
    let [b, c, d] = *out.shape() else {
        return Err(Error::invalid("masked loss expects [B, C, D]"));
    };
    if masks.len() != b {
        return Err(Error::invalid("one mask per sample required"));
    }
    let mut grad = Tensor::zeros(out.shape());
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, m) in masks.iter().enumerate() {
        let w = mask_weights(m, c, d, feature_level)?;
        let range = i * c * d..(i + 1) * c * d;
        for (k, wk) in w.iter().enumerate() {
            if *wk == 0.0 {
                continue;
            }
            let j = range.start + k;
            let diff = out.data()[j].as_f64() - target.data()[j].as_f64();
            loss += wk * diff * diff * inv_b;
            grad.data_mut()[j] = F::of(2.0 * wk * diff * inv_b);
        }
    }
    Ok((loss, grad))
}

/// Shared backbone plus an optional decoder stack and an optional
/// per-token linear map back to the window length.
#[derive(Clone, Debug)]
pub struct PretrainModel<F> {
    pub config: TctstConfig,
    pub pretrain: PretrainConfig,
    pub backbone: Backbone<F>,
    pub decoder: Option<Encoder<F>>,
    pub recon: Option<Linear<F>>,
}

pub struct PretrainCache<F> {
    backbone: BackboneCache<F>,
    decoder: Vec<EncoderLayerCache<F>>,
    decoded: Tensor<F>,
}

impl<F: Scalar> PretrainModel<F> {
    /// The backbone uses the same seed derivation as [`TctstModel::new`].
    pub fn new(mut config: TctstConfig, pretrain: PretrainConfig, seed: u64) -> Result<Self> {
        config.channels = pretrain.channels();
        config.validate()?;
        pretrain.validate(config.lookback)?;
        let root = RngStream::new(seed, 0);
        let backbone = Backbone::new(&config, &mut root.fork(10))?;
        let mut rng = root.fork(30);
        let decoder = pretrain
            .use_decoder
            .then(|| {
                Encoder::new(
                    "decoder",
                    config.n_layers,
                    config.emb_dim,
                    config.n_head,
                    config.ffn_dim(),
                    config.qkv_bias,
                    &mut rng,
                )
            })
            .transpose()?;
        let recon = (!pretrain.reconstruct_features).then(|| Linear::new("recon", config.emb_dim, config.lookback, true, &mut rng));
        Ok(Self {
            config,
            pretrain,
            backbone,
            decoder,
            recon,
        })
    }

    /// `[B, C, L]` masked input to `[B, C, L]` reconstruction, or to
    /// `[B, C, Emb]` token features for feature-level targets.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, PretrainCache<F>)> {
        let (z, backbone) = self.backbone.forward(x)?;
        let (decoded, decoder) = match &self.decoder {
            Some(d) => d.forward(&z)?,
            None => (z, Vec::new()),
        };
        let out = match &self.recon {
            Some(r) => r.forward(&decoded)?,
            None => decoded.clone(),
        };
        Ok((out, PretrainCache { backbone, decoder, decoded }))
    }

    pub fn backward(&mut self, cache: &PretrainCache<F>, dout: &Tensor<F>) -> Result<()> {
        let ddec = match &mut self.recon {
            Some(r) => r.backward(&cache.decoded, dout),
            None => dout.clone(),
        };
        let dz = match &mut self.decoder {
            Some(d) => d.backward(&cache.decoder, &ddec)?,
            None => ddec,
        };
        self.backbone.backward(&cache.backbone, &dz)
    }

    /// Feature-level target: embedding plus positional encoding of the
    /// unmasked input, treated as a constant.
    pub fn feature_target(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.backbone.embed_tokens(x)?.0)
    }

    pub fn transformer_layers(&self) -> usize {
        self.backbone.encoder.layers.len() + self.decoder.as_ref().map_or(0, |d| d.layers.len())
    }
}

impl<F: Scalar> Module<F> for PretrainModel<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.backbone.params();
        if let Some(d) = &self.decoder {
            v.extend(d.params());
        }
        if let Some(r) = &self.recon {
            v.extend(r.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.backbone.params_mut();
        if let Some(d) = &mut self.decoder {
            v.extend(d.params_mut());
        }
        if let Some(r) = &mut self.recon {
            v.extend(r.params_mut());
        }
        v
    }
}

/// Masks each sample of a `[B, C, L]` batch independently.
pub fn mask_batch<F: Scalar>(x: &Tensor<F>, cfg: &PretrainConfig, rng: &mut RngStream) -> Result<(Tensor<F>, Vec<MaskSpec>)> {
    let b = x.shape()[0];
    let mut masked = Vec::with_capacity(b);
    let mut specs = Vec::with_capacity(b);
    for i in 0..b {
        let (m, s) = cfg.mask(&x.index_axis0(i), rng)?;
        masked.push(m);
        specs.push(s);
    }
    Ok((Tensor::stack(&masked)?, specs))
}

impl<F: Scalar> PretrainModel<F> {
    /// Masked loss on a batch of unmasked windows; accumulates gradients
    /// when `train` is set.
    pub fn step(&mut self, x: &Tensor<F>, rng: &mut RngStream, train: bool) -> Result<f64> {
        let (xm, masks) = mask_batch(x, &self.pretrain, rng)?;
        let (out, cache) = self.forward(&xm)?;
        let features = self.pretrain.reconstruct_features;
        let target = if features { self.feature_target(x)? } else { x.clone() };
        let (loss, grad) = masked_batch_loss(&out, &target, &masks, features)?;
        if train {
            self.backward(&cache, &grad)?;
        }
        Ok(loss)
    }
}

struct PretrainObjective<'a> {
    model: PretrainModel<f32>,
    train: &'a WindowSet,
    val: &'a WindowSet,
    eval_batch: usize,
}

impl Module<f32> for PretrainObjective<'_> {
    fn params(&self) -> Vec<&Parameter<f32>> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        self.model.params_mut()
    }
}

impl Objective for PretrainObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, ids: &[usize], rng: &mut RngStream) -> Result<f64> {
        let (x, _) = self.train.batch::<f32>(ids)?;
        self.model.step(&x, rng, true)
    }

    fn val_loss(&mut self) -> Result<f64> {
        pretrain_val_loss(&mut self.model, self.val, self.eval_batch)
    }
}

/// Masked loss over every validation window with masks drawn from the
/// fixed validation seed.
pub fn pretrain_val_loss(model: &mut PretrainModel<f32>, val: &WindowSet, batch: usize) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let mut rng = RngStream::new(model.pretrain.val_seed, 0);
    let ids: Vec<usize> = (0..val.len()).collect();
    let mut total = 0.0;
    for chunk in ids.chunks(batch.max(1)) {
        let (x, _) = val.batch::<f32>(chunk)?;
        total += model.step(&x, &mut rng, false)? * chunk.len() as f64;
    }
    Ok(total / val.len() as f64)
}

/// Pre-trains on normalised recordings and returns the best-validation
/// checkpoint.
pub fn pretrain_run(
    train: &[Recording],
    val: &[Recording],
    config: &TctstConfig,
    pcfg: &PretrainConfig,
    tcfg: &TrainConfig,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<(Checkpoint, FitReport)> {
    let model = PretrainModel::new(config.clone(), pcfg.clone(), seed)?;
    let rows = pcfg.phase_rows();
    let train_set = WindowSet::new(train.to_vec(), config.lookback, pcfg.window_stride, rows)?;
    let val_set = WindowSet::new(val.to_vec(), config.lookback, pcfg.window_stride, rows)?;
    let mut obj = PretrainObjective {
        model,
        train: &train_set,
        val: &val_set,
        eval_batch: tcfg.batch_size.max(64),
    };
    let report = fit(&mut obj, tcfg, seed, log)?;
    let mut ckpt = Checkpoint::from_pretrain(&obj.model);
    ckpt.seeds.insert("pretrain".into(), seed);
    Ok((ckpt, report))
}

/// Copies embedding, positional and encoder parameters by name from a
/// pre-training checkpoint; the head keeps its fresh initialisation.
pub fn transfer_weights(pre: &Checkpoint, fresh: &mut TctstModel<f32>) -> Result<()> {
    if pre.kind != CheckpointKind::Pretrain {
        return Err(Error::Checkpoint("transfer source is not a pre-training checkpoint".into()));
    }
    for p in fresh.backbone.params_mut() {
        let src = pre
            .get(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("pre-training checkpoint lacks {}", p.name)))?;
        if src.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} in checkpoint, {:?} in model",
                p.name,
                src.shape(),
                p.value.shape()
            )));
        }
        p.value = src.clone();
    }
    Ok(())
}
