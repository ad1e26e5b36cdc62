//! The channel-token Transformer, its embedding variants, and the
//! time-patch baseline.

mod backbone;
mod config;
mod embed;
mod encoder;
mod patchtst;
mod tctst;

use gaitlab_numerics::{Module, Parameter, RngStream, Scalar, Tensor};
use serde::{Deserialize, Serialize};

pub use backbone::{add_positional, add_positional_backward, mean_tokens, Backbone, BackboneCache, Head};
pub use config::{EmbeddingKind, PosEncoding, Profile, TctstConfig, MLP_HIDDEN, PATCH_DIM, PATCH_LEN, TCN_CHANNELS};
pub use embed::{tcn_out_len, EmbedCache, Embedding};
pub use encoder::{Encoder, EncoderLayer, EncoderLayerCache};
pub use patchtst::{PatchTst, PatchTstCache};
pub use tctst::{TctstCache, TctstModel};

use crate::Result;

/// A network mapping `[B, C, L_B]` windows to `[B, 3]` polar phase vectors.
pub trait PhaseModel<F: Scalar>: Module<F> {
    type Cache;

    fn config(&self) -> &TctstConfig;

    /// Training mode (dropout active) when `rng` is given.
    fn forward(&self, x: &Tensor<F>, rng: Option<&mut RngStream>) -> Result<(Tensor<F>, Self::Cache)>;

    /// Accumulates parameter gradients for upstream gradient `dy` (`[B, 3]`).
    fn backward(&mut self, cache: &Self::Cache, dy: &Tensor<F>) -> Result<()>;

    fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward(x, None)?.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Tctst,
    PatchTst,
}

/// Either supported phase network, chosen at run time.
#[derive(Clone, Debug)]
pub enum AnyModel<F> {
    Tctst(TctstModel<F>),
    PatchTst(PatchTst<F>),
}

pub enum AnyCache<F> {
    Tctst(TctstCache<F>),
    PatchTst(PatchTstCache<F>),
}

impl<F: Scalar> AnyModel<F> {
    pub fn new(arch: Arch, config: TctstConfig, seed: u64) -> Result<Self> {
        Ok(match arch {
            Arch::Tctst => AnyModel::Tctst(TctstModel::new(config, seed)?),
            Arch::PatchTst => AnyModel::PatchTst(PatchTst::new(config, seed)?),
        })
    }

    pub fn arch(&self) -> Arch {
        match self {
            AnyModel::Tctst(_) => Arch::Tctst,
            AnyModel::PatchTst(_) => Arch::PatchTst,
        }
    }
}

impl<F: Scalar> PhaseModel<F> for AnyModel<F> {
    type Cache = AnyCache<F>;

    fn config(&self) -> &TctstConfig {
        match self {
            AnyModel::Tctst(m) => m.config(),
            AnyModel::PatchTst(m) => m.config(),
        }
    }

    fn forward(&self, x: &Tensor<F>, rng: Option<&mut RngStream>) -> Result<(Tensor<F>, AnyCache<F>)> {
        Ok(match self {
            AnyModel::Tctst(m) => {
                let (y, c) = m.forward(x, rng)?;
                (y, AnyCache::Tctst(c))
            }
            AnyModel::PatchTst(m) => {
                let (y, c) = m.forward(x, rng)?;
                (y, AnyCache::PatchTst(c))
            }
        })
    }

    fn backward(&mut self, cache: &AnyCache<F>, dy: &Tensor<F>) -> Result<()> {
        match (self, cache) {
            (AnyModel::Tctst(m), AnyCache::Tctst(c)) => m.backward(c, dy),
            (AnyModel::PatchTst(m), AnyCache::PatchTst(c)) => m.backward(c, dy),
            _ => Err(crate::Error::invalid("cache does not match model architecture")),
        }
    }
}

impl<F: Scalar> Module<F> for AnyModel<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        match self {
            AnyModel::Tctst(m) => m.params(),
            AnyModel::PatchTst(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            AnyModel::Tctst(m) => m.params_mut(),
            AnyModel::PatchTst(m) => m.params_mut(),
        }
    }
}
