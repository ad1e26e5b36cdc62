use serde::{Deserialize, Serialize};

use crate::data::{IMU_CHANNELS, TOTAL_CHANNELS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Tcn,
    Mlp,
    Patch,
}

/// Positional encoding: one learnable scalar per channel, or a full
/// `[C, Emb]` table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosEncoding {
    Scalar,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

pub const TCN_CHANNELS: [usize; 2] = [32, 64];
pub const MLP_HIDDEN: usize = 192;
pub const PATCH_LEN: usize = 10;
pub const PATCH_DIM: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TctstConfig {
    pub channels: usize,
    pub lookback: usize,
    pub emb_dim: usize,
    pub n_head: usize,
    pub n_layers: usize,
    pub mlp_ratio: f64,
    pub latent_dim: usize,
    pub dropout: f64,
    pub qkv_bias: bool,
    pub embedding: EmbeddingKind,
    pub pos_enc: PosEncoding,
}

impl Default for TctstConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper, 100)
    }
}

impl TctstConfig {
    pub fn for_profile(profile: Profile, lookback: usize) -> Self {
        let (emb_dim, n_head, n_layers) = match profile {
            Profile::Paper => (384, 8, 8),
            Profile::Desk => (64, 4, 2),
        };
        Self {
            channels: TOTAL_CHANNELS,
            lookback,
            emb_dim,
            n_head,
            n_layers,
            mlp_ratio: 4.0,
            latent_dim: 128,
            dropout: 0.1,
            qkv_bias: true,
            embedding: EmbeddingKind::Tcn,
            pos_enc: PosEncoding::Scalar,
        }
    }

    pub fn ffn_dim(&self) -> usize {
        (self.mlp_ratio * self.emb_dim as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.channels == 0 || self.emb_dim == 0 || self.n_head == 0 || self.latent_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.emb_dim % self.n_head != 0 {
            return bad(format!("emb_dim {} not divisible by n_head {}", self.emb_dim, self.n_head));
        }
        let ffn = self.mlp_ratio * self.emb_dim as f64;
        if !(ffn >= 1.0 && (ffn - ffn.round()).abs() < 1e-9) {
            return bad(format!("mlp_ratio * emb_dim = {ffn} is not a positive integer"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.lookback < 4 {
            return bad("lookback must be at least 4".into());
        }
        match self.embedding {
            EmbeddingKind::Patch if self.lookback % PATCH_LEN != 0 => {
                bad(format!("patch embedding needs lookback % {PATCH_LEN} == 0, got {}", self.lookback))
            }
            _ => Ok(()),
        }
    }

    /// Whether windows for this model carry phase rows.
    pub fn has_phase_rows(&self) -> bool {
        self.channels > IMU_CHANNELS
    }
}
