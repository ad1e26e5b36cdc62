use gaitlab_numerics::ops;
use gaitlab_numerics::{Conv1d, Linear, Module, Parameter, RngStream, Scalar, Tensor};

use super::config::{EmbeddingKind, TctstConfig, MLP_HIDDEN, PATCH_DIM, PATCH_LEN, TCN_CHANNELS};
use crate::{Error, Result};

/// Channel-wise embedding: every channel of `[B, C, L]` is mapped to an
/// `Emb`-dimensional token by the same weights.
#[derive(Clone, Debug)]
pub enum Embedding<F> {
    Tcn {
        conv1: Conv1d<F>,
        conv2: Conv1d<F>,
        proj: Linear<F>,
    },
    Mlp {
        fc1: Linear<F>,
        fc2: Linear<F>,
    },
    Patch {
        patch: Linear<F>,
        proj: Linear<F>,
    },
}

pub enum EmbedCache<F> {
    Tcn {
        x: Tensor<F>,
        c1: Tensor<F>,
        p1: Tensor<F>,
        a1: Vec<usize>,
        c2: Tensor<F>,
        a2: Vec<usize>,
        flat: Tensor<F>,
    },
    Mlp {
        x: Tensor<F>,
        h: Tensor<F>,
        r: Tensor<F>,
    },
    Patch {
        patches: Tensor<F>,
        h: Tensor<F>,
        r: Tensor<F>,
    },
}

/// Length after the two pooling stages (each floors odd lengths).
pub fn tcn_out_len(lookback: usize) -> usize {
    lookback / 2 / 2
}

impl<F: Scalar> Embedding<F> {
    pub fn new(cfg: &TctstConfig, rng: &mut RngStream) -> Result<Self> {
        let l = cfg.lookback;
        let e = cfg.emb_dim;
        Ok(match cfg.embedding {
            EmbeddingKind::Tcn => {
                let [c1, c2] = TCN_CHANNELS;
                Embedding::Tcn {
                    conv1: Conv1d::new("embed.conv1", 1, c1, 3, 1, 1, rng),
                    conv2: Conv1d::new("embed.conv2", c1, c2, 3, 1, 1, rng),
                    proj: Linear::new("embed.proj", c2 * tcn_out_len(l), e, true, rng),
                }
            }
            EmbeddingKind::Mlp => Embedding::Mlp {
                fc1: Linear::new("embed.fc1", l, MLP_HIDDEN, true, rng),
                fc2: Linear::new("embed.fc2", MLP_HIDDEN, e, true, rng),
            },
            EmbeddingKind::Patch => Embedding::Patch {
                patch: Linear::new("embed.patch", PATCH_LEN, PATCH_DIM, true, rng),
                proj: Linear::new("embed.proj", (l / PATCH_LEN) * PATCH_DIM, e, true, rng),
            },
        })
    }

    /// Width of the intermediate vector fed to the final projection.
    pub fn intermediate_dim(&self) -> usize {
        match self {
            Embedding::Tcn { proj, .. } | Embedding::Patch { proj, .. } => proj.in_dim(),
            Embedding::Mlp { fc1, .. } => fc1.out_dim(),
        }
    }

    /// `[B, C, L] → [B, C, Emb]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, EmbedCache<F>)> {
        let [b, c, l] = *x.shape() else {
            return Err(Error::invalid(format!("embedding input must be [B, C, L], got {:?}", x.shape())));
        };
        let n = b * c;
        let (y, cache) = match self {
            Embedding::Tcn { conv1, conv2, proj } => {
                if l < 4 {
                    return Err(Error::invalid(format!("TCN embedding needs L >= 4, got {l}")));
                }
                let xs = x.clone().reshape(&[n, 1, l])?;
                let c1 = conv1.forward(&xs)?;
                let (p1, a1) = ops::maxpool1d(&ops::relu(&c1), 2, 2)?;
                let c2 = conv2.forward(&p1)?;
                let (p2, a2) = ops::maxpool1d(&ops::relu(&c2), 2, 2)?;
                let flat = p2.reshape(&[n, TCN_CHANNELS[1] * tcn_out_len(l)])?;
                let y = proj.forward(&flat)?;
                (y, EmbedCache::Tcn { x: xs, c1, p1, a1, c2, a2, flat })
            }
            Embedding::Mlp { fc1, fc2 } => {
                let xs = x.clone().reshape(&[n, l])?;
                let h = fc1.forward(&xs)?;
                let r = ops::relu(&h);
                let y = fc2.forward(&r)?;
                (y, EmbedCache::Mlp { x: xs, h, r })
            }
            Embedding::Patch { patch, proj } => {
                if l % PATCH_LEN != 0 {
                    return Err(Error::invalid(format!("patch embedding needs L % {PATCH_LEN} == 0, got {l}")));
                }
                let patches = x.clone().reshape(&[n * (l / PATCH_LEN), PATCH_LEN])?;
                let h = patch.forward(&patches)?.reshape(&[n, (l / PATCH_LEN) * PATCH_DIM])?;
                let r = ops::relu(&h);
                let y = proj.forward(&r)?;
                (y, EmbedCache::Patch { patches, h, r })
            }
        };
        let e = y.last_dim();
        Ok((y.reshape(&[b, c, e])?, cache))
    }

    /// Accumulates parameter gradients. The input gradient is not needed by
    /// any caller and is not computed.
    pub fn backward(&mut self, cache: &EmbedCache<F>, dy: &Tensor<F>) -> Result<()> {
        let e = dy.last_dim();
        let dy = dy.clone().reshape(&[dy.len() / e, e])?;
        match (self, cache) {
            (Embedding::Tcn { conv1, conv2, proj }, EmbedCache::Tcn { x, c1, p1, a1, c2, a2, flat }) => {
                let dflat = proj.backward(flat, &dy);
                let n = c2.shape()[0];
                let pooled_shape = [n, c2.shape()[1], c2.shape()[2] / 2];
                let dp2 = dflat.reshape(&pooled_shape)?;
                let dr2 = ops::maxpool1d_backward(c2.shape(), a2, &dp2);
                let dc2 = ops::relu_backward(c2, &dr2);
                let dp1 = conv2.backward(p1, &dc2)?;
                let dr1 = ops::maxpool1d_backward(c1.shape(), a1, &dp1);
                let dc1 = ops::relu_backward(c1, &dr1);
                conv1.backward(x, &dc1)?;
            }
            (Embedding::Mlp { fc1, fc2 }, EmbedCache::Mlp { x, h, r }) => {
                let dr = fc2.backward(r, &dy);
                let dh = ops::relu_backward(h, &dr);
                fc1.backward(x, &dh);
            }
            (Embedding::Patch { patch, proj }, EmbedCache::Patch { patches, h, r }) => {
                let dr = proj.backward(r, &dy);
                let dh = ops::relu_backward(h, &dr).reshape(&[patches.shape()[0], PATCH_DIM])?;
                patch.backward(patches, &dh);
            }
            _ => return Err(Error::invalid("embedding cache does not match embedding kind")),
        }
        Ok(())
    }
}

impl<F: Scalar> Module<F> for Embedding<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        match self {
            Embedding::Tcn { conv1, conv2, proj } => {
                let mut v = conv1.params();
                v.extend(conv2.params());
                v.extend(proj.params());
                v
            }
            Embedding::Mlp { fc1, fc2 } => fc1.params().into_iter().chain(fc2.params()).collect(),
            Embedding::Patch { patch, proj } => patch.params().into_iter().chain(proj.params()).collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            Embedding::Tcn { conv1, conv2, proj } => {
                let mut v = conv1.params_mut();
                v.extend(conv2.params_mut());
                v.extend(proj.params_mut());
                v
            }
            Embedding::Mlp { fc1, fc2 } => fc1.params_mut().into_iter().chain(fc2.params_mut()).collect(),
            Embedding::Patch { patch, proj } => patch.params_mut().into_iter().chain(proj.params_mut()).collect(),
        }
    }
}
