use gaitlab_numerics::{Linear, Module, Parameter, RngStream, Scalar, Tensor};

use super::backbone::{mean_tokens, mean_tokens_backward, Head, HeadCache};
use super::config::{TctstConfig, PATCH_LEN};
use super::encoder::{Encoder, EncoderLayerCache};
use super::PhaseModel;
use crate::{Error, Result};

/// Time-patch Transformer baseline: each token is one length-10 patch across
/// all channels.
#[derive(Clone, Debug)]
pub struct PatchTst<F> {
    pub config: TctstConfig,
    pub proj: Linear<F>,
    pub pos: Parameter<F>,
    pub encoder: Encoder<F>,
    pub head: Head<F>,
}

pub struct PatchTstCache<F> {
    tokens_in: Tensor<F>,
    encoder: Vec<EncoderLayerCache<F>>,
    head: HeadCache<F>,
    patches: usize,
}

impl<F: Scalar> PatchTst<F> {
    pub fn new(config: TctstConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.lookback % PATCH_LEN != 0 {
            return Err(Error::invalid(format!("patch baseline needs lookback % {PATCH_LEN} == 0")));
        }
        let root = RngStream::new(seed, 0);
        let mut rng = root.fork(10);
        let p = config.lookback / PATCH_LEN;
        let e = config.emb_dim;
        let proj = Linear::new("patch.proj", config.channels * PATCH_LEN, e, true, &mut rng);
        let pos = Parameter::uniform("patch.pos", &[p, e], 0.02, &mut rng);
        let encoder = Encoder::new("encoder", config.n_layers, e, config.n_head, config.ffn_dim(), config.qkv_bias, &mut rng)?;
        let head = Head::new(e, config.latent_dim, config.dropout, &mut root.fork(20));
        Ok(Self { config, proj, pos, encoder, head })
    }

    pub fn patches(&self) -> usize {
        self.config.lookback / PATCH_LEN
    }

    /// `[B, C, L] → [B·P, C·10]`, patch-major, channel then time inside a patch.
    fn patchify(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (c, l, p) = (self.config.channels, self.config.lookback, self.patches());
        let b = x.shape()[0];
        let mut out = Vec::with_capacity(x.len());
        for bi in 0..b {
            for pi in 0..p {
                for ci in 0..c {
                    let s = bi * c * l + ci * l + pi * PATCH_LEN;
                    out.extend_from_slice(&x.data()[s..s + PATCH_LEN]);
                }
            }
        }
        Ok(Tensor::from_vec(&[b * p, c * PATCH_LEN], out)?)
    }
}

impl<F: Scalar> PhaseModel<F> for PatchTst<F> {
    type Cache = PatchTstCache<F>;

    fn config(&self) -> &TctstConfig {
        &self.config
    }

    fn forward(&self, x: &Tensor<F>, rng: Option<&mut RngStream>) -> Result<(Tensor<F>, PatchTstCache<F>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.config.channels || shape[2] != self.config.lookback {
            return Err(Error::invalid(format!(
                "model expects [B, {}, {}], got {shape:?}",
                self.config.channels, self.config.lookback
            )));
        }
        x.check_finite("model input")?;
        let (b, p, e) = (shape[0], self.patches(), self.config.emb_dim);
        let tokens_in = self.patchify(x)?;
        let mut t = self.proj.forward(&tokens_in)?.reshape(&[b, p, e])?;
        for chunk in t.data_mut().chunks_exact_mut(p * e) {
            chunk.iter_mut().zip(self.pos.value.data()).for_each(|(v, &q)| *v += q);
        }
        let (z, encoder) = self.encoder.forward(&t)?;
        let (y, head) = self.head.forward(mean_tokens(&z)?, rng)?;
        Ok((y, PatchTstCache { tokens_in, encoder, head, patches: p }))
    }

    fn backward(&mut self, cache: &PatchTstCache<F>, dy: &Tensor<F>) -> Result<()> {
        let dpooled = self.head.backward(&cache.head, dy);
        let dz = mean_tokens_backward(&dpooled, cache.patches);
        let dt = self.encoder.backward(&cache.encoder, &dz)?;
        let pe = self.pos.value.len();
        for chunk in dt.data().chunks_exact(pe) {
            self.pos.grad.data_mut().iter_mut().zip(chunk).for_each(|(g, &d)| *g += d);
        }
        let e = dt.last_dim();
        let dt = dt.reshape(&[cache.tokens_in.shape()[0], e])?;
        self.proj.backward(&cache.tokens_in, &dt);
        Ok(())
    }
}

impl<F: Scalar> Module<F> for PatchTst<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.proj.params();
        v.push(&self.pos);
        v.extend(self.encoder.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.proj.params_mut();
        v.push(&mut self.pos);
        v.extend(self.encoder.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
