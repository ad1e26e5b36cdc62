use gaitlab_numerics::ops;
use gaitlab_numerics::{Linear, Module, Parameter, RngStream, Scalar, Tensor};

use super::config::{PosEncoding, TctstConfig};
use super::embed::{EmbedCache, Embedding};
use super::encoder::{Encoder, EncoderLayerCache};
use crate::{Error, Result};

/// Adds `p[c]` (scalar encoding) or `p[c, :]` (full table) to every token of
/// `[B, C, E]`.
pub fn add_positional<F: Scalar>(tokens: &mut Tensor<F>, pos: &Tensor<F>) -> Result<()> {
    let [_, c, e] = *tokens.shape() else {
        return Err(Error::invalid("positional encoding expects [B, C, E] tokens"));
    };
    let full = match pos.shape() {
        [pc] if *pc == c => false,
        [pc, pe] if *pc == c && *pe == e => true,
        s => return Err(Error::invalid(format!("positional shape {s:?} does not fit tokens [*, {c}, {e}]"))),
    };
    let p = pos.data();
    for (i, row) in tokens.data_mut().chunks_exact_mut(e).enumerate() {
        let ch = i % c;
        if full {
            row.iter_mut().zip(&p[ch * e..(ch + 1) * e]).for_each(|(v, &q)| *v += q);
        } else {
            row.iter_mut().for_each(|v| *v += p[ch]);
        }
    }
    Ok(())
}

/// Gradient of [`add_positional`] with respect to `pos`, accumulated.
pub fn add_positional_backward<F: Scalar>(dtokens: &Tensor<F>, dpos: &mut Tensor<F>) {
    let [_, c, e] = *dtokens.shape() else { unreachable!() };
    let full = dpos.ndim() == 2;
    let g = dpos.data_mut();
    for (i, row) in dtokens.data().chunks_exact(e).enumerate() {
        let ch = i % c;
        if full {
            g[ch * e..(ch + 1) * e].iter_mut().zip(row).for_each(|(a, &d)| *a += d);
        } else {
            g[ch] += row.iter().copied().sum::<F>();
        }
    }
}

/// Mean over axis 1 of `[B, T, E]`.
pub fn mean_tokens<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let [b, t, e] = *x.shape() else {
        return Err(Error::invalid("token pooling expects [B, T, E]"));
    };
    let inv = F::of(1.0 / t as f64);
    let mut out = Tensor::zeros(&[b, e]);
    for (bi, sample) in x.data().chunks_exact(t * e).enumerate() {
        let o = &mut out.data_mut()[bi * e..(bi + 1) * e];
        for row in sample.chunks_exact(e) {
            o.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        o.iter_mut().for_each(|v| *v = *v * inv);
    }
    Ok(out)
}

pub fn mean_tokens_backward<F: Scalar>(dy: &Tensor<F>, tokens: usize) -> Tensor<F> {
    let [b, e] = *dy.shape() else { unreachable!() };
    let inv = F::of(1.0 / tokens as f64);
    let mut dx = Tensor::zeros(&[b, tokens, e]);
    for (bi, chunk) in dx.data_mut().chunks_exact_mut(tokens * e).enumerate() {
        let g = &dy.data()[bi * e..(bi + 1) * e];
        for row in chunk.chunks_exact_mut(e) {
            row.iter_mut().zip(g).for_each(|(a, &v)| *a = v * inv);
        }
    }
    dx
}

/// Channel embedding, positional encoding and Transformer encoder: the part
/// shared between pre-training and fine-tuning.
#[derive(Clone, Debug)]
pub struct Backbone<F> {
    pub embed: Embedding<F>,
    pub pos: Parameter<F>,
    pub encoder: Encoder<F>,
}

pub struct BackboneCache<F> {
    embed: EmbedCache<F>,
    encoder: Vec<EncoderLayerCache<F>>,
}

impl<F: Scalar> Backbone<F> {
    pub fn new(cfg: &TctstConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let embed = Embedding::new(cfg, &mut rng.fork(1))?;
        let pos_shape = match cfg.pos_enc {
            PosEncoding::Scalar => vec![cfg.channels],
            PosEncoding::Full => vec![cfg.channels, cfg.emb_dim],
        };
        let pos = Parameter::new("pos", Tensor::zeros(&pos_shape));
        let encoder = Encoder::new(
            "encoder",
            cfg.n_layers,
            cfg.emb_dim,
            cfg.n_head,
            cfg.ffn_dim(),
            cfg.qkv_bias,
            &mut rng.fork(2),
        )?;
        Ok(Self { embed, pos, encoder })
    }

    /// Embedded tokens with positional encoding, before the encoder.
    pub fn embed_tokens(&self, x: &Tensor<F>) -> Result<(Tensor<F>, EmbedCache<F>)> {
        x.check_finite("model input")?;
        let (mut t, cache) = self.embed.forward(x)?;
        add_positional(&mut t, &self.pos.value)?;
        Ok((t, cache))
    }

    /// `[B, C, L] → [B, C, E]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, BackboneCache<F>)> {
        let (t, embed) = self.embed_tokens(x)?;
        let (z, encoder) = self.encoder.forward(&t)?;
        Ok((z, BackboneCache { embed, encoder }))
    }

    pub fn backward(&mut self, cache: &BackboneCache<F>, dz: &Tensor<F>) -> Result<()> {
        let dt = self.encoder.backward(&cache.encoder, dz)?;
        add_positional_backward(&dt, &mut self.pos.grad);
        self.embed.backward(&cache.embed, &dt)
    }
}

impl<F: Scalar> Module<F> for Backbone<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.embed.params();
        v.push(&self.pos);
        v.extend(self.encoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.embed.params_mut();
        v.push(&mut self.pos);
        v.extend(self.encoder.params_mut());
        v
    }
}

/// `Emb → Latent → ReLU → dropout → 3`.
#[derive(Clone, Debug)]
pub struct Head<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub dropout: f64,
}

pub struct HeadCache<F> {
    pooled: Tensor<F>,
    h: Tensor<F>,
    d: Tensor<F>,
    mask: Option<Tensor<F>>,
}

impl<F: Scalar> Head<F> {
    pub fn new(emb: usize, latent: usize, dropout: f64, rng: &mut RngStream) -> Self {
        Self {
            fc1: Linear::new("head.fc1", emb, latent, true, rng),
            fc2: Linear::new("head.fc2", latent, 3, true, rng),
            dropout,
        }
    }

    /// `pooled` is `[B, Emb]`; dropout is active only when `rng` is given.
    pub fn forward(&self, pooled: Tensor<F>, rng: Option<&mut RngStream>) -> Result<(Tensor<F>, HeadCache<F>)> {
        let training = rng.is_some();
        let h = self.fc1.forward(&pooled)?;
        let r = ops::relu(&h);
        let (d, mask) = ops::dropout(&r, self.dropout, rng, training)?;
        let y = self.fc2.forward(&d)?;
        Ok((y, HeadCache { pooled, h, d, mask }))
    }

    pub fn backward(&mut self, c: &HeadCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let dd = self.fc2.backward(&c.d, dy);
        let dr = ops::dropout_backward(c.mask.as_ref(), &dd);
        let dh = ops::relu_backward(&c.h, &dr);
        self.fc1.backward(&c.pooled, &dh)
    }
}

impl<F: Scalar> Module<F> for Head<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        self.fc1.params().into_iter().chain(self.fc2.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.fc1.params_mut().into_iter().chain(self.fc2.params_mut()).collect()
    }
}
