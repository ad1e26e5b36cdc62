use gaitlab_numerics::layers::AttentionCache;
use gaitlab_numerics::ops::{self, LayerNormCache};
use gaitlab_numerics::{LayerNorm, Linear, Module, MultiHeadAttention, Parameter, RngStream, Scalar, Tensor};

use crate::Result;

/// Pre-norm Transformer layer: `x += MHA(LN x); x += FFN(LN x)`.
#[derive(Clone, Debug)]
pub struct EncoderLayer<F> {
    pub ln1: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub ln2: LayerNorm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

pub struct EncoderLayerCache<F> {
    ln1: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    h2: Tensor<F>,
    f1: Tensor<F>,
    r: Tensor<F>,
}

impl<F: Scalar> EncoderLayer<F> {
    pub fn new(name: &str, dim: usize, n_head: usize, ffn: usize, qkv_bias: bool, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, n_head, qkv_bias, rng)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
            fc1: Linear::new(&format!("{name}.ffn.fc1"), dim, ffn, true, rng),
            fc2: Linear::new(&format!("{name}.ffn.fc2"), ffn, dim, true, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, EncoderLayerCache<F>)> {
        let (h1, ln1) = self.ln1.forward(x)?;
        let (a, attn) = self.attn.forward(&h1)?;
        let mut x1 = x.clone();
        x1.add_assign(&a)?;
        let (h2, ln2) = self.ln2.forward(&x1)?;
        let f1 = self.fc1.forward(&h2)?;
        let r = ops::relu(&f1);
        let f2 = self.fc2.forward(&r)?;
        x1.add_assign(&f2)?;
        Ok((x1, EncoderLayerCache { ln1, attn, ln2, h2, f1, r }))
    }

    pub fn backward(&mut self, c: &EncoderLayerCache<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let dr = self.fc2.backward(&c.r, dy);
        let df1 = ops::relu_backward(&c.f1, &dr);
        let dh2 = self.fc1.backward(&c.h2, &df1);
        let mut dx1 = dy.clone();
        dx1.add_assign(&self.ln2.backward(&c.ln2, &dh2))?;
        let dh1 = self.attn.backward(&c.attn, &dx1);
        let mut dx = dx1;
        dx.add_assign(&self.ln1.backward(&c.ln1, &dh1))?;
        Ok(dx)
    }
}

impl<F: Scalar> Module<F> for EncoderLayer<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.ln1.params();
        v.extend(self.attn.params());
        v.extend(self.ln2.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.ln1.params_mut();
        v.extend(self.attn.params_mut());
        v.extend(self.ln2.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}

/// A stack of [`EncoderLayer`]s over `[B, T, d]` tokens. Zero layers is the
/// identity.
#[derive(Clone, Debug)]
pub struct Encoder<F> {
    pub layers: Vec<EncoderLayer<F>>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new(
        name: &str,
        n_layers: usize,
        dim: usize,
        n_head: usize,
        ffn: usize,
        qkv_bias: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| EncoderLayer::new(&format!("{name}.layer{i}"), dim, n_head, ffn, qkv_bias, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<EncoderLayerCache<F>>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (next, c) = l.forward(&h)?;
            h = next;
            caches.push(c);
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, caches: &[EncoderLayerCache<F>], dy: &Tensor<F>) -> Result<Tensor<F>> {
        let mut d = dy.clone();
        for (l, c) in self.layers.iter_mut().zip(caches).rev() {
            d = l.backward(c, &d)?;
        }
        Ok(d)
    }
}

impl<F: Scalar> Module<F> for Encoder<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
