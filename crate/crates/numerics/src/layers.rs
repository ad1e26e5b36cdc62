//! Parameterised layers built on [`crate::ops`].
//!
//! Layers own their [`Parameter`]s. `forward` takes `&self`; `backward`
//! takes `&mut self` and accumulates into each parameter's `grad`.

use crate::gemm::{gemm, MatMut, MatRef};
use crate::ops::{self, LayerNormCache};
use crate::{NumericsError, Result, RngStream, Scalar, Tensor};

/// A value tensor with its gradient buffer and a unique dotted name.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    /// `uniform(-bound, bound)` initialisation.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut RngStream) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| F::of(rng.uniform_range(-bound, bound))).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("shape product"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Anything that owns parameters.
pub trait Module<F: Scalar> {
    fn params(&self) -> Vec<&Parameter<F>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<F>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub weight: Parameter<F>,
    pub bias: Option<Parameter<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Parameter::uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, rng);
        let bias = bias.then(|| Parameter::uniform(format!("{name}.bias"), &[out_dim], bound, rng));
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::linear(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value))
    }

    /// `x` is the input that was given to `forward`.
    pub fn backward(&mut self, x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
        ops::linear_backward(
            x,
            &self.weight.value,
            dy,
            &mut self.weight.grad,
            self.bias.as_mut().map(|b| &mut b.grad),
        )
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d<F> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
    pub padding: usize,
    pub stride: usize,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        rng: &mut RngStream,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        Self {
            weight: Parameter::uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel], bound, rng),
            bias: Parameter::uniform(format!("{name}.bias"), &[out_channels], bound, rng),
            padding,
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::conv1d(x, &self.weight.value, Some(&self.bias.value), self.padding, self.stride)
    }

    pub fn backward(&mut self, x: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
        ops::conv1d_backward(
            x,
            &self.weight.value,
            dy,
            self.padding,
            self.stride,
            &mut self.weight.grad,
            Some(&mut self.bias.grad),
        )
    }
}

impl<F: Scalar> Module<F> for Conv1d<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm<F> {
    pub gamma: Parameter<F>,
    pub beta: Parameter<F>,
    pub eps: f64,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[dim], F::one())),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>)> {
        ops::layer_norm(x, &self.gamma.value, &self.beta.value, self.eps)
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        ops::layer_norm_backward(cache, &self.gamma.value, dy, &mut self.gamma.grad, &mut self.beta.grad)
    }
}

impl<F: Scalar> Module<F> for LayerNorm<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Multi-head self-attention over `[B, T, d]` token sequences, no mask.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention<F> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    pub n_head: usize,
}

/// Intermediates kept from an attention forward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache<F> {
    x: Tensor<F>,
    q: Tensor<F>,
    k: Tensor<F>,
    v: Tensor<F>,
    /// `[B, H, T, T]` attention weights.
    probs: Vec<F>,
    ctx: Tensor<F>,
    batch: usize,
    tokens: usize,
}

impl<F: Scalar> AttentionCache<F> {
    /// Attention weights of sample `b`, head `h`, as a row-major `[T, T]`.
    pub fn probs(&self, b: usize, h: usize, n_head: usize) -> &[F] {
        let tt = self.tokens * self.tokens;
        let off = (b * n_head + h) * tt;
        &self.probs[off..off + tt]
    }
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(name: &str, dim: usize, n_head: usize, qkv_bias: bool, rng: &mut RngStream) -> Result<Self> {
        if n_head == 0 || dim % n_head != 0 {
            return Err(NumericsError::invalid(
                "multi_head_attention",
                format!("dim {dim} not divisible by {n_head} heads"),
            ));
        }
        Ok(Self {
            wq: Linear::new(&format!("{name}.wq"), dim, dim, qkv_bias, rng),
            wk: Linear::new(&format!("{name}.wk"), dim, dim, qkv_bias, rng),
            wv: Linear::new(&format!("{name}.wv"), dim, dim, qkv_bias, rng),
            wo: Linear::new(&format!("{name}.wo"), dim, dim, true, rng),
            n_head,
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.in_dim()
    }

    fn head_dim(&self) -> usize {
        self.dim() / self.n_head
    }

    fn scale(&self) -> F {
        F::of(1.0 / (self.head_dim() as f64).sqrt())
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, AttentionCache<F>)> {
        let d = self.dim();
        let (batch, tokens) = match *x.shape() {
            [t, dd] if dd == d => (1, t),
            [b, t, dd] if dd == d => (b, t),
            _ => return Err(NumericsError::shape("multi_head_attention", &[0, d], x.shape())),
        };
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        let (h, dh) = (self.n_head, self.head_dim());
        let tt = tokens * tokens;
        let mut probs = vec![F::zero(); batch * h * tt];
        let mut ctx = Tensor::zeros(x.shape());
        let scale = self.scale();
        for b in 0..batch {
            let base = b * tokens * d;
            let rows = base..base + tokens * d;
            for head in 0..h {
                let off = head * dh;
                let p = &mut probs[(b * h + head) * tt..(b * h + head + 1) * tt];
                let qh = MatRef::new(&q.data()[rows.clone()][off..], tokens, dh, d, 1);
                let kh = MatRef::new(&k.data()[rows.clone()][off..], tokens, dh, d, 1);
                gemm(scale, qh, kh.t(), F::zero(), MatMut::row_major(p, tokens, tokens));
                for row in p.chunks_exact_mut(tokens) {
                    ops::softmax_in_place(row);
                }
                let vh = MatRef::new(&v.data()[rows.clone()][off..], tokens, dh, d, 1);
                let out = MatMut::new(&mut ctx.data_mut()[rows.clone()][off..], tokens, dh, d, 1);
                gemm(F::one(), MatRef::row_major(p, tokens, tokens), vh, F::zero(), out);
            }
        }
        let y = self.wo.forward(&ctx)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                ctx,
                batch,
                tokens,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let d = self.dim();
        let (h, dh) = (self.n_head, self.head_dim());
        let (batch, tokens) = (cache.batch, cache.tokens);
        let tt = tokens * tokens;
        let scale = self.scale();
        let dctx = self.wo.backward(&cache.ctx, dy);
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        let mut dp = vec![F::zero(); tt];
        let mut ds = vec![F::zero(); tt];
        for b in 0..batch {
            let base = b * tokens * d;
            let rows = base..base + tokens * d;
            for head in 0..h {
                let off = head * dh;
                let p = &cache.probs[(b * h + head) * tt..(b * h + head + 1) * tt];
                let dctx_h = MatRef::new(&dctx.data()[rows.clone()][off..], tokens, dh, d, 1);
                let vh = MatRef::new(&cache.v.data()[rows.clone()][off..], tokens, dh, d, 1);
                // dP = dctx Vᵀ, dV = Pᵀ dctx
                gemm(F::one(), dctx_h, vh.t(), F::zero(), MatMut::row_major(&mut dp, tokens, tokens));
                gemm(
                    F::one(),
                    MatRef::row_major(p, tokens, tokens).t(),
                    dctx_h,
                    F::zero(),
                    MatMut::new(&mut dv.data_mut()[rows.clone()][off..], tokens, dh, d, 1),
                );
                for ((pr, gr), sr) in p
                    .chunks_exact(tokens)
                    .zip(dp.chunks_exact(tokens))
                    .zip(ds.chunks_exact_mut(tokens))
                {
                    ops::softmax_backward_row(pr, gr, sr);
                }
                let qh = MatRef::new(&cache.q.data()[rows.clone()][off..], tokens, dh, d, 1);
                let kh = MatRef::new(&cache.k.data()[rows.clone()][off..], tokens, dh, d, 1);
                let dsm = MatRef::row_major(&ds, tokens, tokens);
                gemm(scale, dsm, kh, F::zero(), MatMut::new(&mut dq.data_mut()[rows.clone()][off..], tokens, dh, d, 1));
                gemm(scale, dsm.t(), qh, F::zero(), MatMut::new(&mut dk.data_mut()[rows.clone()][off..], tokens, dh, d, 1));
            }
        }
        let mut dx = self.wq.backward(&cache.x, &dq);
        dx.add_assign(&self.wk.backward(&cache.x, &dk)).expect("same shape");
        dx.add_assign(&self.wv.backward(&cache.x, &dv)).expect("same shape");
        dx
    }
}

impl<F: Scalar> Module<F> for MultiHeadAttention<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.wq.params();
        v.extend(self.wk.params());
        v.extend(self.wv.params());
        v.extend(self.wo.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.wq.params_mut();
        v.extend(self.wk.params_mut());
        v.extend(self.wv.params_mut());
        v.extend(self.wo.params_mut());
        v
    }
}
