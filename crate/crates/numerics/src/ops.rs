//! Differentiable op catalog. Each forward has a matching `*_backward`.
//!
//! Batched layouts: `linear`, `layer_norm` and `softmax` act on the trailing
//! dimension of any tensor; `conv1d` and `maxpool1d` take `[N, C, L]` (a
//! bare `[C, L]` is treated as `N = 1`).

use crate::gemm::{gemm, MatMut, MatRef};
use crate::{NumericsError, Result, RngStream, Scalar, Tensor};

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of [`relu`]: passes `dy` where the forward input was positive.
pub fn relu_backward<F: Scalar>(x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("relu_backward keeps shape")
}

/// `y = x Wᵀ + b` over the trailing dimension. `w` is `[out, in]`.
pub fn linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Result<Tensor<F>> {
    if w.ndim() != 2 {
        return Err(NumericsError::invalid("linear", "weight must be 2-D"));
    }
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    if x.last_dim() != in_dim {
        return Err(NumericsError::shape("linear", &[in_dim], &[x.last_dim()]));
    }
    if let Some(b) = b {
        b.expect_shape("linear bias", &[out_dim])?;
    }
    let rows = x.rows();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    let mut y = Tensor::zeros(&shape);
    if let Some(b) = b {
        for row in y.data_mut().chunks_exact_mut(out_dim) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        F::one(),
        MatRef::row_major(x.data(), rows, in_dim),
        MatRef::row_major(w.data(), out_dim, in_dim).t(),
        if b.is_some() { F::one() } else { F::zero() },
        MatMut::row_major(y.data_mut(), rows, out_dim),
    );
    Ok(y)
}

/// Accumulates `dw += dyᵀ x`, `db += Σ dy` and returns `dx = dy W`.
pub fn linear_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
    dw: &mut Tensor<F>,
    db: Option<&mut Tensor<F>>,
) -> Tensor<F> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let rows = x.rows();
    gemm(
        F::one(),
        MatRef::row_major(dy.data(), rows, out_dim).t(),
        MatRef::row_major(x.data(), rows, in_dim),
        F::one(),
        MatMut::row_major(dw.data_mut(), out_dim, in_dim),
    );
    if let Some(db) = db {
        let acc = db.data_mut();
        for row in dy.data().chunks_exact(out_dim) {
            for (a, &g) in acc.iter_mut().zip(row) {
                *a += g;
            }
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    gemm(
        F::one(),
        MatRef::row_major(dy.data(), rows, out_dim),
        MatRef::row_major(w.data(), out_dim, in_dim),
        F::zero(),
        MatMut::row_major(dx.data_mut(), rows, in_dim),
    );
    dx
}

fn split_ncl(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, l] => Ok((1, c, l)),
        [n, c, l] => Ok((n, c, l)),
        _ => Err(NumericsError::invalid(op, format!("expected [C, L] or [N, C, L], got {shape:?}"))),
    }
}

/// Geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    pub in_len: usize,
    pub out_len: usize,
}

impl Conv1dGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], padding: usize, stride: usize) -> Result<Self> {
        let (batch, in_channels, in_len) = split_ncl("conv1d", x_shape)?;
        let [out_channels, w_in, kernel] = *w_shape else {
            return Err(NumericsError::invalid("conv1d", "kernels must be [C_out, C_in, k]"));
        };
        if w_in != in_channels {
            return Err(NumericsError::shape("conv1d", &[in_channels], &[w_in]));
        }
        if stride < 1 {
            return Err(NumericsError::invalid("conv1d", "stride must be >= 1"));
        }
        if kernel == 0 || in_len + 2 * padding < kernel {
            return Err(NumericsError::invalid(
                "conv1d",
                format!("padded length {} shorter than kernel {kernel}", in_len + 2 * padding),
            ));
        }
        let out_len = (in_len + 2 * padding - kernel) / stride + 1;
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            kernel,
            padding,
            stride,
            in_len,
            out_len,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel
    }

    /// Unrolls one sample `[C_in, L]` into `[C_in * k, L_out]`.
    fn im2col<F: Scalar>(&self, x: &[F], cols: &mut [F]) {
        let (k, p, s, l, lo) = (self.kernel, self.padding, self.stride, self.in_len, self.out_len);
        for ci in 0..self.in_channels {
            let xrow = &x[ci * l..(ci + 1) * l];
            for j in 0..k {
                let out = &mut cols[(ci * k + j) * lo..(ci * k + j + 1) * lo];
                for (t, o) in out.iter_mut().enumerate() {
                    let pos = (t * s + j) as isize - p as isize;
                    *o = if pos >= 0 && (pos as usize) < l {
                        xrow[pos as usize]
                    } else {
                        F::zero()
                    };
                }
            }
        }
    }

    fn col2im<F: Scalar>(&self, cols: &[F], dx: &mut [F]) {
        let (k, p, s, l, lo) = (self.kernel, self.padding, self.stride, self.in_len, self.out_len);
        for ci in 0..self.in_channels {
            let dxrow = &mut dx[ci * l..(ci + 1) * l];
            for j in 0..k {
                let src = &cols[(ci * k + j) * lo..(ci * k + j + 1) * lo];
                for (t, &g) in src.iter().enumerate() {
                    let pos = (t * s + j) as isize - p as isize;
                    if pos >= 0 && (pos as usize) < l {
                        dxrow[pos as usize] += g;
                    }
                }
            }
        }
    }
}

fn conv_out_shape(x_shape: &[usize], g: &Conv1dGeometry) -> Vec<usize> {
    if x_shape.len() == 2 {
        vec![g.out_channels, g.out_len]
    } else {
        vec![g.batch, g.out_channels, g.out_len]
    }
}

/// Cross-correlation (no kernel flip) with symmetric zero padding.
pub fn conv1d<F: Scalar>(
    x: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    padding: usize,
    stride: usize,
) -> Result<Tensor<F>> {
    let g = Conv1dGeometry::new(x.shape(), kernels.shape(), padding, stride)?;
    if let Some(b) = bias {
        b.expect_shape("conv1d bias", &[g.out_channels])?;
    }
    let mut y = Tensor::zeros(&conv_out_shape(x.shape(), &g));
    let mut cols = vec![F::zero(); g.col_rows() * g.out_len];
    let in_stride = g.in_channels * g.in_len;
    let out_stride = g.out_channels * g.out_len;
    for n in 0..g.batch {
        g.im2col(&x.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
        let out = &mut y.data_mut()[n * out_stride..(n + 1) * out_stride];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(g.out_len).zip(b.data()) {
                row.iter_mut().for_each(|v| *v = bv);
            }
        }
        gemm(
            F::one(),
            MatRef::row_major(kernels.data(), g.out_channels, g.col_rows()),
            MatRef::row_major(&cols, g.col_rows(), g.out_len),
            if bias.is_some() { F::one() } else { F::zero() },
            MatMut::row_major(out, g.out_channels, g.out_len),
        );
    }
    Ok(y)
}

/// Accumulates kernel and bias gradients and returns `dx`.
pub fn conv1d_backward<F: Scalar>(
    x: &Tensor<F>,
    kernels: &Tensor<F>,
    dy: &Tensor<F>,
    padding: usize,
    stride: usize,
    dkernels: &mut Tensor<F>,
    dbias: Option<&mut Tensor<F>>,
) -> Result<Tensor<F>> {
    let g = Conv1dGeometry::new(x.shape(), kernels.shape(), padding, stride)?;
    dy.expect_shape("conv1d_backward", &conv_out_shape(x.shape(), &g))?;
    let mut dx = Tensor::zeros(x.shape());
    let mut cols = vec![F::zero(); g.col_rows() * g.out_len];
    let mut dcols = vec![F::zero(); g.col_rows() * g.out_len];
    let in_stride = g.in_channels * g.in_len;
    let out_stride = g.out_channels * g.out_len;
    let mut dbias = dbias;
    for n in 0..g.batch {
        let dyn_ = &dy.data()[n * out_stride..(n + 1) * out_stride];
        g.im2col(&x.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
        gemm(
            F::one(),
            MatRef::row_major(dyn_, g.out_channels, g.out_len),
            MatRef::row_major(&cols, g.col_rows(), g.out_len).t(),
            F::one(),
            MatMut::row_major(dkernels.data_mut(), g.out_channels, g.col_rows()),
        );
        if let Some(db) = dbias.as_deref_mut() {
            for (acc, row) in db.data_mut().iter_mut().zip(dyn_.chunks_exact(g.out_len)) {
                *acc += row.iter().copied().sum::<F>();
            }
        }
        gemm(
            F::one(),
            MatRef::row_major(kernels.data(), g.out_channels, g.col_rows()).t(),
            MatRef::row_major(dyn_, g.out_channels, g.out_len),
            F::zero(),
            MatMut::row_major(&mut dcols, g.col_rows(), g.out_len),
        );
        g.col2im(&dcols, &mut dx.data_mut()[n * in_stride..(n + 1) * in_stride]);
    }
    Ok(dx)
}

/// Windowed maximum over the trailing axis. Returns the pooled tensor and,
/// for every output element, the flat input index it came from. Ties go to
/// the first (lowest) position.
pub fn maxpool1d<F: Scalar>(x: &Tensor<F>, size: usize, stride: usize) -> Result<(Tensor<F>, Vec<usize>)> {
    let (n, c, l) = split_ncl("maxpool1d", x.shape())?;
    if size == 0 || stride == 0 {
        return Err(NumericsError::invalid("maxpool1d", "size and stride must be >= 1"));
    }
    if l < size {
        return Err(NumericsError::invalid("maxpool1d", format!("length {l} < pool size {size}")));
    }
    let lo = (l - size) / stride + 1;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = lo;
    let mut out = Vec::with_capacity(n * c * lo);
    let mut argmax = Vec::with_capacity(n * c * lo);
    for row in 0..n * c {
        let base = row * l;
        let xr = &x.data()[base..base + l];
        for t in 0..lo {
            let start = t * stride;
            let mut best = start;
            for i in start + 1..start + size {
                if xr[i] > xr[best] {
                    best = i;
                }
            }
            out.push(xr[best]);
            argmax.push(base + best);
        }
    }
    Ok((Tensor::from_vec(&shape, out)?, argmax))
}

pub fn maxpool1d_backward<F: Scalar>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<F>) -> Tensor<F> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    dx
}

/// Saved statistics of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<F> {
    pub xhat: Tensor<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<(Tensor<F>, LayerNormCache<F>)> {
    let d = x.last_dim();
    gamma.expect_shape("layer_norm gamma", &[d])?;
    beta.expect_shape("layer_norm beta", &[d])?;
    let inv_d = F::of(1.0 / d as f64);
    let eps = F::of(eps);
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut rstd = Vec::with_capacity(x.rows());
    for ((xr, yr), hr) in x
        .data()
        .chunks_exact(d)
        .zip(y.data_mut().chunks_exact_mut(d))
        .zip(xhat.data_mut().chunks_exact_mut(d))
    {
        let mean = xr.iter().copied().sum::<F>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::one() / (var + eps).sqrt();
        for i in 0..d {
            hr[i] = (xr[i] - mean) * r;
            yr[i] = hr[i] * gamma.data()[i] + beta.data()[i];
        }
        rstd.push(r);
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

pub fn layer_norm_backward<F: Scalar>(
    cache: &LayerNormCache<F>,
    gamma: &Tensor<F>,
    dy: &Tensor<F>,
    dgamma: &mut Tensor<F>,
    dbeta: &mut Tensor<F>,
) -> Tensor<F> {
    let d = gamma.len();
    let inv_d = F::of(1.0 / d as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dxhat = vec![F::zero(); d];
    for (((gr, hr), dxr), &r) in dy
        .data()
        .chunks_exact(d)
        .zip(cache.xhat.data().chunks_exact(d))
        .zip(dx.data_mut().chunks_exact_mut(d))
        .zip(&cache.rstd)
    {
        let mut mean_g = F::zero();
        let mut mean_gh = F::zero();
        for i in 0..d {
            dgamma.data_mut()[i] += gr[i] * hr[i];
            dbeta.data_mut()[i] += gr[i];
            dxhat[i] = gr[i] * gamma.data()[i];
            mean_g += dxhat[i];
            mean_gh += dxhat[i] * hr[i];
        }
        mean_g *= inv_d;
        mean_gh *= inv_d;
        for i in 0..d {
            dxr[i] = r * (dxhat[i] - mean_g - hr[i] * mean_gh);
        }
    }
    dx
}

/// Softmax over the trailing dimension, max-subtracted.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut y = x.clone();
    let d = x.last_dim();
    for row in y.data_mut().chunks_exact_mut(d) {
        softmax_in_place(row);
    }
    y
}

pub fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = F::one() / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` row-wise, given the softmax output `y`.
pub fn softmax_backward<F: Scalar>(y: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let d = y.last_dim();
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, gr), dr) in y
        .data()
        .chunks_exact(d)
        .zip(dy.data().chunks_exact(d))
        .zip(dx.data_mut().chunks_exact_mut(d))
    {
        softmax_backward_row(yr, gr, dr);
    }
    dx
}

pub fn softmax_backward_row<F: Scalar>(y: &[F], dy: &[F], dx: &mut [F]) {
    let dot: F = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for i in 0..y.len() {
        dx[i] = y[i] * (dy[i] - dot);
    }
}

/// Inverted dropout. Returns the output and, in training mode with `p > 0`,
/// the per-element multiplier (0 or `1/(1-p)`) needed for the backward pass.
pub fn dropout<F: Scalar>(
    x: &Tensor<F>,
    p: f64,
    rng: Option<&mut RngStream>,
    training: bool,
) -> Result<(Tensor<F>, Option<Tensor<F>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(NumericsError::invalid("dropout", format!("rate {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let rng = rng.ok_or_else(|| NumericsError::invalid("dropout", "training mode needs an rng"))?;
    let keep = F::of(1.0 / (1.0 - p));
    let mask_data: Vec<F> = (0..x.len())
        .map(|_| if rng.uniform() < p { F::zero() } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask_data)?;
    let y_data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Ok((Tensor::from_vec(x.shape(), y_data)?, Some(mask)))
}

pub fn dropout_backward<F: Scalar>(mask: Option<&Tensor<F>>, dy: &Tensor<F>) -> Tensor<F> {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let d = dy.data().iter().zip(m.data()).map(|(&g, &k)| g * k).collect();
            Tensor::from_vec(dy.shape(), d).expect("dropout mask shape")
        }
    }
}

/// Mean squared error over all elements, with its gradient `2(p − t)/N`.
pub fn mse_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    target.expect_shape("mse_loss", pred.shape())?;
    if pred.is_empty() {
        return Err(NumericsError::invalid("mse_loss", "empty tensors"));
    }
    let n = F::of(pred.len() as f64);
    let two_over_n = F::of(2.0) / n;
    let mut loss = F::zero();
    let grad: Vec<F> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            d * two_over_n
        })
        .collect();
    Ok((loss / n, Tensor::from_vec(pred.shape(), grad)?))
}
