//! Layers with hand-written backward passes.
//!
//! Tensors are laid out `[batch, channels, length]` for the 1-D layers and
//! `[batch, features]` for dense ones. `forward` is side-effect free;
//! `forward_train` additionally caches whatever `backward` needs. Parameter
//! gradients accumulate until the optimizer clears them.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub trait Layer<S: Scalar>: Send + Sync {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>>;

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>>;

    /// Gradient w.r.t. the input of the last `forward_train` call.
    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>>;

    fn params(&self) -> Vec<&Tensor<S>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

fn take_cache<T>(cache: &mut Option<T>, layer: &str) -> Result<T> {
    cache
        .take()
        .ok_or_else(|| Error::invalid(format!("{layer}: backward called without forward_train")))
}

/// PyTorch-style default init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
fn uniform_init<S: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| S::lit(rng.gen_range(-bound..bound))).collect()
}

// ---------------------------------------------------------------- conv1d

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || self.kernel > padded {
            return Err(Error::invalid(format!(
                "conv1d: kernel {} stride {} does not fit length {len} with padding {}",
                self.kernel, self.stride, self.padding
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Column range `[lo, hi)` of output positions whose tap `kk` lands inside
/// the input, for unit stride.
fn valid_span(len: usize, lout: usize, kk: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kk).min(lout);
    let hi = (len + padding).saturating_sub(kk).min(lout).max(lo);
    (lo, hi)
}

/// Unfold one example `[cin, len]` into columns `[cin*k, lout]`.
fn im2col<S: Scalar>(x: &[S], cin: usize, len: usize, g: ConvGeometry, lout: usize, cols: &mut [S]) {
    let k = g.kernel;
    for ci in 0..cin {
        let src = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
            if g.stride == 1 {
                let (lo, hi) = valid_span(len, lout, kk, g.padding);
                row[..lo].fill(S::zero());
                row[hi..].fill(S::zero());
                if hi > lo {
                    let s0 = lo + kk - g.padding;
                    row[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                }
            } else {
                for (l, dst) in row.iter_mut().enumerate() {
                    let pos = (l * g.stride + kk) as isize - g.padding as isize;
                    *dst = if pos >= 0 && (pos as usize) < len {
                        src[pos as usize]
                    } else {
                        S::zero()
                    };
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[cin, len]`.
fn col2im<S: Scalar>(cols: &[S], cin: usize, len: usize, g: ConvGeometry, lout: usize, x: &mut [S]) {
    let k = g.kernel;
    for ci in 0..cin {
        let dst = &mut x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
            if g.stride == 1 {
                let (lo, hi) = valid_span(len, lout, kk, g.padding);
                if hi > lo {
                    let s0 = lo + kk - g.padding;
                    for (d, &v) in dst[s0..s0 + hi - lo].iter_mut().zip(&row[lo..hi]) {
                        *d += v;
                    }
                }
            } else {
                for (l, &v) in row.iter().enumerate() {
                    let pos = (l * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        dst[pos as usize] += v;
                    }
                }
            }
        }
    }
}

fn conv_dims<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, g: ConvGeometry) -> Result<(usize, usize, usize, usize, usize)> {
    x.expect_rank(3, "conv1d input")?;
    w.expect_rank(3, "conv1d weights")?;
    let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, wcin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if wcin != cin || k != g.kernel {
        return Err(Error::shape(&[cout, cin, g.kernel], w.shape()));
    }
    let lout = g.out_len(len)?;
    Ok((batch, cin, len, cout, lout))
}

/// 1x1 unit-stride convolutions need no unfolding.
fn is_pointwise(g: ConvGeometry) -> bool {
    g.kernel == 1 && g.stride == 1 && g.padding == 0
}

/// Cross-correlation with bias: `[B, Cin, L] -> [B, Cout, Lout]`.
pub fn conv1d_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, bias: &Tensor<S>, g: ConvGeometry) -> Result<Tensor<S>> {
    let (batch, cin, len, cout, lout) = conv_dims(x, w, g)?;
    bias.expect_shape(&[cout])?;
    let ckk = cin * g.kernel;
    let mut out = vec![S::zero(); batch * cout * lout];
    let mut cols = vec![S::zero(); if is_pointwise(g) { 0 } else { ckk * lout }];
    for b in 0..batch {
        let xb = &x.values()[b * cin * len..(b + 1) * cin * len];
        let ob = &mut out[b * cout * lout..(b + 1) * cout * lout];
        for (row, &bv) in ob.chunks_exact_mut(lout).zip(bias.values()) {
            row.fill(bv);
        }
        let src = if is_pointwise(g) {
            xb
        } else {
            im2col(xb, cin, len, g, lout, &mut cols);
            &cols
        };
        S::gemm(false, false, cout, lout, ckk, S::one(), w.values(), src, S::one(), ob);
    }
    Tensor::new(vec![batch, cout, lout], out)
}

pub struct ConvGrads<S: Scalar> {
    pub input: Tensor<S>,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

pub fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    g: ConvGeometry,
    grad_out: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    let (batch, cin, len, cout, lout) = conv_dims(x, w, g)?;
    grad_out.expect_shape(&[batch, cout, lout])?;
    let ckk = cin * g.kernel;
    let pointwise = is_pointwise(g);

    let mut gw = vec![S::zero(); cout * ckk];
    let mut gbias = vec![S::zero(); cout];
    let mut gx = vec![S::zero(); batch * cin * len];
    let mut cols = vec![S::zero(); if pointwise { 0 } else { ckk * lout }];
    let mut gcols = vec![S::zero(); if pointwise { 0 } else { ckk * lout }];
    for b in 0..batch {
        let xb = &x.values()[b * cin * len..(b + 1) * cin * len];
        let gob = &grad_out.values()[b * cout * lout..(b + 1) * cout * lout];
        for (acc, row) in gbias.iter_mut().zip(gob.chunks_exact(lout)) {
            *acc += row.iter().copied().sum::<S>();
        }
        let gxb = &mut gx[b * cin * len..(b + 1) * cin * len];
        if pointwise {
            S::gemm(false, true, cout, ckk, lout, S::one(), gob, xb, S::one(), &mut gw);
            S::gemm(true, false, ckk, lout, cout, S::one(), w.values(), gob, S::zero(), gxb);
        } else {
            im2col(xb, cin, len, g, lout, &mut cols);
            S::gemm(false, true, cout, ckk, lout, S::one(), gob, &cols, S::one(), &mut gw);
            S::gemm(
                true,
                false,
                ckk,
                lout,
                cout,
                S::one(),
                w.values(),
                gob,
                S::zero(),
                &mut gcols,
            );
            col2im(&gcols, cin, len, g, lout, gxb);
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(vec![batch, cin, len], gx)?,
        weights: gw,
        bias: gbias,
    })
}

pub struct Conv1d<S: Scalar> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub geometry: ConvGeometry,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = cin * kernel;
        let w = uniform_init(rng, cout * cin * kernel, fan_in);
        let b = uniform_init(rng, cout, fan_in);
        Self::from_parts(cin, cout, kernel, stride, padding, w, b).expect("consistent conv init")
    }

    pub fn from_parts(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Vec<S>,
        bias: Vec<S>,
    ) -> Result<Self> {
        Ok(Self {
            weights: Tensor::param(vec![cout, cin, kernel], weights)?,
            bias: Tensor::param(vec![cout], bias)?,
            geometry: ConvGeometry {
                kernel,
                stride,
                padding,
            },
            cache: None,
        })
    }
}

impl<S: Scalar> Layer<S> for Conv1d<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        conv1d_forward(x, &self.weights, &self.bias, self.geometry)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.forward(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let x = take_cache(&mut self.cache, "conv1d")?;
        let g = conv1d_backward(&x, &self.weights, self.geometry, grad_out)?;
        for (acc, v) in self.weights.grad_mut().iter_mut().zip(&g.weights) {
            *acc += *v;
        }
        for (acc, v) in self.bias.grad_mut().iter_mut().zip(&g.bias) {
            *acc += *v;
        }
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Tensor<S>> {
        vec![&self.weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.weights, &mut self.bias]
    }
}

// ------------------------------------------------------------------ relu

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let v = x
        .values()
        .iter()
        .map(|&a| if a > S::zero() { a } else { S::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), v).expect("same shape")
}

/// Gate `grad_out` by `x > 0` (the subgradient at 0 is taken as 0).
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    grad_out.expect_shape(x.shape())?;
    let v = x
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&a, &g)| if a > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), v)
}

#[derive(Default)]
pub struct Relu<S: Scalar> {
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<S: Scalar> Layer<S> for Relu<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(relu_forward(x))
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = relu_forward(x);
        // the output carries the same sign pattern as the input
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let y = take_cache(&mut self.cache, "relu")?;
        relu_backward(&y, grad_out)
    }
}

// --------------------------------------------------------------- maxpool

/// Non-overlapping max pool along the length axis. Ties go to the first index.
/// Returns the pooled tensor and the flat argmax index of each output.
pub fn maxpool1d_forward<S: Scalar>(x: &Tensor<S>, kernel: usize) -> Result<(Tensor<S>, Vec<usize>)> {
    x.expect_rank(3, "maxpool1d")?;
    let (batch, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if kernel == 0 || len % kernel != 0 {
        return Err(Error::invalid(format!(
            "maxpool1d: length {len} is not a multiple of kernel {kernel}"
        )));
    }
    let lout = len / kernel;
    let xs = x.values();
    let mut out = Vec::with_capacity(batch * ch * lout);
    let mut arg = Vec::with_capacity(batch * ch * lout);
    for row in 0..batch * ch {
        for o in 0..lout {
            let start = row * len + o * kernel;
            let mut best = start;
            for i in start + 1..start + kernel {
                if xs[i] > xs[best] {
                    best = i;
                }
            }
            out.push(xs[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::new(vec![batch, ch, lout], out)?, arg))
}

pub fn maxpool1d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::invalid(
            "maxpool1d backward: gradient does not match cached argmax",
        ));
    }
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gv = gx.values_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.values()) {
        gv[i] += g;
    }
    Ok(gx)
}

pub struct MaxPool1d<S: Scalar> {
    pub kernel: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> MaxPool1d<S> {
    pub fn new(kernel: usize) -> Self {
        Self {
            kernel,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<S: Scalar> Layer<S> for MaxPool1d<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(maxpool1d_forward(x, self.kernel)?.0)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (y, arg) = maxpool1d_forward(x, self.kernel)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let (shape, arg) = take_cache(&mut self.cache, "maxpool1d")?;
        maxpool1d_backward(&shape, &arg, grad_out)
    }
}

// ------------------------------------------------------ global avg pool

/// `[B, C, L] -> [B, C]`, mean over the length axis.
pub fn global_avg_pool_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.expect_rank(3, "global_avg_pool")?;
    let (batch, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if len == 0 {
        return Err(Error::invalid("global_avg_pool: empty length axis"));
    }
    let n = S::from_usize_lossy(len);
    let out = x
        .values()
        .chunks_exact(len)
        .map(|row| row.iter().copied().sum::<S>() / n)
        .collect();
    Tensor::new(vec![batch, ch], out)
}

pub fn global_avg_pool_backward<S: Scalar>(input_shape: &[usize], grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, ch, len) = (input_shape[0], input_shape[1], input_shape[2]);
    grad_out.expect_shape(&[batch, ch])?;
    let n = S::from_usize_lossy(len);
    let mut v = Vec::with_capacity(batch * ch * len);
    for &g in grad_out.values() {
        v.extend(std::iter::repeat_n(g / n, len));
    }
    Tensor::new(input_shape.to_vec(), v)
}

pub struct GlobalAvgPool<S: Scalar> {
    cache: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> Default for GlobalAvgPool<S> {
    fn default() -> Self {
        Self {
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<S: Scalar> Layer<S> for GlobalAvgPool<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        global_avg_pool_forward(x)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = global_avg_pool_forward(x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = take_cache(&mut self.cache, "global_avg_pool")?;
        global_avg_pool_backward(&shape, grad_out)
    }
}

// ----------------------------------------------------------------- dense

/// `y = x W^T + b` with `x: [B, din]`, `W: [dout, din]`.
pub fn dense_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    x.expect_rank(2, "dense input")?;
    w.expect_rank(2, "dense weights")?;
    let (batch, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    if w.shape()[1] != din {
        return Err(Error::shape(&[dout, din], w.shape()));
    }
    b.expect_shape(&[dout])?;
    let mut out = Vec::with_capacity(batch * dout);
    for _ in 0..batch {
        out.extend_from_slice(b.values());
    }
    S::gemm(
        false,
        true,
        batch,
        dout,
        din,
        S::one(),
        x.values(),
        w.values(),
        S::one(),
        &mut out,
    );
    Tensor::new(vec![batch, dout], out)
}

pub struct DenseGrads<S: Scalar> {
    pub input: Tensor<S>,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

pub fn dense_backward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, grad_out: &Tensor<S>) -> Result<DenseGrads<S>> {
    let (batch, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    grad_out.expect_shape(&[batch, dout])?;
    let mut gw = vec![S::zero(); dout * din];
    S::gemm(
        true,
        false,
        dout,
        din,
        batch,
        S::one(),
        grad_out.values(),
        x.values(),
        S::zero(),
        &mut gw,
    );
    let mut gx = vec![S::zero(); batch * din];
    S::gemm(
        false,
        false,
        batch,
        din,
        dout,
        S::one(),
        grad_out.values(),
        w.values(),
        S::zero(),
        &mut gx,
    );
    let mut gb = vec![S::zero(); dout];
    for row in grad_out.values().chunks_exact(dout) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![batch, din], gx)?,
        weights: gw,
        bias: gb,
    })
}

pub struct Dense<S: Scalar> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Dense<S> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, din: usize, dout: usize) -> Self {
        let w = uniform_init(rng, dout * din, din);
        let b = uniform_init(rng, dout, din);
        Self::from_parts(din, dout, w, b).expect("consistent dense init")
    }

    pub fn from_parts(din: usize, dout: usize, weights: Vec<S>, bias: Vec<S>) -> Result<Self> {
        Ok(Self {
            weights: Tensor::param(vec![dout, din], weights)?,
            bias: Tensor::param(vec![dout], bias)?,
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }
}

impl<S: Scalar> Layer<S> for Dense<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        dense_forward(x, &self.weights, &self.bias)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.forward(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let x = take_cache(&mut self.cache, "dense")?;
        let g = dense_backward(&x, &self.weights, grad_out)?;
        for (acc, v) in self.weights.grad_mut().iter_mut().zip(&g.weights) {
            *acc += *v;
        }
        for (acc, v) in self.bias.grad_mut().iter_mut().zip(&g.bias) {
            *acc += *v;
        }
        Ok(g.input)
    }

    fn params(&self) -> Vec<&Tensor<S>> {
        vec![&self.weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.weights, &mut self.bias]
    }
}
