//! Forward and backward passes for every layer kind used by the models.
//!
//! A [`Layer`] processes a whole batch at once: its input and output tensors
//! carry a leading batch axis in front of the per-sample shape. Backward
//! passes are hand-written and accumulate parameter gradients until
//! [`Layer::zero_grads`] is called.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, gemm, ConvDims, ConvGeometry, Layout, Scalar, Tensor};

/// Samples per partial-gradient group.
const GRAD_GROUP: usize = 8;

/// Probability floor applied before taking a logarithm in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No border; each axis shrinks by `kernel - 1`.
    Valid,
    /// Zero border of `(kernel - 1) / 2`, preserving size at stride 1.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2D {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool2D {
        pool: usize,
    },
    Dense {
        units: usize,
        /// L2 penalty coefficient on the weight matrix.
        l2: f32,
    },
    ReLU,
    Softmax,
    Dropout {
        rate: f32,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(filters: usize, padding: Padding) -> Self {
        LayerSpec::Conv2D {
            filters,
            kernel: 3,
            stride: 1,
            padding,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units, l2: 0.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "conv2d",
            LayerSpec::MaxPool2D { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::ReLU => "relu",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            LayerSpec::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return bad(format!(
                        "conv2d filters {filters}, kernel {kernel}, stride {stride} must be >= 1"
                    ));
                }
                if padding == Padding::Same && kernel % 2 == 0 {
                    return bad(format!("same padding needs an odd kernel, got {kernel}"));
                }
            }
            LayerSpec::MaxPool2D { pool: 0 } => {
                return bad("pool size must be >= 1".into())
            }
            LayerSpec::Dense { units, l2 } => {
                if units == 0 {
                    return bad("dense units must be >= 1".into());
                }
                if !(l2 >= 0.0 && l2.is_finite()) {
                    return bad(format!("l2 penalty must be >= 0, got {l2}"));
                }
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad(format!("dropout rate must be in [0, 1), got {rate}"))
            }
            _ => {}
        }
        Ok(())
    }

    fn conv_geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv2D {
                kernel,
                stride,
                padding,
                ..
            } => {
                let pad = match padding {
                    Padding::Valid => 0,
                    Padding::Same => (kernel - 1) / 2,
                };
                ConvGeometry::square(kernel, stride, pad).ok()
            }
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let op = self.name();
        match *self {
            LayerSpec::Conv2D { filters, .. } => {
                let &[_, h, w] = input else {
                    return Err(Error::shape(op, format!("needs [C,H,W] input, got {input:?}")));
                };
                let geom = self.conv_geometry().expect("validated conv");
                let (oh, ow) = geom.output_dims(h, w)?;
                Ok(vec![filters, oh, ow])
            }
            LayerSpec::MaxPool2D { pool } => {
                let &[c, h, w] = input else {
                    return Err(Error::shape(op, format!("needs [C,H,W] input, got {input:?}")));
                };
                let (oh, ow) = tensor::pool_output_dims(h, w, pool)?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Dense { units, .. } => match input {
                [_] => Ok(vec![units]),
                _ => Err(Error::shape(
                    op,
                    format!("needs a flat input (insert flatten), got {input:?}"),
                )),
            },
            LayerSpec::Softmax => match input {
                [k] if *k >= 1 => Ok(vec![*k]),
                _ => Err(Error::shape(op, format!("needs a flat input, got {input:?}"))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Shapes of the learnable parameters given the per-sample input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2D {
                filters, kernel, ..
            } => vec![vec![filters, input[0], kernel, kernel], vec![filters]],
            LayerSpec::Dense { units, .. } => vec![vec![input[0], units], vec![units]],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Weight initialization families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / fan_in); for layers feeding a ReLU.
    HeUniform,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    GlorotUniform,
}

#[derive(Debug, Clone)]
enum Cache<T: Scalar> {
    Empty,
    Input(Tensor<T>),
    Output(Tensor<T>),
    Argmax(Vec<usize>),
    Mask(Vec<T>),
}

/// A layer bound to an input shape, with its parameters and gradient buffers.
#[derive(Debug, Clone)]
pub struct Layer<T: Scalar = f32> {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    params: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    cache: Cache<T>,
}

fn batch_shape(n: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(n);
    s.extend_from_slice(sample);
    s
}

impl<T: Scalar> Layer<T> {
    /// Bind `spec` to a per-sample input shape. Parameters start at zero.
    pub fn new(spec: LayerSpec, input_shape: &[usize]) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        let params: Vec<Tensor<T>> = spec
            .param_shapes(input_shape)
            .iter()
            .map(|s| Tensor::zeros(s))
            .collect();
        let grads = params.clone();
        Ok(Layer {
            spec,
            input_shape: input_shape.to_vec(),
            output_shape,
            params,
            grads,
            cache: Cache::Empty,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.grads
    }

    /// Parameters paired with their gradients, for optimizer steps.
    pub fn params_and_grads(&mut self) -> impl Iterator<Item = (&mut Tensor<T>, &Tensor<T>)> {
        self.params.iter_mut().zip(self.grads.iter())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    /// Replace parameters, checking shapes.
    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape(
                self.spec.name(),
                format!(
                    "parameter shapes {:?} do not match {:?}",
                    params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>(),
                    self.params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
                ),
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Fill weights from `scheme`; biases are zeroed.
    pub fn initialize(&mut self, scheme: Init, rng: &mut impl Rng) {
        let (fan_in, fan_out) = match self.spec {
            LayerSpec::Conv2D {
                filters, kernel, ..
            } => (
                self.input_shape[0] * kernel * kernel,
                filters * kernel * kernel,
            ),
            LayerSpec::Dense { units, .. } => (self.input_shape[0], units),
            _ => return,
        };
        let limit = match scheme {
            Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
            Init::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        for v in self.params[0].data_mut() {
            *v = T::from_f64_lossy(rng.random_range(-limit..limit));
        }
        self.params[1].fill(T::zero());
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::shape(
                self.spec.name(),
                format!(
                    "batch input {:?} does not match per-sample shape {:?}",
                    shape, self.input_shape
                ),
            ));
        }
        Ok(shape[0])
    }

    /// Batch forward pass. `seed` drives dropout masks in training mode.
    /// Activations needed by [`backward`](Self::backward) are cached.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let (out, cache) = self.run(x, mode, seed)?;
        self.cache = cache;
        Ok(out)
    }

    /// Inference-mode forward pass without touching the cache.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, Mode::Infer, 0).map(|(out, _)| out)
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<(Tensor<T>, Cache<T>)> {
        let n = self.check_input(x)?;
        let out_shape = batch_shape(n, &self.output_shape);
        match self.spec {
            LayerSpec::Conv2D { .. } => {
                let dims = self.conv_dims()?;
                let (kernels, bias) = (self.params[0].data(), self.params[1].data());
                let mut out = Tensor::zeros(&out_shape);
                out.data_mut()
                    .par_chunks_mut(dims.output_len())
                    .zip(x.data().par_chunks(dims.input_len()))
                    .for_each_init(Vec::new, |cols, (o, xi)| {
                        dims.forward(xi, kernels, bias, o, cols)
                    });
                let cache = if mode == Mode::Train {
                    Cache::Input(x.clone())
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            LayerSpec::Dense { units, .. } => {
                let d = self.input_shape[0];
                let mut out = Tensor::zeros(&out_shape);
                for row in out.data_mut().chunks_exact_mut(units) {
                    row.copy_from_slice(self.params[1].data());
                }
                gemm(
                    n,
                    d,
                    units,
                    T::one(),
                    x.data(),
                    Layout::row_major(d),
                    self.params[0].data(),
                    Layout::row_major(units),
                    T::one(),
                    out.data_mut(),
                    Layout::row_major(units),
                );
                let cache = if mode == Mode::Train {
                    Cache::Input(x.clone())
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            LayerSpec::MaxPool2D { pool } => {
                let &[c, h, w] = self.input_shape.as_slice() else {
                    unreachable!("validated at build")
                };
                let in_len = c * h * w;
                let out_len: usize = self.output_shape.iter().product();
                let mut out = Tensor::zeros(&out_shape);
                let mut argmax = vec![0usize; n * out_len];
                out.data_mut()
                    .par_chunks_mut(out_len)
                    .zip(argmax.par_chunks_mut(out_len))
                    .zip(x.data().par_chunks(in_len))
                    .for_each(|((o, a), xi)| tensor::maxpool_into(xi, (c, h, w), pool, o, a));
                Ok((out, Cache::Argmax(argmax)))
            }
            LayerSpec::ReLU => {
                let out = relu_forward(x);
                let cache = if mode == Mode::Train {
                    Cache::Input(x.clone())
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            LayerSpec::Softmax => {
                let k = self.output_shape[0];
                let mut out = x.clone();
                for row in out.data_mut().chunks_exact_mut(k) {
                    softmax_in_place(row)?;
                }
                let cache = if mode == Mode::Train {
                    Cache::Output(out.clone())
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            LayerSpec::Dropout { rate } => {
                let (out, mask) = dropout_forward(x, rate, mode, seed);
                Ok((out, mask.map_or(Cache::Empty, Cache::Mask)))
            }
            LayerSpec::Flatten => {
                Ok((x.reshape(&out_shape)?, Cache::Empty))
            }
        }
    }

    fn conv_dims(&self) -> Result<ConvDims> {
        let geom = self.spec.conv_geometry().expect("conv layer");
        ConvDims::new(&self.input_shape, self.params[0].shape(), geom)
    }

    /// Batch backward pass. Parameter gradients are accumulated; the input
    /// gradient is returned when `need_input_grad` is set.
    pub fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let n = grad_out.shape().first().copied().unwrap_or(0);
        if grad_out.shape()[1..] != self.output_shape[..] {
            return Err(Error::shape(
                self.spec.name(),
                format!(
                    "grad_out {:?} does not match output shape {:?}",
                    grad_out.shape(),
                    self.output_shape
                ),
            ));
        }
        let in_shape = batch_shape(n, &self.input_shape);
        let missing = || Error::shape(self.spec.name(), "backward called without a training forward pass");
        match self.spec {
            LayerSpec::Conv2D { .. } => {
                let Cache::Input(x) = &self.cache else {
                    return Err(missing());
                };
                if x.shape()[0] != n {
                    return Err(missing());
                }
                let dims = self.conv_dims()?;
                let kernels = self.params[0].data();
                let (klen, blen) = (self.params[0].len(), self.params[1].len());
                let (in_len, out_len) = (dims.input_len(), dims.output_len());
                let mut grad_in = need_input_grad.then(|| Tensor::zeros(&in_shape));
                let group_in: Vec<Option<&mut [T]>> = match grad_in.as_mut() {
                    Some(g) => g
                        .data_mut()
                        .chunks_mut(GRAD_GROUP * in_len)
                        .map(Some)
                        .collect(),
                    None => (0..n.div_ceil(GRAD_GROUP)).map(|_| None).collect(),
                };
                let partials: Vec<(Vec<T>, Vec<T>)> = group_in
                    .into_par_iter()
                    .zip(x.data().par_chunks(GRAD_GROUP * in_len))
                    .zip(grad_out.data().par_chunks(GRAD_GROUP * out_len))
                    .map(|((mut gi, xg), gg)| {
                        let mut gk = vec![T::zero(); klen];
                        let mut gb = vec![T::zero(); blen];
                        let mut cols = Vec::new();
                        for (s, (xs, gs)) in xg
                            .chunks_exact(in_len)
                            .zip(gg.chunks_exact(out_len))
                            .enumerate()
                        {
                            let gi_s = gi.as_deref_mut().map(|g| &mut g[s * in_len..(s + 1) * in_len]);
                            dims.backward(xs, kernels, gs, &mut gk, &mut gb, gi_s, &mut cols);
                        }
                        (gk, gb)
                    })
                    .collect();
                for (gk, gb) in partials {
                    add_into(self.grads[0].data_mut(), &gk);
                    add_into(self.grads[1].data_mut(), &gb);
                }
                Ok(grad_in)
            }
            LayerSpec::Dense { units, .. } => {
                let Cache::Input(x) = &self.cache else {
                    return Err(missing());
                };
                let d = self.input_shape[0];
                let g = grad_out.data();
                gemm(
                    d,
                    n,
                    units,
                    T::one(),
                    x.data(),
                    Layout::transposed(d),
                    g,
                    Layout::row_major(units),
                    T::one(),
                    self.grads[0].data_mut(),
                    Layout::row_major(units),
                );
                for row in g.chunks_exact(units) {
                    add_into(self.grads[1].data_mut(), row);
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut gi = Tensor::zeros(&in_shape);
                gemm(
                    n,
                    units,
                    d,
                    T::one(),
                    g,
                    Layout::row_major(units),
                    self.params[0].data(),
                    Layout::transposed(units),
                    T::zero(),
                    gi.data_mut(),
                    Layout::row_major(d),
                );
                Ok(Some(gi))
            }
            LayerSpec::MaxPool2D { .. } => {
                let Cache::Argmax(argmax) = &self.cache else {
                    return Err(missing());
                };
                if !need_input_grad {
                    return Ok(None);
                }
                let in_len: usize = self.input_shape.iter().product();
                let out_len: usize = self.output_shape.iter().product();
                let mut gi = Tensor::zeros(&in_shape);
                for ((gis, gs), am) in gi
                    .data_mut()
                    .chunks_exact_mut(in_len)
                    .zip(grad_out.data().chunks_exact(out_len))
                    .zip(argmax.chunks_exact(out_len))
                {
                    for (&src, &g) in am.iter().zip(gs) {
                        gis[src] += g;
                    }
                }
                Ok(Some(gi))
            }
            LayerSpec::ReLU => {
                let Cache::Input(x) = &self.cache else {
                    return Err(missing());
                };
                Ok(need_input_grad.then(|| relu_backward(x, grad_out)))
            }
            LayerSpec::Softmax => {
                let Cache::Output(y) = &self.cache else {
                    return Err(missing());
                };
                if !need_input_grad {
                    return Ok(None);
                }
                let k = self.output_shape[0];
                let mut gi = grad_out.clone();
                for (gr, yr) in gi.data_mut().chunks_exact_mut(k).zip(y.data().chunks_exact(k)) {
                    let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for (g, &y) in gr.iter_mut().zip(yr) {
                        *g = y * (*g - dot);
                    }
                }
                Ok(Some(gi))
            }
            LayerSpec::Dropout { .. } => {
                if !need_input_grad {
                    return Ok(None);
                }
                let mut gi = grad_out.clone();
                if let Cache::Mask(mask) = &self.cache {
                    gi.data_mut().iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
                }
                Ok(Some(gi))
            }
            LayerSpec::Flatten => Ok(if need_input_grad {
                Some(grad_out.reshape(&in_shape)?)
            } else {
                None
            }),
        }
    }

    /// Adds `2·λ·W` to the weight gradient and returns the penalty `λ·ΣW²`.
    /// Zero for layers without an L2 coefficient.
    pub fn apply_l2(&mut self) -> T {
        let LayerSpec::Dense { l2, .. } = self.spec else {
            return T::zero();
        };
        if l2 == 0.0 {
            return T::zero();
        }
        let lambda = T::from_f64_lossy(l2 as f64);
        let two_lambda = lambda + lambda;
        for (g, &w) in self.grads[0].data_mut().iter_mut().zip(self.params[0].data()) {
            *g += two_lambda * w;
        }
        l2_penalty(lambda, &self.params[0])
    }

    /// `λ·ΣW²` without touching gradients.
    pub fn l2_penalty(&self) -> T {
        match self.spec {
            LayerSpec::Dense { l2, .. } if l2 > 0.0 => {
                l2_penalty(T::from_f64_lossy(l2 as f64), &self.params[0])
            }
            _ => T::zero(),
        }
    }

    /// Drop cached activations.
    pub fn clear_cache(&mut self) {
        self.cache = Cache::Empty;
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn l2_penalty<T: Scalar>(lambda: T, w: &Tensor<T>) -> T {
    lambda * w.data().iter().map(|&v| v * v).sum::<T>()
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape(), data).expect("same shape as grad")
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) -> Result<()> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
    Ok(())
}

/// Numerically stable softmax over a 1-D tensor of logits.
pub fn softmax_forward<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 1 {
        return Err(Error::shape("softmax", format!("expected [K], got {:?}", logits.shape())));
    }
    let mut out = logits.clone();
    softmax_in_place(out.data_mut())?;
    Ok(out)
}

/// `x·W + b` for a single sample.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[d], &[wd, u]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(
            "dense",
            format!("expected x [D] and W [D,U], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    };
    if d != wd || b.shape() != [u] {
        return Err(Error::shape(
            "dense",
            format!("x {:?}, W {:?}, b {:?} disagree", x.shape(), w.shape(), b.shape()),
        ));
    }
    let row = x.reshape(&[1, d])?;
    let mut out = tensor::matmul(&row, w)?.into_shape(&[u])?;
    out.data_mut().iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
    Ok(out)
}

/// Dropout over any tensor. Inference (or rate 0) is the identity. Training
/// zeroes each element with probability `rate` and scales survivors by
/// `1 / (1 - rate)`; the applied mask is returned for the backward pass.
pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, rate: f32, mode: Mode, seed: u64) -> (Tensor<T>, Option<Vec<T>>) {
    if mode == Mode::Infer || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 - rate as f64;
    let scale = T::from_f64_lossy(1.0 / keep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
        .collect();
    let out = Tensor::new(
        x.shape(),
        x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
    )
    .expect("same shape");
    (out, Some(mask))
}

/// Row-major flatten of a per-sample tensor.
pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.reshape(&[x.len()]).expect("same element count")
}

/// Categorical cross-entropy `-ln p[true]` plus `Σ λ·ΣW²` over `l2_terms`.
pub fn cross_entropy_loss<T: Scalar>(
    probs: &Tensor<T>,
    target_onehot: &Tensor<T>,
    l2_terms: &[(T, &Tensor<T>)],
) -> Result<T> {
    if probs.shape() != target_onehot.shape() || probs.rank() != 1 {
        return Err(Error::shape(
            "cross_entropy",
            format!("probs {:?} vs target {:?}", probs.shape(), target_onehot.shape()),
        ));
    }
    let truth = target_onehot.argmax();
    let p = probs.data()[truth];
    let floor = T::from_f64_lossy(PROB_FLOOR);
    if p <= floor {
        log::warn!("cross-entropy: probability {p} at true class {truth} clamped to {PROB_FLOOR}");
    }
    let mut loss = -p.max(floor).ln();
    for &(lambda, w) in l2_terms {
        loss += l2_penalty(lambda, w);
    }
    Ok(loss)
}

/// Gradient of softmax followed by cross-entropy with respect to the logits.
pub fn cross_entropy_logit_grad<T: Scalar>(probs: &Tensor<T>, target_onehot: &Tensor<T>) -> Tensor<T> {
    let data = probs
        .data()
        .iter()
        .zip(target_onehot.data())
        .map(|(&p, &t)| p - t)
        .collect();
    Tensor::new(probs.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu_forward(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu_forward(&t(&[-3.0, -0.5])).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&t(&[-1.0, 2.0]), &t(&[5.0, 7.0]));
        assert_eq!(g.data(), &[0.0, 7.0]);
        assert_eq!(relu_backward(&t(&[0.0]), &t(&[3.0])).data(), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_forward(&t(&[0.0; 7])).unwrap();
        assert!(s.data().iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-12));
        let s = softmax_forward(&t(&[1000.0, 1000.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_forward(&t(&[0.0, 3f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
        assert!(matches!(
            softmax_forward(&t(&[0.0, f64::NAN])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1.0, 2.0]);
        let w = Tensor::from_rows(&[&[1.0], &[1.0]]);
        assert_eq!(dense_forward(&x, &w, &t(&[3.0])).unwrap().data(), &[6.0]);
        let id = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(dense_forward(&x, &id, &t(&[0.0, 0.0])).unwrap(), x);
        assert!(dense_forward(&t(&[1.0; 3]), &id, &t(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[1.0, -2.0, 3.0]);
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, 1).0, x);
        let (y, mask) = dropout_forward(&x, 0.7, Mode::Infer, 1);
        assert!(mask.is_none());
        assert_eq!(
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        let ones = Tensor::<f64>::full(&[10_000], 1.0);
        let (y, _) = dropout_forward(&ones, 0.5, Mode::Train, 42);
        let mean = y.sum() / 10_000.0;
        assert!((mean - 1.0).abs() <= 0.05, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        // same seed, same mask
        assert_eq!(dropout_forward(&ones, 0.5, Mode::Train, 42).0, y);
    }

    #[test]
    fn flatten_examples() {
        let x = Tensor::<f32>::zeros(&[256, 7, 7]);
        assert_eq!(flatten(&x).len(), 12_544);
        assert_eq!(flatten(&Tensor::<f32>::zeros(&[1, 1, 1])).shape(), &[1]);
        let y = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        assert_eq!(flatten(&y).reshape(&[2, 3, 4]).unwrap(), y);
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = t(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(cross_entropy_loss(&onehot, &onehot, &[]).unwrap(), 0.0);
        let uniform = t(&[1.0 / 7.0; 7]);
        let l = cross_entropy_loss(&uniform, &onehot, &[]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        assert!((l - 1.94591).abs() < 1e-5);
        let w = t(&[1.0, 2.0]);
        let l = cross_entropy_loss(&onehot, &onehot, &[(0.001, &w)]).unwrap();
        assert!((l - 0.005).abs() < 1e-15);
        // degenerate probability is clamped, not infinite
        let zero_at_truth = t(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let l = cross_entropy_loss(&zero_at_truth, &onehot, &[]).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerSpec::Dropout { rate: -0.1 }.validate().is_err());
        assert!(LayerSpec::Dense { units: 0, l2: 0.0 }.validate().is_err());
        assert!(LayerSpec::Dense { units: 3, l2: -1.0 }.validate().is_err());
        assert!(LayerSpec::conv(0, Padding::Valid).validate().is_err());
        assert!(LayerSpec::Dense { units: 4, l2: 0.0 }.output_shape(&[2, 3, 3]).is_err());
        assert_eq!(
            LayerSpec::conv(8, Padding::Same).output_shape(&[3, 12, 12]).unwrap(),
            vec![8, 12, 12]
        );
    }

    #[test]
    fn batch_forward_rejects_wrong_sample_shape() {
        let mut layer = Layer::<f32>::new(LayerSpec::dense(3), &[4]).unwrap();
        assert!(layer.forward(&Tensor::zeros(&[2, 5]), Mode::Infer, 0).is_err());
        assert!(layer.forward(&Tensor::zeros(&[2, 4]), Mode::Infer, 0).is_ok());
    }

    #[test]
    fn backward_requires_training_forward() {
        let mut layer = Layer::<f32>::new(LayerSpec::dense(3), &[4]).unwrap();
        layer.forward(&Tensor::zeros(&[2, 4]), Mode::Infer, 0).unwrap();
        assert!(layer.backward(&Tensor::zeros(&[2, 3]), true).is_err());
    }
}
