//! Layer kernels. Activations are NHWC; every backward pass consumes the
//! cache produced by the matching forward pass.

use rand::Rng;
use rayon::prelude::*;

use super::scalar::{matmul, matmul_at_acc, matmul_bt};
use super::spec::{Activation, LayerSpec, Shape};
use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization, stochastic dropout.
    Train,
    /// Moving statistics, dropout disabled.
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub activation: Activation,
    /// `[kernel, kernel, in_channels, filters]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub features: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_features: usize,
    pub units: usize,
    pub activation: Activation,
    /// `[in_features, units]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    MaxPool2d { pool: usize },
    Dropout { rate: f64 },
    Dense(Dense<T>),
    Flatten,
    Relu,
    Sigmoid,
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    None,
    Conv { cols: Vec<T>, in_dims: Vec<usize>, out: Vec<T> },
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T>, batch_stats: Option<(Vec<f64>, Vec<f64>)> },
    MaxPool { argmax: Vec<u32>, in_dims: Vec<usize> },
    Dropout { mask: Option<Vec<T>> },
    Dense { input: Vec<T>, out: Vec<T> },
    Flatten { in_dims: Vec<usize> },
    Activation { out: Vec<T> },
}

fn glorot<T: Scalar, R: Rng>(rng: &mut R, dims: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    let values = (0..n).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect();
    Tensor::new(dims, values)
}

fn filled<T: Scalar>(n: usize, v: f64) -> Tensor<T> {
    Tensor::new(vec![n], vec![T::from_f64(v); n])
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer with Glorot-uniform weights, zero biases and identity
    /// normalization.
    pub fn init<R: Rng>(spec: &LayerSpec, input: Shape, rng: &mut R) -> Layer<T> {
        match *spec {
            LayerSpec::Conv2d { filters, kernel, activation } => {
                let c = input.channels();
                Layer::Conv2d(Conv2d {
                    kernel,
                    in_channels: c,
                    filters,
                    activation,
                    weight: glorot(
                        rng,
                        vec![kernel, kernel, c, filters],
                        kernel * kernel * c,
                        kernel * kernel * filters,
                    ),
                    bias: filled(filters, 0.0),
                })
            }
            LayerSpec::BatchNorm => {
                let f = input.channels();
                Layer::BatchNorm(BatchNorm {
                    features: f,
                    gamma: filled(f, 1.0),
                    beta: filled(f, 0.0),
                    moving_mean: filled(f, 0.0),
                    moving_var: filled(f, 1.0),
                })
            }
            LayerSpec::MaxPool2d { pool } => Layer::MaxPool2d { pool },
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::Dense { units, activation } => {
                let d = input.channels();
                Layer::Dense(Dense {
                    in_features: d,
                    units,
                    activation,
                    weight: glorot(rng, vec![d, units], d, units),
                    bias: filled(units, 0.0),
                })
            }
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
        }
    }

    /// Parameter arrays with their role names and trainability, in a fixed order.
    pub fn arrays(&self) -> Vec<(&'static str, &Tensor<T>, bool)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight, true), ("bias", &c.bias, true)],
            Layer::Dense(d) => vec![("weight", &d.weight, true), ("bias", &d.bias, true)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &b.gamma, true),
                ("beta", &b.beta, true),
                ("moving_mean", &b.moving_mean, false),
                ("moving_var", &b.moving_var, false),
            ],
            _ => vec![],
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>, bool)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &mut c.weight, true), ("bias", &mut c.bias, true)],
            Layer::Dense(d) => vec![("weight", &mut d.weight, true), ("bias", &mut d.bias, true)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &mut b.gamma, true),
                ("beta", &mut b.beta, true),
                ("moving_mean", &mut b.moving_mean, false),
                ("moving_var", &mut b.moving_var, false),
            ],
            _ => vec![],
        }
    }

    pub fn forward<R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R, keep: bool) -> (Tensor<T>, Cache<T>) {
        match self {
            Layer::Conv2d(c) => c.forward(x, keep),
            Layer::BatchNorm(b) => b.forward(x, mode, keep),
            Layer::MaxPool2d { pool } => maxpool_forward(x, *pool, keep),
            Layer::Dropout { rate } => dropout_forward(x, *rate, mode, rng, keep),
            Layer::Dense(d) => d.forward(x, keep),
            Layer::Flatten => {
                let n = x.batch();
                let in_dims = x.dims().to_vec();
                let flat = x.len() / n.max(1);
                let cache = if keep { Cache::Flatten { in_dims } } else { Cache::None };
                (x.clone().reshape(vec![n, flat]), cache)
            }
            Layer::Relu | Layer::Sigmoid => {
                let act = if matches!(self, Layer::Relu) { Activation::Relu } else { Activation::Sigmoid };
                let mut out = x.clone();
                apply_activation(&mut out.values, act);
                let cache = if keep { Cache::Activation { out: out.values.clone() } } else { Cache::None };
                (out, cache)
            }
        }
    }

    /// Returns the input gradient (when `need_input`) and, when
    /// `need_params`, one gradient per trainable array in [`Layer::arrays`] order.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad: Tensor<T>,
        need_input: bool,
        need_params: bool,
    ) -> (Option<Tensor<T>>, Vec<Vec<T>>) {
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Conv { cols, in_dims, out }) => {
                c.backward(cols, in_dims, out, grad, need_input, need_params)
            }
            (Layer::BatchNorm(b), Cache::BatchNorm { xhat, inv_std, batch_stats }) => {
                b.backward(xhat, inv_std, batch_stats.is_some(), grad, need_params)
            }
            (Layer::MaxPool2d { .. }, Cache::MaxPool { argmax, in_dims }) => {
                let mut dx = Tensor::zeros(in_dims.clone());
                for (&idx, &g) in argmax.iter().zip(&grad.values) {
                    dx.values[idx as usize] += g;
                }
                (Some(dx), vec![])
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                let mut g = grad;
                if let Some(mask) = mask {
                    g.values.iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
                }
                (Some(g), vec![])
            }
            (Layer::Dense(d), Cache::Dense { input, out }) => d.backward(input, out, grad, need_input, need_params),
            (Layer::Flatten, Cache::Flatten { in_dims }) => (Some(grad.reshape(in_dims.clone())), vec![]),
            (Layer::Relu, Cache::Activation { out }) => {
                let mut g = grad;
                activation_backward(&mut g.values, out, Activation::Relu);
                (Some(g), vec![])
            }
            (Layer::Sigmoid, Cache::Activation { out }) => {
                let mut g = grad;
                activation_backward(&mut g.values, out, Activation::Sigmoid);
                (Some(g), vec![])
            }
            _ => panic!("layer cache missing or mismatched; forward must run with caching before backward"),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn apply_activation<T: Scalar>(values: &mut [T], act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => values.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero()
            }
        }),
        Activation::Sigmoid => values.iter_mut().for_each(|v| *v = sigmoid(*v)),
    }
}

/// Multiplies `grad` by the activation derivative, expressed via its output.
fn activation_backward<T: Scalar>(grad: &mut [T], out: &[T], act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => grad.iter_mut().zip(out).for_each(|(g, &o)| {
            if o <= T::zero() {
                *g = T::zero()
            }
        }),
        Activation::Sigmoid => grad.iter_mut().zip(out).for_each(|(g, &o)| *g *= o * (T::one() - o)),
    }
}

fn column_sums<T: Scalar>(m: &[T], cols: usize) -> Vec<T> {
    let mut sums = vec![0.0f64; cols];
    for row in m.chunks_exact(cols) {
        sums.iter_mut().zip(row).for_each(|(s, &v)| *s += v.as_f64());
    }
    sums.into_iter().map(T::from_f64).collect()
}

impl<T: Scalar> Conv2d<T> {
    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h - self.kernel + 1, w - self.kernel + 1)
    }

    fn im2col(&self, x: &Tensor<T>) -> Vec<T> {
        let [n, h, w, c] = <[usize; 4]>::try_from(x.dims()).expect("conv input must be NHWC");
        let k = self.kernel;
        let (ho, wo) = self.out_hw(h, w);
        let kk = k * k * c;
        let mut cols = vec![T::zero(); n * ho * wo * kk];
        cols.par_chunks_mut(ho * wo * kk).enumerate().for_each(|(b, sample)| {
            let img = &x.values[b * h * w * c..(b + 1) * h * w * c];
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = &mut sample[(oy * wo + ox) * kk..(oy * wo + ox + 1) * kk];
                    for ky in 0..k {
                        let src = ((oy + ky) * w + ox) * c;
                        row[ky * k * c..(ky + 1) * k * c].copy_from_slice(&img[src..src + k * c]);
                    }
                }
            }
        });
        cols
    }

    fn forward(&self, x: &Tensor<T>, keep: bool) -> (Tensor<T>, Cache<T>) {
        let [n, h, w, c] = <[usize; 4]>::try_from(x.dims()).expect("conv input must be NHWC");
        assert_eq!(c, self.in_channels, "conv channel mismatch");
        let (ho, wo) = self.out_hw(h, w);
        let rows = n * ho * wo;
        let kk = self.kernel * self.kernel * c;
        let cols = self.im2col(x);
        let mut out = vec![T::zero(); rows * self.filters];
        matmul(&cols, &self.weight.values, &mut out, rows, kk, self.filters);
        for row in out.chunks_exact_mut(self.filters) {
            row.iter_mut().zip(&self.bias.values).for_each(|(v, &b)| *v += b);
        }
        apply_activation(&mut out, self.activation);
        let cache = if keep {
            let act_out = if self.activation == Activation::Linear { Vec::new() } else { out.clone() };
            Cache::Conv { cols, in_dims: x.dims().to_vec(), out: act_out }
        } else {
            Cache::None
        };
        (Tensor::new(vec![n, ho, wo, self.filters], out), cache)
    }

    fn backward(
        &self,
        cols: &[T],
        in_dims: &[usize],
        out: &[T],
        grad: Tensor<T>,
        need_input: bool,
        need_params: bool,
    ) -> (Option<Tensor<T>>, Vec<Vec<T>>) {
        let [n, h, w, c] = <[usize; 4]>::try_from(in_dims).unwrap();
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        let kk = k * k * c;
        let rows = n * ho * wo;
        let f = self.filters;
        let mut dz = grad.values;
        activation_backward(&mut dz, out, self.activation);

        let params = if need_params {
            let mut dw = vec![T::zero(); kk * f];
            matmul_at_acc(cols, &dz, &mut dw, rows, kk, f);
            vec![dw, column_sums(&dz, f)]
        } else {
            vec![]
        };

        let dx = need_input.then(|| {
            let mut dcols = vec![T::zero(); rows * kk];
            matmul_bt(&dz, &self.weight.values, &mut dcols, rows, f, kk);
            let mut dx = vec![T::zero(); n * h * w * c];
            dx.par_chunks_mut(h * w * c).enumerate().for_each(|(b, img)| {
                let sample = &dcols[b * ho * wo * kk..(b + 1) * ho * wo * kk];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let row = &sample[(oy * wo + ox) * kk..(oy * wo + ox + 1) * kk];
                        for ky in 0..k {
                            let dst = ((oy + ky) * w + ox) * c;
                            img[dst..dst + k * c]
                                .iter_mut()
                                .zip(&row[ky * k * c..(ky + 1) * k * c])
                                .for_each(|(d, &g)| *d += g);
                        }
                    }
                }
            });
            Tensor::new(in_dims.to_vec(), dx)
        });
        (dx, params)
    }
}

impl<T: Scalar> BatchNorm<T> {
    fn forward(&self, x: &Tensor<T>, mode: Mode, keep: bool) -> (Tensor<T>, Cache<T>) {
        let f = self.features;
        let m = x.len() / f;
        let (mean, inv_std, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; f];
                for row in x.values.chunks_exact(f) {
                    mean.iter_mut().zip(row).for_each(|(s, &v)| *s += v.as_f64());
                }
                mean.iter_mut().for_each(|s| *s /= m as f64);
                let mut var = vec![0.0f64; f];
                for row in x.values.chunks_exact(f) {
                    for ((s, &v), mu) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.as_f64() - mu;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= m as f64);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
                (mean.clone(), inv, Some((mean, var)))
            }
            Mode::Eval => {
                let mean = self.moving_mean.values.iter().map(|v| v.as_f64()).collect();
                let inv = self.moving_var.values.iter().map(|v| 1.0 / (v.as_f64() + BN_EPSILON).sqrt()).collect();
                (mean, inv, None)
            }
        };
        let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
        let inv_t: Vec<T> = inv_std.iter().map(|&v| T::from_f64(v)).collect();
        let mut xhat = x.values.clone();
        for row in xhat.chunks_exact_mut(f) {
            for ((v, &mu), &inv) in row.iter_mut().zip(&mean_t).zip(&inv_t) {
                *v = (*v - mu) * inv;
            }
        }
        let mut y = xhat.clone();
        for row in y.chunks_exact_mut(f) {
            for ((v, &g), &b) in row.iter_mut().zip(&self.gamma.values).zip(&self.beta.values) {
                *v = g * *v + b;
            }
        }
        // Train-mode passes always carry the batch statistics so they can be committed.
        let cache = match (keep, mode) {
            (true, _) => Cache::BatchNorm { xhat, inv_std: inv_t, batch_stats: stats },
            (false, Mode::Train) => Cache::BatchNorm { xhat: Vec::new(), inv_std: Vec::new(), batch_stats: stats },
            (false, Mode::Eval) => Cache::None,
        };
        (Tensor::new(x.dims().to_vec(), y), cache)
    }

    fn backward(
        &self,
        xhat: &[T],
        inv_std: &[T],
        train: bool,
        grad: Tensor<T>,
        need_params: bool,
    ) -> (Option<Tensor<T>>, Vec<Vec<T>>) {
        let f = self.features;
        let m = grad.len() / f;
        let dims = grad.dims().to_vec();
        let mut dgamma = vec![0.0f64; f];
        let mut dbeta = vec![0.0f64; f];
        for (gr, xr) in grad.values.chunks_exact(f).zip(xhat.chunks_exact(f)) {
            for j in 0..f {
                dgamma[j] += (gr[j] * xr[j]).as_f64();
                dbeta[j] += gr[j].as_f64();
            }
        }
        let mut dx = grad.values;
        if train {
            // Evaluated in f64: the three terms nearly cancel for inputs that
            // only shift the batch mean.
            let mf = m as f64;
            let coef: Vec<f64> = (0..f).map(|j| self.gamma.values[j].as_f64() * inv_std[j].as_f64() / mf).collect();
            for (gr, xr) in dx.chunks_exact_mut(f).zip(xhat.chunks_exact(f)) {
                for j in 0..f {
                    let v = coef[j] * (mf * gr[j].as_f64() - dbeta[j] - xr[j].as_f64() * dgamma[j]);
                    gr[j] = T::from_f64(v);
                }
            }
        } else {
            let coef: Vec<T> = (0..f).map(|j| self.gamma.values[j] * inv_std[j]).collect();
            for gr in dx.chunks_exact_mut(f) {
                gr.iter_mut().zip(&coef).for_each(|(g, &c)| *g *= c);
            }
        }
        let params = if need_params {
            vec![dgamma.into_iter().map(T::from_f64).collect(), dbeta.into_iter().map(T::from_f64).collect()]
        } else {
            vec![]
        };
        (Some(Tensor::new(dims, dx)), params)
    }

    /// Exponential moving update with the batch statistics of a train-mode pass.
    pub fn commit(&mut self, mean: &[f64], var: &[f64]) {
        for j in 0..self.features {
            let mm = &mut self.moving_mean.values[j];
            *mm = T::from_f64(BN_MOMENTUM * mm.as_f64() + (1.0 - BN_MOMENTUM) * mean[j]);
            let mv = &mut self.moving_var.values[j];
            *mv = T::from_f64(BN_MOMENTUM * mv.as_f64() + (1.0 - BN_MOMENTUM) * var[j]);
        }
    }
}

fn maxpool_forward<T: Scalar>(x: &Tensor<T>, pool: usize, keep: bool) -> (Tensor<T>, Cache<T>) {
    let [n, h, w, c] = <[usize; 4]>::try_from(x.dims()).expect("pool input must be NHWC");
    let (ho, wo) = (h / pool, w / pool);
    let mut out = vec![T::zero(); n * ho * wo * c];
    let mut argmax = vec![0u32; out.len()];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = ((b * ho + oy) * wo + ox) * c;
                for ch in 0..c {
                    let mut best_idx = ((b * h + oy * pool) * w + ox * pool) * c + ch;
                    let mut best = x.values[best_idx];
                    for dy in 0..pool {
                        for dx in 0..pool {
                            let idx = ((b * h + oy * pool + dy) * w + ox * pool + dx) * c + ch;
                            if x.values[idx] > best {
                                best = x.values[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o + ch] = best;
                    argmax[o + ch] = best_idx as u32;
                }
            }
        }
    }
    let cache = if keep { Cache::MaxPool { argmax, in_dims: x.dims().to_vec() } } else { Cache::None };
    (Tensor::new(vec![n, ho, wo, c], out), cache)
}

fn dropout_forward<T: Scalar, R: Rng>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
    keep: bool,
) -> (Tensor<T>, Cache<T>) {
    if mode == Mode::Eval || rate == 0.0 {
        let cache = if keep { Cache::Dropout { mask: None } } else { Cache::None };
        return (x.clone(), cache);
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale }).collect();
    let mut out = x.clone();
    out.values.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    let cache = if keep { Cache::Dropout { mask: Some(mask) } } else { Cache::None };
    (out, cache)
}

impl<T: Scalar> Dense<T> {
    fn forward(&self, x: &Tensor<T>, keep: bool) -> (Tensor<T>, Cache<T>) {
        let n = x.batch();
        assert_eq!(x.len(), n * self.in_features, "dense input mismatch");
        let mut out = vec![T::zero(); n * self.units];
        matmul(&x.values, &self.weight.values, &mut out, n, self.in_features, self.units);
        for row in out.chunks_exact_mut(self.units) {
            row.iter_mut().zip(&self.bias.values).for_each(|(v, &b)| *v += b);
        }
        apply_activation(&mut out, self.activation);
        let cache = if keep {
            let act_out = if self.activation == Activation::Linear { Vec::new() } else { out.clone() };
            Cache::Dense { input: x.values.clone(), out: act_out }
        } else {
            Cache::None
        };
        (Tensor::new(vec![n, self.units], out), cache)
    }

    fn backward(
        &self,
        input: &[T],
        out: &[T],
        grad: Tensor<T>,
        need_input: bool,
        need_params: bool,
    ) -> (Option<Tensor<T>>, Vec<Vec<T>>) {
        let n = grad.batch();
        let mut dz = grad.values;
        activation_backward(&mut dz, out, self.activation);
        let params = if need_params {
            let mut dw = vec![T::zero(); self.in_features * self.units];
            matmul_at_acc(input, &dz, &mut dw, n, self.in_features, self.units);
            vec![dw, column_sums(&dz, self.units)]
        } else {
            vec![]
        };
        let dx = need_input.then(|| {
            let mut dx = vec![T::zero(); n * self.in_features];
            matmul_bt(&dz, &self.weight.values, &mut dx, n, self.units, self.in_features);
            Tensor::new(vec![n, self.in_features], dx)
        });
        (dx, params)
    }
}
