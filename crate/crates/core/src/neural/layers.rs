//! Network building blocks with explicit forward/backward passes.
//!
//! Layers cache whatever the backward pass needs during `forward`;
//! `backward` consumes the upstream gradient, accumulates parameter
//! gradients into the layer's [`Param`]s, and returns the downstream
//! gradient. Calling `backward` before `forward` is a programming error
//! and panics.

use ndarray::{Array1, Array2, Array4, ArrayD, Ix1, Ix2, Ix4, s};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{conv_bw_data, conv_bw_w, conv_fw, ConvGeom};
use super::{Param, Real};

/// Standard normal draw, deterministic in the RNG.
pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn normal_init<F: Real>(shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    ArrayD::from_shape_simple_fn(shape, || F::of_f64(normal(rng) * std))
}

/// Strided convolution with bias.
#[derive(Clone)]
pub struct Conv2d<F: Real> {
    pub w: Param<F>,
    pub b: Param<F>,
    geom: ConvGeom,
    cache_x: Option<Array4<F>>,
}

impl<F: Real> Conv2d<F> {
    pub fn new(in_c: usize, out_c: usize, geom: ConvGeom, rng: &mut ChaCha8Rng) -> Self {
        Conv2d {
            w: Param::new(normal_init(vec![out_c, in_c, geom.kernel, geom.kernel], 0.02, rng)),
            b: Param::new(ArrayD::zeros(vec![out_c])),
            geom,
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        self.cache_x = Some(x.clone());
        let w = self.w.value.view().into_dimensionality::<Ix4>().unwrap();
        let b = self.b.value.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        conv_fw(x.view(), w, Some(&b), self.geom)
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let x = self.cache_x.take().expect("forward before backward");
        let w = self.w.value.view().into_dimensionality::<Ix4>().unwrap();
        let (oc, ic) = (w.dim().0, w.dim().1);
        let (dw, db) = conv_bw_w(dy.view(), x.view(), self.geom, (oc, ic));
        self.w.grad += &dw.into_dyn();
        self.b.grad += &db.into_dyn();
        let (_, c, h, wd) = x.dim();
        conv_bw_data(dy.view(), w, self.geom, (c, h, wd))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Transposed convolution (fractionally strided): the adjoint of a
/// [`Conv2d`] with the same geometry, so it exactly inverts the spatial
/// size change.
#[derive(Clone)]
pub struct ConvTranspose2d<F: Real> {
    /// Weights in conv layout (in_c, out_c, k, k): the layer applies the
    /// conv data-gradient as its forward map.
    pub w: Param<F>,
    pub b: Param<F>,
    geom: ConvGeom,
    out_side_hint: usize,
    cache_x: Option<Array4<F>>,
}

impl<F: Real> ConvTranspose2d<F> {
    /// `out_side_hint` is the spatial side the layer upsamples to when fed
    /// the smallest expected input; forward scales it with the input.
    pub fn new(in_c: usize, out_c: usize, geom: ConvGeom, rng: &mut ChaCha8Rng) -> Self {
        ConvTranspose2d {
            w: Param::new(normal_init(vec![in_c, out_c, geom.kernel, geom.kernel], 0.02, rng)),
            b: Param::new(ArrayD::zeros(vec![out_c])),
            geom,
            out_side_hint: 0,
            cache_x: None,
        }
    }

    fn out_shape(&self, h: usize) -> usize {
        // Inverse of the conv size map: the conv maps S -> out_side(S);
        // for k4/s2/p1 that is exactly 2x.
        let _ = self.out_side_hint;
        self.geom.stride * h + self.geom.kernel - 2 * self.geom.pad - self.geom.stride
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        self.cache_x = Some(x.clone());
        let (_, _, h, w) = x.dim();
        let wv = self.w.value.view().into_dimensionality::<Ix4>().unwrap();
        let out_c = wv.dim().1;
        let oh = self.out_shape(h);
        let ow = self.out_shape(w);
        let mut y = conv_bw_data(x.view(), wv, self.geom, (out_c, oh, ow));
        let b = self.b.value.view().into_dimensionality::<Ix1>().unwrap();
        for ni in 0..y.dim().0 {
            for ci in 0..out_c {
                let mut ch = y.slice_mut(s![ni, ci, .., ..]);
                ch.mapv_inplace(|v| v + b[ci]);
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let x = self.cache_x.take().expect("forward before backward");
        let wv = self.w.value.view().into_dimensionality::<Ix4>().unwrap();
        let (ic, oc) = (wv.dim().0, wv.dim().1);
        // dW of <col2im(W^T x), dy> swaps the roles of input and upstream
        // gradient relative to a plain conv.
        let (dw, _) = conv_bw_w(x.view(), dy.view(), self.geom, (ic, oc));
        self.w.grad += &dw.into_dyn();
        let mut db = Array1::<F>::zeros(oc);
        for ni in 0..dy.dim().0 {
            for ci in 0..oc {
                let mut acc = F::zero();
                for v in dy.slice(s![ni, ci, .., ..]) {
                    acc += *v;
                }
                db[ci] += acc;
            }
        }
        self.b.grad += &db.into_dyn();
        conv_fw(dy.view(), wv, None, self.geom)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Instance normalization: each sample and channel is standardized over its
/// spatial extent, then scaled and shifted. Batch-size independent, which
/// keeps per-sample outputs identical regardless of how samples are
/// batched.
#[derive(Clone)]
pub struct InstanceNorm2d<F: Real> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    eps: f64,
    cache: Option<(Array4<F>, Array2<F>)>, // normalized input, 1/sigma per (n, c)
}

impl<F: Real> InstanceNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Param::new(ArrayD::from_elem(vec![channels], F::one())),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let hw = F::of_f64((h * w) as f64);
        let mut y = Array4::zeros((n, c, h, w));
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut inv_sd = Array2::zeros((n, c));
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        for ni in 0..n {
            for ci in 0..c {
                let sl = x.slice(s![ni, ci, .., ..]);
                let mut mean = F::zero();
                for v in sl.iter() {
                    mean += *v;
                }
                mean = mean / hw;
                let mut var = F::zero();
                for v in sl.iter() {
                    let d = *v - mean;
                    var += d * d;
                }
                var = var / hw;
                let isd = F::one() / (var + F::of_f64(self.eps)).sqrt();
                inv_sd[[ni, ci]] = isd;
                let mut xh = xhat.slice_mut(s![ni, ci, .., ..]);
                let mut yv = y.slice_mut(s![ni, ci, .., ..]);
                for ((xh, yv), &xv) in xh.iter_mut().zip(yv.iter_mut()).zip(sl.iter()) {
                    let nrm = (xv - mean) * isd;
                    *xh = nrm;
                    *yv = gamma[ci] * nrm + beta[ci];
                }
            }
        }
        self.cache = Some((xhat, inv_sd));
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let (xhat, inv_sd) = self.cache.take().expect("forward before backward");
        let (n, c, h, w) = dy.dim();
        let hw = F::of_f64((h * w) as f64);
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let dys = dy.slice(s![ni, ci, .., ..]);
                let xhs = xhat.slice(s![ni, ci, .., ..]);
                let mut sum_dy = F::zero();
                let mut sum_dy_xh = F::zero();
                for (&d, &xh) in dys.iter().zip(xhs.iter()) {
                    sum_dy += d;
                    sum_dy_xh += d * xh;
                }
                dgamma[ci] += sum_dy_xh;
                dbeta[ci] += sum_dy;
                let k = gamma[ci] * inv_sd[[ni, ci]];
                let mean_dy = sum_dy / hw;
                let mean_dy_xh = sum_dy_xh / hw;
                let mut dxs = dx.slice_mut(s![ni, ci, .., ..]);
                for ((out, &d), &xh) in dxs.iter_mut().zip(dys.iter()).zip(xhs.iter()) {
                    *out = k * (d - mean_dy - xh * mean_dy_xh);
                }
            }
        }
        self.gamma.grad += &dgamma.into_dyn();
        self.beta.grad += &dbeta.into_dyn();
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Relu,
    /// Leaky ReLU with the given negative slope.
    Leaky(f64),
    Sigmoid,
    Tanh,
}

/// Stateless activation layer (caches what backward needs).
#[derive(Clone)]
pub struct Activation<F: Real> {
    kind: Act,
    cache: Option<ArrayD<F>>,
}

impl<F: Real> Activation<F> {
    pub fn new(kind: Act) -> Self {
        Activation { kind, cache: None }
    }

    pub fn forward_dyn(&mut self, x: ArrayD<F>) -> ArrayD<F> {
        let y = match self.kind {
            Act::Relu => x.mapv(|v| if v > F::zero() { v } else { F::zero() }),
            Act::Leaky(a) => {
                let a = F::of_f64(a);
                x.mapv(|v| if v > F::zero() { v } else { a * v })
            }
            Act::Sigmoid => x.mapv(|v| F::one() / (F::one() + (-v).exp())),
            Act::Tanh => x.mapv(|v| v.tanh()),
        };
        // ReLU-family needs the input sign; sigmoid/tanh need the output.
        self.cache = Some(match self.kind {
            Act::Relu | Act::Leaky(_) => x,
            Act::Sigmoid | Act::Tanh => y.clone(),
        });
        y
    }

    pub fn backward_dyn(&mut self, dy: &ArrayD<F>) -> ArrayD<F> {
        let cache = self.cache.take().expect("forward before backward");
        match self.kind {
            Act::Relu => {
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(&cache).for_each(|d, &x| {
                    if x <= F::zero() {
                        *d = F::zero();
                    }
                });
                dx
            }
            Act::Leaky(a) => {
                let a = F::of_f64(a);
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(&cache).for_each(|d, &x| {
                    if x <= F::zero() {
                        *d = *d * a;
                    }
                });
                dx
            }
            Act::Sigmoid => {
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(&cache).for_each(|d, &y| {
                    *d = *d * y * (F::one() - y);
                });
                dx
            }
            Act::Tanh => {
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(&cache).for_each(|d, &y| {
                    *d = *d * (F::one() - y * y);
                });
                dx
            }
        }
    }

    pub fn forward(&mut self, x: Array4<F>) -> Array4<F> {
        self.forward_dyn(x.into_dyn()).into_dimensionality::<Ix4>().unwrap()
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        self.backward_dyn(&dy.clone().into_dyn()).into_dimensionality::<Ix4>().unwrap()
    }

    pub fn forward2(&mut self, x: Array2<F>) -> Array2<F> {
        self.forward_dyn(x.into_dyn()).into_dimensionality::<Ix2>().unwrap()
    }

    pub fn backward2(&mut self, dy: &Array2<F>) -> Array2<F> {
        self.backward_dyn(&dy.clone().into_dyn()).into_dimensionality::<Ix2>().unwrap()
    }
}

/// Fully connected layer: y = x W^T + b, batch-first.
#[derive(Clone)]
pub struct Dense<F: Real> {
    pub w: Param<F>,
    pub b: Param<F>,
    cache_x: Option<Array2<F>>,
}

impl<F: Real> Dense<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        // Xavier-uniform keeps activations scaled for the dense heads.
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = ArrayD::from_shape_simple_fn(vec![out_dim, in_dim], || {
            F::of_f64(rng.gen_range(-bound..bound))
        });
        Dense { w: Param::new(w), b: Param::new(ArrayD::zeros(vec![out_dim])), cache_x: None }
    }

    pub fn forward(&mut self, x: &Array2<F>) -> Array2<F> {
        self.cache_x = Some(x.clone());
        let w = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.b.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            row += &b;
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let x = self.cache_x.take().expect("forward before backward");
        let w = self.w.value.view().into_dimensionality::<Ix2>().unwrap();
        self.w.grad += &dy.t().dot(&x).into_dyn();
        self.b.grad += &dy.sum_axis(ndarray::Axis(0)).into_dyn();
        dy.dot(&w)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }
}
