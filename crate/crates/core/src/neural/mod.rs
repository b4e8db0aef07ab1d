//! Trainable networks: layers, optimizers, model definitions, training
//! loops, and checkpoint I/O.
//!
//! The substrate is deliberately small and hand-rolled on `ndarray`:
//! deterministic single-threaded execution, explicit forward/backward
//! passes per layer, and a byte-stable checkpoint format. Code is generic
//! over [`Real`] so every backward pass can be finite-difference checked in
//! f64 while production training runs in f32.

pub mod checkpoint;
pub mod layers;
pub mod nets;
pub mod ops;
pub mod train;

pub use checkpoint::{
    load_checkpoint, load_meta, load_posenet, load_unet, load_vae, restore_params,
    save_checkpoint, save_meta, save_network, snapshot_params, CheckpointTensors,
};
pub use nets::{
    decode_tacngen, pose_from_outputs, pose_from_row, pose_to_targets, sample_tacngen,
    PatchDiscriminator, PoseNet, UNet, Vae, POSE_Y_RANGE_MM, TACNGEN_SIGMA_S, VAE_LATENT,
};
pub use train::{
    train_cgan, train_l1_only, train_posenet, train_vae, CganConfig, PoseTrainConfig,
    TrainHistory, VaeConfig,
};

use ndarray::{ArrayD, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Scalar type the networks run on: f32 in production, f64 under gradient
/// checks.
pub trait Real:
    Float
    + FromPrimitive
    + ScalarOperand
    + ndarray::LinalgScalar
    + std::ops::AddAssign
    + std::fmt::Debug
    + 'static
{
    /// Convert a literal; named to avoid clashing with `FromPrimitive`.
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }
    /// Widen to f64; named to avoid clashing with `ToPrimitive`.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Param<F: Real> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    m: ArrayD<F>,
    v: ArrayD<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Param { grad: zeros.clone(), m: zeros.clone(), v: zeros, value }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// One Adam update with bias correction; `t` is the 1-based step count.
    pub fn adam_step(&mut self, opt: &AdamConfig, t: u64) {
        let b1 = F::of_f64(opt.beta1);
        let b2 = F::of_f64(opt.beta2);
        let lr = F::of_f64(opt.lr);
        let eps = F::of_f64(opt.eps);
        let one = F::one();
        let bc1 = F::of_f64(1.0 - opt.beta1.powi(t as i32));
        let bc2 = F::of_f64(1.0 - opt.beta2.powi(t as i32));
        ndarray::Zip::from(&mut self.value)
            .and(&self.grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|w, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            });
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// The adversarial-training setting: low momentum to keep the
    /// generator/discriminator race stable.
    pub fn gan() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }

    /// Plain regression/autoencoding setting.
    pub fn standard() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Stacks same-shaped images into an `(n, 1, height, width)` activation
/// batch.
pub fn images_to_batch(images: &[&crate::GrayImage]) -> crate::Result<ndarray::Array4<f32>> {
    let first = images
        .first()
        .ok_or_else(|| crate::Error::InvalidParameter("empty image batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut out = ndarray::Array4::zeros((images.len(), 1, h, w));
    for (n, img) in images.iter().enumerate() {
        if !img.same_shape(first) {
            return Err(crate::Error::ShapeMismatch {
                expected: format!("{w}x{h}"),
                got: format!("{}x{}", img.width(), img.height()),
            });
        }
        for y in 0..h {
            for x in 0..w {
                out[(n, 0, y, x)] = img.get(x, y);
            }
        }
    }
    Ok(out)
}

/// Unstacks a single-channel `(n, 1, height, width)` batch into images,
/// clamping each value into `[0, 1]`.
pub fn batch_to_images(batch: &ndarray::Array4<f32>) -> crate::Result<Vec<crate::GrayImage>> {
    let (n, c, h, w) = batch.dim();
    if c != 1 {
        return Err(crate::Error::ShapeMismatch {
            expected: "single-channel batch".into(),
            got: format!("{c} channels"),
        });
    }
    Ok((0..n)
        .map(|i| crate::GrayImage::from_fn(w, h, |x, y| batch[(i, 0, y, x)]))
        .collect())
}
