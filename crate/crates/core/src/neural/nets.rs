//! Network architectures: translator U-Net, patch discriminator, noise
//! VAE, and the contact-pose regressor.
//!
//! All networks operate on NCHW tensors. Image inputs and outputs live in
//! [0, 1]. Every constructor is a pure function of its seed, so a freshly
//! built network is bit-identical across runs.

use ndarray::{concatenate, s, Array2, Array4, Axis};

use crate::seeding::item_rng;

use super::layers::{Act, Activation, Conv2d, ConvTranspose2d, Dense, InstanceNorm2d};
use super::ops::ConvGeom;
use super::{Param, Real};

const LEAK: f64 = 0.2;

/// Encoder-decoder translator with skip connections.
///
/// 1 -> 16 -> 32 -> 64 channels down (halving the side each stage), then
/// back up with transposed convolutions, concatenating the matching
/// encoder activation before each up stage. Sigmoid output keeps
/// predictions in [0, 1]. Works on any square input with side divisible
/// by 8.
#[derive(Clone)]
pub struct UNet<F: Real> {
    base: usize,
    enc1: Conv2d<F>,
    a_e1: Activation<F>,
    enc2: Conv2d<F>,
    n_e2: InstanceNorm2d<F>,
    a_e2: Activation<F>,
    enc3: Conv2d<F>,
    n_e3: InstanceNorm2d<F>,
    a_e3: Activation<F>,
    dec3: ConvTranspose2d<F>,
    n_d3: InstanceNorm2d<F>,
    a_d3: Activation<F>,
    dec2: ConvTranspose2d<F>,
    n_d2: InstanceNorm2d<F>,
    a_d2: Activation<F>,
    dec1: ConvTranspose2d<F>,
    a_out: Activation<F>,
}

impl<F: Real> UNet<F> {
    pub fn new(seed: u64) -> Self {
        let base = 16;
        let mut rng = item_rng(seed, "init.unet", 0);
        let g = ConvGeom::DOWN2;
        UNet {
            base,
            enc1: Conv2d::new(1, base, g, &mut rng),
            a_e1: Activation::new(Act::Leaky(LEAK)),
            enc2: Conv2d::new(base, base * 2, g, &mut rng),
            n_e2: InstanceNorm2d::new(base * 2),
            a_e2: Activation::new(Act::Leaky(LEAK)),
            enc3: Conv2d::new(base * 2, base * 4, g, &mut rng),
            n_e3: InstanceNorm2d::new(base * 4),
            a_e3: Activation::new(Act::Leaky(LEAK)),
            dec3: ConvTranspose2d::new(base * 4, base * 2, g, &mut rng),
            n_d3: InstanceNorm2d::new(base * 2),
            a_d3: Activation::new(Act::Relu),
            dec2: ConvTranspose2d::new(base * 4, base, g, &mut rng),
            n_d2: InstanceNorm2d::new(base),
            a_d2: Activation::new(Act::Relu),
            dec1: ConvTranspose2d::new(base * 2, 1, g, &mut rng),
            a_out: Activation::new(Act::Sigmoid),
        }
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let e1 = self.a_e1.forward(self.enc1.forward(x));
        let e2 = self.a_e2.forward(self.n_e2.forward(&self.enc2.forward(&e1)));
        let e3 = self.a_e3.forward(self.n_e3.forward(&self.enc3.forward(&e2)));
        let d3 = self.a_d3.forward(self.n_d3.forward(&self.dec3.forward(&e3)));
        let c3 = concatenate![Axis(1), d3, e2];
        let d2 = self.a_d2.forward(self.n_d2.forward(&self.dec2.forward(&c3)));
        let c2 = concatenate![Axis(1), d2, e1];
        self.a_out.forward(self.dec1.forward(&c2))
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let b = self.base;
        let g = self.a_out.backward(dy);
        let dc2 = self.dec1.backward(&g);
        let dd2 = dc2.slice(s![.., ..b, .., ..]).to_owned();
        let de1_skip = dc2.slice(s![.., b.., .., ..]).to_owned();
        let g = self.a_d2.backward(&dd2);
        let g = self.n_d2.backward(&g);
        let dc3 = self.dec2.backward(&g);
        let dd3 = dc3.slice(s![.., ..b * 2, .., ..]).to_owned();
        let de2_skip = dc3.slice(s![.., b * 2.., .., ..]).to_owned();
        let g = self.a_d3.backward(&dd3);
        let g = self.n_d3.backward(&g);
        let de3 = self.dec3.backward(&g);
        let g = self.a_e3.backward(&de3);
        let g = self.n_e3.backward(&g);
        let de2 = self.enc3.backward(&g) + &de2_skip;
        let g = self.a_e2.backward(&de2);
        let g = self.n_e2.backward(&g);
        let de1 = self.enc2.backward(&g) + &de1_skip;
        let g = self.a_e1.backward(&de1);
        self.enc1.backward(&g)
    }

    pub fn named_params(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out: Vec<(String, &mut Param<F>)> = Vec::new();
        for (prefix, ps) in [
            ("enc1", self.enc1.params_mut()),
            ("enc2", self.enc2.params_mut()),
            ("n_e2", self.n_e2.params_mut()),
            ("enc3", self.enc3.params_mut()),
            ("n_e3", self.n_e3.params_mut()),
            ("dec3", self.dec3.params_mut()),
            ("n_d3", self.n_d3.params_mut()),
            ("dec2", self.dec2.params_mut()),
            ("n_d2", self.n_d2.params_mut()),
            ("dec1", self.dec1.params_mut()),
        ] {
            for (i, p) in ps.into_iter().enumerate() {
                let suffix = if i == 0 { "w" } else { "b" };
                out.push((format!("{prefix}.{suffix}"), p));
            }
        }
        out
    }
}

/// Patch discriminator for the adversarial objective: judges (input,
/// output) pairs patch-wise, producing a 15x15 grid of logits for 64x64
/// images rather than a single score.
#[derive(Clone)]
pub struct PatchDiscriminator<F: Real> {
    c1: Conv2d<F>,
    a1: Activation<F>,
    c2: Conv2d<F>,
    n2: InstanceNorm2d<F>,
    a2: Activation<F>,
    head: Conv2d<F>,
}

impl<F: Real> PatchDiscriminator<F> {
    pub fn new(seed: u64) -> Self {
        let w = 16;
        let mut rng = item_rng(seed, "init.disc", 0);
        PatchDiscriminator {
            c1: Conv2d::new(2, w, ConvGeom::DOWN2, &mut rng),
            a1: Activation::new(Act::Leaky(LEAK)),
            c2: Conv2d::new(w, w * 2, ConvGeom::DOWN2, &mut rng),
            n2: InstanceNorm2d::new(w * 2),
            a2: Activation::new(Act::Leaky(LEAK)),
            head: Conv2d::new(w * 2, 1, ConvGeom::SAME1, &mut rng),
        }
    }

    /// Logits over patches for the conditioned pair (x, y).
    pub fn forward(&mut self, x: &Array4<F>, y: &Array4<F>) -> Array4<F> {
        let xy = concatenate![Axis(1), x.view(), y.view()];
        let h = self.a1.forward(self.c1.forward(&xy));
        let h = self.a2.forward(self.n2.forward(&self.c2.forward(&h)));
        self.head.forward(&h)
    }

    /// Gradient w.r.t. both inputs, split back out of the channel concat.
    pub fn backward(&mut self, dlogits: &Array4<F>) -> (Array4<F>, Array4<F>) {
        let g = self.head.backward(dlogits);
        let g = self.a2.backward(&g);
        let g = self.n2.backward(&g);
        let g = self.c2.backward(&g);
        let g = self.a1.backward(&g);
        let dxy = self.c1.backward(&g);
        let dx = dxy.slice(s![.., ..1, .., ..]).to_owned();
        let dy = dxy.slice(s![.., 1.., .., ..]).to_owned();
        (dx, dy)
    }

    pub fn named_params(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out: Vec<(String, &mut Param<F>)> = Vec::new();
        for (prefix, ps) in [
            ("c1", self.c1.params_mut()),
            ("c2", self.c2.params_mut()),
            ("n2", self.n2.params_mut()),
            ("head", self.head.params_mut()),
        ] {
            for (i, p) in ps.into_iter().enumerate() {
                let suffix = if i == 0 { "w" } else { "b" };
                out.push((format!("{prefix}.{suffix}"), p));
            }
        }
        out
    }
}

/// Latent dimensionality of the noise model.
pub const VAE_LATENT: usize = 8;

const VAE_FLAT: usize = 32 * 8 * 8;

/// Convolutional VAE over 64x64 depth maps. The decoder alone acts as the
/// learned noise generator: feed standard-normal latents, get noise maps.
#[derive(Clone)]
pub struct Vae<F: Real> {
    e1: Conv2d<F>,
    a1: Activation<F>,
    e2: Conv2d<F>,
    n2: InstanceNorm2d<F>,
    a2: Activation<F>,
    e3: Conv2d<F>,
    n3: InstanceNorm2d<F>,
    a3: Activation<F>,
    fc_mu: Dense<F>,
    fc_lv: Dense<F>,
    d_fc: Dense<F>,
    a_fc: Activation<F>,
    d3: ConvTranspose2d<F>,
    nd3: InstanceNorm2d<F>,
    ad3: Activation<F>,
    d2: ConvTranspose2d<F>,
    nd2: InstanceNorm2d<F>,
    ad2: Activation<F>,
    d1: ConvTranspose2d<F>,
    a_out: Activation<F>,
}

impl<F: Real> Vae<F> {
    pub fn new(seed: u64) -> Self {
        let mut rng = item_rng(seed, "init.vae", 0);
        let g = ConvGeom::DOWN2;
        Vae {
            e1: Conv2d::new(1, 8, g, &mut rng),
            a1: Activation::new(Act::Leaky(LEAK)),
            e2: Conv2d::new(8, 16, g, &mut rng),
            n2: InstanceNorm2d::new(16),
            a2: Activation::new(Act::Leaky(LEAK)),
            e3: Conv2d::new(16, 32, g, &mut rng),
            n3: InstanceNorm2d::new(32),
            a3: Activation::new(Act::Leaky(LEAK)),
            fc_mu: Dense::new(VAE_FLAT, VAE_LATENT, &mut rng),
            fc_lv: Dense::new(VAE_FLAT, VAE_LATENT, &mut rng),
            d_fc: Dense::new(VAE_LATENT, VAE_FLAT, &mut rng),
            a_fc: Activation::new(Act::Relu),
            d3: ConvTranspose2d::new(32, 16, g, &mut rng),
            nd3: InstanceNorm2d::new(16),
            ad3: Activation::new(Act::Relu),
            d2: ConvTranspose2d::new(16, 8, g, &mut rng),
            nd2: InstanceNorm2d::new(8),
            ad2: Activation::new(Act::Relu),
            d1: ConvTranspose2d::new(8, 1, g, &mut rng),
            a_out: Activation::new(Act::Sigmoid),
        }
    }

    /// Posterior parameters (mu, log-variance), each (N, K).
    pub fn encode(&mut self, x: &Array4<F>) -> (Array2<F>, Array2<F>) {
        let h = self.a1.forward(self.e1.forward(x));
        let h = self.a2.forward(self.n2.forward(&self.e2.forward(&h)));
        let h = self.a3.forward(self.n3.forward(&self.e3.forward(&h)));
        let n = h.dim().0;
        let flat = h.into_shape_with_order((n, VAE_FLAT)).unwrap();
        (self.fc_mu.forward(&flat), self.fc_lv.forward(&flat))
    }

    /// Gradient of the encoder given gradients on mu and log-variance.
    pub fn encode_backward(&mut self, dmu: &Array2<F>, dlv: &Array2<F>) -> Array4<F> {
        let dflat = self.fc_mu.backward(dmu) + self.fc_lv.backward(dlv);
        let n = dflat.dim().0;
        let dh = dflat.into_shape_with_order((n, 32, 8, 8)).unwrap();
        let g = self.a3.backward(&dh);
        let g = self.n3.backward(&g);
        let g = self.e3.backward(&g);
        let g = self.a2.backward(&g);
        let g = self.n2.backward(&g);
        let g = self.e2.backward(&g);
        let g = self.a1.backward(&g);
        self.e1.backward(&g)
    }

    /// Decode latents (N, K) into maps (N, 1, 64, 64).
    pub fn decode(&mut self, z: &Array2<F>) -> Array4<F> {
        let n = z.dim().0;
        let h = self.a_fc.forward2(self.d_fc.forward(z));
        let h = h.into_shape_with_order((n, 32, 8, 8)).unwrap();
        let h = self.ad3.forward(self.nd3.forward(&self.d3.forward(&h)));
        let h = self.ad2.forward(self.nd2.forward(&self.d2.forward(&h)));
        self.a_out.forward(self.d1.forward(&h))
    }

    /// Gradient of the decoder w.r.t. its latent input.
    pub fn decode_backward(&mut self, dxhat: &Array4<F>) -> Array2<F> {
        let g = self.a_out.backward(dxhat);
        let g = self.d1.backward(&g);
        let g = self.ad2.backward(&g);
        let g = self.nd2.backward(&g);
        let g = self.d2.backward(&g);
        let g = self.ad3.backward(&g);
        let g = self.nd3.backward(&g);
        let g = self.d3.backward(&g);
        let n = g.dim().0;
        let gflat = g.into_shape_with_order((n, VAE_FLAT)).unwrap();
        let g2 = self.a_fc.backward2(&gflat);
        self.d_fc.backward(&g2)
    }

    pub fn named_params(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out: Vec<(String, &mut Param<F>)> = Vec::new();
        for (prefix, ps) in [
            ("e1", self.e1.params_mut()),
            ("e2", self.e2.params_mut()),
            ("n2", self.n2.params_mut()),
            ("e3", self.e3.params_mut()),
            ("n3", self.n3.params_mut()),
            ("fc_mu", self.fc_mu.params_mut()),
            ("fc_lv", self.fc_lv.params_mut()),
            ("d_fc", self.d_fc.params_mut()),
            ("d3", self.d3.params_mut()),
            ("nd3", self.nd3.params_mut()),
            ("d2", self.d2.params_mut()),
            ("nd2", self.nd2.params_mut()),
            ("d1", self.d1.params_mut()),
        ] {
            for (i, p) in ps.into_iter().enumerate() {
                let suffix = if i == 0 { "w" } else { "b" };
                out.push((format!("{prefix}.{suffix}"), p));
            }
        }
        out
    }
}

const POSE_FLAT: usize = 64 * 4 * 4;

/// Contact-pose regressor: maps a 64x64 depth (or saliency-filtered
/// depth) map to three sigmoid outputs encoding lateral offset and the
/// sine/cosine of the contact angle.
#[derive(Clone)]
pub struct PoseNet<F: Real> {
    c1: Conv2d<F>,
    a1: Activation<F>,
    c2: Conv2d<F>,
    n2: InstanceNorm2d<F>,
    a2: Activation<F>,
    c3: Conv2d<F>,
    n3: InstanceNorm2d<F>,
    a3: Activation<F>,
    c4: Conv2d<F>,
    n4: InstanceNorm2d<F>,
    a4: Activation<F>,
    fc1: Dense<F>,
    a5: Activation<F>,
    fc2: Dense<F>,
    a6: Activation<F>,
}

impl<F: Real> PoseNet<F> {
    pub fn new(seed: u64) -> Self {
        let mut rng = item_rng(seed, "init.pose", 0);
        let g = ConvGeom::DOWN2;
        PoseNet {
            c1: Conv2d::new(1, 16, g, &mut rng),
            a1: Activation::new(Act::Leaky(LEAK)),
            c2: Conv2d::new(16, 32, g, &mut rng),
            n2: InstanceNorm2d::new(32),
            a2: Activation::new(Act::Leaky(LEAK)),
            c3: Conv2d::new(32, 64, g, &mut rng),
            n3: InstanceNorm2d::new(64),
            a3: Activation::new(Act::Leaky(LEAK)),
            c4: Conv2d::new(64, 64, g, &mut rng),
            n4: InstanceNorm2d::new(64),
            a4: Activation::new(Act::Leaky(LEAK)),
            fc1: Dense::new(POSE_FLAT, 64, &mut rng),
            a5: Activation::new(Act::Relu),
            fc2: Dense::new(64, 3, &mut rng),
            a6: Activation::new(Act::Sigmoid),
        }
    }

    /// Sigmoid outputs (N, 3): encoded lateral offset, sin, cos.
    pub fn forward(&mut self, x: &Array4<F>) -> Array2<F> {
        let h = self.a1.forward(self.c1.forward(x));
        let h = self.a2.forward(self.n2.forward(&self.c2.forward(&h)));
        let h = self.a3.forward(self.n3.forward(&self.c3.forward(&h)));
        let h = self.a4.forward(self.n4.forward(&self.c4.forward(&h)));
        let n = h.dim().0;
        let flat = h.into_shape_with_order((n, POSE_FLAT)).unwrap();
        let h = self.a5.forward2(self.fc1.forward(&flat));
        self.a6.forward2(self.fc2.forward(&h))
    }

    pub fn backward(&mut self, dout: &Array2<F>) -> Array4<F> {
        let g = self.a6.backward2(dout);
        let g = self.fc2.backward(&g);
        let g = self.a5.backward2(&g);
        let g = self.fc1.backward(&g);
        let n = g.dim().0;
        let g = g.into_shape_with_order((n, 64, 4, 4)).unwrap();
        let g = self.a4.backward(&g);
        let g = self.n4.backward(&g);
        let g = self.c4.backward(&g);
        let g = self.a3.backward(&g);
        let g = self.n3.backward(&g);
        let g = self.c3.backward(&g);
        let g = self.a2.backward(&g);
        let g = self.n2.backward(&g);
        let g = self.c2.backward(&g);
        let g = self.a1.backward(&g);
        self.c1.backward(&g)
    }

    pub fn named_params(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out: Vec<(String, &mut Param<F>)> = Vec::new();
        for (prefix, ps) in [
            ("c1", self.c1.params_mut()),
            ("c2", self.c2.params_mut()),
            ("n2", self.n2.params_mut()),
            ("c3", self.c3.params_mut()),
            ("n3", self.n3.params_mut()),
            ("c4", self.c4.params_mut()),
            ("n4", self.n4.params_mut()),
            ("fc1", self.fc1.params_mut()),
            ("fc2", self.fc2.params_mut()),
        ] {
            for (i, p) in ps.into_iter().enumerate() {
                let suffix = if i == 0 { "w" } else { "b" };
                out.push((format!("{prefix}.{suffix}"), p));
            }
        }
        out
    }
}

/// Maximum lateral offset (mm) the pose encoding can express.
pub const POSE_Y_RANGE_MM: f64 = 6.0;

/// Encode a contact pose as the three sigmoid targets in (0, 1).
pub fn pose_to_targets(y_mm: f64, rz_deg: f64) -> [f64; 3] {
    let rz = rz_deg.to_radians();
    [
        (y_mm / POSE_Y_RANGE_MM + 1.0) / 2.0,
        (rz.sin() + 1.0) / 2.0,
        (rz.cos() + 1.0) / 2.0,
    ]
}

/// Decode network outputs back to (y_mm, rz_deg). The sine/cosine pair is
/// renormalized implicitly through the arctangent, so the angle is exact
/// even when the raw pair drifts off the unit circle.
pub fn pose_from_outputs(out: &[f64; 3]) -> (f64, f64) {
    let y = (2.0 * out[0] - 1.0) * POSE_Y_RANGE_MM;
    let s = 2.0 * out[1] - 1.0;
    let c = 2.0 * out[2] - 1.0;
    (y, s.atan2(c).to_degrees())
}

/// Decode a row of network outputs (any Real) to (y_mm, rz_deg).
pub fn pose_from_row<F: Real>(row: ndarray::ArrayView1<F>) -> (f64, f64) {
    pose_from_outputs(&[row[0].as_f64(), row[1].as_f64(), row[2].as_f64()])
}

/// Default latent spread when drawing noise maps from the generator.
pub const TACNGEN_SIGMA_S: f64 = 1.0;

/// Decodes an explicit latent vector into a noise depth map.
pub fn decode_tacngen(vae: &mut Vae<f32>, z: &[f64]) -> crate::Result<crate::DepthMap> {
    if z.len() != VAE_LATENT {
        return Err(crate::Error::ShapeMismatch {
            expected: format!("{VAE_LATENT}-dim latent"),
            got: format!("{}-dim", z.len()),
        });
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(crate::Error::InvalidParameter("non-finite latent".into()));
    }
    let zs = Array2::from_shape_fn((1, VAE_LATENT), |(_, k)| z[k] as f32);
    let xhat = vae.decode(&zs);
    Ok(super::batch_to_images(&xhat)?.remove(0))
}

/// Draws `z ~ N(0, sigma_s^2 I)` from the seed and decodes it into a noise
/// depth map in `[0, 1]`.
pub fn sample_tacngen(vae: &mut Vae<f32>, seed: u64, sigma_s: f64) -> crate::Result<crate::DepthMap> {
    if !(sigma_s > 0.0 && sigma_s.is_finite()) {
        return Err(crate::Error::InvalidParameter(format!("latent spread {sigma_s}")));
    }
    let mut rng = crate::seeding::rng_from_seed(seed);
    let z: Vec<f64> = (0..VAE_LATENT).map(|_| sigma_s * super::layers::normal(&mut rng)).collect();
    decode_tacngen(vae, &z)
}
