//! Training loops: adversarial translator training, noise-model VAE
//! training, and pose-regressor training.
//!
//! All loops are single-threaded and draw every random decision (epoch
//! shuffles, latent noise) from streams derived from the config seed, so a
//! given (data, config) pair trains bit-identically on every run.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;

use crate::seeding::item_rng;
use crate::{Error, Result};

use super::layers::normal;
use super::nets::{PatchDiscriminator, PoseNet, UNet, Vae};
use super::{AdamConfig, Param, Real};

/// Named per-epoch loss curves in insertion order.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub curves: Vec<(String, Vec<f64>)>,
}

impl TrainHistory {
    fn push(&mut self, name: &str, value: f64) {
        if let Some((_, vs)) = self.curves.iter_mut().find(|(n, _)| n == name) {
            vs.push(value);
        } else {
            self.curves.push((name.to_string(), vec![value]));
        }
    }

    /// Final value of a named curve.
    pub fn last(&self, name: &str) -> Option<f64> {
        self.curves.iter().find(|(n, _)| n == name).and_then(|(_, vs)| vs.last().copied())
    }

    /// Key-value rendering for the human-readable document written next to
    /// a checkpoint.
    pub fn meta_pairs(&self) -> Vec<(String, String)> {
        self.curves
            .iter()
            .map(|(n, vs)| {
                let joined =
                    vs.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
                (format!("loss.{n}"), joined)
            })
            .collect()
    }
}

/// Adversarial translator training configuration.
#[derive(Debug, Clone)]
pub struct CganConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the pixel L1 term relative to the adversarial term.
    pub l1_weight: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
}

impl Default for CganConfig {
    fn default() -> Self {
        CganConfig {
            epochs: 100,
            batch_size: 16,
            l1_weight: 100.0,
            lr_g: 2e-4,
            lr_d: 2e-4,
            seed: 0,
        }
    }
}

/// Noise-model VAE training configuration.
#[derive(Debug, Clone)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the KL term relative to reconstruction.
    pub kl_weight: f64,
    /// Reconstruction noise scale of the Gaussian likelihood.
    pub sigma_r: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig { epochs: 200, batch_size: 16, kl_weight: 1.0, sigma_r: 0.1, lr: 1e-3, seed: 0 }
    }
}

/// Pose-regressor training configuration.
#[derive(Debug, Clone)]
pub struct PoseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        PoseTrainConfig { epochs: 100, batch_size: 16, lr: 1e-3, seed: 0 }
    }
}

/// Numerically stable binary cross-entropy on logits against a constant
/// target, averaged over all elements. Returns (loss, dloss/dlogits).
pub fn bce_with_logits<F: Real>(logits: &Array4<F>, target: f64) -> (f64, Array4<F>) {
    let m = logits.len() as f64;
    let mut loss = 0.0;
    for &x in logits.iter() {
        let x = x.as_f64();
        loss += x.max(0.0) - x * target + (-x.abs()).exp().ln_1p();
    }
    let grad = logits.mapv(|x| {
        let x = x.as_f64();
        let sig = 1.0 / (1.0 + (-x).exp());
        F::of_f64((sig - target) / m)
    });
    (loss / m, grad)
}

/// Mean absolute error and its gradient w.r.t. `pred`.
pub fn l1_loss<F: Real>(pred: &Array4<F>, target: &Array4<F>) -> (f64, Array4<F>) {
    let m = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array4::zeros(pred.dim());
    ndarray::Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let d = p.as_f64() - t.as_f64();
        loss += d.abs();
        *g = F::of_f64(d.signum() / m);
    });
    (loss / m, grad)
}

/// Mean squared error over a 2-D batch and its gradient w.r.t. `pred`.
pub fn mse_loss<F: Real>(pred: &Array2<F>, target: &Array2<F>) -> (f64, Array2<F>) {
    let m = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    ndarray::Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let d = p.as_f64() - t.as_f64();
        loss += d * d;
        *g = F::of_f64(2.0 * d / m);
    });
    (loss / m, grad)
}

/// KL divergence of diagonal Gaussians N(mu, exp(logvar)) from the standard
/// normal, averaged over the batch: mean over rows of
/// 0.5 * sum_k (mu^2 + sigma^2 - 1 - ln sigma^2).
/// Returns (kl, dkl/dmu, dkl/dlogvar).
pub fn kl_divergence<F: Real>(
    mu: &Array2<F>,
    logvar: &Array2<F>,
) -> (f64, Array2<F>, Array2<F>) {
    let n = mu.dim().0 as f64;
    let mut kl = 0.0;
    let mut dmu = Array2::zeros(mu.dim());
    let mut dlv = Array2::zeros(mu.dim());
    ndarray::Zip::from(&mut dmu).and(&mut dlv).and(mu).and(logvar).for_each(
        |dm, dl, &m, &l| {
            let m = m.as_f64();
            let l = l.as_f64();
            kl += 0.5 * (m * m + l.exp() - 1.0 - l);
            *dm = F::of_f64(m / n);
            *dl = F::of_f64(0.5 * (l.exp() - 1.0) / n);
        },
    );
    (kl / n, dmu, dlv)
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut item_rng(seed, "train.shuffle", epoch as u64));
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

fn step_and_clear<F: Real>(params: Vec<(String, &mut Param<F>)>, cfg: &AdamConfig, t: u64) {
    for (_, p) in params {
        p.adam_step(cfg, t);
        p.zero_grad();
    }
}

fn clear_grads<F: Real>(params: Vec<(String, &mut Param<F>)>) {
    for (_, p) in params {
        p.zero_grad();
    }
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Diverged(format!("{name} loss became non-finite ({value})")));
    }
    Ok(())
}

fn validate_pairs<F: Real>(inputs: &Array4<F>, targets: &Array4<F>) -> Result<usize> {
    if inputs.dim() != targets.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", inputs.dim()),
            got: format!("{:?}", targets.dim()),
        });
    }
    let n = inputs.dim().0;
    if n == 0 {
        return Err(Error::EmptyPool("training set is empty".into()));
    }
    Ok(n)
}

/// Train a translator against a patch discriminator with the combined
/// adversarial + weighted-L1 objective.
pub fn train_cgan<F: Real>(
    gen: &mut UNet<F>,
    disc: &mut PatchDiscriminator<F>,
    inputs: &Array4<F>,
    targets: &Array4<F>,
    cfg: &CganConfig,
) -> Result<TrainHistory> {
    if cfg.l1_weight <= 0.0 {
        return Err(Error::InvalidParameter("l1_weight must be positive".into()));
    }
    let n = validate_pairs(inputs, targets)?;
    let adam_g = AdamConfig { lr: cfg.lr_g, ..AdamConfig::gan() };
    let adam_d = AdamConfig { lr: cfg.lr_d, ..AdamConfig::gan() };
    let mut history = TrainHistory::default();
    let mut t_g = 0u64;
    let mut t_d = 0u64;
    clear_grads(gen.named_params());
    clear_grads(disc.named_params());
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0f64; 3]; // d, g_adv, g_l1
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch);
        let nb = batches.len() as f64;
        for chunk in &batches {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let yhat = gen.forward(&x);

            // Discriminator update: real pairs toward 1, generated toward 0.
            let logits_real = disc.forward(&x, &y);
            let (l_real, d_real) = bce_with_logits(&logits_real, 1.0);
            disc.backward(&d_real.mapv(|v| v * F::of_f64(0.5)));
            let logits_fake = disc.forward(&x, &yhat);
            let (l_fake, d_fake) = bce_with_logits(&logits_fake, 0.0);
            disc.backward(&d_fake.mapv(|v| v * F::of_f64(0.5)));
            t_d += 1;
            step_and_clear(disc.named_params(), &adam_d, t_d);

            // Generator update against the refreshed discriminator.
            let logits_gen = disc.forward(&x, &yhat);
            let (l_adv, d_adv) = bce_with_logits(&logits_gen, 1.0);
            let (_, dyhat_adv) = disc.backward(&d_adv);
            let (l_l1, dyhat_l1) = l1_loss(&yhat, &y);
            let alpha = F::of_f64(cfg.l1_weight);
            let dyhat = &dyhat_adv + &dyhat_l1.mapv(|v| v * alpha);
            gen.backward(&dyhat);
            t_g += 1;
            step_and_clear(gen.named_params(), &adam_g, t_g);
            // The generator pass accumulated gradients into the
            // discriminator as a side effect; drop them.
            clear_grads(disc.named_params());

            sums[0] += 0.5 * (l_real + l_fake);
            sums[1] += l_adv;
            sums[2] += l_l1;
        }
        let (d_mean, adv_mean, l1_mean) = (sums[0] / nb, sums[1] / nb, sums[2] / nb);
        check_finite("discriminator", d_mean)?;
        check_finite("generator", adv_mean + cfg.l1_weight * l1_mean)?;
        history.push("d", d_mean);
        history.push("g_adv", adv_mean);
        history.push("g_l1", l1_mean);
        history.push("g_total", adv_mean + cfg.l1_weight * l1_mean);
    }
    Ok(history)
}

/// Train a translator with the pixel L1 objective alone (no adversary).
/// Serves as the regression baseline the adversarial objective collapses
/// to when the L1 weight dominates.
pub fn train_l1_only<F: Real>(
    gen: &mut UNet<F>,
    inputs: &Array4<F>,
    targets: &Array4<F>,
    cfg: &CganConfig,
) -> Result<TrainHistory> {
    let n = validate_pairs(inputs, targets)?;
    let adam_g = AdamConfig { lr: cfg.lr_g, ..AdamConfig::gan() };
    let mut history = TrainHistory::default();
    let mut t_g = 0u64;
    clear_grads(gen.named_params());
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch);
        let nb = batches.len() as f64;
        for chunk in &batches {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let yhat = gen.forward(&x);
            let (l_l1, dyhat) = l1_loss(&yhat, &y);
            gen.backward(&dyhat);
            t_g += 1;
            step_and_clear(gen.named_params(), &adam_g, t_g);
            sum += l_l1;
        }
        let mean = sum / nb;
        check_finite("l1", mean)?;
        history.push("g_l1", mean);
    }
    Ok(history)
}

/// One VAE training step on a batch with fixed reparameterization noise.
/// Accumulates gradients into the network and returns
/// (reconstruction, kl, dloss/dinput).
fn vae_step<F: Real>(
    vae: &mut Vae<F>,
    x: &Array4<F>,
    eps: &Array2<F>,
    cfg: &VaeConfig,
) -> (f64, f64, Array4<F>) {
    let nb = x.dim().0 as f64;
    let (mu, lv) = vae.encode(x);
    let sd = lv.mapv(|l| (l * F::of_f64(0.5)).exp());
    let z = &mu + &(eps * &sd);
    let xhat = vae.decode(&z);

    // Gaussian log-likelihood reconstruction: sum of squares over pixels,
    // scaled by the fixed noise variance, averaged over the batch.
    let inv = 1.0 / (cfg.sigma_r * cfg.sigma_r);
    let mut recon = 0.0;
    let mut dxhat = Array4::zeros(xhat.dim());
    ndarray::Zip::from(&mut dxhat).and(&xhat).and(x).for_each(|g, &p, &t| {
        let d = p.as_f64() - t.as_f64();
        recon += 0.5 * d * d * inv;
        *g = F::of_f64(d * inv / nb);
    });
    recon /= nb;

    let (kl, dmu_kl, dlv_kl) = kl_divergence(&mu, &lv);
    let dz = vae.decode_backward(&dxhat);
    let kw = F::of_f64(cfg.kl_weight);
    let dmu = &dz + &dmu_kl.mapv(|v| v * kw);
    // z depends on logvar through the scale: dz/dlogvar = eps * sd / 2.
    let dlv = &(&dz * eps) * &sd.mapv(|v| v * F::of_f64(0.5)) + dlv_kl.mapv(|v| v * kw);
    // Total input gradient: the encoder path plus the direct appearance of
    // x in the reconstruction term (whose derivative is -dxhat).
    let dx = vae.encode_backward(&dmu, &dlv) - &dxhat;
    (recon, kl, dx)
}

/// Train the noise VAE on unlabeled maps.
pub fn train_vae<F: Real>(
    vae: &mut Vae<F>,
    inputs: &Array4<F>,
    cfg: &VaeConfig,
) -> Result<TrainHistory> {
    if cfg.kl_weight <= 0.0 {
        return Err(Error::InvalidParameter("kl_weight must be positive".into()));
    }
    if cfg.sigma_r <= 0.0 {
        return Err(Error::InvalidParameter("sigma_r must be positive".into()));
    }
    let n = inputs.dim().0;
    if n == 0 {
        return Err(Error::EmptyPool("training set is empty".into()));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::standard() };
    let mut history = TrainHistory::default();
    let mut t = 0u64;
    clear_grads(vae.named_params());
    for epoch in 0..cfg.epochs {
        let mut recon_sum = 0.0;
        let mut kl_sum = 0.0;
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch);
        let nb = batches.len() as f64;
        for (bi, chunk) in batches.iter().enumerate() {
            let x = inputs.select(Axis(0), chunk);
            let mut rng =
                item_rng(cfg.seed, "train.vae.eps", (epoch * batches.len() + bi) as u64);
            let eps = Array2::from_shape_simple_fn((chunk.len(), super::nets::VAE_LATENT), || {
                F::of_f64(normal(&mut rng))
            });
            let (recon, kl, _) = vae_step(vae, &x, &eps, cfg);
            t += 1;
            step_and_clear(vae.named_params(), &adam, t);
            recon_sum += recon;
            kl_sum += kl;
        }
        let (recon_mean, kl_mean) = (recon_sum / nb, kl_sum / nb);
        check_finite("vae", recon_mean + cfg.kl_weight * kl_mean)?;
        history.push("recon", recon_mean);
        history.push("kl", kl_mean);
        history.push("total", recon_mean + cfg.kl_weight * kl_mean);
    }
    Ok(history)
}

/// Train the pose regressor with mean squared error on the encoded targets.
pub fn train_posenet<F: Real>(
    net: &mut PoseNet<F>,
    inputs: &Array4<F>,
    targets: &Array2<F>,
    cfg: &PoseTrainConfig,
) -> Result<TrainHistory> {
    let n = inputs.dim().0;
    if n == 0 {
        return Err(Error::EmptyPool("training set is empty".into()));
    }
    if targets.dim() != (n, 3) {
        return Err(Error::ShapeMismatch {
            expected: format!("({n}, 3)"),
            got: format!("{:?}", targets.dim()),
        });
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::standard() };
    let mut history = TrainHistory::default();
    let mut t = 0u64;
    clear_grads(net.named_params());
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch);
        let nb = batches.len() as f64;
        for chunk in &batches {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let out = net.forward(&x);
            let (loss, dout) = mse_loss(&out, &y);
            net.backward(&dout);
            t += 1;
            step_and_clear(net.named_params(), &adam, t);
            sum += loss;
        }
        let mean = sum / nb;
        check_finite("pose", mean)?;
        history.push("mse", mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::checkpoint::snapshot_params;
    use crate::seeding::rng_from_seed;
    use rand::Rng;

    /// Smooth synthetic map: one Gaussian bump, varying mostly in position
    /// so convolutional translation equivariance makes the family easy to
    /// generalize over from a small sample.
    fn blob_image<F: Real>(side: usize, seed: u64) -> Array4<F> {
        let mut rng = item_rng(seed, "blob", 0);
        let cx: f64 = rng.gen_range(0.2..0.8) * side as f64;
        let cy: f64 = rng.gen_range(0.2..0.8) * side as f64;
        let sig: f64 = rng.gen_range(0.18..0.22) * side as f64;
        let amp: f64 = rng.gen_range(0.6..0.9);
        let mut img = Array4::zeros((1, 1, side, side));
        for r in 0..side {
            for c in 0..side {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                img[[0, 0, r, c]] = F::of_f64(amp * (-d2 / (2.0 * sig * sig)).exp());
            }
        }
        img
    }

    fn blob_set<F: Real>(count: usize, side: usize, seed: u64) -> Array4<F> {
        let mut out = Array4::zeros((count, 1, side, side));
        for i in 0..count {
            let img = blob_image::<F>(side, crate::seeding::derive_seed(seed, "set", i as u64));
            out.slice_mut(ndarray::s![i, .., .., ..]).assign(&img.index_axis(Axis(0), 0));
        }
        out
    }

    fn holdout_l1<F: Real>(gen: &mut UNet<F>, x: &Array4<F>) -> f64 {
        let yhat = gen.forward(x);
        let (l1, _) = l1_loss(&yhat, x);
        l1
    }

    #[test]
    fn bce_matches_naive_form_at_moderate_logits() {
        let mut rng = rng_from_seed(1);
        let logits = Array4::from_shape_simple_fn((1, 1, 3, 3), || rng.gen_range(-3.0f64..3.0));
        for target in [0.0, 1.0] {
            let (loss, grad) = bce_with_logits(&logits, target);
            let mut naive = 0.0;
            for &x in logits.iter() {
                let s = 1.0 / (1.0 + (-x).exp());
                naive += -(target * s.ln() + (1.0 - target) * (1.0 - s).ln());
            }
            naive /= logits.len() as f64;
            assert!((loss - naive).abs() < 1e-12, "loss {loss} vs naive {naive}");
            for (&x, &g) in logits.iter().zip(grad.iter()) {
                let s = 1.0 / (1.0 + (-x).exp());
                assert!((g - (s - target) / 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_is_stable_at_extreme_logits() {
        let logits = Array4::from_elem((1, 1, 1, 2), 100.0f64);
        let (loss, grad) = bce_with_logits(&logits, 0.0);
        assert!(loss.is_finite() && (loss - 100.0).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
        let neg = Array4::from_elem((1, 1, 1, 2), -100.0f64);
        let (loss2, _) = bce_with_logits(&neg, 1.0);
        assert!(loss2.is_finite() && (loss2 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn kl_closed_form_trivial_cases() {
        // mu = 0, sigma = 1 (logvar = 0) -> 0.
        let mu = Array2::<f64>::zeros((1, 8));
        let lv = Array2::<f64>::zeros((1, 8));
        let (kl, _, _) = kl_divergence(&mu, &lv);
        assert!(kl.abs() < 1e-15);
        // mu = 1, sigma = 1, K = 8 -> K * mu^2 / 2 = 4.
        let mu = Array2::<f64>::ones((1, 8));
        let (kl, _, _) = kl_divergence(&mu, &lv);
        assert!((kl - 4.0).abs() < 1e-12, "kl {kl}");
    }

    #[test]
    fn kl_matches_numerical_integration() {
        // Per-dimension KL(N(mu, s^2) || N(0, 1)) by Simpson quadrature.
        let cases: [(f64, f64); 4] = [(0.7, 0.9), (-1.2, 1.7), (0.0, 0.3), (2.0, 1.0)];
        let mut mu = Array2::<f64>::zeros((1, cases.len()));
        let mut lv = Array2::<f64>::zeros((1, cases.len()));
        let mut expect = 0.0;
        for (k, &(m, s)) in cases.iter().enumerate() {
            mu[[0, k]] = m;
            lv[[0, k]] = (s * s).ln();
            let lo = (m - 14.0 * s).min(-14.0);
            let hi = (m + 14.0 * s).max(14.0);
            let steps = 40_000usize; // even
            let h = (hi - lo) / steps as f64;
            let f = |x: f64| {
                let p = (-((x - m) * (x - m)) / (2.0 * s * s)).exp()
                    / (s * (2.0 * std::f64::consts::PI).sqrt());
                if p < 1e-300 {
                    0.0
                } else {
                    let lnq = -x * x / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    p * (p.ln() - lnq)
                }
            };
            let mut integral = f(lo) + f(hi);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                integral += w * f(lo + i as f64 * h);
            }
            expect += integral * h / 3.0;
        }
        let (kl, _, _) = kl_divergence(&mu, &lv);
        assert!((kl - expect).abs() < 1e-6, "closed form {kl} vs quadrature {expect}");
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(3);
        let mu = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(-1.0f64..1.0));
        let lv = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(-1.0f64..1.0));
        let (_, dmu, dlv) = kl_divergence(&mu, &lv);
        let h = 1e-6;
        for i in 0..8 {
            let mut mp = mu.clone();
            mp.as_slice_mut().unwrap()[i] += h;
            let mut mm = mu.clone();
            mm.as_slice_mut().unwrap()[i] -= h;
            let fd = (kl_divergence(&mp, &lv).0 - kl_divergence(&mm, &lv).0) / (2.0 * h);
            assert!((fd - dmu.as_slice().unwrap()[i]).abs() < 1e-8);
            let mut lp = lv.clone();
            lp.as_slice_mut().unwrap()[i] += h;
            let mut lm = lv.clone();
            lm.as_slice_mut().unwrap()[i] -= h;
            let fd = (kl_divergence(&mu, &lp).0 - kl_divergence(&mu, &lm).0) / (2.0 * h);
            assert!((fd - dlv.as_slice().unwrap()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn vae_step_gradient_matches_finite_differences() {
        let cfg = VaeConfig { sigma_r: 0.5, kl_weight: 1.0, ..VaeConfig::default() };
        let x = blob_set::<f64>(1, 64, 900);
        let mut rng = rng_from_seed(901);
        let eps = Array2::from_shape_simple_fn((1, crate::neural::nets::VAE_LATENT), || {
            normal(&mut rng)
        });
        let mut vae: Vae<f64> = Vae::new(9);
        let (_, _, dx) = vae_step(&mut vae, &x, &eps, &cfg);
        let h = 1e-5;
        let loss_at = |xv: &Array4<f64>| {
            let mut v: Vae<f64> = Vae::new(9);
            let (r, k, _) = vae_step(&mut v, xv, &eps, &cfg);
            r + cfg.kl_weight * k
        };
        for &i in &[0usize, 1000, 2345, 4095] {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[i] -= h;
            let fd = (loss_at(&xp) - loss_at(&xm)) / (2.0 * h);
            let an = dx.as_slice().unwrap()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-3, "x[{i}]: fd {fd} analytic {an} rel {rel}");
        }
    }

    #[test]
    fn identity_task_reaches_low_holdout_error() {
        // 64 pairs where the target equals the input; holdout of 16 unseen
        // maps must come back nearly unchanged after adversarial training.
        let side = 16;
        let train = blob_set::<f32>(64, side, 100);
        let hold = blob_set::<f32>(16, side, 200);
        let mut gen: UNet<f32> = UNet::new(1);
        let mut disc: PatchDiscriminator<f32> = PatchDiscriminator::new(2);
        let cfg = CganConfig { epochs: 200, batch_size: 4, seed: 5, ..CganConfig::default() };
        let hist = train_cgan(&mut gen, &mut disc, &train, &train, &cfg).unwrap();
        assert_eq!(hist.last("g_l1").map(|v| v.is_finite()), Some(true));
        let err = holdout_l1(&mut gen, &hold);
        assert!(err < 0.02, "holdout mean absolute error {err}");
    }

    #[test]
    fn huge_l1_weight_reduces_to_regression() {
        // With the L1 term dominating by six orders of magnitude, the
        // adversarial game stops mattering: the trained generator should
        // match a pure-L1 run to within 0.01 holdout error.
        let side = 16;
        let train = blob_set::<f32>(48, side, 300);
        let hold = blob_set::<f32>(16, side, 400);
        let cfg = CganConfig {
            epochs: 120,
            batch_size: 16,
            l1_weight: 1e6,
            seed: 7,
            ..CganConfig::default()
        };
        let mut gen_a: UNet<f32> = UNet::new(3);
        let mut disc: PatchDiscriminator<f32> = PatchDiscriminator::new(4);
        train_cgan(&mut gen_a, &mut disc, &train, &train, &cfg).unwrap();
        let mut gen_b: UNet<f32> = UNet::new(3);
        train_l1_only(&mut gen_b, &train, &train, &cfg).unwrap();
        let ea = holdout_l1(&mut gen_a, &hold);
        let eb = holdout_l1(&mut gen_b, &hold);
        assert!(
            (ea - eb).abs() < 0.01,
            "adversarial-with-huge-alpha {ea} vs pure regression {eb}"
        );
    }

    #[test]
    fn vae_training_reduces_loss() {
        let train = blob_set::<f32>(32, 64, 500);
        let mut vae: Vae<f32> = Vae::new(6);
        let cfg = VaeConfig { epochs: 12, batch_size: 8, seed: 11, ..VaeConfig::default() };
        let hist = train_vae(&mut vae, &train, &cfg).unwrap();
        let first = hist.curves.iter().find(|(n, _)| n == "total").unwrap().1[0];
        let last = hist.last("total").unwrap();
        assert!(last < first * 0.5, "loss {first} -> {last}");
    }

    #[test]
    fn posenet_training_reduces_loss() {
        let train = blob_set::<f32>(16, 64, 600);
        let mut rng = rng_from_seed(601);
        let targets =
            Array2::from_shape_simple_fn((16, 3), || rng.gen_range(0.2f32..0.8));
        let mut net: PoseNet<f32> = PoseNet::new(8);
        let cfg = PoseTrainConfig { epochs: 25, batch_size: 8, seed: 13, ..Default::default() };
        let hist = train_posenet(&mut net, &train, &targets, &cfg).unwrap();
        let first = hist.curves.iter().find(|(n, _)| n == "mse").unwrap().1[0];
        let last = hist.last("mse").unwrap();
        assert!(last < first * 0.2, "loss {first} -> {last}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let train = blob_set::<f32>(8, 16, 700);
        let cfg = CganConfig { epochs: 4, batch_size: 4, seed: 21, ..CganConfig::default() };
        let run = || {
            let mut gen: UNet<f32> = UNet::new(31);
            let mut disc: PatchDiscriminator<f32> = PatchDiscriminator::new(32);
            train_cgan(&mut gen, &mut disc, &train, &train, &cfg).unwrap();
            snapshot_params(gen.named_params())
        };
        let a = run();
        let b = run();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(
                ta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                tb.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "parameter {na} differs between identical runs"
            );
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let empty = Array4::<f32>::zeros((0, 1, 16, 16));
        let mut gen: UNet<f32> = UNet::new(1);
        let mut disc: PatchDiscriminator<f32> = PatchDiscriminator::new(2);
        assert!(matches!(
            train_cgan(&mut gen, &mut disc, &empty, &empty, &CganConfig::default()),
            Err(Error::EmptyPool(_))
        ));
    }
}
