//! Noise-source ablation: does learning against generator-sampled noise
//! beat learning against parametric Gaussian noise?
//!
//! Two saliency translators are trained on byte-identical target pools and
//! identical composition randomness — blob counts, augmentations, and pool
//! slot picks all match record for record — so the arms differ *only* in
//! what the noise pool contains: arm 1 draws from the trained noise
//! generator (salted with a tenth of directly rendered cones), arm 2 from
//! the parametric Gaussian bump family. Both are then scored with the four
//! saliency metrics on one shared held-out composite set contaminated by
//! the simulator's actual distractor family, and probed for
//! generalization on corner contacts neither arm ever saw.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    build_saliency_dataset, build_target_pool, random_augment, random_cone_depth,
    sample_gaussian_noise, sha256_hex, PairedSample, PoseRanges,
};
use crate::error::{Error, Result};
use crate::imagery::{augment, encode_pgm, overlay};
use crate::metrics::{saliency_scores, SaliencyScores, FIXATION_THETA};
use crate::neural::{
    batch_to_images, images_to_batch, sample_tacngen, train_cgan, CganConfig, PatchDiscriminator,
    TrainHistory, UNet, Vae, TACNGEN_SIGMA_S,
};
use crate::seeding::{derive_seed, item_rng};
use crate::simworld::{render_scene_contact, Contour, ContourSpec, Scene, SensorFrame, RES};
use crate::{DepthMap, GrayImage, SaliencyMap};

/// Evaluation-set floor for the headline comparison.
pub const DEFAULT_EVAL_COMPOSITES: usize = 1000;

/// Pool and training sizes of one ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSizes {
    /// Distinct clean targets in the shared pool.
    pub targets: usize,
    /// Noise maps per arm.
    pub noise_pool: usize,
    /// Training composites per arm (targets repeat when larger).
    pub train_composites: usize,
    /// Held-out composites both arms are scored on.
    pub eval_composites: usize,
    /// Training epochs per arm.
    pub epochs: usize,
    /// Training batch size.
    pub batch_size: usize,
}

impl AblationSizes {
    /// Desk-scale run: full-ratio pools with the documented evaluation
    /// floor.
    pub fn desk() -> Self {
        AblationSizes {
            targets: 2000,
            noise_pool: 2000,
            train_composites: 4000,
            eval_composites: DEFAULT_EVAL_COMPOSITES,
            epochs: 30,
            batch_size: 16,
        }
    }

    /// Minutes-scale smoke run.
    pub fn smoke() -> Self {
        AblationSizes {
            targets: 40,
            noise_pool: 40,
            train_composites: 80,
            eval_composites: 20,
            epochs: 2,
            batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("targets", self.targets),
            ("noise_pool", self.noise_pool),
            ("train_composites", self.train_composites),
            ("eval_composites", self.eval_composites),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("ablation size {name} is zero")));
            }
        }
        Ok(())
    }
}

/// Noise pool of the generator arm: decoded latent samples, with every
/// tenth entry a directly rendered cone so the pool keeps a foothold in
/// the exact distractor geometry.
pub fn tacngen_noise_pool(vae: &Vae<f32>, n: usize, seed: u64) -> Result<Vec<DepthMap>> {
    let mut decoder = vae.clone();
    (0..n)
        .map(|i| {
            if i % 10 == 9 {
                random_cone_depth(&mut item_rng(seed, "ablation.pool.cone", i as u64))
            } else {
                sample_tacngen(
                    &mut decoder,
                    derive_seed(seed, "ablation.pool.tacngen", i as u64),
                    TACNGEN_SIGMA_S,
                )
            }
        })
        .collect()
}

/// Noise pool of the baseline arm: parametric Gaussian bumps.
pub fn gaussian_noise_pool(n: usize, seed: u64) -> Result<Vec<DepthMap>> {
    (0..n)
        .map(|i| sample_gaussian_noise(RES, derive_seed(seed, "ablation.pool.gauss", i as u64)))
        .collect()
}

/// Digest of an image pool: the hash of all entries' PGM encodings in
/// order. Serves as the dataset identity in result tables.
pub fn pool_sha256(pool: &[DepthMap]) -> String {
    let mut bytes = Vec::new();
    for map in pool {
        bytes.extend_from_slice(&encode_pgm(map));
    }
    sha256_hex(&bytes)
}

/// Side-by-side value of one metric with the winning arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub tacsalnet1: f64,
    pub tacsalnet2: f64,
    /// `tacsalnet1`, `tacsalnet2`, or `tie`.
    pub winner: String,
}

/// Per-metric winners between the two arms.
pub fn compare_scores(one: &SaliencyScores, two: &SaliencyScores) -> Vec<MetricComparison> {
    let rows = [
        ("auc_judd", one.auc_judd, two.auc_judd),
        ("sim", one.sim, two.sim),
        ("cc", one.cc, two.cc),
        ("nss", one.nss, two.nss),
    ];
    rows.iter()
        .map(|&(metric, a, b)| MetricComparison {
            metric: metric.to_string(),
            tacsalnet1: a,
            tacsalnet2: b,
            winner: if a > b {
                "tacsalnet1".into()
            } else if b > a {
                "tacsalnet2".into()
            } else {
                "tie".into()
            },
        })
        .collect()
}

/// Outcome of the two-arm comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Held-out composites both arms were scored on.
    pub n_eval: usize,
    pub seed: u64,
    /// Digest of the shared clean-target pool (identical for both arms by
    /// construction).
    pub target_pool_sha256: String,
    /// Digest of the shared evaluation composite inputs.
    pub eval_set_sha256: String,
    /// Mean metrics of the generator-noise arm.
    pub tacsalnet1: SaliencyScores,
    /// Mean metrics of the Gaussian-noise arm.
    pub tacsalnet2: SaliencyScores,
    pub comparisons: Vec<MetricComparison>,
}

/// Everything a finished ablation run produces.
pub struct AblationOutcome {
    pub report: AblationReport,
    pub tacsalnet1: UNet<f32>,
    pub tacsalnet2: UNet<f32>,
    pub history1: TrainHistory,
    pub history2: TrainHistory,
    /// Per-sample metric rows backing the means, per arm.
    pub per_sample1: Vec<SaliencyScores>,
    pub per_sample2: Vec<SaliencyScores>,
}

fn to_batches(samples: &[PairedSample]) -> Result<(ndarray::Array4<f32>, ndarray::Array4<f32>)> {
    let ins: Vec<&GrayImage> = samples.iter().map(|s| &s.input).collect();
    let outs: Vec<&GrayImage> = samples.iter().map(|s| &s.target).collect();
    Ok((images_to_batch(&ins)?, images_to_batch(&outs)?))
}

/// Training shape of one translator arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSpec {
    /// Composites in the arm's training set (targets repeat when larger).
    pub train_composites: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl ArmSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_composites", self.train_composites),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("arm size {name} is zero")));
            }
        }
        Ok(())
    }
}

impl From<&AblationSizes> for ArmSpec {
    fn from(s: &AblationSizes) -> Self {
        ArmSpec {
            train_composites: s.train_composites,
            epochs: s.epochs,
            batch_size: s.batch_size,
        }
    }
}

/// Trains one translator arm on composites built from `targets` and
/// `noise_pool`. The composition seed controls blob counts, pool picks,
/// and augmentations; passing the same value to both arms makes them
/// differ only in pool content. Initialization and batch order come from
/// `seed` alone, so both arms start from identical weights.
pub fn train_arm(
    targets: &[DepthMap],
    noise_pool: &[DepthMap],
    spec: &ArmSpec,
    compose_seed: u64,
    seed: u64,
) -> Result<(UNet<f32>, TrainHistory)> {
    spec.validate()?;
    let cycled: Vec<DepthMap> =
        targets.iter().cycle().take(spec.train_composites).cloned().collect();
    let train_set = build_saliency_dataset(&cycled, noise_pool, compose_seed)?;
    let (x, y) = to_batches(&train_set)?;
    let mut gen: UNet<f32> = UNet::new(derive_seed(seed, "ablation.init.gen", 0));
    let mut disc: PatchDiscriminator<f32> =
        PatchDiscriminator::new(derive_seed(seed, "ablation.init.disc", 0));
    let cfg = CganConfig {
        epochs: spec.epochs,
        batch_size: spec.batch_size,
        seed: derive_seed(seed, "ablation.train", 0),
        ..CganConfig::default()
    };
    let history = train_cgan(&mut gen, &mut disc, &x, &y, &cfg)?;
    Ok((gen, history))
}

/// Scores a translator on a composite set: mean of the four saliency
/// metrics plus the per-sample rows. Deterministic given the model and
/// the set, so reports regenerate bit-identically from checkpoints.
pub fn ablation_scores(
    model: &UNet<f32>,
    composites: &[PairedSample],
) -> Result<(SaliencyScores, Vec<SaliencyScores>)> {
    if composites.is_empty() {
        return Err(Error::EmptyPool("ablation evaluation set".into()));
    }
    let mut net = model.clone();
    let mut rows = Vec::with_capacity(composites.len());
    for chunk in composites.chunks(16) {
        let ins: Vec<&GrayImage> = chunk.iter().map(|s| &s.input).collect();
        let preds = batch_to_images(&net.forward(&images_to_batch(&ins)?))?;
        for (pred, sample) in preds.iter().zip(chunk) {
            rows.push(saliency_scores(pred, &sample.target, FIXATION_THETA)?);
        }
    }
    Ok((SaliencyScores::mean(&rows)?, rows))
}

/// Builds the held-out evaluation composites: fresh clean targets buried
/// under rendered cone distractors — the contamination the deployed
/// pipeline actually faces, which neither arm trained on verbatim.
pub fn build_eval_composites(n: usize, seed: u64) -> Result<Vec<PairedSample>> {
    let targets =
        build_target_pool(n, &PoseRanges::default(), derive_seed(seed, "ablation.eval.targets", 0))?;
    let pool_size = (n / 4).max(8);
    let cone_pool: Result<Vec<DepthMap>> = (0..pool_size)
        .map(|i| random_cone_depth(&mut item_rng(seed, "ablation.eval.cone", i as u64)))
        .collect();
    build_saliency_dataset(&targets, &cone_pool?, derive_seed(seed, "ablation.eval.compose", 0))
}

/// Runs the full two-arm ablation from a trained noise generator.
///
/// One target pool and one composition-randomness stream serve both arms;
/// arm 1 trains against the generator pool, arm 2 against the Gaussian
/// pool, from identical initial weights and batch schedules. Both are
/// scored on the same held-out cone-contaminated composites.
pub fn run_ablation(vae: &Vae<f32>, sizes: &AblationSizes, seed: u64) -> Result<AblationOutcome> {
    sizes.validate()?;
    let targets =
        build_target_pool(sizes.targets, &PoseRanges::default(), derive_seed(seed, "ablation.targets", 0))?;
    let pool1 = tacngen_noise_pool(vae, sizes.noise_pool, derive_seed(seed, "ablation.pool1", 0))?;
    let pool2 = gaussian_noise_pool(sizes.noise_pool, derive_seed(seed, "ablation.pool2", 0))?;
    let compose_seed = derive_seed(seed, "ablation.compose", 0);
    let spec = ArmSpec::from(sizes);
    let (tacsalnet1, history1) = train_arm(&targets, &pool1, &spec, compose_seed, seed)?;
    let (tacsalnet2, history2) = train_arm(&targets, &pool2, &spec, compose_seed, seed)?;

    let eval = build_eval_composites(sizes.eval_composites, seed)?;
    let eval_inputs: Vec<DepthMap> = eval.iter().map(|s| s.input.clone()).collect();
    let (scores1, per_sample1) = ablation_scores(&tacsalnet1, &eval)?;
    let (scores2, per_sample2) = ablation_scores(&tacsalnet2, &eval)?;
    let report = AblationReport {
        n_eval: eval.len(),
        seed,
        target_pool_sha256: pool_sha256(&targets),
        eval_set_sha256: pool_sha256(&eval_inputs),
        tacsalnet1: scores1,
        tacsalnet2: scores2,
        comparisons: compare_scores(&scores1, &scores2),
    };
    Ok(AblationOutcome {
        report,
        tacsalnet1,
        tacsalnet2,
        history1,
        history2,
        per_sample1,
        per_sample2,
    })
}

/// Renders the contact a sensor sees at a corner of the square bench
/// object, rotated to `rotation_deg`: an interior wedge the translators
/// never met in training, which only ever used straight edges.
pub fn corner_depth(rotation_deg: f64, z_mm: f64) -> Result<DepthMap> {
    let spec = ContourSpec::square();
    let ContourSpec::Square { side, .. } = spec.clone() else {
        unreachable!("square() is a square")
    };
    let contour = Contour::new(spec)?;
    let apex = contour.point_at(contour.nearest_param((side, side)));
    let frame = SensorFrame::new(apex, rotation_deg, z_mm)?;
    render_scene_contact(&Scene::new(contour, Vec::new()), &frame, RES)
}

/// Boolean support of `map` above `level`, dilated by a euclidean disc of
/// `radius_px` pixels. Row-major, indexed `y * width + x`.
pub fn dilated_support(map: &DepthMap, level: f32, radius_px: usize) -> Vec<bool> {
    let (w, h) = (map.width(), map.height());
    let mut out = vec![false; w * h];
    let r = radius_px as isize;
    let r2 = (radius_px * radius_px) as isize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if map.get(x as usize, y as usize) <= level {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r2
                        && (0..w as isize).contains(&nx)
                        && (0..h as isize).contains(&ny)
                    {
                        out[(ny * w as isize + nx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Fraction of the prediction's total mass lying inside the support mask.
pub fn salient_mass_fraction(pred: &SaliencyMap, support: &[bool]) -> Result<f64> {
    let (w, h) = (pred.width(), pred.height());
    if support.len() != w * h {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mask entries", w * h),
            got: format!("{}", support.len()),
        });
    }
    let (mut total, mut inside) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let p = pred.get(x, y) as f64;
            total += p;
            if support[y * w + x] {
                inside += p;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::MetricUndefined("mass fraction of an all-zero prediction".into()));
    }
    Ok(inside / total)
}

/// Configuration of the corner-generalization probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerEvalConfig {
    /// Number of corner rotations, spread evenly over the full turn.
    pub rotations: usize,
    /// Press depth of the corner contact, mm.
    pub z_mm: f64,
    /// Dilation radius of the true support, px.
    pub dilation_px: usize,
    /// Seed for the contamination draws.
    pub seed: u64,
}

impl Default for CornerEvalConfig {
    fn default() -> Self {
        CornerEvalConfig { rotations: 8, z_mm: 4.5, dilation_px: 2, seed: 0 }
    }
}

/// Measures, per model, how much predicted saliency mass stays on the true
/// corner contact. Corners rotate through the full turn; when a noise pool
/// is given, each corner is buried under augmented pool draws exactly as
/// training composites are. Returns one mean fraction per model, in input
/// order.
pub fn corner_generalization_eval(
    models: &[&UNet<f32>],
    noise_pool: Option<&[DepthMap]>,
    cfg: &CornerEvalConfig,
) -> Result<Vec<f64>> {
    if cfg.rotations == 0 {
        return Err(Error::InvalidParameter("zero corner rotations".into()));
    }
    if models.is_empty() {
        return Err(Error::InvalidParameter("no models to evaluate".into()));
    }
    let mut nets: Vec<UNet<f32>> = models.iter().map(|m| (*m).clone()).collect();
    let mut sums = vec![0.0f64; nets.len()];
    for k in 0..cfg.rotations {
        let rotation = 360.0 * k as f64 / cfg.rotations as f64;
        let clean = corner_depth(rotation, cfg.z_mm)?;
        let support = dilated_support(&clean, 1e-3, cfg.dilation_px);
        let input = match noise_pool {
            None => clean,
            Some(pool) => {
                if pool.is_empty() {
                    return Err(Error::EmptyPool("corner contamination pool".into()));
                }
                let mut rng = item_rng(cfg.seed, "ablation.corner.noise", k as u64);
                let blobs = rng.gen_range(1..=3usize);
                let mut input = clean;
                for _ in 0..blobs {
                    let l = rng.gen_range(0..pool.len());
                    let p = random_augment(&mut rng, input.width(), input.height());
                    input = overlay(&input, &augment(&pool[l], &p)?)?;
                }
                input
            }
        };
        for (net, sum) in nets.iter_mut().zip(&mut sums) {
            let preds = batch_to_images(&net.forward(&images_to_batch(&[&input])?))?;
            *sum += salient_mass_fraction(&preds[0], &support)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / cfg.rotations as f64).collect())
}

/// Writes the headline comparison as CSV rows
/// `model,metric,value,seed,dataset_id`.
pub fn write_ablation_table(path: &Path, report: &AblationReport) -> Result<()> {
    let mut text = String::from("model,metric,value,seed,dataset_id\n");
    for (model, scores) in
        [("tacsalnet1", &report.tacsalnet1), ("tacsalnet2", &report.tacsalnet2)]
    {
        for (metric, value) in [
            ("auc_judd", scores.auc_judd),
            ("sim", scores.sim),
            ("cc", scores.cc),
            ("nss", scores.nss),
        ] {
            text.push_str(&format!(
                "{model},{metric},{value:.6},{},{}\n",
                report.seed, report.eval_set_sha256
            ));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes per-sample metric rows as CSV: `index,auc_judd,sim,cc,nss`.
pub fn write_metric_dump(path: &Path, rows: &[SaliencyScores]) -> Result<()> {
    let mut text = String::from("index,auc_judd,sim,cc,nss\n");
    for (i, s) in rows.iter().enumerate() {
        text.push_str(&format!(
            "{i},{:.6},{:.6},{:.6},{:.6}\n",
            s.auc_judd, s.sim, s.cc, s.nss
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}
