//! Deterministic dataset builders.
//!
//! Everything here is a pure function of sizes, ranges, and a root seed:
//! contact-pose sampling, paired sets for the two translation networks,
//! pose-labelled sets for the regressor, the analytic Gaussian distractor
//! used by the baseline noise arm, and the on-disk manifest format
//! (one JSON record per line over a content-addressed PGM store).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imagery::{
    augment, decode_pgm, encode_pgm, minmax_normalize, overlay, AugmentParams, Rotation,
};
use crate::seeding::{derive_seed, item_rng, rng_from_seed};
use crate::simworld::{
    render_cone_depth, render_edge_depth, tactile_forward_model, ConeDistractor, ContactPose,
    DistractorRanges, APERTURE_MM, RES, Z_MAX_MM, Z_MIN_MM,
};
use crate::{DepthMap, Error, GrayImage, Result};

/// Edge-data pairs used to train the contact-depth translator.
pub const DEFAULT_CONDEPNET_PAIRS: usize = 7000;
/// Distinct clean targets behind the saliency composites.
pub const DEFAULT_SALIENCY_TARGETS: usize = 2000;
/// Size of the pre-generated distractor pool.
pub const DEFAULT_NOISE_POOL: usize = 2000;
/// Composites in the saliency training set (targets are cycled to reach it).
pub const DEFAULT_SALIENCY_COMPOSITES: usize = 4000;
/// Pose-labelled samples for the regressor.
pub const DEFAULT_POSENET_SAMPLES: usize = 4000;
/// Rendered cone maps in the noise generator's training corpus.
pub const DEFAULT_TACNGEN_MAPS: usize = 2000;

/// Signed distance range, in mm from the edge line, at which distractor
/// cones are planted on the contact-free side of pose-labelled samples.
pub const CONE_OFFSET_MM: (f64, f64) = (7.0, 14.0);

/// Axis-aligned uniform ranges for contact-pose sampling.
///
/// The optional `x_mm` range is a world slide used only by the
/// pose-evaluation protocol; local pose sampling ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    /// Edge offset range in mm.
    pub y_mm: (f64, f64),
    /// Press depth range in mm.
    pub z_mm: (f64, f64),
    /// Heading range in degrees.
    pub rz_deg: (f64, f64),
    /// Optional world-slide range in mm.
    pub x_mm: Option<(f64, f64)>,
}

impl Default for PoseRanges {
    /// The training window: y in [-6, 6] mm, z in [3, 6] mm, full rotation.
    fn default() -> Self {
        PoseRanges {
            y_mm: (-6.0, 6.0),
            z_mm: (Z_MIN_MM, Z_MAX_MM),
            rz_deg: (-180.0, 180.0),
            x_mm: None,
        }
    }
}

impl PoseRanges {
    /// The pose-evaluation window: a narrower local pose box plus a world
    /// slide along the edge.
    pub fn pose_eval() -> Self {
        PoseRanges {
            y_mm: (-3.0, 3.0),
            z_mm: (Z_MIN_MM, Z_MAX_MM),
            rz_deg: (-45.0, 45.0),
            x_mm: Some((-10.0, 10.0)),
        }
    }

    /// Checks ordering and that every sampled pose will be renderable.
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ordered(self.y_mm) && ordered(self.z_mm) && ordered(self.rz_deg)) {
            return Err(Error::InvalidParameter(format!("pose ranges unordered: {self:?}")));
        }
        if let Some(x) = self.x_mm {
            if !ordered(x) {
                return Err(Error::InvalidParameter(format!("world-slide range unordered: {x:?}")));
            }
        }
        if self.y_mm.0 < -APERTURE_MM || self.y_mm.1 > APERTURE_MM {
            return Err(Error::InvalidParameter(format!(
                "edge offsets {:?} leave the +/-{APERTURE_MM} mm aperture",
                self.y_mm
            )));
        }
        if self.z_mm.0 < Z_MIN_MM || self.z_mm.1 > Z_MAX_MM {
            return Err(Error::InvalidParameter(format!(
                "press depths {:?} outside [{Z_MIN_MM}, {Z_MAX_MM}] mm",
                self.z_mm
            )));
        }
        Ok(())
    }
}

/// Which side of the nine-in-ten split a record landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

/// Deterministic 90/10 split rule: every tenth record is held out.
pub fn split_for_index(i: usize) -> Split {
    if i % 10 == 9 {
        Split::Holdout
    } else {
        Split::Train
    }
}

/// Record-level bookkeeping: the generating pose when there is a single
/// one, the split assignment, and a free-form note describing the
/// randomness (forward-model seed, noise-pool picks, augmentations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub pose: Option<ContactPose>,
    pub split: Split,
    pub provenance: String,
}

/// One supervised record: what the network sees and what it should emit.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub input: GrayImage,
    pub target: GrayImage,
    pub meta: SampleMeta,
}

impl PairedSample {
    /// Builds a record, rejecting mismatched image dimensions.
    pub fn new(input: GrayImage, target: GrayImage, meta: SampleMeta) -> Result<Self> {
        if !input.same_shape(&target) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", input.width(), input.height()),
                got: format!("{}x{}", target.width(), target.height()),
            });
        }
        Ok(PairedSample { input, target, meta })
    }
}

fn uniform_in(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws `n` i.i.d. uniform poses from `r`, one derived seed per item so the
/// list is independent of evaluation order.
pub fn sample_contact_poses(n: usize, r: &PoseRanges, seed: u64) -> Result<Vec<ContactPose>> {
    if n == 0 {
        return Err(Error::InvalidParameter("pose count must be positive".into()));
    }
    r.validate()?;
    (0..n)
        .map(|i| {
            let mut rng = item_rng(seed, "datagen.pose", i as u64);
            let y = uniform_in(&mut rng, r.y_mm);
            let rz = uniform_in(&mut rng, r.rz_deg);
            let z = uniform_in(&mut rng, r.z_mm);
            ContactPose::new(y, rz, z)
        })
        .collect()
}

/// Builds one depth-translation pair: the rendered contact depth of `pose`
/// as target and its simulated marker image as input.
pub fn condepnet_pair(pose: &ContactPose, fm_seed: u64) -> Result<PairedSample> {
    let target = render_edge_depth(pose, RES)?;
    let input = tactile_forward_model(&target, fm_seed);
    PairedSample::new(
        input,
        target,
        SampleMeta {
            pose: Some(*pose),
            split: Split::Train,
            provenance: format!("fm_seed={fm_seed:#018x}"),
        },
    )
}

/// Builds the full depth-translation set: poses from the default training
/// window, rendered targets, simulated inputs, nine-in-ten split.
pub fn build_condepnet_dataset(n: usize, seed: u64) -> Result<Vec<PairedSample>> {
    let poses = sample_contact_poses(
        n,
        &PoseRanges::default(),
        derive_seed(seed, "datagen.condepnet.poses", 0),
    )?;
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut s = condepnet_pair(pose, derive_seed(seed, "datagen.condepnet.fm", i as u64))?;
            s.meta.split = split_for_index(i);
            Ok(s)
        })
        .collect()
}

/// Renders a pool of clean edge-contact depth maps from sampled poses:
/// the target side of saliency-translation records.
pub fn build_target_pool(n: usize, r: &PoseRanges, seed: u64) -> Result<Vec<DepthMap>> {
    sample_contact_poses(n, r, derive_seed(seed, "datagen.targets", 0))?
        .iter()
        .map(|pose| render_edge_depth(pose, RES))
        .collect()
}

/// Draws flip/rotation/translation augmentation parameters uniformly within
/// the documented bounds, with zero fill.
pub fn random_augment(rng: &mut impl Rng, width: usize, height: usize) -> AugmentParams {
    let bx = (width / 4) as i32;
    let by = (height / 4) as i32;
    AugmentParams {
        hflip: rng.gen(),
        vflip: rng.gen(),
        rotation: match rng.gen_range(0..4u8) {
            0 => Rotation::None,
            1 => Rotation::Quarter,
            2 => Rotation::Half,
            _ => Rotation::ThreeQuarter,
        },
        translation: (rng.gen_range(-bx..=bx), rng.gen_range(-by..=by)),
        fill: 0.0,
    }
}

/// Builds saliency-translation records, one per entry of `targets`: the
/// input is the clean map buried under one to three augmented draws from
/// the noise pool, the target is the min-max normalized clean map. Callers
/// wanting more composites than distinct targets repeat entries.
pub fn build_saliency_dataset(
    targets: &[DepthMap],
    noise_pool: &[DepthMap],
    pairing_seed: u64,
) -> Result<Vec<PairedSample>> {
    if targets.is_empty() {
        return Err(Error::EmptyPool("saliency target pool".into()));
    }
    if noise_pool.is_empty() {
        return Err(Error::EmptyPool("saliency noise pool".into()));
    }
    targets
        .iter()
        .enumerate()
        .map(|(k, clean)| {
            let mut rng = item_rng(pairing_seed, "datagen.saliency", k as u64);
            let blobs = rng.gen_range(1..=3usize);
            let mut input = clean.clone();
            let mut picks = Vec::with_capacity(blobs);
            for _ in 0..blobs {
                let l = rng.gen_range(0..noise_pool.len());
                let p = random_augment(&mut rng, clean.width(), clean.height());
                input = overlay(&input, &augment(&noise_pool[l], &p)?)?;
                picks.push((l, p));
            }
            PairedSample::new(
                input,
                minmax_normalize(clean),
                SampleMeta {
                    pose: None,
                    split: split_for_index(k),
                    provenance: format!("noise={picks:?}"),
                },
            )
        })
        .collect()
}

/// Evaluates a two-dimensional Gaussian bump over the sensor grid:
/// `amplitude * exp(-1/2 (p-mean)^T cov^-1 (p-mean))` in mm coordinates,
/// zero outside the circular aperture.
pub fn gaussian_noise_depth(
    amplitude: f64,
    mean_mm: (f64, f64),
    cov: [[f64; 2]; 2],
    res: usize,
) -> Result<DepthMap> {
    if !(amplitude > 0.0 && amplitude <= 1.0) {
        return Err(Error::InvalidParameter(format!("amplitude {amplitude} outside (0, 1]")));
    }
    if !(mean_mm.0.is_finite() && mean_mm.1.is_finite()) {
        return Err(Error::InvalidParameter("non-finite mean".into()));
    }
    let [[a, b], [c, d]] = cov;
    if ![a, b, c, d].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite covariance".into()));
    }
    let scale = [a.abs(), b.abs(), c.abs(), d.abs()].into_iter().fold(1.0f64, f64::max);
    if (b - c).abs() > 1e-9 * scale {
        return Err(Error::InvalidParameter(format!("covariance not symmetric: {cov:?}")));
    }
    let det = a * d - b * c;
    if !(a > 0.0 && det > 0.0) {
        return Err(Error::InvalidParameter(format!("covariance not positive definite: {cov:?}")));
    }
    let (i00, i01, i11) = (d / det, -b / det, a / det);
    let px_scale = crate::simworld::px_per_mm(res);
    let centre = (res as f64 - 1.0) / 2.0;
    let r2_max = APERTURE_MM * APERTURE_MM;
    Ok(GrayImage::from_fn(res, res, |x, y| {
        let u = (x as f64 - centre) / px_scale;
        let v = (centre - y as f64) / px_scale;
        if u * u + v * v > r2_max {
            return 0.0;
        }
        let du = u - mean_mm.0;
        let dv = v - mean_mm.1;
        let m2 = du * (i00 * du + i01 * dv) + dv * (i01 * du + i11 * dv);
        (amplitude * (-0.5 * m2).exp()) as f32
    }))
}

/// Draws one baseline-arm distractor: amplitude ~ U[0.3, 1], centre uniform
/// over the aperture disc, isotropic spread sigma ~ U[1.5, 4] mm — sized to
/// match the cone pool's support statistics.
pub fn sample_gaussian_noise(res: usize, seed: u64) -> Result<DepthMap> {
    let mut rng = rng_from_seed(seed);
    let amplitude = rng.gen_range(0.3..=1.0);
    let radius = APERTURE_MM * rng.gen::<f64>().sqrt();
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let sigma: f64 = rng.gen_range(1.5..=4.0);
    gaussian_noise_depth(
        amplitude,
        (radius * angle.cos(), radius * angle.sin()),
        [[sigma * sigma, 0.0], [0.0, sigma * sigma]],
        res,
    )
}

/// Renders one cone-distractor depth map with its centre uniform over the
/// inner 8 mm of the aperture and its shape drawn from the standard
/// distractor ranges.
pub fn random_cone_depth(rng: &mut impl Rng) -> Result<DepthMap> {
    let shape = DistractorRanges::default();
    let r = 8.0 * rng.gen::<f64>().sqrt();
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let cone = ConeDistractor::new(
        (r * phi.cos(), r * phi.sin()),
        rng.gen_range(shape.radius_mm.0..=shape.radius_mm.1),
        rng.gen_range(shape.apex_depth_mm.0..=shape.apex_depth_mm.1),
        rng.gen_range(shape.cone_angle_deg.0..=shape.cone_angle_deg.1),
    )?;
    render_cone_depth(&cone, RES)
}

/// Builds the noise generator's training corpus: rendered cone presses.
/// Each record is self-paired (the map is its own target) so the corpus
/// fits the standard manifest shape; there is no pose behind a bare cone.
pub fn build_tacngen_dataset(n: usize, seed: u64) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(Error::InvalidParameter("empty cone corpus requested".into()));
    }
    (0..n)
        .map(|i| {
            let map = random_cone_depth(&mut item_rng(seed, "datagen.tacngen", i as u64))?;
            let meta = SampleMeta {
                pose: None,
                split: split_for_index(i),
                provenance: "tacngen_cone".into(),
            };
            PairedSample::new(map.clone(), map, meta)
        })
        .collect()
}

/// Contamination applied to pose-labelled inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    None,
    Cones,
    Gaussian,
}

/// One pose-labelled record: the (possibly contaminated) depth map, the
/// generating pose, and the cones that were overlaid, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub input: DepthMap,
    pub pose: ContactPose,
    pub split: Split,
    /// Sensor-frame distractor cones overlaid on the clean render.
    pub distractors: Vec<ConeDistractor>,
}

impl PoseSample {
    /// Regression label `(y mm, sin rz, cos rz)`; the angle is stored on
    /// the unit circle so the wrap at half a turn costs nothing.
    pub fn label(&self) -> (f64, f64, f64) {
        let rz = self.pose.rz_deg.to_radians();
        (self.pose.y_mm, rz.sin(), rz.cos())
    }
}

/// Plants a cone on the contact-free side of the pose's edge line, offset
/// by [`CONE_OFFSET_MM`] and slid uniformly along the line, with shape
/// drawn from the default distractor ranges.
fn sample_edge_offset_cone(pose: &ContactPose, rng: &mut impl Rng) -> Result<ConeDistractor> {
    let shape = DistractorRanges::default();
    let d = uniform_in(rng, CONE_OFFSET_MM);
    let t = uniform_in(rng, (-6.0, 6.0));
    let rz = pose.rz_deg.to_radians();
    let (nx, ny) = (rz.cos(), -rz.sin());
    let (lx, ly) = (rz.sin(), rz.cos());
    let centre = ((d - pose.y_mm) * nx + t * lx, (d - pose.y_mm) * ny + t * ly);
    ConeDistractor::new(
        centre,
        uniform_in(rng, shape.radius_mm),
        uniform_in(rng, shape.apex_depth_mm),
        uniform_in(rng, shape.cone_angle_deg),
    )
}

/// Builds the pose-labelled set: clean renders, optionally buried under
/// edge-offset cones or a Gaussian bump.
pub fn build_posenet_dataset(
    n: usize,
    r: &PoseRanges,
    noise_mode: NoiseMode,
    seed: u64,
) -> Result<Vec<PoseSample>> {
    let poses = sample_contact_poses(n, r, derive_seed(seed, "datagen.posenet.poses", 0))?;
    poses
        .iter()
        .enumerate()
        .map(|(i, &pose)| {
            let clean = render_edge_depth(&pose, RES)?;
            let mut rng = item_rng(seed, "datagen.posenet.noise", i as u64);
            let (input, distractors) = match noise_mode {
                NoiseMode::None => (clean, Vec::new()),
                NoiseMode::Cones => {
                    let count = rng.gen_range(1..=2usize);
                    let mut input = clean;
                    let mut cones = Vec::with_capacity(count);
                    for _ in 0..count {
                        let cone = sample_edge_offset_cone(&pose, &mut rng)?;
                        input = overlay(&input, &render_cone_depth(&cone, RES)?)?;
                        cones.push(cone);
                    }
                    (input, cones)
                }
                NoiseMode::Gaussian => {
                    let bump = sample_gaussian_noise(RES, rng.gen())?;
                    (overlay(&clean, &bump)?, Vec::new())
                }
            };
            Ok(PoseSample { input, pose, split: split_for_index(i), distractors })
        })
        .collect()
}

/// Hex digest of `bytes`, the content address used by the image store and
/// the run manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One manifest line: where the images live relative to the manifest, plus
/// the record's bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub input: String,
    pub target: String,
    pub meta: SampleMeta,
}

fn store_pgm(images_dir: &Path, img: &GrayImage) -> Result<String> {
    let bytes = encode_pgm(img);
    let name = format!("{}.pgm", sha256_hex(&bytes));
    let path = images_dir.join(&name);
    if !path.exists() {
        fs::write(&path, &bytes)?;
    }
    Ok(format!("images/{name}"))
}

/// Writes `samples` under `dir`: images as 8-bit PGMs in a content-addressed
/// `images/` store (identical images share a file), records as one JSON line
/// each in `<name>.manifest`. Returns the manifest path.
pub fn write_dataset(dir: &Path, name: &str, samples: &[PairedSample]) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let mut lines = String::new();
    for s in samples {
        let record = ManifestRecord {
            input: store_pgm(&images, &s.input)?,
            target: store_pgm(&images, &s.target)?,
            meta: s.meta.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::InvalidParameter(format!("manifest record: {e}")))?;
        lines.push_str(&line);
        lines.push('\n');
    }
    let path = dir.join(format!("{name}.manifest"));
    fs::write(&path, lines)?;
    Ok(path)
}

/// Reads a manifest written by [`write_dataset`], resolving image paths
/// relative to the manifest's directory. Values round-trip through the
/// 8-bit quantization of the PGM store.
pub fn read_dataset(manifest_path: &Path) -> Result<Vec<PairedSample>> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(manifest_path)?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| {
            let record: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::InvalidParameter(format!("manifest record: {e}")))?;
            let input = decode_pgm(&fs::read(base.join(&record.input))?)?;
            let target = decode_pgm(&fs::read(base.join(&record.target))?)?;
            PairedSample::new(input, target, record.meta)
        })
        .collect()
}
