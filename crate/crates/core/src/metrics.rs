//! Evaluation metrics: saliency agreement, pose error, and episode scoring.
//!
//! Saliency metrics follow the standard definitions used for fixation-map
//! comparison:
//!
//! * **AUC-Judd**: ROC area where positives are fixation pixels and
//!   negatives all remaining pixels, thresholds swept over the predicted
//!   values at the fixations, integrated trapezoidally with the (0,0) and
//!   (1,1) endpoints pinned.
//! * **SIM**: histogram intersection `sum(min(P, Q))` after each map is
//!   normalized to unit sum.
//! * **CC**: Pearson correlation over pixels.
//! * **NSS**: mean z-score of the prediction at the fixations, using the
//!   population standard deviation of the whole map.
//!
//! All internal accumulation is in f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{GrayImage, SaliencyMap};
use crate::simworld::{wrap_deg, ContactPose, Contour};

/// Fixation threshold: pixels of a normalized target at or above this value
/// count as fixated.
pub const FIXATION_THETA: f32 = 0.5;

/// Pixels of `map` whose value is at least `theta`, as (x, y) coordinates.
///
/// The map is expected to be normalized so its maximum is 1; apply
/// [`crate::imagery::minmax_normalize`] first when in doubt.
pub fn fixation_set(map: &SaliencyMap, theta: f32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.get(x, y) >= theta {
                out.push((x, y));
            }
        }
    }
    out
}

/// AUC-Judd of a predicted saliency map against a fixation set.
///
/// Returns an error when the fixation set is empty or contains duplicate
/// or out-of-bounds pixels.
pub fn auc_judd(pred: &SaliencyMap, fixations: &[(usize, usize)]) -> Result<f64> {
    validate_fixations(pred, fixations)?;
    let n_pix = pred.width() * pred.height();
    let n_fix = fixations.len();
    let n_neg = n_pix - n_fix;
    if n_neg == 0 {
        return Err(Error::MetricUndefined("every pixel is a fixation".into()));
    }
    let fixated = fixation_mask(pred, fixations);
    // Sorted fixation values give the threshold ladder, descending.
    let mut thresholds: Vec<f32> = fixations.iter().map(|&(x, y)| pred.get(x, y)).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    // ROC points: fraction of fixations / non-fixations at or above each
    // threshold. The sweep starts at (0,0) and ends at (1,1).
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push((0.0f64, 0.0f64));
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for y in 0..pred.height() {
            for x in 0..pred.width() {
                if pred.get(x, y) >= t {
                    if fixated[y * pred.width() + x] {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_fix as f64));
    }
    points.push((1.0, 1.0));
    let mut auc = 0.0;
    for w in points.windows(2) {
        let (f0, t0) = w[0];
        let (f1, t1) = w[1];
        auc += (f1 - f0) * (t0 + t1) / 2.0;
    }
    Ok(auc)
}

/// Histogram-intersection similarity of two maps, each normalized to unit
/// sum first. 1 means identical distributions, 0 disjoint support.
pub fn sim(pred: &SaliencyMap, target: &SaliencyMap) -> Result<f64> {
    same_shape(pred, target)?;
    let sp: f64 = pred.pixels().iter().map(|&v| v as f64).sum();
    let st: f64 = target.pixels().iter().map(|&v| v as f64).sum();
    if sp <= 0.0 || st <= 0.0 {
        return Err(Error::MetricUndefined("similarity of an all-zero map".into()));
    }
    let s = pred
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(&p, &t)| (p as f64 / sp).min(t as f64 / st))
        .sum();
    Ok(s)
}

/// Pearson correlation coefficient between two maps, over pixels.
pub fn cc(pred: &SaliencyMap, target: &SaliencyMap) -> Result<f64> {
    same_shape(pred, target)?;
    let n = (pred.width() * pred.height()) as f64;
    let mp = pred.pixels().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mt = target.pixels().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for (&p, &t) in pred.pixels().iter().zip(target.pixels()) {
        let dp = p as f64 - mp;
        let dt = t as f64 - mt;
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp <= 0.0 || vt <= 0.0 {
        return Err(Error::MetricUndefined("correlation of a constant map".into()));
    }
    Ok(cov / (vp * vt).sqrt())
}

/// Normalized scanpath saliency: mean z-score of the prediction at the
/// fixations. The z-score uses the population standard deviation.
pub fn nss(pred: &SaliencyMap, fixations: &[(usize, usize)]) -> Result<f64> {
    validate_fixations(pred, fixations)?;
    let n = (pred.width() * pred.height()) as f64;
    let mean = pred.pixels().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = pred
        .pixels()
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return Err(Error::MetricUndefined("z-score on a constant map".into()));
    }
    let sd = var.sqrt();
    let s: f64 = fixations
        .iter()
        .map(|&(x, y)| (pred.get(x, y) as f64 - mean) / sd)
        .sum();
    Ok(s / fixations.len() as f64)
}

/// The four saliency metrics for one prediction/target pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScores {
    pub auc_judd: f64,
    pub sim: f64,
    pub cc: f64,
    pub nss: f64,
}

impl SaliencyScores {
    /// Mean of each metric over a set of per-pair scores.
    pub fn mean(items: &[SaliencyScores]) -> Result<SaliencyScores> {
        if items.is_empty() {
            return Err(Error::MetricUndefined("mean of zero scores".into()));
        }
        let n = items.len() as f64;
        Ok(SaliencyScores {
            auc_judd: items.iter().map(|s| s.auc_judd).sum::<f64>() / n,
            sim: items.iter().map(|s| s.sim).sum::<f64>() / n,
            cc: items.iter().map(|s| s.cc).sum::<f64>() / n,
            nss: items.iter().map(|s| s.nss).sum::<f64>() / n,
        })
    }
}

/// Scores a prediction against a normalized target map.
///
/// The fixation set is the target's pixels at or above `theta`; the target
/// must already be normalized so its maximum is 1.
pub fn saliency_scores(pred: &SaliencyMap, target: &SaliencyMap, theta: f32) -> Result<SaliencyScores> {
    let fix = fixation_set(target, theta);
    Ok(SaliencyScores {
        auc_judd: auc_judd(pred, &fix)?,
        sim: sim(pred, target)?,
        cc: cc(pred, target)?,
        nss: nss(pred, &fix)?,
    })
}

/// Mean absolute pose error over paired predictions and ground truths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMae {
    /// Mean absolute lateral error in mm.
    pub y_mm: f64,
    /// Mean absolute rotation error in degrees, wrapped into (-180, 180].
    pub rz_deg: f64,
}

/// Computes mean absolute error of predicted poses. Rotation errors are
/// wrapped so that predicting 179 degrees against -179 counts as 2 degrees.
pub fn pose_mae(pred: &[ContactPose], truth: &[ContactPose]) -> Result<PoseMae> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} poses", truth.len()),
            got: format!("{} poses", pred.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::MetricUndefined("pose error of an empty set".into()));
    }
    let n = pred.len() as f64;
    let y = pred.iter().zip(truth).map(|(p, t)| (p.y_mm - t.y_mm).abs()).sum::<f64>() / n;
    let rz = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| wrap_deg(p.rz_deg - t.rz_deg).abs())
        .sum::<f64>()
        / n;
    Ok(PoseMae { y_mm: y, rz_deg: rz })
}

/// Mean absolute distance from the contour over an episode's samples, mm.
pub fn trajectory_mae(sdf_mm: &[f64]) -> Result<f64> {
    if sdf_mm.is_empty() {
        return Err(Error::MetricUndefined("trajectory error of an empty episode".into()));
    }
    Ok(sdf_mm.iter().map(|s| s.abs()).sum::<f64>() / sdf_mm.len() as f64)
}

/// Fraction of the contour's perimeter visited by a position trace.
///
/// The perimeter is split into `bins` equal arc-length bins; a bin counts
/// as covered when some trace position projects into it.
pub fn coverage_fraction(contour: &Contour, positions: &[(f64, f64)], bins: usize) -> f64 {
    if positions.is_empty() || bins == 0 {
        return 0.0;
    }
    let mut hit = vec![false; bins];
    for &p in positions {
        let t = contour.nearest_param(p);
        let b = ((t / contour.length() * bins as f64) as usize).min(bins - 1);
        hit[b] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / bins as f64
}

/// Outcome of a closed-loop edge-following episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    /// Covered enough of the perimeter and came back near the start.
    Success,
    /// Made no meaningful progress over a sliding window.
    Stuck,
    /// Left the contour beyond the divergence bound.
    Diverged,
    /// Ran out of steps without diverging, sticking, or finishing.
    Incomplete,
}

impl EpisodeOutcome {
    pub fn is_success(self) -> bool {
        self == EpisodeOutcome::Success
    }
}

/// Thresholds for classifying an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeThresholds {
    /// An episode diverges when |sdf| exceeds this, mm.
    pub diverge_mm: f64,
    /// Window length for the stuck test, in steps.
    pub stuck_window: usize,
    /// Minimum net displacement over the window to count as progress, mm.
    pub stuck_net_mm: f64,
    /// Minimum perimeter coverage for success.
    pub coverage_min: f64,
    /// Maximum distance from the start position at the end, mm.
    pub return_mm: f64,
}

impl Default for OutcomeThresholds {
    fn default() -> Self {
        OutcomeThresholds {
            diverge_mm: 5.0,
            stuck_window: 50,
            stuck_net_mm: 2.0,
            coverage_min: 0.9,
            return_mm: 10.0,
        }
    }
}

/// Classifies an episode from its position trace, per-step contour
/// distances, and measured perimeter coverage.
///
/// Divergence dominates, then the stuck test, then success; anything else
/// is incomplete. The trace and distance series must be step-aligned.
pub fn classify_episode(
    positions: &[(f64, f64)],
    sdf_mm: &[f64],
    coverage: f64,
    th: &OutcomeThresholds,
) -> Result<EpisodeOutcome> {
    if positions.len() != sdf_mm.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} positions", sdf_mm.len()),
            got: format!("{} positions", positions.len()),
        });
    }
    if positions.is_empty() {
        return Err(Error::MetricUndefined("classification of an empty episode".into()));
    }
    if sdf_mm.iter().any(|s| s.abs() > th.diverge_mm) {
        return Ok(EpisodeOutcome::Diverged);
    }
    if positions.len() > th.stuck_window {
        for w in positions.windows(th.stuck_window + 1) {
            let a = w[0];
            let b = w[th.stuck_window];
            let net = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            if net < th.stuck_net_mm {
                return Ok(EpisodeOutcome::Stuck);
            }
        }
    }
    let first = positions[0];
    let last = positions[positions.len() - 1];
    let ret = ((last.0 - first.0).powi(2) + (last.1 - first.1).powi(2)).sqrt();
    if coverage >= th.coverage_min && ret <= th.return_mm {
        return Ok(EpisodeOutcome::Success);
    }
    Ok(EpisodeOutcome::Incomplete)
}

fn same_shape(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.width(), a.height()),
            got: format!("{}x{}", b.width(), b.height()),
        });
    }
    Ok(())
}

fn validate_fixations(map: &GrayImage, fixations: &[(usize, usize)]) -> Result<()> {
    if fixations.is_empty() {
        return Err(Error::MetricUndefined("empty fixation set".into()));
    }
    let mut seen = vec![false; map.width() * map.height()];
    for &(x, y) in fixations {
        if x >= map.width() || y >= map.height() {
            return Err(Error::InvalidParameter(format!(
                "fixation ({x},{y}) outside {}x{}",
                map.width(),
                map.height()
            )));
        }
        let i = y * map.width() + x;
        if seen[i] {
            return Err(Error::InvalidParameter(format!("duplicate fixation ({x},{y})")));
        }
        seen[i] = true;
    }
    Ok(())
}

fn fixation_mask(map: &GrayImage, fixations: &[(usize, usize)]) -> Vec<bool> {
    let mut mask = vec![false; map.width() * map.height()];
    for &(x, y) in fixations {
        mask[y * map.width() + x] = true;
    }
    mask
}
