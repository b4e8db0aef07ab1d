//! Closed-loop edge following and contact-pose evaluation.
//!
//! Two controller families drive a sensor around a [`Scene`]: a pose-based
//! PID servo and a scripted image-based controller that works directly on
//! the observation. Either one can consume raw estimated depth or the
//! saliency-filtered observation, so the same episode loop measures how
//! much the filtering helps downstream control.
//!
//! # Command frame
//!
//! A [`MotionCommand`] is expressed in the sensor frame at the moment the
//! observation was taken: `dx_mm` advances along the sensor's forward
//! (heading) axis, `dy_mm` strafes along its right axis, and `dtheta_deg`
//! turns the heading counterclockwise. Pose errors follow the simworld
//! conventions: `y` is the signed contour distance (positive on the free
//! side, which lies along the right axis), `rz` the heading error over the
//! traversal tangent. Driving both to zero therefore means strafing by
//! `-correction_y` and turning by `-correction_rz`.

use std::io::{BufRead, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{build_posenet_dataset, sha256_hex, NoiseMode, PoseRanges, PoseSample};
use crate::error::{Error, Result};
use crate::imagery::encode_pgm;
use crate::metrics::{
    classify_episode, coverage_fraction, pose_mae, trajectory_mae, EpisodeOutcome,
    OutcomeThresholds, PoseMae,
};
use crate::neural::{batch_to_images, images_to_batch, pose_from_row, PoseNet, UNet};
use crate::saliency::{salient_observation, SaliencyPipeline};
use crate::seeding::derive_seed;
use crate::simworld::{
    ground_truth_pose, px_per_mm, render_edge_depth, render_scene_contact, tactile_forward_model,
    wrap_deg, ContactPose, Contour, Scene, SensorFrame, RES,
};
use crate::{DepthMap, GrayImage};

/// Largest in-plane translation a single command may request, mm.
pub const MAX_LATERAL_MM: f64 = 3.0;
/// Largest heading change a single command may request, degrees.
pub const MAX_TURN_DEG: f64 = 10.0;
/// Press depth held while following an edge, mm.
pub const Z_FOLLOW_MM: f64 = 4.5;

/// One step of sensor motion, in the sensor frame of the observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCommand {
    /// Advance along the sensor's forward axis, mm.
    pub dx_mm: f64,
    /// Strafe along the sensor's right axis, mm.
    pub dy_mm: f64,
    /// Counterclockwise heading change, degrees.
    pub dtheta_deg: f64,
}

impl MotionCommand {
    /// The all-zero command.
    pub fn zero() -> Self {
        MotionCommand { dx_mm: 0.0, dy_mm: 0.0, dtheta_deg: 0.0 }
    }

    /// Clamps each component into the per-step motion bounds.
    pub fn clamped(self) -> Self {
        MotionCommand {
            dx_mm: self.dx_mm.clamp(-MAX_LATERAL_MM, MAX_LATERAL_MM),
            dy_mm: self.dy_mm.clamp(-MAX_LATERAL_MM, MAX_LATERAL_MM),
            dtheta_deg: self.dtheta_deg.clamp(-MAX_TURN_DEG, MAX_TURN_DEG),
        }
    }

    /// In-plane displacement length, mm.
    pub fn translation_mm(self) -> f64 {
        self.dx_mm.hypot(self.dy_mm)
    }
}

/// Proportional, integral, and derivative gains for one error channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        PidGains { kp, ki, kd }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = |g: f64| g.is_finite() && g >= 0.0;
        if ok(self.kp) && ok(self.ki) && ok(self.kd) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{what} gains {self:?}")))
        }
    }
}

/// Configuration of the pose-based PID controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    /// Gains on the lateral offset error, mm-valued.
    pub y: PidGains,
    /// Gains on the heading error, degree-valued.
    pub rz: PidGains,
    /// Tangential advance per step, mm.
    pub step_mm: f64,
    /// Absolute bound on each accumulated integral.
    pub integral_clamp: f64,
    /// Step budget for an episode under this controller.
    pub max_steps: usize,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            y: PidGains::new(0.5, 0.05, 0.1),
            rz: PidGains::new(0.3, 0.02, 0.05),
            step_mm: 2.0,
            integral_clamp: 10.0,
            max_steps: 400,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        self.y.validate("lateral")?;
        self.rz.validate("heading")?;
        if !(self.step_mm.is_finite() && self.step_mm > 0.0) {
            return Err(Error::InvalidParameter(format!("tangential step {} mm", self.step_mm)));
        }
        if !(self.integral_clamp.is_finite() && self.integral_clamp > 0.0) {
            return Err(Error::InvalidParameter(format!("integral clamp {}", self.integral_clamp)));
        }
        if self.max_steps < 100 {
            return Err(Error::InvalidParameter(format!(
                "step budget {} below the minimum of 100",
                self.max_steps
            )));
        }
        Ok(())
    }
}

/// Accumulated state of the PID controller across an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    /// Clamped integral of the lateral error.
    pub int_y: f64,
    /// Clamped integral of the heading error.
    pub int_rz: f64,
    /// Errors seen on the previous step, for the derivative term.
    pub prev: Option<(f64, f64)>,
}

impl PidState {
    pub fn new() -> Self {
        PidState::default()
    }
}

/// One step of the pose-based PID law.
///
/// Corrections on `y` and `rz` are standard PID terms (derivative zero on
/// the first call); the command strafes by the negated lateral correction,
/// turns by the negated heading correction, and always advances by the
/// configured tangential step. Every component is clamped to the per-step
/// bounds and each integral stays inside the configured clamp.
///
/// Inputs must be finite; the heading error may be given unwrapped.
pub fn pid_step(y_mm: f64, rz_deg: f64, state: &mut PidState, cfg: &PidConfig) -> MotionCommand {
    assert!(y_mm.is_finite() && rz_deg.is_finite(), "pose error must be finite");
    let e_y = y_mm;
    let e_rz = wrap_deg(rz_deg);
    state.int_y = (state.int_y + e_y).clamp(-cfg.integral_clamp, cfg.integral_clamp);
    state.int_rz = (state.int_rz + e_rz).clamp(-cfg.integral_clamp, cfg.integral_clamp);
    assert!(
        state.int_y.abs() <= cfg.integral_clamp && state.int_rz.abs() <= cfg.integral_clamp,
        "integral escaped its clamp"
    );
    let (d_y, d_rz) = match state.prev {
        Some((py, prz)) => (e_y - py, wrap_deg(e_rz - prz)),
        None => (0.0, 0.0),
    };
    state.prev = Some((e_y, e_rz));
    let corr_y = cfg.y.kp * e_y + cfg.y.ki * state.int_y + cfg.y.kd * d_y;
    let corr_rz = cfg.rz.kp * e_rz + cfg.rz.ki * state.int_rz + cfg.rz.kd * d_rz;
    MotionCommand { dx_mm: cfg.step_mm, dy_mm: -corr_y, dtheta_deg: -corr_rz }.clamped()
}

/// Configuration of the scripted image-based controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStepConfig {
    /// Advance along the sensed edge axis per step, mm.
    pub step_mm: f64,
    /// Gain mapping the centroid offset error (mm) to a lateral command.
    pub lateral_gain: f64,
    /// Desired centroid offset toward the contact side, mm.
    pub reference_offset_mm: f64,
    /// Mean intensity at or below which the observation counts as empty.
    pub mass_epsilon: f64,
    /// Step budget for an episode under this controller.
    pub max_steps: usize,
}

impl ImageStepConfig {
    /// Builds the edge-following configuration for press depth `z_mm`,
    /// deriving the reference offset from the analytic render of a
    /// centered, aligned edge at that depth.
    pub fn for_following(z_mm: f64) -> Result<Self> {
        Ok(ImageStepConfig {
            step_mm: 2.0,
            lateral_gain: 0.5,
            reference_offset_mm: reference_offset_for(z_mm)?,
            mass_epsilon: 1e-3,
            max_steps: 400,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_mm.is_finite() && self.step_mm > 0.0) {
            return Err(Error::InvalidParameter(format!("image step {} mm", self.step_mm)));
        }
        if !(self.lateral_gain.is_finite() && self.lateral_gain >= 0.0) {
            return Err(Error::InvalidParameter(format!("lateral gain {}", self.lateral_gain)));
        }
        if !self.reference_offset_mm.is_finite() {
            return Err(Error::InvalidParameter("non-finite reference offset".into()));
        }
        if !(self.mass_epsilon.is_finite() && self.mass_epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("mass epsilon {}", self.mass_epsilon)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("zero step budget".into()));
        }
        Ok(())
    }
}

/// Centroid offset of a centered, aligned edge contact at depth `z_mm`,
/// measured toward the contact side. Serves as the image controller's
/// reference: the offset is invariant to any positive rescaling of the
/// observation, so the same reference works for estimated depth and for
/// normalized saliency maps.
pub fn reference_offset_for(z_mm: f64) -> Result<f64> {
    let clean = render_edge_depth(&ContactPose::new(0.0, 0.0, z_mm)?, RES)?;
    let (c, _mass) = intensity_centroid_mm(&clean)
        .ok_or_else(|| Error::InvalidImage("empty reference render".into()))?;
    Ok(-c.0)
}

/// Persistent state of the image controller: the unit advance direction
/// chosen on the previous step, in sensor (u, v) coordinates. Starts
/// pointing forward so the first step continues the traversal direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageStepState {
    pub last_dir: (f64, f64),
}

impl Default for ImageStepState {
    fn default() -> Self {
        ImageStepState { last_dir: (0.0, 1.0) }
    }
}

impl ImageStepState {
    pub fn new() -> Self {
        ImageStepState::default()
    }
}

/// Intensity centroid of an image in sensor millimetre coordinates, plus
/// the mean intensity. `None` when the image carries no mass at all.
fn intensity_centroid_mm(img: &GrayImage) -> Option<((f64, f64), f64)> {
    let (w, h) = (img.width(), img.height());
    let (su, sv) = (px_per_mm(w), px_per_mm(h));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (mut m, mut mu, mut mv) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y) as f64;
            let u = (x as f64 - cx) / su;
            let v = (cy - y as f64) / sv;
            m += p;
            mu += p * u;
            mv += p * v;
        }
    }
    if m <= 0.0 {
        return None;
    }
    Some(((mu / m, mv / m), m / (w * h) as f64))
}

/// Principal axis of the intensity distribution about its centroid: the
/// unit eigenvector of the larger eigenvalue of the second-moment matrix,
/// in sensor (u, v) coordinates. Sign is arbitrary; callers disambiguate.
fn principal_axis(img: &GrayImage, centroid: (f64, f64)) -> (f64, f64) {
    let (w, h) = (img.width(), img.height());
    let (su, sv) = (px_per_mm(w), px_per_mm(h));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (mut muu, mut muv, mut mvv) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y) as f64;
            let du = (x as f64 - cx) / su - centroid.0;
            let dv = (cy - y as f64) / sv - centroid.1;
            muu += p * du * du;
            muv += p * du * dv;
            mvv += p * dv * dv;
        }
    }
    let phi = 0.5 * (2.0 * muv).atan2(muu - mvv);
    (phi.cos(), phi.sin())
}

/// One step of the scripted image-based controller.
///
/// The controller reads the observation alone: it takes the intensity
/// centroid and principal axis, keeps a persistent direction memory so the
/// advance never reverses along the axis, and treats the axis's
/// counterclockwise perpendicular — the contact side when the contour is
/// traversed with the interior on the left — as the lateral axis. The
/// command advances along the axis and strafes to hold the centroid at the
/// reference offset on the contact side. Heading never changes: the
/// controller only outputs in-plane translations. A near-empty observation
/// yields the zero command, leaving progress detection to the episode
/// classifier.
pub fn image_step(
    obs: &GrayImage,
    state: &mut ImageStepState,
    cfg: &ImageStepConfig,
) -> MotionCommand {
    let Some((centroid, mean)) = intensity_centroid_mm(obs) else {
        return MotionCommand::zero();
    };
    if mean <= cfg.mass_epsilon {
        return MotionCommand::zero();
    }
    let mut axis = principal_axis(obs, centroid);
    if axis.0 * state.last_dir.0 + axis.1 * state.last_dir.1 < 0.0 {
        axis = (-axis.0, -axis.1);
    }
    state.last_dir = axis;
    // Counterclockwise perpendicular of the advance direction: the side
    // the contact mass lies on under a left-interior traversal.
    let side = (-axis.1, axis.0);
    let offset = centroid.0 * side.0 + centroid.1 * side.1;
    let err = offset - cfg.reference_offset_mm;
    let du = cfg.step_mm * axis.0 + cfg.lateral_gain * err * side.0;
    let dv = cfg.step_mm * axis.1 + cfg.lateral_gain * err * side.1;
    // u aligns with the sensor's right axis, v with its forward axis.
    MotionCommand { dx_mm: dv, dy_mm: du, dtheta_deg: 0.0 }.clamped()
}

/// What the controller observes each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// The analytic contact-depth map itself; no sensor simulation and no
    /// networks. A ground-truth channel for controller-only sanity runs.
    TrueDepth,
    /// Tactile image passed through the contact-depth translator.
    EstimatedDepth,
    /// Full pipeline: estimated depth filtered into a saliency map.
    Saliency,
}

/// Which controller drives the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FollowController {
    /// Pose-based PID servo. With `oracle` set the pose comes from the
    /// world geometry, bypassing the pose network.
    PosePid { cfg: PidConfig, oracle: bool },
    /// Scripted image-based controller.
    Image { cfg: ImageStepConfig },
}

impl FollowController {
    pub fn max_steps(&self) -> usize {
        match self {
            FollowController::PosePid { cfg, .. } => cfg.max_steps,
            FollowController::Image { cfg } => cfg.max_steps,
        }
    }

    /// Short label for result tables.
    pub fn label(&self) -> &'static str {
        match self {
            FollowController::PosePid { oracle: true, .. } => "pid_oracle",
            FollowController::PosePid { oracle: false, .. } => "pid",
            FollowController::Image { .. } => "image",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FollowController::PosePid { cfg, .. } => cfg.validate(),
            FollowController::Image { cfg } => cfg.validate(),
        }
    }
}

/// Episode-level settings shared by both controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowConfig {
    /// Outcome thresholds used for early termination and classification.
    pub thresholds: OutcomeThresholds,
    /// Perimeter bins for coverage measurement.
    pub coverage_bins: usize,
    /// Press depth held throughout, mm.
    pub z_mm: f64,
    /// Arc-length position on the contour where the episode starts, mm.
    pub start_arc_mm: f64,
    /// Root seed for the sensor simulation noise.
    pub seed: u64,
}

impl FollowConfig {
    pub fn new(seed: u64) -> Self {
        FollowConfig {
            thresholds: OutcomeThresholds::default(),
            coverage_bins: 100,
            z_mm: Z_FOLLOW_MM,
            start_arc_mm: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coverage_bins == 0 {
            return Err(Error::InvalidParameter("zero coverage bins".into()));
        }
        if !self.start_arc_mm.is_finite() {
            return Err(Error::InvalidParameter("non-finite start arc".into()));
        }
        crate::simworld::depth_amplitude(self.z_mm).map(|_| ())
    }
}

/// Trained networks an episode may need. Every model is optional; the
/// episode runner checks up front that the requested observation mode and
/// controller have what they require.
#[derive(Default)]
pub struct FollowModels<'a> {
    pub condepnet: Option<&'a UNet<f32>>,
    pub tacsalnet: Option<&'a UNet<f32>>,
    pub posenet: Option<&'a PoseNet<f32>>,
}

impl<'a> FollowModels<'a> {
    /// No models at all: oracle and ground-truth-depth runs only.
    pub fn none() -> Self {
        FollowModels::default()
    }
}

/// One recorded controller step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Step index from zero.
    pub step: usize,
    /// Sensor frame at which the observation was taken.
    pub frame: SensorFrame,
    /// The controller's pose belief, when it has one.
    pub pose_estimate: Option<ContactPose>,
    /// Command issued from this frame.
    pub command: MotionCommand,
    /// Hex digest of the observation image, PGM-encoded.
    pub observation_sha256: String,
}

/// Full record of a closed-loop episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub observation: ObservationMode,
    pub controller: FollowController,
    pub config: FollowConfig,
    /// One record per executed step.
    pub steps: Vec<StepRecord>,
    /// Sensor frames visited, starting frame first; one longer than
    /// `steps`.
    pub trajectory: Vec<SensorFrame>,
    pub outcome: EpisodeOutcome,
    /// Mean absolute contour distance over the visited frames, mm.
    pub mae_mm: f64,
    /// Fraction of the perimeter covered.
    pub coverage: f64,
    /// Total in-plane distance travelled, mm.
    pub distance_mm: f64,
}

/// Sensor frame sitting on the contour at arc position `arc_mm`, heading
/// along the traversal tangent, pressed to `z_mm`.
pub fn start_frame(contour: &Contour, arc_mm: f64, z_mm: f64) -> Result<SensorFrame> {
    let p = contour.point_at(arc_mm);
    let t = contour.tangent_at(arc_mm);
    SensorFrame::new(p, t.1.atan2(t.0).to_degrees(), z_mm)
}

fn require<'a, T>(model: Option<&'a T>, what: &str) -> Result<&'a T> {
    model.ok_or_else(|| Error::MissingDependency(format!("{what} checkpoint not provided")))
}

/// Runs one closed-loop edge-following episode.
///
/// Each step renders the contact at the current frame, builds the
/// requested observation (ground-truth depth, estimated depth, or the
/// saliency-filtered observation built by the deployed pipeline), lets the
/// controller act, and moves the sensor. The episode ends as soon as the
/// visited trace classifies as diverged or stuck, when it completes a
/// covered circuit back to the start, or when the step budget runs out;
/// the reported outcome always equals the classification of the full
/// trace. Deterministic in (scene, configuration, models, seed).
pub fn run_edge_follow(
    scene: &Scene,
    observation: ObservationMode,
    controller: &FollowController,
    models: &FollowModels,
    cfg: &FollowConfig,
) -> Result<EpisodeResult> {
    controller.validate()?;
    cfg.validate()?;
    // Resolve model requirements before doing any work.
    let mut condep = match observation {
        ObservationMode::TrueDepth => None,
        _ => Some(require(models.condepnet, "contact-depth translator")?.clone()),
    };
    let mut tacsal = match observation {
        ObservationMode::Saliency => {
            Some(require(models.tacsalnet, "saliency translator")?.clone())
        }
        _ => None,
    };
    let mut posenet = match controller {
        FollowController::PosePid { oracle: false, .. } => {
            Some(require(models.posenet, "pose estimator")?.clone())
        }
        _ => None,
    };

    let contour = scene.contour();
    let mut frame = start_frame(contour, cfg.start_arc_mm, cfg.z_mm)?;
    let mut trajectory = vec![frame];
    let mut positions = vec![frame.position];
    let mut sdfs = vec![contour.sdf(frame.position)];
    let mut covered = vec![false; cfg.coverage_bins];
    let mark = |covered: &mut Vec<bool>, p: (f64, f64)| {
        let t = contour.nearest_param(p);
        let b = ((t / contour.length() * cfg.coverage_bins as f64) as usize)
            .min(cfg.coverage_bins - 1);
        covered[b] = true;
    };
    mark(&mut covered, frame.position);

    let mut pid_state = PidState::new();
    let mut image_state = ImageStepState::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut distance = 0.0f64;
    let th = &cfg.thresholds;
    let mut outcome = None;

    for step in 0..controller.max_steps() {
        // Terminate on what the trace so far already shows. These checks
        // mirror the episode classifier exactly: divergence anywhere, a
        // stalled displacement window, or a covered circuit that returned
        // to the start.
        let last = *positions.last().expect("trace is never empty");
        if sdfs.last().expect("trace is never empty").abs() > th.diverge_mm {
            outcome = Some(EpisodeOutcome::Diverged);
            break;
        }
        if positions.len() > th.stuck_window {
            let a = positions[positions.len() - 1 - th.stuck_window];
            let net = (last.0 - a.0).hypot(last.1 - a.1);
            if net < th.stuck_net_mm {
                outcome = Some(EpisodeOutcome::Stuck);
                break;
            }
        }
        let coverage = covered.iter().filter(|&&c| c).count() as f64 / cfg.coverage_bins as f64;
        let ret = (last.0 - positions[0].0).hypot(last.1 - positions[0].1);
        if coverage >= th.coverage_min && ret <= th.return_mm {
            outcome = Some(EpisodeOutcome::Success);
            break;
        }

        // Observe.
        let contact = render_scene_contact(scene, &frame, RES)?;
        let obs: DepthMap = match observation {
            ObservationMode::TrueDepth => contact,
            ObservationMode::EstimatedDepth | ObservationMode::Saliency => {
                let tactile =
                    tactile_forward_model(&contact, derive_seed(cfg.seed, "ctl.follow.fm", step as u64));
                let net = condep.as_mut().expect("checked above");
                let depth = crate::saliency::condepnet_apply(net, &tactile)?;
                if observation == ObservationMode::Saliency {
                    let sal = crate::saliency::tacsalnet_apply(
                        tacsal.as_mut().expect("checked above"),
                        &depth,
                    )?;
                    salient_observation(&sal)
                } else {
                    depth
                }
            }
        };
        let observation_sha256 = sha256_hex(&encode_pgm(&obs));

        // Act.
        let (pose_estimate, command) = match controller {
            FollowController::PosePid { cfg: pid, oracle } => {
                let pose = if *oracle {
                    ground_truth_pose(contour, &frame)
                        .expect("divergence check keeps the sensor inside the aperture")
                } else {
                    let x = images_to_batch(&[&obs])?;
                    let out = posenet.as_mut().expect("checked above").forward(&x);
                    let (y_mm, rz_deg) = pose_from_row(out.row(0));
                    ContactPose { y_mm, rz_deg, z_mm: frame.z_mm }
                };
                (Some(pose), pid_step(pose.y_mm, pose.rz_deg, &mut pid_state, pid))
            }
            FollowController::Image { cfg: img } => {
                (None, image_step(&obs, &mut image_state, img))
            }
        };
        steps.push(StepRecord { step, frame, pose_estimate, command, observation_sha256 });

        // Move.
        let f = frame.forward();
        let r = frame.right();
        frame.position = (
            frame.position.0 + command.dx_mm * f.0 + command.dy_mm * r.0,
            frame.position.1 + command.dx_mm * f.1 + command.dy_mm * r.1,
        );
        frame.heading_deg = wrap_deg(frame.heading_deg + command.dtheta_deg);
        distance += command.translation_mm();
        trajectory.push(frame);
        positions.push(frame.position);
        sdfs.push(contour.sdf(frame.position));
        mark(&mut covered, frame.position);
    }

    let coverage = coverage_fraction(contour, &positions, cfg.coverage_bins);
    let outcome = match outcome {
        Some(o) => o,
        None => classify_episode(&positions, &sdfs, coverage, th)?,
    };
    debug_assert_eq!(
        outcome,
        classify_episode(&positions, &sdfs, coverage, th)?,
        "early termination disagrees with the episode classifier"
    );
    let mae_mm = trajectory_mae(&sdfs)?;
    Ok(EpisodeResult {
        observation,
        controller: *controller,
        config: *cfg,
        steps,
        trajectory,
        outcome,
        mae_mm,
        coverage,
        distance_mm: distance,
    })
}

/// Pose-estimation accuracy over a sampled evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEvalReport {
    pub n: usize,
    pub noise: NoiseMode,
    pub with_saliency: bool,
    /// Errors of the raw predictions.
    pub raw: PoseMae,
    /// Errors after removing the mean signed offset, compensating any
    /// constant prediction drift.
    pub corrected: PoseMae,
    /// Mean signed lateral offset that was removed, mm.
    pub bias_y_mm: f64,
    /// Mean signed rotation offset that was removed, degrees.
    pub bias_rz_deg: f64,
}

/// Removes the mean signed offset from predictions, then recomputes the
/// error. The rotation offset is a circular mean so wrapped errors do not
/// cancel. Returns the corrected error and the (lateral, rotation) bias.
pub fn bias_corrected_mae(
    pred: &[ContactPose],
    truth: &[ContactPose],
) -> Result<(PoseMae, (f64, f64))> {
    pose_mae(pred, truth)?; // validates pairing and non-emptiness
    let n = pred.len() as f64;
    let bias_y = pred.iter().zip(truth).map(|(p, t)| p.y_mm - t.y_mm).sum::<f64>() / n;
    let (ss, sc) = pred.iter().zip(truth).fold((0.0f64, 0.0f64), |(ss, sc), (p, t)| {
        let d = (p.rz_deg - t.rz_deg).to_radians();
        (ss + d.sin(), sc + d.cos())
    });
    let bias_rz = ss.atan2(sc).to_degrees();
    let corrected: Vec<ContactPose> = pred
        .iter()
        .map(|p| ContactPose {
            y_mm: p.y_mm - bias_y,
            rz_deg: wrap_deg(p.rz_deg - bias_rz),
            z_mm: p.z_mm,
        })
        .collect();
    Ok((pose_mae(&corrected, truth)?, (bias_y, bias_rz)))
}

/// Evaluates contact-pose estimation over `n` sampled poses.
///
/// Each sample renders the (optionally contaminated) contact, simulates
/// the tactile image, translates it to estimated depth, optionally filters
/// it through the saliency stage, and regresses the pose. Reported errors
/// cover the raw predictions and the drift-corrected ones. Deterministic
/// in the seed.
pub fn run_pose_eval(
    posenet: &PoseNet<f32>,
    pipeline: &SaliencyPipeline,
    with_saliency: bool,
    noise: NoiseMode,
    n: usize,
    seed: u64,
) -> Result<PoseEvalReport> {
    let data = build_posenet_dataset(
        n,
        &PoseRanges::pose_eval(),
        noise,
        derive_seed(seed, "ctl.poseeval.data", 0),
    )?;
    if data.is_empty() {
        return Err(Error::MetricUndefined("pose evaluation over an empty set".into()));
    }
    let truths: Vec<ContactPose> = data.iter().map(|s| s.pose).collect();
    let preds = pose_eval_predictions(posenet, pipeline, with_saliency, &data, seed)?;
    let raw = pose_mae(&preds, &truths)?;
    let (corrected, (bias_y_mm, bias_rz_deg)) = bias_corrected_mae(&preds, &truths)?;
    Ok(PoseEvalReport { n: data.len(), noise, with_saliency, raw, corrected, bias_y_mm, bias_rz_deg })
}

/// Predicted contact poses for prepared samples, through the deployed
/// observation chain: sensor forward model, ConDepNet, and — when saliency
/// is on — TacSalNet plus the controller-facing observation seam.
pub fn pose_eval_predictions(
    posenet: &PoseNet<f32>,
    pipeline: &SaliencyPipeline,
    with_saliency: bool,
    data: &[PoseSample],
    seed: u64,
) -> Result<Vec<ContactPose>> {
    let mut condep = pipeline.condepnet.clone();
    let mut tacsal = pipeline.tacsalnet.clone();
    let mut net = posenet.clone();
    let mut preds = Vec::with_capacity(data.len());
    for (chunk_idx, chunk) in data.chunks(16).enumerate() {
        let tactiles: Vec<_> = chunk
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let i = (chunk_idx * 16 + j) as u64;
                tactile_forward_model(&s.input, derive_seed(seed, "ctl.poseeval.fm", i))
            })
            .collect();
        let refs: Vec<&GrayImage> = tactiles.iter().collect();
        let depth = condep.forward(&images_to_batch(&refs)?);
        let observations: Vec<DepthMap> = if with_saliency {
            let sal = tacsal.forward(&depth);
            batch_to_images(&sal)?.iter().map(salient_observation).collect()
        } else {
            batch_to_images(&depth)?
        };
        let obs_refs: Vec<&GrayImage> = observations.iter().collect();
        let out = net.forward(&images_to_batch(&obs_refs)?);
        for (j, s) in chunk.iter().enumerate() {
            let (y_mm, rz_deg) = pose_from_row(out.row(j));
            preds.push(ContactPose { y_mm, rz_deg, z_mm: s.pose.z_mm });
        }
    }
    Ok(preds)
}

/// Writes an episode log: one JSON line per executed step.
pub fn write_episode_log(path: &Path, episode: &EpisodeResult) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for record in &episode.steps {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::InvalidParameter(format!("step record serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back an episode log written by [`write_episode_log`].
pub fn read_episode_log(path: &Path) -> Result<Vec<StepRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidParameter(format!("episode log line: {e}")))?;
        records.push(record);
    }
    Ok(records)
}

/// Aggregate of the episodes behind one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowCell {
    pub episodes: usize,
    pub successes: usize,
    /// Mean trajectory error over the successful episodes, mm.
    pub mean_mae_mm: Option<f64>,
}

impl FollowCell {
    pub fn from_results(results: &[EpisodeResult]) -> Self {
        let ok: Vec<&EpisodeResult> =
            results.iter().filter(|r| r.outcome.is_success()).collect();
        let mean = if ok.is_empty() {
            None
        } else {
            Some(ok.iter().map(|r| r.mae_mm).sum::<f64>() / ok.len() as f64)
        };
        FollowCell { episodes: results.len(), successes: ok.len(), mean_mae_mm: mean }
    }

    /// Table text: the mean error in mm, or `Fail` when nothing
    /// succeeded, or `-` when nothing ran.
    pub fn render(&self) -> String {
        match (self.episodes, self.mean_mae_mm) {
            (0, _) => "-".into(),
            (_, None) => "Fail".into(),
            (_, Some(m)) => format!("{m:.2}"),
        }
    }
}

/// One row of the edge-following summary: an object/controller pair with
/// its raw and saliency results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowTableRow {
    pub object: String,
    pub controller: String,
    pub raw: FollowCell,
    pub saliency: FollowCell,
}

/// Writes the edge-following summary table as CSV: one row per object and
/// controller, raw and saliency result columns holding the mean error in
/// mm or `Fail`.
pub fn write_follow_table(path: &Path, rows: &[FollowTableRow]) -> Result<()> {
    let mut text = String::from("object,controller,raw,saliency\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.object,
            row.controller,
            row.raw.render(),
            row.saliency.render()
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::PoseNet;
    use crate::simworld::{ContourSpec, DistractorRanges};
    use proptest::prelude::*;

    fn p_only(kp_y: f64, kp_rz: f64) -> PidConfig {
        PidConfig {
            y: PidGains::new(kp_y, 0.0, 0.0),
            rz: PidGains::new(kp_rz, 0.0, 0.0),
            ..PidConfig::default()
        }
    }

    #[test]
    fn zero_error_gives_pure_advance() {
        let cfg = PidConfig::default();
        let mut state = PidState::new();
        let cmd = pid_step(0.0, 0.0, &mut state, &cfg);
        assert_eq!(cmd, MotionCommand { dx_mm: 2.0, dy_mm: 0.0, dtheta_deg: 0.0 });
    }

    #[test]
    fn proportional_lateral_correction() {
        let cfg = p_only(0.5, 0.0);
        let mut state = PidState::new();
        let cmd = pid_step(1.0, 0.0, &mut state, &cfg);
        assert_eq!(cmd.dx_mm, 2.0);
        assert_eq!(cmd.dy_mm, -0.5);
        assert_eq!(cmd.dtheta_deg, 0.0);
    }

    #[test]
    fn integral_action_grows_until_the_clamp() {
        let cfg = PidConfig {
            y: PidGains::new(0.0, 0.1, 0.0),
            rz: PidGains::new(0.0, 0.0, 0.0),
            integral_clamp: 5.0,
            ..PidConfig::default()
        };
        let mut state = PidState::new();
        let mut last = 0.0;
        for k in 1..=12 {
            let cmd = pid_step(1.0, 0.0, &mut state, &cfg);
            let expected = -0.1 * (k as f64).min(5.0);
            assert!((cmd.dy_mm - expected).abs() < 1e-12, "step {k}: {}", cmd.dy_mm);
            assert!(cmd.dy_mm <= last, "correction shrank in magnitude at step {k}");
            last = cmd.dy_mm;
            assert!(state.int_y.abs() <= cfg.integral_clamp);
        }
        assert_eq!(last, -0.5);
    }

    #[test]
    fn derivative_reacts_to_error_changes_only() {
        let cfg = PidConfig {
            y: PidGains::new(0.0, 0.0, 1.0),
            rz: PidGains::new(0.0, 0.0, 0.0),
            ..PidConfig::default()
        };
        let mut state = PidState::new();
        let first = pid_step(2.0, 0.0, &mut state, &cfg);
        assert_eq!(first.dy_mm, 0.0, "no derivative on the first step");
        let second = pid_step(3.0, 0.0, &mut state, &cfg);
        assert_eq!(second.dy_mm, -1.0);
        let third = pid_step(3.0, 0.0, &mut state, &cfg);
        assert_eq!(third.dy_mm, 0.0);
    }

    #[test]
    fn heading_error_wraps_and_turn_saturates() {
        let cfg = p_only(0.0, 0.3);
        let mut state = PidState::new();
        // 190 degrees wraps to -170; the correction saturates at the
        // per-step turn bound.
        let cmd = pid_step(0.0, 190.0, &mut state, &cfg);
        assert_eq!(cmd.dtheta_deg, MAX_TURN_DEG);
        let mut state = PidState::new();
        let cmd = pid_step(0.0, -190.0, &mut state, &cfg);
        assert_eq!(cmd.dtheta_deg, -MAX_TURN_DEG);
    }

    #[test]
    fn invalid_pid_configs_are_rejected() {
        let cfg = PidConfig { max_steps: 99, ..PidConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PidConfig { step_mm: 0.0, ..PidConfig::default() };
        assert!(cfg.validate().is_err());
        let mut cfg = PidConfig::default();
        cfg.y.kp = f64::NAN;
        assert!(cfg.validate().is_err());
        assert!(PidConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn pid_commands_stay_bounded(
            errors in proptest::collection::vec((-10.0f64..10.0, -180.0f64..180.0), 1..40),
            kp in 0.0f64..5.0,
            ki in 0.0f64..5.0,
            kd in 0.0f64..5.0,
            clamp in 0.1f64..20.0,
        ) {
            let cfg = PidConfig {
                y: PidGains::new(kp, ki, kd),
                rz: PidGains::new(kp, ki, kd),
                integral_clamp: clamp,
                ..PidConfig::default()
            };
            let mut state = PidState::new();
            for (y, rz) in errors {
                let cmd = pid_step(y, rz, &mut state, &cfg);
                prop_assert!(cmd.dx_mm.abs() <= MAX_LATERAL_MM);
                prop_assert!(cmd.dy_mm.abs() <= MAX_LATERAL_MM);
                prop_assert!(cmd.dtheta_deg.abs() <= MAX_TURN_DEG);
                prop_assert!(state.int_y.abs() <= clamp);
                prop_assert!(state.int_rz.abs() <= clamp);
            }
        }

        #[test]
        fn image_commands_stay_bounded_and_planar(
            pixels in proptest::collection::vec(0.0f32..1.0, 256),
            gain in 0.0f64..5.0,
            reference in -5.0f64..5.0,
        ) {
            let obs = GrayImage::from_vec(16, 16, pixels).unwrap();
            let cfg = ImageStepConfig {
                step_mm: 2.0,
                lateral_gain: gain,
                reference_offset_mm: reference,
                mass_epsilon: 1e-3,
                max_steps: 400,
            };
            let mut state = ImageStepState::new();
            let cmd = image_step(&obs, &mut state, &cfg);
            prop_assert!(cmd.dx_mm.abs() <= MAX_LATERAL_MM);
            prop_assert!(cmd.dy_mm.abs() <= MAX_LATERAL_MM);
            prop_assert_eq!(cmd.dtheta_deg, 0.0);
            let norm = (state.last_dir.0.powi(2) + state.last_dir.1.powi(2)).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_observation_yields_zero_command() {
        let obs = GrayImage::zeros(RES, RES);
        let cfg = ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap();
        let mut state = ImageStepState::new();
        let cmd = image_step(&obs, &mut state, &cfg);
        assert_eq!(cmd, MotionCommand::zero());
        assert_eq!(state.last_dir, (0.0, 1.0), "direction memory untouched");
    }

    #[test]
    fn centered_edge_gives_pure_advance() {
        // An aligned edge at the reference depth: the centroid offset
        // matches the reference by construction, so the command reduces
        // to the tangential advance along the edge axis.
        let obs = render_edge_depth(&ContactPose::new(0.0, 0.0, Z_FOLLOW_MM).unwrap(), RES).unwrap();
        let cfg = ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap();
        let mut state = ImageStepState::new();
        let cmd = image_step(&obs, &mut state, &cfg);
        assert!((cmd.dx_mm - cfg.step_mm).abs() < 1e-6, "advance: {}", cmd.dx_mm);
        assert!(cmd.dy_mm.abs() < 1e-4, "lateral: {}", cmd.dy_mm);
        assert_eq!(cmd.dtheta_deg, 0.0);
        assert!(state.last_dir.1 > 0.999, "axis follows the forward memory");
    }

    #[test]
    fn reference_offset_is_on_the_contact_side() {
        let d = reference_offset_for(Z_FOLLOW_MM).unwrap();
        assert!(d.is_finite() && d > 0.0 && d < crate::simworld::APERTURE_MM, "offset {d}");
    }

    #[test]
    fn mass_on_the_contact_side_pulls_the_sensor_toward_it() {
        // Sensor too far onto the free side: only a sliver of contact
        // remains at the contact-side rim, so the centroid sits beyond
        // the reference offset. The correction must strafe toward the
        // contact mass — negative along the right axis when the contact
        // side is the left — to re-center the edge. (The content of the
        // image shifts opposite to the sensor's own motion.)
        let obs = render_edge_depth(&ContactPose::new(2.5, 0.0, Z_FOLLOW_MM).unwrap(), RES).unwrap();
        let cfg = ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap();
        let mut state = ImageStepState::new();
        let cmd = image_step(&obs, &mut state, &cfg);
        assert!(cmd.dy_mm < -0.05, "expected a leftward strafe, got {}", cmd.dy_mm);
        assert_eq!(cmd.dtheta_deg, 0.0);
    }

    #[test]
    fn principal_axis_tracks_a_rotated_edge() {
        let rz = 30.0f64;
        let obs = render_edge_depth(&ContactPose::new(0.0, rz, Z_FOLLOW_MM).unwrap(), RES).unwrap();
        let cfg = ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap();
        let mut state = ImageStepState::new();
        image_step(&obs, &mut state, &cfg);
        // The contact boundary line runs along (sin rz, cos rz) in sensor
        // coordinates.
        let dir = (rz.to_radians().sin(), rz.to_radians().cos());
        let dot = state.last_dir.0 * dir.0 + state.last_dir.1 * dir.1;
        assert!(dot > 0.995, "axis {:?} vs edge {:?}", state.last_dir, dir);
    }

    fn circle_scene(radius: f64) -> Scene {
        Scene::new(Contour::new(ContourSpec::circle(radius)).unwrap(), Vec::new())
    }

    #[test]
    fn oracle_pid_follows_a_circle() {
        // Controller-only sanity: ground-truth pose feedback on a clean
        // circle must complete the circuit tightly. The circle diameter
        // matches the desk-scale objects.
        let scene = circle_scene(40.0);
        let controller =
            FollowController::PosePid { cfg: PidConfig::default(), oracle: true };
        let cfg = FollowConfig::new(11);
        let result = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap();
        assert_eq!(result.outcome, EpisodeOutcome::Success, "coverage {}", result.coverage);
        assert!(result.mae_mm <= 0.3, "trajectory MAE {}", result.mae_mm);
        let perimeter = scene.contour().length();
        assert!(
            result.distance_mm > 0.8 * perimeter && result.distance_mm < 1.5 * perimeter,
            "distance {} vs perimeter {perimeter}",
            result.distance_mm
        );
    }

    #[test]
    fn image_controller_follows_a_circle_on_true_depth() {
        let scene = circle_scene(40.0);
        let controller = FollowController::Image {
            cfg: ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap(),
        };
        let cfg = FollowConfig::new(12);
        let result = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap();
        assert_eq!(result.outcome, EpisodeOutcome::Success, "coverage {}", result.coverage);
        assert!(result.mae_mm <= 1.0, "trajectory MAE {}", result.mae_mm);
    }

    #[test]
    fn episodes_are_deterministic_and_account_for_distance() {
        let scene = circle_scene(40.0);
        let controller =
            FollowController::PosePid { cfg: PidConfig::default(), oracle: true };
        let cfg = FollowConfig::new(7);
        let a = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap();
        let b = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap();
        assert_eq!(a, b);

        assert_eq!(a.trajectory.len(), a.steps.len() + 1);
        let recomputed: f64 = a
            .trajectory
            .windows(2)
            .map(|w| (w[1].position.0 - w[0].position.0).hypot(w[1].position.1 - w[0].position.1))
            .sum();
        assert!((recomputed - a.distance_mm).abs() < 1e-9, "{recomputed} vs {}", a.distance_mm);
    }

    #[test]
    fn outcome_matches_the_episode_classifier() {
        let scene = circle_scene(40.0);
        let controller =
            FollowController::PosePid { cfg: PidConfig::default(), oracle: true };
        let cfg = FollowConfig::new(3);
        let result = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap();
        let contour = scene.contour();
        let positions: Vec<(f64, f64)> = result.trajectory.iter().map(|f| f.position).collect();
        let sdfs: Vec<f64> = positions.iter().map(|&p| contour.sdf(p)).collect();
        let coverage = coverage_fraction(contour, &positions, cfg.coverage_bins);
        let outcome = classify_episode(&positions, &sdfs, coverage, &cfg.thresholds).unwrap();
        assert_eq!(result.outcome, outcome);
        assert!((result.coverage - coverage).abs() < 1e-12);
        assert!((result.mae_mm - trajectory_mae(&sdfs).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn missing_models_are_reported() {
        let scene = circle_scene(30.0);
        let cfg = FollowConfig::new(1);
        let pid = FollowController::PosePid { cfg: PidConfig::default(), oracle: false };
        let err = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &pid,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingDependency(_)), "{err:?}");

        let image = FollowController::Image {
            cfg: ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap(),
        };
        for mode in [ObservationMode::EstimatedDepth, ObservationMode::Saliency] {
            let err =
                run_edge_follow(&scene, mode, &image, &FollowModels::none(), &cfg).unwrap_err();
            assert!(matches!(err, Error::MissingDependency(_)), "{mode:?}: {err:?}");
        }

        let condep = UNet::new(1);
        let models = FollowModels { condepnet: Some(&condep), tacsalnet: None, posenet: None };
        let err = run_edge_follow(&scene, ObservationMode::Saliency, &image, &models, &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::MissingDependency(_)), "{err:?}");
    }

    #[test]
    fn saliency_observations_come_from_the_deployed_seam() {
        // Whatever the networks compute, the observation the controller
        // sees must be byte-identical to the deployed filtering of the
        // pipeline output at the recorded frame.
        let scene = Scene::generate(
            Contour::new(ContourSpec::circle(30.0)).unwrap(),
            2,
            (7.0, 12.0),
            &DistractorRanges::default(),
            5,
        )
        .unwrap();
        let condep: UNet<f32> = UNet::new(21);
        let tacsal: UNet<f32> = UNet::new(22);
        let mut img_cfg = ImageStepConfig::for_following(Z_FOLLOW_MM).unwrap();
        img_cfg.max_steps = 3;
        let controller = FollowController::Image { cfg: img_cfg };
        let models =
            FollowModels { condepnet: Some(&condep), tacsalnet: Some(&tacsal), posenet: None };
        let cfg = FollowConfig::new(40);
        let result =
            run_edge_follow(&scene, ObservationMode::Saliency, &controller, &models, &cfg)
                .unwrap();
        assert_eq!(result.steps.len(), 3);
        let mut pipeline = SaliencyPipeline::new(condep.clone(), tacsal.clone());
        for record in &result.steps {
            let contact = render_scene_contact(&scene, &record.frame, RES).unwrap();
            let tactile = tactile_forward_model(
                &contact,
                derive_seed(cfg.seed, "ctl.follow.fm", record.step as u64),
            );
            let sal = pipeline.apply(&tactile).unwrap();
            let expected = sha256_hex(&encode_pgm(&salient_observation(&sal)));
            assert_eq!(record.observation_sha256, expected, "step {}", record.step);
        }
    }

    #[test]
    fn estimated_depth_uses_the_posenet_estimate() {
        // A PID episode on estimated depth with an untrained pose network
        // still runs and records the network's pose beliefs.
        let scene = circle_scene(30.0);
        let condep: UNet<f32> = UNet::new(31);
        let posenet: PoseNet<f32> = PoseNet::new(32);
        let pid = PidConfig { max_steps: 100, ..PidConfig::default() };
        let controller = FollowController::PosePid { cfg: pid, oracle: false };
        let models =
            FollowModels { condepnet: Some(&condep), tacsalnet: None, posenet: Some(&posenet) };
        let cfg = FollowConfig::new(41);
        let result =
            run_edge_follow(&scene, ObservationMode::EstimatedDepth, &controller, &models, &cfg)
                .unwrap();
        assert!(!result.steps.is_empty());
        for record in &result.steps {
            let pose = record.pose_estimate.expect("pid records a pose belief");
            assert!(pose.y_mm.abs() <= crate::neural::POSE_Y_RANGE_MM);
            assert!(pose.rz_deg.abs() <= 180.0);
        }
    }

    #[test]
    fn bias_correction_removes_a_constant_offset_exactly() {
        let truths: Vec<ContactPose> = (0..20)
            .map(|i| ContactPose {
                y_mm: -2.0 + 0.2 * i as f64,
                rz_deg: -40.0 + 4.0 * i as f64,
                z_mm: 4.5,
            })
            .collect();
        let preds: Vec<ContactPose> = truths
            .iter()
            .map(|t| ContactPose {
                y_mm: t.y_mm + 0.5,
                rz_deg: wrap_deg(t.rz_deg + 3.0),
                z_mm: t.z_mm,
            })
            .collect();
        let raw = pose_mae(&preds, &truths).unwrap();
        assert!((raw.y_mm - 0.5).abs() < 1e-12);
        assert!((raw.rz_deg - 3.0).abs() < 1e-12);
        let (corrected, (bias_y, bias_rz)) = bias_corrected_mae(&preds, &truths).unwrap();
        assert!((bias_y - 0.5).abs() < 1e-12);
        assert!((bias_rz - 3.0).abs() < 1e-9);
        assert!(corrected.y_mm < 1e-12, "{}", corrected.y_mm);
        assert!(corrected.rz_deg < 1e-9, "{}", corrected.rz_deg);
    }

    #[test]
    fn pose_eval_is_deterministic_on_fresh_networks() {
        let posenet: PoseNet<f32> = PoseNet::new(50);
        let pipeline = SaliencyPipeline::new(UNet::new(51), UNet::new(52));
        let a = run_pose_eval(&posenet, &pipeline, false, NoiseMode::None, 6, 9).unwrap();
        let b = run_pose_eval(&posenet, &pipeline, false, NoiseMode::None, 6, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n, 6);
        assert!(a.raw.y_mm.is_finite() && a.corrected.y_mm.is_finite());
        let c = run_pose_eval(&posenet, &pipeline, true, NoiseMode::Cones, 6, 9).unwrap();
        assert!(c.with_saliency);
        assert!(c.raw.rz_deg.is_finite());
    }

    #[test]
    fn episode_log_round_trips() {
        let scene = circle_scene(40.0);
        let controller =
            FollowController::PosePid { cfg: PidConfig::default(), oracle: true };
        let cfg = FollowConfig::new(8);
        let result = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &cfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.jsonl");
        write_episode_log(&path, &result).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), result.steps.len(), "one line per step");
        let back = read_episode_log(&path).unwrap();
        assert_eq!(back, result.steps);
    }

    #[test]
    fn follow_table_renders_errors_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("follow.csv");
        let rows = vec![
            FollowTableRow {
                object: "square".into(),
                controller: "pid".into(),
                raw: FollowCell { episodes: 10, successes: 0, mean_mae_mm: None },
                saliency: FollowCell { episodes: 10, successes: 10, mean_mae_mm: Some(0.773) },
            },
            FollowTableRow {
                object: "flower".into(),
                controller: "image".into(),
                raw: FollowCell { episodes: 0, successes: 0, mean_mae_mm: None },
                saliency: FollowCell { episodes: 10, successes: 9, mean_mae_mm: Some(1.2049) },
            },
        ];
        write_follow_table(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "object,controller,raw,saliency");
        assert_eq!(lines[1], "square,pid,Fail,0.77");
        assert_eq!(lines[2], "flower,image,-,1.20");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn start_frame_sits_on_the_contour_heading_along_it() {
        for spec in [ContourSpec::square(), ContourSpec::flower(), ContourSpec::circle(40.0)] {
            let contour = Contour::new(spec).unwrap();
            let frame = start_frame(&contour, 5.0, Z_FOLLOW_MM).unwrap();
            assert!(contour.sdf(frame.position).abs() < 1e-6);
            let pose = ground_truth_pose(&contour, &frame).unwrap();
            assert!(pose.rz_deg.abs() < 1e-6, "{}", pose.rz_deg);
            assert_eq!(pose.z_mm, Z_FOLLOW_MM);
        }
    }

    #[test]
    fn cell_aggregation_uses_successful_episodes_only() {
        let scene = circle_scene(40.0);
        let controller =
            FollowController::PosePid { cfg: PidConfig::default(), oracle: true };
        let ok = run_edge_follow(
            &scene,
            ObservationMode::TrueDepth,
            &controller,
            &FollowModels::none(),
            &FollowConfig::new(2),
        )
        .unwrap();
        assert!(ok.outcome.is_success());
        let mut failed = ok.clone();
        failed.outcome = EpisodeOutcome::Diverged;
        failed.mae_mm = 99.0;
        let cell = FollowCell::from_results(&[ok.clone(), failed]);
        assert_eq!(cell.episodes, 2);
        assert_eq!(cell.successes, 1);
        assert!((cell.mean_mae_mm.unwrap() - ok.mae_mm).abs() < 1e-12);
    }
}
