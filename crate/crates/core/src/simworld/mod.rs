//! Synthetic contact world: contours, poses, depth rendering, and the
//! marker-based tactile forward model.
//!
//! Geometry lives in millimetres; images are unit-square grayscale at a
//! fixed pixel scale. The sensor is a circular aperture that reports, for
//! each pixel, how deep the surface is pressed at that point (the "contact
//! depth"), normalized to [0, 1].
//!
//! # Conventions
//!
//! * World frame: x right, y up, angles in degrees counterclockwise from +x.
//! * Sensor frame: `u` along the sensor's right, `v` along its heading.
//!   Image column maps to +u, image row to -v (row 0 is the far side).
//! * A contact pose describes the edge under the sensor: `y_mm` is the
//!   signed distance from the sensor centre to the contour (positive when
//!   the centre is outside the object), `rz_deg` is the heading error
//!   relative to the canonical (counterclockwise) traversal tangent, and
//!   `z_mm` is the press depth.
//! * With `rz = 0` the object lies on the sensor's left; positive `rz`
//!   means the heading is rotated counterclockwise past the tangent.

mod contour;
mod scene;

pub use contour::{Contour, ContourSpec};
pub use scene::{DistractorRanges, PlacedCone, Scene};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{DepthMap, GrayImage, TactileImage};
use crate::seeding;

/// Canonical image side in pixels.
pub const RES: usize = 64;
/// Sensor aperture radius in mm.
pub const APERTURE_MM: f64 = 10.0;
/// Pixel scale at the canonical resolution: the 10 mm aperture radius spans
/// 12 px, keeping the contact footprint a small fraction of the frame.
pub const PX_PER_MM_AT_RES: f64 = 1.2;
/// Shallowest commanded press depth in mm.
pub const Z_MIN_MM: f64 = 3.0;
/// Deepest commanded press depth in mm.
pub const Z_MAX_MM: f64 = 6.0;
/// Width of the smooth contact ramp at the edge boundary, in mm.
pub const RAMP_W_MM: f64 = 1.5;
/// Marker displacement gain: px of lateral shift per unit depth gradient
/// (gradient taken in 1/px). Sized so the worst-case edge-ramp shift
/// (1.5 * kappa / ramp_px ~= 2.5 px) stays below half the marker pitch.
pub const KAPPA: f64 = 3.0;
/// Markers per side of the square marker grid.
pub const MARKER_GRID: usize = 11;
/// Marker dot radius parameter (Gaussian sigma) in px.
pub const MARKER_SIGMA_PX: f64 = 1.2;
/// Background brightness of the tactile image.
pub const MARKER_BACKGROUND: f64 = 0.1;
/// Dot brightness over background before depth uplift. Peak value is
/// background + amplitude + 0.1 * depth <= 1.0, so depth stays visible
/// through the clamp.
pub const MARKER_AMPLITUDE: f64 = 0.8;
/// Half-width of the uniform per-pixel sensor noise.
pub const MARKER_NOISE: f64 = 0.02;

/// Pixel scale (px per mm) for a square image of side `res`.
pub fn px_per_mm(res: usize) -> f64 {
    PX_PER_MM_AT_RES * res as f64 / RES as f64
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = a - 360.0 * (a / 360.0).round();
    if w <= -180.0 {
        w + 360.0
    } else {
        w
    }
}

/// Cubic smoothstep: 0 below 0, 1 above 1, 3t^2 - 2t^3 between.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * (3.0 - 2.0 * t)
    }
}

/// Contact amplitude for press depth `z`: linear from 0.2 at the shallowest
/// press to 1.0 at the deepest.
pub fn depth_amplitude(z_mm: f64) -> Result<f64> {
    if !(Z_MIN_MM..=Z_MAX_MM).contains(&z_mm) {
        return Err(Error::PoseOutOfRange(format!(
            "press depth {z_mm} mm outside [{Z_MIN_MM}, {Z_MAX_MM}]"
        )));
    }
    Ok(0.2 + 0.8 * (z_mm - Z_MIN_MM) / (Z_MAX_MM - Z_MIN_MM))
}

/// Local contact pose of an edge under the sensor. See the module docs for
/// the sign conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPose {
    /// Signed sensor-centre-to-contour distance in mm; positive outside.
    pub y_mm: f64,
    /// Heading error in degrees relative to the traversal tangent.
    pub rz_deg: f64,
    /// Press depth in mm.
    pub z_mm: f64,
}

impl ContactPose {
    /// Builds a pose, wrapping `rz` and validating the ranges.
    pub fn new(y_mm: f64, rz_deg: f64, z_mm: f64) -> Result<Self> {
        let pose = ContactPose { y_mm, rz_deg: wrap_deg(rz_deg), z_mm };
        pose.validate()?;
        Ok(pose)
    }

    /// Checks that the pose is renderable: `|y|` within the aperture and
    /// `z` within the press range.
    pub fn validate(&self) -> Result<()> {
        if !self.y_mm.is_finite() || self.y_mm.abs() > APERTURE_MM {
            return Err(Error::PoseOutOfRange(format!(
                "edge offset {} mm outside +/-{APERTURE_MM}",
                self.y_mm
            )));
        }
        if !self.rz_deg.is_finite() {
            return Err(Error::PoseOutOfRange("non-finite rotation".into()));
        }
        depth_amplitude(self.z_mm).map(|_| ())
    }
}

/// Sensor placement in the world: planar position, heading, press depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    /// Sensor centre in world mm.
    pub position: (f64, f64),
    /// Heading in degrees counterclockwise from world +x.
    pub heading_deg: f64,
    /// Press depth in mm.
    pub z_mm: f64,
}

impl SensorFrame {
    pub fn new(position: (f64, f64), heading_deg: f64, z_mm: f64) -> Result<Self> {
        depth_amplitude(z_mm)?;
        if !(position.0.is_finite() && position.1.is_finite() && heading_deg.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sensor frame".into()));
        }
        Ok(SensorFrame { position, heading_deg, z_mm })
    }

    /// Unit heading (forward) vector in world coordinates.
    pub fn forward(&self) -> (f64, f64) {
        let r = self.heading_deg.to_radians();
        (r.cos(), r.sin())
    }

    /// Unit right vector in world coordinates.
    pub fn right(&self) -> (f64, f64) {
        let r = self.heading_deg.to_radians();
        (r.sin(), -r.cos())
    }

    /// Converts a world point into sensor (u, v) mm coordinates.
    pub fn world_to_sensor(&self, p: (f64, f64)) -> (f64, f64) {
        let d = (p.0 - self.position.0, p.1 - self.position.1);
        let r = self.right();
        let f = self.forward();
        (d.0 * r.0 + d.1 * r.1, d.0 * f.0 + d.1 * f.1)
    }

    /// Converts sensor (u, v) mm coordinates into a world point.
    pub fn sensor_to_world(&self, q: (f64, f64)) -> (f64, f64) {
        let r = self.right();
        let f = self.forward();
        (
            self.position.0 + q.0 * r.0 + q.1 * f.0,
            self.position.1 + q.0 * r.1 + q.1 * f.1,
        )
    }
}

/// A cone-shaped distractor bump.
///
/// `center_mm` is interpreted in whatever frame the caller is working in:
/// sensor coordinates for direct rendering, world coordinates inside a
/// [`Scene`] placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeDistractor {
    /// Cone centre in mm.
    pub center_mm: (f64, f64),
    /// Base radius in mm.
    pub radius_mm: f64,
    /// Apex press depth in mm, normalized against the deepest press.
    pub apex_depth_mm: f64,
    /// Flank steepness control in degrees; 30 degrees gives a linear cone,
    /// larger values a blunter profile.
    pub cone_angle_deg: f64,
}

impl ConeDistractor {
    pub fn new(center_mm: (f64, f64), radius_mm: f64, apex_depth_mm: f64, cone_angle_deg: f64) -> Result<Self> {
        let c = ConeDistractor { center_mm, radius_mm, apex_depth_mm, cone_angle_deg };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return Err(Error::InvalidParameter(format!("cone radius {} mm", self.radius_mm)));
        }
        if !(self.apex_depth_mm > 0.0 && self.apex_depth_mm <= Z_MAX_MM) {
            return Err(Error::InvalidParameter(format!(
                "cone apex depth {} mm outside (0, {Z_MAX_MM}]",
                self.apex_depth_mm
            )));
        }
        if !(self.cone_angle_deg > 0.0 && self.cone_angle_deg.is_finite()) {
            return Err(Error::InvalidParameter("cone angle must be positive".into()));
        }
        Ok(())
    }

    /// Normalized apex height in [0, 1].
    pub fn apex_norm(&self) -> f64 {
        self.apex_depth_mm / Z_MAX_MM
    }

    /// Radial profile exponent, clamped to keep flanks renderable.
    pub fn profile_exponent(&self) -> f64 {
        (self.cone_angle_deg / 30.0).clamp(0.5, 4.0)
    }

    /// Depth contribution at squared distance `r2` (mm^2) from the centre.
    fn eval_r2(&self, r2: f64) -> f64 {
        let r = r2.sqrt();
        if r >= self.radius_mm {
            return 0.0;
        }
        self.apex_norm() * (1.0 - r / self.radius_mm).powf(self.profile_exponent())
    }
}

/// Renders the contact-depth map of a straight edge at the given pose.
///
/// Depth ramps from 0 to the pose's amplitude across a [`RAMP_W_MM`]-wide
/// band centred on the edge line; pixels outside the circular aperture are
/// zero. The map is a pure function of the pose.
pub fn render_edge_depth(pose: &ContactPose, res: usize) -> Result<DepthMap> {
    pose.validate()?;
    let amp = depth_amplitude(pose.z_mm)?;
    let scale = px_per_mm(res);
    let c = (res as f64 - 1.0) / 2.0;
    let rz = pose.rz_deg.to_radians();
    // Outward normal of the edge in sensor coordinates: at rz = 0 the free
    // side is to the sensor's right, and turning the heading CCW (rz > 0)
    // swings the normal clockwise in the sensor frame.
    let (nx, ny) = (rz.cos(), -rz.sin());
    let r2_max = APERTURE_MM * APERTURE_MM;
    Ok(GrayImage::from_fn(res, res, |x, y| {
        let u = (x as f64 - c) / scale;
        let v = (c - y as f64) / scale;
        if u * u + v * v > r2_max {
            return 0.0;
        }
        let s = u * nx + v * ny + pose.y_mm;
        (amp * smoothstep(0.5 - s / RAMP_W_MM)) as f32
    }))
}

/// Renders the contact-depth map of a single cone distractor in the sensor
/// frame. Pixels outside the aperture are zero.
pub fn render_cone_depth(cone: &ConeDistractor, res: usize) -> Result<DepthMap> {
    cone.validate()?;
    let scale = px_per_mm(res);
    let c = (res as f64 - 1.0) / 2.0;
    let r2_max = APERTURE_MM * APERTURE_MM;
    Ok(GrayImage::from_fn(res, res, |x, y| {
        let u = (x as f64 - c) / scale;
        let v = (c - y as f64) / scale;
        if u * u + v * v > r2_max {
            return 0.0;
        }
        let du = u - cone.center_mm.0;
        let dv = v - cone.center_mm.1;
        cone.eval_r2(du * du + dv * dv) as f32
    }))
}

/// Renders the contact-depth map a sensor sees in a scene: the contour edge
/// plus any distractor cones whose footprint reaches the aperture, summed
/// and clamped to 1.
///
/// If the sensor centre is farther than the aperture radius from the
/// contour the sensor is out of contact and the map is all zero; this is a
/// normal reading, not an error.
pub fn render_scene_contact(scene: &Scene, frame: &SensorFrame, res: usize) -> Result<DepthMap> {
    let amp = depth_amplitude(frame.z_mm)?;
    let contour = scene.contour();
    if contour.sdf(frame.position).abs() > APERTURE_MM {
        return Ok(GrayImage::zeros(res, res));
    }
    let scale = px_per_mm(res);
    let c = (res as f64 - 1.0) / 2.0;
    let r2_max = APERTURE_MM * APERTURE_MM;
    // Distractors close enough for their footprint to intersect the
    // aperture, with centres pre-transformed into the sensor frame.
    let near: Vec<(f64, f64, &ConeDistractor)> = scene
        .distractors()
        .iter()
        .filter_map(|p| {
            let q = frame.world_to_sensor(p.cone.center_mm);
            let reach = APERTURE_MM + p.cone.radius_mm;
            if q.0 * q.0 + q.1 * q.1 <= reach * reach {
                Some((q.0, q.1, &p.cone))
            } else {
                None
            }
        })
        .collect();
    Ok(GrayImage::from_fn(res, res, |x, y| {
        let u = (x as f64 - c) / scale;
        let v = (c - y as f64) / scale;
        if u * u + v * v > r2_max {
            return 0.0;
        }
        let p_w = frame.sensor_to_world((u, v));
        let s = contour.sdf(p_w);
        let mut d = amp * smoothstep(0.5 - s / RAMP_W_MM);
        for &(qu, qv, cone) in &near {
            let du = u - qu;
            let dv = v - qv;
            d += cone.eval_r2(du * du + dv * dv);
        }
        d.min(1.0) as f32
    }))
}

/// Recovers the true local contact pose of a sensor frame against a
/// contour, or `None` when the sensor is out of contact.
pub fn ground_truth_pose(contour: &Contour, frame: &SensorFrame) -> Option<ContactPose> {
    let s = contour.sdf(frame.position);
    if s.abs() > APERTURE_MM {
        return None;
    }
    let t = contour.nearest_param(frame.position);
    let tan = contour.tangent_at(t);
    let tau = tan.1.atan2(tan.0).to_degrees();
    Some(ContactPose {
        y_mm: s,
        rz_deg: wrap_deg(frame.heading_deg - tau),
        z_mm: frame.z_mm,
    })
}

/// Bilinear sample of an image at float pixel coordinates, clamped to the
/// image bounds.
fn bilinear(img: &GrayImage, fx: f64, fy: f64) -> f64 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let clamp_x = |x: isize| x.clamp(0, w - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h - 1) as usize;
    let x0 = fx.floor() as isize;
    let y0 = fy.floor() as isize;
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let v00 = img.get(clamp_x(x0), clamp_y(y0)) as f64;
    let v10 = img.get(clamp_x(x0 + 1), clamp_y(y0)) as f64;
    let v01 = img.get(clamp_x(x0), clamp_y(y0 + 1)) as f64;
    let v11 = img.get(clamp_x(x0 + 1), clamp_y(y0 + 1)) as f64;
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

/// Depth gradient (per px) at float pixel coordinates, via central
/// differences on bilinear samples.
fn depth_gradient(img: &GrayImage, fx: f64, fy: f64) -> (f64, f64) {
    let gx = (bilinear(img, fx + 1.0, fy) - bilinear(img, fx - 1.0, fy)) / 2.0;
    let gy = (bilinear(img, fx, fy + 1.0) - bilinear(img, fx, fy - 1.0)) / 2.0;
    (gx, gy)
}

/// Simulates the optical tactile image produced by a contact-depth map.
///
/// An 11x11 grid of Gaussian marker dots sits on a dark membrane. Contact
/// shifts each dot laterally by [`KAPPA`] times the local depth gradient
/// and brightens it in proportion to the depth at its displaced position;
/// uniform per-pixel noise is added on top. This is a deliberately simple
/// stand-in for membrane optics: the constants are tuned so every marker
/// stays an isolated, detectable peak.
///
/// Deterministic: the same depth map and seed give a bit-identical image.
pub fn tactile_forward_model(depth: &DepthMap, seed: u64) -> TactileImage {
    let (w, h) = (depth.width(), depth.height());
    let pitch_x = w as f64 / MARKER_GRID as f64;
    let pitch_y = h as f64 / MARKER_GRID as f64;
    let mut buf = vec![MARKER_BACKGROUND; w * h];
    let window = (4.0 * MARKER_SIGMA_PX).ceil() as isize;
    let inv_two_sigma2 = 1.0 / (2.0 * MARKER_SIGMA_PX * MARKER_SIGMA_PX);
    for gy in 0..MARKER_GRID {
        for gx in 0..MARKER_GRID {
            let mx = (gx as f64 + 0.5) * pitch_x;
            let my = (gy as f64 + 0.5) * pitch_y;
            let (dx, dy) = depth_gradient(depth, mx, my);
            let cx = mx + KAPPA * dx;
            let cy = my + KAPPA * dy;
            let amp = MARKER_AMPLITUDE + 0.1 * bilinear(depth, cx, cy);
            let x_lo = ((cx.round() as isize) - window).max(0) as usize;
            let x_hi = ((cx.round() as isize) + window).min(w as isize - 1) as usize;
            let y_lo = ((cy.round() as isize) - window).max(0) as usize;
            let y_hi = ((cy.round() as isize) + window).min(h as isize - 1) as usize;
            for py in y_lo..=y_hi {
                for px in x_lo..=x_hi {
                    let d2 = (px as f64 - cx).powi(2) + (py as f64 - cy).powi(2);
                    buf[py * w + px] += amp * (-d2 * inv_two_sigma2).exp();
                }
            }
        }
    }
    let mut rng: ChaCha8Rng = seeding::rng_from_seed(seed);
    for v in buf.iter_mut() {
        *v += rng.gen_range(-MARKER_NOISE..=MARKER_NOISE);
    }
    GrayImage::from_fn(w, h, |x, y| buf[y * w + x] as f32)
}

/// Counts strict 3x3 local maxima above `threshold`; the standard oracle
/// for checking that every marker survived the forward model as an
/// isolated peak.
pub fn marker_peak_count(img: &TactileImage, threshold: f32) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if img.get(nx as usize, ny as usize) >= v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{self, Rotation};

    fn pose(y: f64, rz: f64, z: f64) -> ContactPose {
        ContactPose::new(y, rz, z).unwrap()
    }

    #[test]
    fn wrap_deg_range() {
        assert_eq!(wrap_deg(0.0), 0.0);
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(190.0), -170.0);
        assert_eq!(wrap_deg(540.0), 180.0);
        assert!((wrap_deg(-350.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn amplitude_endpoints() {
        assert!((depth_amplitude(3.0).unwrap() - 0.2).abs() < 1e-12);
        assert!((depth_amplitude(6.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((depth_amplitude(4.5).unwrap() - 0.6).abs() < 1e-12);
        assert!(depth_amplitude(2.9).is_err());
        assert!(depth_amplitude(6.1).is_err());
    }

    #[test]
    fn edge_render_centered_pose() {
        // Aligned contact at full depth: plateau on the left, empty on the
        // right, ramp through the centre.
        let img = render_edge_depth(&pose(0.0, 0.0, 6.0), RES).unwrap();
        let row = RES / 2;
        // Left of the ramp (u = -5 mm -> x = 25.5): full amplitude.
        assert!((img.get(24, row) - 1.0).abs() < 1e-6, "got {}", img.get(24, row));
        // Right of the ramp: no contact.
        assert_eq!(img.get(40, row), 0.0);
        // The ramp passes through the centre at half amplitude.
        let mid = (img.get(31, row) + img.get(32, row)) / 2.0;
        assert!((mid - 0.5).abs() < 0.15, "ramp midline {mid}");
        // Outside the aperture everything is zero even on the contact side.
        assert_eq!(img.get(2, row), 0.0);
    }

    #[test]
    fn edge_render_offset_shrinks_contact() {
        // Positive y moves the sensor off the object: less contact area.
        let near = render_edge_depth(&pose(0.0, 0.0, 6.0), RES).unwrap();
        let far = render_edge_depth(&pose(2.5, 0.0, 6.0), RES).unwrap();
        let sum = |im: &DepthMap| im.pixels().iter().map(|&p| p as f64).sum::<f64>();
        // Circular-segment area beyond 2.5 mm is ~0.69 of the half-disk.
        let ratio = sum(&far) / sum(&near);
        assert!((0.60..0.78).contains(&ratio), "area ratio {ratio}");
        // And the boundary shifts left: the ramp midpoint lands at
        // u = -2.5 mm, between columns 28 and 29.
        let x = 31.5 - 2.5 * PX_PER_MM_AT_RES;
        let v = (far.get(x.floor() as usize, RES / 2) + far.get(x.ceil() as usize, RES / 2)) / 2.0;
        assert!(v > 0.2 && v < 0.8, "boundary value {v}");
    }

    #[test]
    fn edge_render_depth_scales_amplitude() {
        let shallow = render_edge_depth(&pose(0.0, 0.0, 3.0), RES).unwrap();
        let deep = render_edge_depth(&pose(0.0, 0.0, 6.0), RES).unwrap();
        assert!((shallow.max_value() - 0.2).abs() < 1e-6);
        assert!((deep.max_value() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn edge_render_quarter_turn_equivariance() {
        // Rotating the pose by +90 degrees turns the image clockwise, i.e.
        // three counterclockwise quarter turns.
        let base = render_edge_depth(&pose(1.0, 0.0, 5.0), RES).unwrap();
        let turned = render_edge_depth(&pose(1.0, 90.0, 5.0), RES).unwrap();
        let cw = imagery::augment(
            &base,
            &imagery::AugmentParams {
                rotation: Rotation::ThreeQuarter,
                ..imagery::AugmentParams::identity()
            },
        )
        .unwrap();
        assert!(turned.max_abs_diff(&cw) < 2e-6);
    }

    #[test]
    fn edge_render_rejects_bad_poses() {
        assert!(ContactPose::new(11.0, 0.0, 4.0).is_err());
        assert!(ContactPose::new(0.0, 0.0, 2.0).is_err());
        assert!(ContactPose::new(f64::NAN, 0.0, 4.0).is_err());
    }

    #[test]
    fn cone_render_profile() {
        let cone = ConeDistractor::new((0.0, 0.0), 4.0, 6.0, 30.0).unwrap();
        let img = render_cone_depth(&cone, RES).unwrap();
        // Apex at the centre reaches the normalized apex depth.
        let c = RES / 2;
        assert!(img.get(c, c) > 0.85, "apex {}", img.get(c, c));
        // Beyond the base radius the cone vanishes (4 mm = 4.8 px).
        assert_eq!(img.get(c + 8, c), 0.0);
        // Monotone decay along a radius.
        let vals: Vec<f32> = (0..6).map(|i| img.get(c + i, c)).collect();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]), "{vals:?}");
    }

    #[test]
    fn cone_render_radius_scales_support() {
        // Doubling the radius doubles the support diameter at a fixed
        // threshold.
        let measure = |radius: f64| {
            let cone = ConeDistractor::new((0.0, 0.0), radius, 6.0, 45.0).unwrap();
            let img = render_cone_depth(&cone, RES).unwrap();
            let row = RES / 2;
            (0..RES).filter(|&x| img.get(x, row) > 0.05).count() as f64
        };
        let d1 = measure(3.0);
        let d2 = measure(6.0);
        assert!((d2 - 2.0 * d1).abs() <= 2.5, "support {d1} vs {d2}");
    }

    #[test]
    fn cone_rejects_bad_parameters() {
        assert!(ConeDistractor::new((0.0, 0.0), 0.0, 5.0, 45.0).is_err());
        assert!(ConeDistractor::new((0.0, 0.0), 3.0, 7.0, 45.0).is_err());
        assert!(ConeDistractor::new((0.0, 0.0), 3.0, 0.0, 45.0).is_err());
    }

    #[test]
    fn ground_truth_pose_circle() {
        let contour = Contour::new(ContourSpec::circle(30.0)).unwrap();
        // Sensor 5 mm outside the circle on the +x axis. The traversal
        // tangent there points +y (heading 90 keeps the object on the left).
        let frame = SensorFrame::new((35.0, 0.0), 90.0, 4.0).unwrap();
        let p = ground_truth_pose(&contour, &frame).unwrap();
        assert!((p.y_mm - 5.0).abs() < 0.01, "y {}", p.y_mm);
        assert!(p.rz_deg.abs() < 0.5, "rz {}", p.rz_deg);
        // Turning the heading +30 degrees past the tangent reads rz = +30.
        let frame = SensorFrame::new((35.0, 0.0), 120.0, 4.0).unwrap();
        let p = ground_truth_pose(&contour, &frame).unwrap();
        assert!((p.rz_deg - 30.0).abs() < 0.5, "rz {}", p.rz_deg);
    }

    #[test]
    fn ground_truth_pose_out_of_contact() {
        let contour = Contour::new(ContourSpec::circle(30.0)).unwrap();
        let frame = SensorFrame::new((45.0, 0.0), 90.0, 4.0).unwrap();
        assert!(ground_truth_pose(&contour, &frame).is_none());
    }

    #[test]
    fn scene_render_matches_local_edge_model() {
        // On a flat stretch of the square the scene render must agree with
        // the straight-edge model at the ground-truth pose.
        let scene = Scene::new(Contour::new(ContourSpec::square()).unwrap(), vec![]);
        let frame = SensorFrame::new((31.0, 0.0), 90.0, 5.0).unwrap();
        let gt = ground_truth_pose(scene.contour(), &frame).unwrap();
        let scene_img = render_scene_contact(&scene, &frame, RES).unwrap();
        let local_img = render_edge_depth(&gt, RES).unwrap();
        assert!(
            scene_img.max_abs_diff(&local_img) < 0.02,
            "diff {}",
            scene_img.max_abs_diff(&local_img)
        );
    }

    #[test]
    fn scene_render_out_of_contact_is_zero() {
        let scene = Scene::new(Contour::new(ContourSpec::circle(30.0)).unwrap(), vec![]);
        let frame = SensorFrame::new((60.0, 0.0), 90.0, 4.0).unwrap();
        let img = render_scene_contact(&scene, &frame, RES).unwrap();
        assert_eq!(img.max_value(), 0.0);
    }

    #[test]
    fn scene_render_adds_distractors() {
        let contour = Contour::new(ContourSpec::circle(30.0)).unwrap();
        let clean = Scene::new(contour.clone(), vec![]);
        // A cone 8 mm outside the contact point, within aperture reach.
        let cone = ConeDistractor::new((38.0, 4.0), 3.0, 6.0, 45.0).unwrap();
        let dirty = Scene::new(contour, vec![PlacedCone { cone }]);
        let frame = SensorFrame::new((31.0, 0.0), 90.0, 4.0).unwrap();
        let a = render_scene_contact(&clean, &frame, RES).unwrap();
        let b = render_scene_contact(&dirty, &frame, RES).unwrap();
        let diff = b.max_abs_diff(&a);
        assert!(diff > 0.3, "distractor should alter the map, diff {diff}");
        // With the distractor list emptied the edge component is identical.
        let c = render_scene_contact(&clean, &frame, RES).unwrap();
        assert_eq!(a.max_abs_diff(&c), 0.0);
    }

    #[test]
    fn forward_model_preserves_marker_count() {
        let maps = [
            GrayImage::zeros(RES, RES),
            render_edge_depth(&pose(0.0, 30.0, 6.0), RES).unwrap(),
            render_edge_depth(&pose(-3.0, -60.0, 4.5), RES).unwrap(),
            render_cone_depth(&ConeDistractor::new((2.0, -3.0), 3.5, 6.0, 60.0).unwrap(), RES)
                .unwrap(),
        ];
        for (i, m) in maps.iter().enumerate() {
            let img = tactile_forward_model(m, 42 + i as u64);
            let peaks = marker_peak_count(&img, 0.35);
            assert_eq!(
                peaks,
                MARKER_GRID * MARKER_GRID,
                "map {i}: expected full marker grid, found {peaks}"
            );
        }
    }

    #[test]
    fn forward_model_is_deterministic() {
        let depth = render_edge_depth(&pose(1.0, 20.0, 5.0), RES).unwrap();
        let a = tactile_forward_model(&depth, 7);
        let b = tactile_forward_model(&depth, 7);
        assert_eq!(a.max_abs_diff(&b), 0.0);
        let c = tactile_forward_model(&depth, 8);
        assert!(c.max_abs_diff(&a) > 0.0);
    }

    #[test]
    fn forward_model_displaces_markers_toward_contact() {
        // Aligned edge, object on the left: the marker sitting in the ramp
        // shifts left (toward deeper contact).
        let depth = render_edge_depth(&pose(0.0, 0.0, 6.0), RES).unwrap();
        let img = tactile_forward_model(&depth, 3);
        // Grid marker nearest the centre rests at (32.0, 32.0).
        let (mut best, mut best_v) = ((0usize, 0usize), f32::MIN);
        for y in 29..=35 {
            for x in 27..=37 {
                if img.get(x, y) > best_v {
                    best_v = img.get(x, y);
                    best = (x, y);
                }
            }
        }
        assert!(best.0 < 32, "peak should shift left of rest position, found {best:?}");
    }

    #[test]
    fn forward_model_brightens_contacted_markers() {
        // Compare a marker deep in contact against one in free space, far
        // from any gradient so displacement plays no role.
        let depth = render_edge_depth(&pose(0.0, 0.0, 6.0), RES).unwrap();
        let img = tactile_forward_model(&depth, 11);
        // Markers rest at (c + 0.5) * 64/11. Column 3 (~x = 20.4) sits on
        // the contact plateau inside the aperture; column 9 (~x = 55.3) is
        // free space. Both are far from the ramp, so displacement is small
        // and brightness carries the difference.
        let peak_near = |cx: usize, cy: usize| {
            let mut m = f32::MIN;
            for y in cy - 3..=cy + 3 {
                for x in cx - 3..=cx + 3 {
                    m = m.max(img.get(x, y));
                }
            }
            m
        };
        let contact = peak_near(20, 32);
        let free = peak_near(55, 32);
        assert!(
            contact > free + 0.04,
            "contacted marker should be brighter: {contact} vs {free}"
        );
    }
}
