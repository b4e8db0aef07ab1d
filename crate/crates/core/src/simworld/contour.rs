//! Planar contour shapes and signed-distance queries.
//!
//! Every contour is a closed curve generated analytically and then sampled
//! into a dense polyline with a uniform arc-length table. All geometric
//! queries (length, point/tangent lookup, signed distance, nearest
//! parameter) run against that cached polyline, so the parameterization and
//! the distance field are exactly consistent with each other.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Maximum spacing between adjacent polyline vertices, in mm.
const MAX_VERTEX_SPACING_MM: f64 = 0.05;
/// Hard floor on vertex count so even tiny contours stay smooth.
const MIN_VERTICES: usize = 2048;
/// Coarse stride used for the first nearest-segment sweep.
const COARSE_STRIDE: usize = 24;

/// Shape family plus parameters, the serializable identity of a contour.
///
/// Dimensions are millimetres. Each variant has a `Default` matching the
/// bench object it models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContourSpec {
    /// Axis-aligned square with filleted corners.
    Square { side: f64, fillet: f64 },
    /// Sinusoidally lobed disk: r(phi) = base_r + amp * cos(lobes * phi).
    Flower { base_r: f64, amp: f64, lobes: u32 },
    /// Archimedean spiral band r = r0 + growth*phi over [0, 4*pi), closed
    /// by a radial seam between the two turns.
    Volute { r0: f64, growth: f64 },
    /// Fin-like profile: an ellipse sharpened to a trailing vertex.
    Foil { half_len: f64, half_thick: f64 },
    /// Plain circle; mainly useful as an analytic test fixture.
    Circle { radius: f64 },
}

impl ContourSpec {
    /// Standard square bench object: 60 mm side, 2 mm corner fillets.
    pub fn square() -> Self {
        ContourSpec::Square { side: 60.0, fillet: 2.0 }
    }

    /// Standard flower bench object: r = 30 + 6*cos(5*phi).
    pub fn flower() -> Self {
        ContourSpec::Flower { base_r: 30.0, amp: 6.0, lobes: 5 }
    }

    /// Standard volute bench object: r = 18 + 2.2*phi over two turns.
    pub fn volute() -> Self {
        ContourSpec::Volute { r0: 18.0, growth: 2.2 }
    }

    /// Standard foil bench object: 21 mm half-length, 11 mm half-thickness.
    pub fn foil() -> Self {
        ContourSpec::Foil { half_len: 21.0, half_thick: 11.0 }
    }

    /// Circle of the given radius.
    pub fn circle(radius: f64) -> Self {
        ContourSpec::Circle { radius }
    }

    /// Checks parameter sanity for the variant.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ContourSpec::Square { side, fillet } => {
                side > 0.0 && fillet >= 0.0 && 2.0 * fillet < side
            }
            ContourSpec::Flower { base_r, amp, lobes } => {
                base_r > 0.0 && amp >= 0.0 && amp < base_r && lobes >= 1
            }
            ContourSpec::Volute { r0, growth } => r0 > 0.0 && growth > 0.0,
            ContourSpec::Foil { half_len, half_thick } => half_len > 0.0 && half_thick > 0.0,
            ContourSpec::Circle { radius } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("contour parameters out of range: {self:?}")))
        }
    }

    /// Short lowercase name of the shape family, used in file names.
    pub fn name(&self) -> &'static str {
        match self {
            ContourSpec::Square { .. } => "square",
            ContourSpec::Flower { .. } => "flower",
            ContourSpec::Volute { .. } => "volute",
            ContourSpec::Foil { .. } => "foil",
            ContourSpec::Circle { .. } => "circle",
        }
    }

    /// Evaluates the generating curve at natural parameter `t` in [0, 1).
    ///
    /// The natural parameter is *not* arc length; [`Contour`] resamples it.
    fn generate(&self, t: f64) -> (f64, f64) {
        match *self {
            ContourSpec::Square { side, fillet } => square_point(side, fillet, t),
            ContourSpec::Flower { base_r, amp, lobes } => {
                let phi = t * 2.0 * PI;
                let r = base_r + amp * (lobes as f64 * phi).cos();
                (r * phi.cos(), r * phi.sin())
            }
            ContourSpec::Volute { r0, growth } => volute_point(r0, growth, t),
            ContourSpec::Foil { half_len, half_thick } => {
                let phi = t * 2.0 * PI;
                (half_len * phi.cos(), half_thick * phi.sin() * (0.5 * phi).sin())
            }
            ContourSpec::Circle { radius } => {
                let phi = t * 2.0 * PI;
                (radius * phi.cos(), radius * phi.sin())
            }
        }
    }

    /// Rough perimeter estimate used only to pick the vertex count.
    fn perimeter_guess(&self) -> f64 {
        match *self {
            ContourSpec::Square { side, .. } => 4.0 * side,
            ContourSpec::Flower { base_r, amp, .. } => 2.0 * PI * (base_r + amp) * 1.5,
            ContourSpec::Volute { r0, growth } => {
                let r_out = r0 + growth * 4.0 * PI;
                2.0 * PI * (r0 + r_out) + 2.0 * (r_out - r0)
            }
            ContourSpec::Foil { half_len, half_thick } => 4.0 * (half_len + half_thick),
            ContourSpec::Circle { radius } => 2.0 * PI * radius,
        }
    }
}

/// Point on a rounded square of the given side and fillet radius.
///
/// Traversal is counterclockwise. The perimeter is split into four straight
/// runs and four quarter-circle fillets, walked at uniform speed.
fn square_point(side: f64, fillet: f64, t: f64) -> (f64, f64) {
    let h = side / 2.0;
    let straight = side - 2.0 * fillet; // length of each flat run
    let arc = 0.5 * PI * fillet; // length of each corner fillet
    let total = 4.0 * (straight + arc);
    let mut s = t.rem_euclid(1.0) * total;

    // Four sides, each a flat run followed by a corner arc. Side k spans
    // from corner k to corner k+1 going counterclockwise, starting on the
    // bottom edge (y = -h) moving in +x.
    for k in 0..4 {
        // Unit direction of this flat run and the corner centre it ends at.
        let (dx, dy) = match k {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        // Start of this side's flat run.
        let (sx, sy) = match k {
            0 => (-h + fillet, -h),
            1 => (h, -h + fillet),
            2 => (h - fillet, h),
            _ => (-h, h - fillet),
        };
        if s <= straight {
            return (sx + dx * s, sy + dy * s);
        }
        s -= straight;
        if s <= arc {
            // Quarter-circle fillet around the corner centre.
            let (cx, cy) = match k {
                0 => (h - fillet, -h + fillet),
                1 => (h - fillet, h - fillet),
                2 => (-h + fillet, h - fillet),
                _ => (-h + fillet, -h + fillet),
            };
            let a0 = -0.5 * PI + k as f64 * 0.5 * PI;
            let a = a0 + s / fillet;
            return (cx + fillet * a.cos(), cy + fillet * a.sin());
        }
        s -= arc;
    }
    // Numerical fallthrough at t ~= 1.
    (-h + fillet, -h)
}

/// Point on the volute: two spiral turns plus the radial seam closing them.
///
/// The seam runs from the outer end of the spiral (phi = 4*pi) straight back
/// to its start (phi = 0) along the +x axis, so the closed curve bounds the
/// spiral band between the turns.
fn volute_point(r0: f64, growth: f64, t: f64) -> (f64, f64) {
    let phi_max = 4.0 * PI;
    // Arc length of an Archimedean spiral is close enough to uniform-in-phi
    // for generation purposes; the arc-length table fixes the rest.
    let spiral_guess = 0.5 * (r0 + r0 + growth * phi_max) * phi_max;
    let seam = growth * phi_max;
    let total = spiral_guess + seam;
    let s = t.rem_euclid(1.0) * total;
    if s <= spiral_guess {
        let phi = s / spiral_guess * phi_max;
        let r = r0 + growth * phi;
        (r * phi.cos(), r * phi.sin())
    } else {
        // Radial seam: walk from (r0 + growth*4*pi, 0) back to (r0, 0).
        let f = (s - spiral_guess) / seam;
        (r0 + growth * phi_max * (1.0 - f), 0.0)
    }
}

/// A closed planar contour with cached arc-length parameterization.
///
/// Constructed from a [`ContourSpec`]; serialization round-trips through the
/// spec so the cache never hits disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ContourSpec", into = "ContourSpec")]
pub struct Contour {
    spec: ContourSpec,
    /// Polyline vertices at uniform arc-length spacing, counterclockwise.
    verts: Vec<(f64, f64)>,
    /// Cumulative arc length; `cum[i]` is the length up to vertex i.
    cum: Vec<f64>,
    /// Total perimeter length.
    length: f64,
}

impl PartialEq for Contour {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl TryFrom<ContourSpec> for Contour {
    type Error = Error;
    fn try_from(spec: ContourSpec) -> Result<Self> {
        Contour::new(spec)
    }
}

impl From<Contour> for ContourSpec {
    fn from(c: Contour) -> Self {
        c.spec
    }
}

impl Contour {
    /// Builds the contour and its arc-length table.
    pub fn new(spec: ContourSpec) -> Result<Self> {
        spec.validate()?;
        // First pass: dense sampling in the natural parameter.
        let n_raw = MIN_VERTICES.max((spec.perimeter_guess() / MAX_VERTEX_SPACING_MM) as usize);
        let raw: Vec<(f64, f64)> = (0..n_raw).map(|i| spec.generate(i as f64 / n_raw as f64)).collect();
        // Cumulative length of the raw polyline (closing segment included).
        let mut raw_cum = Vec::with_capacity(n_raw + 1);
        raw_cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..n_raw {
            let a = raw[i];
            let b = raw[(i + 1) % n_raw];
            acc += dist(a, b);
            raw_cum.push(acc);
        }
        let length = acc;
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("degenerate contour: {spec:?}")));
        }
        // Second pass: resample at uniform arc length.
        let n = MIN_VERTICES.max((length / MAX_VERTEX_SPACING_MM).ceil() as usize);
        let mut verts = Vec::with_capacity(n);
        let mut cursor = 0usize;
        for i in 0..n {
            let target = i as f64 / n as f64 * length;
            while raw_cum[cursor + 1] < target {
                cursor += 1;
            }
            let seg = raw_cum[cursor + 1] - raw_cum[cursor];
            let f = if seg > 0.0 { (target - raw_cum[cursor]) / seg } else { 0.0 };
            let a = raw[cursor];
            let b = raw[(cursor + 1) % n_raw];
            verts.push((a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f));
        }
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += dist(verts[i], verts[(i + 1) % n]);
            cum.push(acc);
        }
        let length = acc;
        Ok(Contour { spec, verts, cum, length })
    }

    /// The shape parameters this contour was built from.
    pub fn spec(&self) -> &ContourSpec {
        &self.spec
    }

    /// Total perimeter length in mm.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Point at arc-length parameter `s` (wrapped into [0, length)).
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let (i, f) = self.locate(s);
        let a = self.verts[i];
        let b = self.verts[(i + 1) % self.verts.len()];
        (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
    }

    /// Unit tangent at arc-length parameter `s`, in canonical traversal
    /// direction: walking along it keeps the interior on the left.
    ///
    /// The generating curve's own order cannot be trusted for this - the
    /// volute walks its inner turn with the band on the right - so the
    /// polyline tangent is checked against the distance field and flipped
    /// when the interior sits on its right.
    pub fn tangent_at(&self, s: f64) -> (f64, f64) {
        let t = self.raw_tangent_at(s);
        let p = self.point_at(s);
        // Probe a fraction of a millimetre to the tangent's left; well
        // below any feature radius of the supported shapes.
        let probe = (p.0 - 0.3 * t.1, p.1 + 0.3 * t.0);
        if self.sdf(probe) < 0.0 {
            t
        } else {
            (-t.0, -t.1)
        }
    }

    /// Tangent in polyline generation order, without the orientation fix.
    fn raw_tangent_at(&self, s: f64) -> (f64, f64) {
        let (i, _) = self.locate(s);
        let a = self.verts[i];
        let b = self.verts[(i + 1) % self.verts.len()];
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let n = (dx * dx + dy * dy).sqrt();
        if n > 0.0 {
            (dx / n, dy / n)
        } else {
            (1.0, 0.0)
        }
    }

    /// Signed distance from `p` to the contour: negative inside the closed
    /// region, positive outside.
    pub fn sdf(&self, p: (f64, f64)) -> f64 {
        let (d, _) = self.nearest(p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Arc-length parameter of the point on the contour nearest to `p`.
    pub fn nearest_param(&self, p: (f64, f64)) -> f64 {
        let (_, s) = self.nearest(p);
        s
    }

    /// Unsigned distance and arc-length parameter of the nearest point.
    fn nearest(&self, p: (f64, f64)) -> (f64, f64) {
        let n = self.verts.len();
        // Coarse sweep over strided vertices.
        let mut best_i = 0usize;
        let mut best_d2 = f64::INFINITY;
        let mut i = 0usize;
        while i < n {
            let v = self.verts[i];
            let d2 = (v.0 - p.0).powi(2) + (v.1 - p.1).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
            }
            i += COARSE_STRIDE;
        }
        // Refine: exact point-segment distance over a window around the
        // coarse winner. The window must cover the stride on both sides.
        let mut best = (f64::INFINITY, 0.0);
        let lo = best_i as isize - 2 * COARSE_STRIDE as isize;
        let hi = best_i as isize + 2 * COARSE_STRIDE as isize;
        for j in lo..=hi {
            let idx = j.rem_euclid(n as isize) as usize;
            let a = self.verts[idx];
            let b = self.verts[(idx + 1) % n];
            let (d, f) = point_segment(p, a, b);
            if d < best.0 {
                let seg = self.cum[idx + 1] - self.cum[idx];
                best = (d, self.cum[idx] + f * seg);
            }
        }
        best
    }

    /// Even-odd interior test via crossing counting on the polyline.
    fn contains(&self, p: (f64, f64)) -> bool {
        let n = self.verts.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.verts[i];
            let (xj, yj) = self.verts[j];
            if (yi > p.1) != (yj > p.1) {
                let x_cross = xj + (p.1 - yj) / (yi - yj) * (xi - xj);
                if p.0 < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Maps arc length to (vertex index, fractional position on segment).
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.rem_euclid(self.length);
        // Uniform spacing makes the index a direct computation; guard the
        // boundaries against floating-point drift.
        let n = self.verts.len();
        let approx = (s / self.length * n as f64) as usize;
        let mut i = approx.min(n - 1);
        while i > 0 && self.cum[i] > s {
            i -= 1;
        }
        while i + 1 < n && self.cum[i + 1] < s {
            i += 1;
        }
        let seg = self.cum[i + 1] - self.cum[i];
        let f = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        (i, f)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Distance from point `p` to segment `ab`, plus the projection fraction.
fn point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let f = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + abx * f, a.1 + aby * f);
    (dist(p, (qx, qy)), f)
}
