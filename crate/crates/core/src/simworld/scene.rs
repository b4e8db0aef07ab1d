//! Scene descriptions: a contour plus cone distractors placed around it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{ConeDistractor, Contour};
use crate::error::{Error, Result};
use crate::seeding;

/// A distractor cone placed in the world. The cone's `center_mm` holds
/// world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedCone {
    #[serde(flatten)]
    pub cone: ConeDistractor,
}

/// Ranges the scene generator draws distractor shapes from.
///
/// The defaults keep every cone's flank gradient below the marker-merge
/// bound of the tactile forward model (exponent at most 3, radius at least
/// 2.5 mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorRanges {
    /// Base radius range in mm.
    pub radius_mm: (f64, f64),
    /// Apex press-depth range in mm.
    pub apex_depth_mm: (f64, f64),
    /// Flank steepness range in degrees.
    pub cone_angle_deg: (f64, f64),
}

impl Default for DistractorRanges {
    fn default() -> Self {
        DistractorRanges {
            radius_mm: (2.5, 5.5),
            apex_depth_mm: (2.0, 6.0),
            cone_angle_deg: (30.0, 90.0),
        }
    }
}

impl DistractorRanges {
    fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if ordered(self.radius_mm)
            && ordered(self.apex_depth_mm)
            && ordered(self.cone_angle_deg)
            && self.radius_mm.0 > 0.0
            && self.apex_depth_mm.0 > 0.0
            && self.apex_depth_mm.1 <= super::Z_MAX_MM
            && self.cone_angle_deg.0 > 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("distractor ranges: {self:?}")))
        }
    }
}

/// A world to explore: one contour and the distractors scattered near it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    contour: Contour,
    #[serde(default, rename = "distractor")]
    distractors: Vec<PlacedCone>,
}

impl Scene {
    /// Wraps a contour and an explicit distractor list.
    pub fn new(contour: Contour, distractors: Vec<PlacedCone>) -> Self {
        Scene { contour, distractors }
    }

    /// Generates a scene with `n` distractors placed around the contour.
    ///
    /// Anchor points are spread uniformly along the perimeter (one per
    /// distractor, with jitter); each cone is pushed outward by an offset
    /// drawn uniformly from `clearance` and kept only if its true distance
    /// to the contour lands inside the clearance band, which protects
    /// against nearby branches of the same contour. Deterministic in the
    /// seed.
    pub fn generate(
        contour: Contour,
        n: usize,
        clearance: (f64, f64),
        ranges: &DistractorRanges,
        seed: u64,
    ) -> Result<Self> {
        if !(clearance.0.is_finite() && clearance.1.is_finite() && 0.0 < clearance.0 && clearance.0 <= clearance.1) {
            return Err(Error::InvalidParameter(format!("clearance band {clearance:?}")));
        }
        ranges.validate()?;
        let len = contour.length();
        let mut distractors = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = seeding::item_rng(seed, "scene.distractor", i as u64);
            let radius = rng.gen_range(ranges.radius_mm.0..=ranges.radius_mm.1);
            let apex = rng.gen_range(ranges.apex_depth_mm.0..=ranges.apex_depth_mm.1);
            let angle = rng.gen_range(ranges.cone_angle_deg.0..=ranges.cone_angle_deg.1);
            let mut placed = None;
            for _attempt in 0..64 {
                let t = (i as f64 + rng.gen::<f64>()) / n as f64 * len;
                let offset = rng.gen_range(clearance.0..=clearance.1);
                let p = contour.point_at(t);
                let tan = contour.tangent_at(t);
                // Interior is on the left of the traversal direction, so
                // outward is the right-hand normal.
                let out = (tan.1, -tan.0);
                let c = (p.0 + offset * out.0, p.1 + offset * out.1);
                let sd = contour.sdf(c);
                if sd >= clearance.0 - 1e-9 && sd <= clearance.1 + 1e-9 {
                    placed = Some(ConeDistractor::new(c, radius, apex, angle)?);
                    break;
                }
            }
            match placed {
                Some(cone) => distractors.push(PlacedCone { cone }),
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "no valid placement for distractor {i} within clearance {clearance:?}"
                    )))
                }
            }
        }
        Ok(Scene { contour, distractors })
    }

    pub fn contour(&self) -> &Contour {
        &self.contour
    }

    pub fn distractors(&self) -> &[PlacedCone] {
        &self.distractors
    }

    /// Drops all distractors, keeping the contour.
    pub fn without_distractors(&self) -> Scene {
        Scene { contour: self.contour.clone(), distractors: Vec::new() }
    }

    /// Serializes the scene to TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidParameter(format!("scene serialization: {e}")))
    }

    /// Parses a scene from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("scene file: {e}")))
    }

    /// Writes the scene description file.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Reads a scene description file.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
