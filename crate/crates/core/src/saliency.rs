//! The deployed translation pipeline: raw tactile image to contact depth
//! to edge saliency, plus the seam through which controllers receive their
//! observation.
//!
//! Saliency is never learned directly from tactile images; the only path
//! is the two-stage composition implemented by [`saliency_pipeline_apply`].

use std::path::Path;

use crate::neural::{batch_to_images, images_to_batch, load_unet, UNet};
use crate::simworld::RES;
use crate::{DepthMap, Error, GrayImage, Result, SaliencyMap, TactileImage};

/// The feature class the pipeline is trained for.
pub const FEATURE_TAG: &str = "edge";

/// Depth translation followed by saliency translation, pinned to the
/// sensor's native 64x64 resolution.
///
/// Both stages are pure functions of their parameters and input; the
/// mutable receivers below only touch internal activation caches.
#[derive(Clone)]
pub struct SaliencyPipeline {
    pub condepnet: UNet<f32>,
    pub tacsalnet: UNet<f32>,
}

impl SaliencyPipeline {
    pub fn new(condepnet: UNet<f32>, tacsalnet: UNet<f32>) -> Self {
        SaliencyPipeline { condepnet, tacsalnet }
    }

    /// Assembles the pipeline from the two stage checkpoints.
    pub fn load(condepnet_ckpt: &Path, tacsalnet_ckpt: &Path) -> Result<Self> {
        Ok(SaliencyPipeline {
            condepnet: load_unet(condepnet_ckpt)?,
            tacsalnet: load_unet(tacsalnet_ckpt)?,
        })
    }

    /// Feature class tag; fixed, present so future feature types can reuse
    /// the machinery.
    pub fn feature(&self) -> &'static str {
        FEATURE_TAG
    }

    /// End-to-end saliency prediction; see [`saliency_pipeline_apply`].
    pub fn apply(&mut self, img: &TactileImage) -> Result<SaliencyMap> {
        saliency_pipeline_apply(self, img)
    }
}

fn forward_image(net: &mut UNet<f32>, img: &GrayImage) -> Result<GrayImage> {
    if img.width() != RES || img.height() != RES {
        return Err(Error::ShapeMismatch {
            expected: format!("{RES}x{RES}"),
            got: format!("{}x{}", img.width(), img.height()),
        });
    }
    let x = images_to_batch(&[img])?;
    let y = net.forward(&x);
    Ok(batch_to_images(&y)?.remove(0))
}

/// Estimates the contact depth map behind a raw marker image.
pub fn condepnet_apply(net: &mut UNet<f32>, img: &TactileImage) -> Result<DepthMap> {
    forward_image(net, img)
}

/// Estimates the edge saliency of a contact depth map: target support is
/// preserved, distractor support suppressed.
pub fn tacsalnet_apply(net: &mut UNet<f32>, depth: &DepthMap) -> Result<SaliencyMap> {
    forward_image(net, depth)
}

/// The full deployed map from tactile image to saliency: exactly the
/// saliency translation applied to the depth translation.
pub fn saliency_pipeline_apply(p: &mut SaliencyPipeline, img: &TactileImage) -> Result<SaliencyMap> {
    let depth = condepnet_apply(&mut p.condepnet, img)?;
    tacsalnet_apply(&mut p.tacsalnet, &depth)
}

/// What controllers observe: the saliency map itself, passed through
/// unchanged. Kept as a named seam so a masking variant (see
/// [`masked_observation`]) can be swapped in without touching controllers.
pub fn salient_observation(s: &SaliencyMap) -> DepthMap {
    s.clone()
}

/// The alternative observation: the depth map gated by thresholded
/// saliency. Off by default; controllers consume [`salient_observation`].
pub fn masked_observation(depth: &DepthMap, s: &SaliencyMap, threshold: f32) -> Result<DepthMap> {
    if !depth.same_shape(s) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", depth.width(), depth.height()),
            got: format!("{}x{}", s.width(), s.height()),
        });
    }
    Ok(GrayImage::from_fn(depth.width(), depth.height(), |x, y| {
        if s.get(x, y) >= threshold {
            depth.get(x, y)
        } else {
            0.0
        }
    }))
}

/// Fraction of pixels where predicted saliency rises above `level` without
/// supporting contact in the composite — hallucinated contact.
pub fn hallucination_fraction(
    saliency: &SaliencyMap,
    composite: &DepthMap,
    level: f32,
) -> Result<f64> {
    if !saliency.same_shape(composite) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", composite.width(), composite.height()),
            got: format!("{}x{}", saliency.width(), saliency.height()),
        });
    }
    let total = (saliency.width() * saliency.height()) as f64;
    let extra = saliency
        .pixels()
        .iter()
        .zip(composite.pixels())
        .filter(|&(&s, &c)| s > level && c <= level)
        .count();
    Ok(extra as f64 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{save_network, snapshot_params, UNet};

    fn bits(img: &GrayImage) -> Vec<u32> {
        img.pixels().iter().map(|v| v.to_bits()).collect()
    }

    fn test_image() -> TactileImage {
        GrayImage::from_fn(RES, RES, |x, y| ((x * 31 + y * 17) % 97) as f32 / 96.0)
    }

    #[test]
    fn pipeline_matches_its_stages_bit_exactly() {
        let mut p = SaliencyPipeline::new(UNet::new(1), UNet::new(2));
        let img = test_image();
        let end_to_end = p.apply(&img).unwrap();
        let depth = condepnet_apply(&mut p.condepnet, &img).unwrap();
        let staged = tacsalnet_apply(&mut p.tacsalnet, &depth).unwrap();
        assert_eq!(bits(&end_to_end), bits(&staged));
    }

    #[test]
    fn applies_are_deterministic_and_bounded() {
        let mut net = UNet::new(5);
        let img = test_image();
        let a = condepnet_apply(&mut net, &img).unwrap();
        let b = condepnet_apply(&mut net, &img).unwrap();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!((a.width(), a.height()), (RES, RES));
        assert!(a.min_value() >= 0.0 && a.max_value() <= 1.0);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let mut net = UNet::new(5);
        let small = GrayImage::zeros(32, 32);
        assert!(matches!(
            condepnet_apply(&mut net, &small),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn salient_observation_is_identity() {
        let s = test_image();
        let o = salient_observation(&s);
        assert_eq!(bits(&o), bits(&s));
        assert!(o.same_shape(&s));
    }

    #[test]
    fn masked_observation_gates_by_threshold() {
        let depth = GrayImage::from_fn(RES, RES, |x, _| if x < 32 { 0.8 } else { 0.4 });
        let sal = GrayImage::from_fn(RES, RES, |x, _| if x < 16 { 0.9 } else { 0.1 });
        let masked = masked_observation(&depth, &sal, 0.5).unwrap();
        assert_eq!(masked.get(0, 0), 0.8);
        assert_eq!(masked.get(40, 0), 0.0);
        let mismatched = GrayImage::zeros(32, 32);
        assert!(masked_observation(&depth, &mismatched, 0.5).is_err());
    }

    #[test]
    fn hallucination_fraction_counts_unsupported_pixels() {
        // Saliency lights three pixels, one of which sits on real contact.
        let mut composite = GrayImage::zeros(RES, RES);
        composite.set(10, 10, 0.7);
        let mut sal = GrayImage::zeros(RES, RES);
        sal.set(10, 10, 0.9);
        sal.set(20, 20, 0.9);
        sal.set(30, 30, 0.2);
        let frac = hallucination_fraction(&sal, &composite, 0.1).unwrap();
        let expected = 2.0 / (RES * RES) as f64;
        assert!((frac - expected).abs() < 1e-12);

        let clean = hallucination_fraction(&composite, &composite, 0.1).unwrap();
        assert_eq!(clean, 0.0);
    }

    #[test]
    fn pipeline_loads_from_stage_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut reference = SaliencyPipeline::new(UNet::new(7), UNet::new(8));
        let cd = dir.path().join("condepnet.ckpt");
        let ts = dir.path().join("tacsalnet.ckpt");
        save_network(&cd, reference.condepnet.named_params()).unwrap();
        save_network(&ts, reference.tacsalnet.named_params()).unwrap();

        let mut loaded = SaliencyPipeline::load(&cd, &ts).unwrap();
        let img = test_image();
        assert_eq!(bits(&loaded.apply(&img).unwrap()), bits(&reference.apply(&img).unwrap()));

        // Snapshots survive the round trip bit-exactly as well.
        let snap = snapshot_params(reference.condepnet.named_params());
        let back = snapshot_params(loaded.condepnet.named_params());
        for ((n1, t1), (n2, t2)) in snap.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn tacngen_sampling_is_seeded_and_bounded() {
        let mut vae = crate::neural::Vae::new(11);
        let a = crate::neural::sample_tacngen(&mut vae, 3, 1.0).unwrap();
        let b = crate::neural::sample_tacngen(&mut vae, 3, 1.0).unwrap();
        let c = crate::neural::sample_tacngen(&mut vae, 4, 1.0).unwrap();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        assert!(a.min_value() >= 0.0 && a.max_value() <= 1.0);
        assert_eq!((a.width(), a.height()), (RES, RES));

        let modal = crate::neural::decode_tacngen(&mut vae, &[0.0; 8]).unwrap();
        assert!(modal.min_value() >= 0.0 && modal.max_value() <= 1.0);
        assert!(crate::neural::decode_tacngen(&mut vae, &[0.0; 3]).is_err());
        assert!(crate::neural::decode_tacngen(&mut vae, &[f64::NAN; 8]).is_err());
        assert!(crate::neural::sample_tacngen(&mut vae, 0, 0.0).is_err());
    }
}
