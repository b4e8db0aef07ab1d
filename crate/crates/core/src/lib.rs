//! Tactile saliency pipeline on a synthetic desk-scale sensor world.
//!
//! The crate builds the full chain from simulated optical-tactile sensing to
//! closed-loop edge following:
//!
//! - [`imagery`]: image type, overlay/normalization algebra, augmentation, PGM I/O
//! - [`simworld`]: contact-depth renderer, marker forward model, contours, scenes
//! - [`datagen`]: deterministic dataset builders and the Gaussian-noise baseline
//! - [`neural`]: trainable conv nets (cGAN, VAE, pose regressor) with a
//!   bit-reproducible single-threaded training contract
//! - [`saliency`]: the deployed two-stage translation pipeline
//! - [`metrics`]: saliency metrics (AUC-Judd, SIM, CC, NSS), pose and trajectory error
//! - [`ablation`]: noise-source ablation and corner generalization evaluation
//! - [`control`]: pose-based PID and image-based edge following with optional
//!   saliency filtering

pub mod ablation;
pub mod control;
pub mod datagen;
pub mod error;
pub mod imagery;
pub mod metrics;
pub mod neural;
pub mod saliency;
pub mod seeding;
pub mod simworld;

pub use error::{Error, Result};
pub use imagery::{DepthMap, GrayImage, SaliencyMap, TactileImage};
pub use simworld::{ConeDistractor, ContactPose, Contour, Scene, SensorFrame};
