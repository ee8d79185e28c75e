//! Volumetric image-registration toolkit for paired CT/CBCT thoracic scans.
//!
//! The crate covers the full evaluation loop of a registration challenge:
//!
//! - [`volume`] and [`nifti`]: the image data model, NIfTI-1 I/O and the
//!   preprocessing steps (resampling, crop/pad, intensity clamping).
//! - [`field`]: displacement-field algebra (warping, composition, Jacobians,
//!   scaling-and-squaring exponentiation, inverse-consistent two-step
//!   composition, band-limited Fourier fields, thin-plate-spline densification).
//! - [`features`]: Förstner keypoints and MIND-SSC self-similarity descriptors.
//! - [`register`]: a classical keypoint-driven deformable registrar.
//! - [`metrics`]: TRE, Dice, HD95, SDlogJ and robustness percentiles.
//! - [`ranking`]: Wilcoxon signed-rank significance ranking and leaderboards.
//! - [`phantom`]: a synthetic thoracic phantom with known ground truth.
//!
//! All grids are stored x-fastest (`index = x + nx * (y + ny * z)`), matching
//! the NIfTI on-disk order, and all coordinates are `(x, y, z)` voxel indices.

pub mod error;
pub mod features;
pub mod field;
pub mod filter;
pub mod interp;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod ranking;
pub mod register;
pub mod volume;

pub use error::{Error, Result};
