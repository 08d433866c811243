//! Multi-image super-resolution for 128×128 → 384×384 satellite tiles.
//!
//! * [`raster`]: images, quality masks, clearance and 16-bit PNG I/O.
//! * [`resample`]: bicubic ×3 upscaling and 3×3 block-mean downscaling.
//! * [`metric`]: bias-corrected clear-pixel PSNR with a ±3 px registration
//!   search (cPSNR) and the bicubic baseline score.
//! * [`assembly`]: clearance-driven member admission, HR target selection,
//!   input selection and the tile-grouped train/test split.
//! * [`layout`]: the on-disk dataset layout and its JSON manifest.
//! * [`simgen`]: a seeded acquisition simulator with known shifts, biases,
//!   noise, clouds and scene drift.
//! * [`neuralnet`]: a small convolutional network fusing the five clearest LR
//!   frames, trained with Adam.

pub mod assembly;
pub mod layout;
pub mod member;
pub mod metric;
pub mod neuralnet;
pub mod raster;
pub mod resample;
pub mod seed;
pub mod simgen;

pub use member::{AdmissionRules, Band, DataMember, LrFrame};
pub use raster::{Clearance, Image, Plane, QualityMask, Threshold};

/// Side length of a low-resolution tile.
pub const LR_SIZE: usize = 128;
/// Side length of a high-resolution tile.
pub const HR_SIZE: usize = 384;
/// Resolution ratio between the two grids.
pub const SCALE: usize = 3;
