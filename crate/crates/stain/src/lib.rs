//! Image-side preprocessing for patch datasets.
//!
//! Slides are plain raster images. [`pipeline::run_patch_pipeline`] tiles
//! them into non-overlapping 256×256 patches, drops background using Otsu's
//! threshold on a downsampled thumbnail, drops flat patches by their
//! grayscale standard deviation and optionally writes Reinhard and Macenko
//! normalized copies of every kept patch.

pub mod color;
pub mod error;
pub mod macenko;
pub mod pipeline;
pub mod reinhard;
pub mod synthetic;
pub mod tissue;

pub use error::{Error, Result};
pub use macenko::{macenko_apply, macenko_fit, MacenkoOutcome, MacenkoTarget};
pub use reinhard::{reinhard_apply, reinhard_fit, ReinhardTarget};
pub use tissue::{otsu_threshold, patch_std_filter, tissue_mask, Otsu, StdMode, TissueMask};

/// Side length of pipeline patches in pixels.
pub const PATCH_SIZE: u32 = 256;
