//! Audit toolkit for site-specific batch effects in patch feature embeddings.
//!
//! The crate is organised around [`embstore::EmbeddingTable`], an immutable
//! feature matrix with per-row patch metadata. The remaining modules operate
//! on tables:
//!
//! * [`splitter`] draws per-site subsamples, patient-level holdout splits and
//!   the slide-level biased train/validation/test splits.
//! * [`probes`] fits nearest-centroid, k-nearest-neighbour and linear-probe
//!   classifiers and runs the site-prediction and biased-task experiments.
//! * [`geometry`] covers distance profiles, PCA, reduced-feature site
//!   prediction and per-component separability.
//! * [`synthgen`] produces tables with planted site, class and slide
//!   signatures for verifying all of the above.

pub mod embstore;
pub mod error;
pub mod geometry;
pub mod probes;
pub mod seed;
pub mod splitter;
pub mod synthgen;

mod linalg;

pub use embstore::{EmbeddingTable, LabelCodebook, NormVariant, PatchMeta};
pub use error::{Error, Result};
