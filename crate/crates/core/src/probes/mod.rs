//! Classifier probes on frozen embeddings and the experiment drivers that
//! use them.

mod experiments;
mod knn;
mod linear;
mod ncc;
mod report;

pub use experiments::{
    prepare_site_split, run_bias_experiment, run_site_prediction, BiasConfig, BiasOutcome,
    SitePredictionConfig, SitePredictionResult, SiteSplit,
};
pub use knn::{knn_predict, knn_predict_batch, DEFAULT_K};
pub use linear::{
    cross_entropy_grad, lp_predict, lp_train, softmax, LinearProbe, LpConfig, LpEpoch,
};
pub use ncc::NccModel;
pub use report::{Classifier, ProbeReport};

use crate::embstore::EmbeddingTable;
use crate::error::{Error, Result};

/// Row-major `f64` samples with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Vec<f64>,
    pub y: Vec<u32>,
    pub dim: usize,
}

impl Samples {
    pub fn new(x: Vec<f64>, y: Vec<u32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("sample dimension must be positive".into()));
        }
        if x.len() != y.len() * dim {
            return Err(Error::Shape {
                expected: y.len() * dim,
                got: x.len(),
            });
        }
        Ok(Self { x, y, dim })
    }

    /// Rows `indices` of `table` with the matching entries of `labels`.
    pub fn from_table(table: &EmbeddingTable, indices: &[usize], labels: &[u32]) -> Self {
        Self {
            x: table.gather_f64(indices),
            y: indices.iter().map(|&i| labels[i]).collect(),
            dim: table.dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim)
    }
}
