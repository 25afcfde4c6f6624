use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

/// Nearest-centroid classifier: one mean feature vector per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NccModel {
    /// C×D, row-major, rows aligned with `class_ids`.
    pub centroids: Vec<f64>,
    /// Ascending class labels.
    pub class_ids: Vec<u32>,
    pub dim: usize,
}

impl NccModel {
    /// Fits one centroid per label present in `train`.
    pub fn fit(train: &Samples) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Task("nearest-centroid fit on empty training set".into()));
        }
        let mut classes: Vec<u32> = train.y.clone();
        classes.sort_unstable();
        classes.dedup();
        Self::fit_classes(train, &classes)
    }

    /// Fits centroids for exactly `classes`; every class needs a training row.
    pub fn fit_classes(train: &Samples, classes: &[u32]) -> Result<Self> {
        let d = train.dim;
        let mut sums: BTreeMap<u32, (Vec<f64>, usize)> =
            classes.iter().map(|&c| (c, (vec![0.0; d], 0))).collect();
        for (row, &label) in train.rows().zip(&train.y) {
            if let Some((sum, n)) = sums.get_mut(&label) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                *n += 1;
            }
        }
        let mut centroids = Vec::with_capacity(sums.len() * d);
        let mut class_ids = Vec::with_capacity(sums.len());
        for (c, (sum, n)) in sums {
            if n == 0 {
                return Err(Error::Task(format!("class {c} has no training rows")));
            }
            centroids.extend(sum.into_iter().map(|s| s / n as f64));
            class_ids.push(c);
        }
        Ok(Self {
            centroids,
            class_ids,
            dim: d,
        })
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    /// Label of the Euclidean-nearest centroid; the lowest label wins ties.
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut best = (f64::INFINITY, 0usize);
        for k in 0..self.class_ids.len() {
            let d = sq_dist(x, self.centroid(k));
            if d < best.0 {
                best = (d, k);
            }
        }
        Ok(self.class_ids[best.1])
    }

    pub fn predict_batch(&self, queries: &Samples) -> Result<Vec<u32>> {
        queries.rows().map(|r| self.predict(r)).collect()
    }
}
