//! Feature-space structure: distance profiles, PCA, reduced-feature site
//! prediction and per-component separability.

mod auroc;
mod distances;
mod pca;

pub use auroc::{auroc, ovo_auroc_oriented};
pub use distances::{
    distance_profiles, pick_reference, DistanceConfig, DistanceEntry, DistanceGroup,
    DistanceProfile,
};
pub use pca::{fit_pca, fit_pca_rows, project, PcaModel};

use serde::{Deserialize, Serialize};

use crate::embstore::EmbeddingTable;
use crate::error::{Error, Result};
use crate::probes::{knn_predict_batch, Samples};
use crate::splitter::GroupedSplit;

pub const DEFAULT_ELLS: [usize; 8] = [1, 2, 3, 5, 10, 20, 30, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedCurve {
    /// KNN accuracy on the full features.
    pub baseline: f64,
    /// `(ℓ, accuracy)` for every requested ℓ ≤ D.
    pub points: Vec<(usize, f64)>,
    /// Requested ℓ values above the feature dimension.
    pub skipped: Vec<usize>,
}

fn knn_accuracy(
    rows: &[f64],
    dim: usize,
    labels: &[u32],
    split: &GroupedSplit,
    k: usize,
) -> Result<f64> {
    let gather = |idx: &[usize]| -> Result<Samples> {
        let mut x = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            x.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
        }
        Samples::new(x, idx.iter().map(|&i| labels[i]).collect(), dim)
    };
    let train = gather(&split.train_idx)?;
    let test = gather(&split.test_idx)?;
    if test.is_empty() {
        return Err(Error::Task("empty test set".into()));
    }
    let pred = knn_predict_batch(&train, &test, k)?;
    let correct = pred.iter().zip(&test.y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Site accuracy of KNN on features projected onto the first ℓ principal
/// components of the whole table, for each ℓ, plus the unreduced baseline.
pub fn reduced_knn_curve(
    table: &EmbeddingTable,
    split: &GroupedSplit,
    ells: &[usize],
    k: usize,
) -> Result<ReducedCurve> {
    split.check(table)?;
    let labels = table.site_labels();
    let model = fit_pca(table)?;
    let baseline = knn_accuracy(&table.to_f64(), table.dim(), &labels, split, k)?;
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &ell in ells {
        if ell > table.dim() {
            skipped.push(ell);
            continue;
        }
        let reduced = project(table, &model, ell)?;
        points.push((ell, knn_accuracy(&reduced, ell, &labels, split, k)?));
    }
    Ok(ReducedCurve {
        baseline,
        points,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSeparability {
    pub component: usize,
    pub evr: f64,
    pub ovo_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityProfile {
    pub records: Vec<ComponentSeparability>,
    pub n_components: usize,
}

/// Orientation-free one-vs-one site AUROC of the projection onto each of the
/// first `n_components` principal components. Components without variance
/// are left out.
pub fn separability_profile(
    table: &EmbeddingTable,
    model: &PcaModel,
    n_components: usize,
) -> Result<SeparabilityProfile> {
    if n_components == 0 || n_components > model.dim() {
        return Err(Error::Parameter(format!(
            "n_components {n_components} outside [1, {}]",
            model.dim()
        )));
    }
    if table.dim() != model.dim() {
        return Err(Error::Shape {
            expected: model.dim(),
            got: table.dim(),
        });
    }
    let labels = table.site_labels();
    let n = n_components.min(model.n_meaningful);
    let rows: Vec<Vec<f64>> = (0..table.len())
        .map(|i| {
            table
                .row(i)
                .iter()
                .zip(&model.mean)
                .map(|(&v, m)| f64::from(v) - m)
                .collect()
        })
        .collect();
    let mut records = Vec::with_capacity(n);
    for j in 0..n {
        let c = model.component(j);
        let scores: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(c).map(|(a, b)| a * b).sum())
            .collect();
        records.push(ComponentSeparability {
            component: j,
            evr: model.evr[j],
            ovo_auroc: ovo_auroc_oriented(&scores, &labels)?,
        });
    }
    Ok(SeparabilityProfile {
        records,
        n_components: n,
    })
}
