use nalgebra::DMatrix;

use crate::embstore::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::orthonormalize_against;

/// Principal axes of a table's features.
///
/// `components` is D×D with one unit-norm component per column, ordered by
/// descending eigenvalue. Each column is signed so that its largest-magnitude
/// entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: DMatrix<f64>,
    /// Covariance eigenvalues (divisor N − 1), descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues normalised to sum to one.
    pub evr: Vec<f64>,
    /// Components carrying variance: at most N − 1. Trailing components have
    /// eigenvalue zero.
    pub n_meaningful: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Column `j` of the component matrix.
    pub fn component(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.components.as_slice()[j * d..(j + 1) * d]
    }

    /// Coordinates of `x` on the first `ell` components.
    pub fn project_row(&self, x: &[f64], ell: usize) -> Vec<f64> {
        (0..ell)
            .map(|j| {
                self.component(j)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect()
    }

    /// Inverse of [`PcaModel::project_row`] for `z` of any length ≤ D.
    pub fn reconstruct_row(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (j, &zj) in z.iter().enumerate() {
            x.iter_mut()
                .zip(self.component(j))
                .for_each(|(xi, c)| *xi += zj * c);
        }
        x
    }
}

/// Fits PCA from the singular value decomposition of the mean-centred data.
pub fn fit_pca(table: &EmbeddingTable) -> Result<PcaModel> {
    fit_pca_rows(&table.to_f64(), table.dim())
}

/// [`fit_pca`] on row-major `f64` data of width `dim`.
pub fn fit_pca_rows(data: &[f64], dim: usize) -> Result<PcaModel> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Shape {
            expected: dim,
            got: data.len(),
        });
    }
    let n = data.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| data[i * dim + j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let n_meaningful = (n - 1).min(dim);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (rank, &k) in order.iter().enumerate() {
        let v: Vec<f64> = v_t.row(k).iter().copied().collect();
        let Some(v) = orthonormalize_against(v, &vectors) else {
            continue;
        };
        vectors.push(v);
        let s = svd.singular_values[k];
        eigenvalues.push(if rank < n_meaningful { s * s / (n - 1) as f64 } else { 0.0 });
    }
    // Complete the basis when N < D.
    let mut e = 0;
    while vectors.len() < dim {
        let mut unit = vec![0.0; dim];
        unit[e] = 1.0;
        e += 1;
        if let Some(v) = orthonormalize_against(unit, &vectors) {
            vectors.push(v);
            eigenvalues.push(0.0);
        }
    }

    for v in vectors.iter_mut() {
        let lead = v
            .iter()
            .copied()
            .reduce(|a, b| if b.abs() > a.abs() { b } else { a })
            .unwrap();
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all rows are identical; no variance to explain".into()));
    }
    let evr = eigenvalues.iter().map(|l| l / total).collect();
    let components = DMatrix::from_fn(dim, dim, |i, j| vectors[j][i]);
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        evr,
        n_meaningful,
    })
}

/// Projects every row of `table` onto the first `ell` components; returns
/// N×ℓ row-major coordinates.
pub fn project(table: &EmbeddingTable, model: &PcaModel, ell: usize) -> Result<Vec<f64>> {
    if table.dim() != model.dim() {
        return Err(Error::Shape {
            expected: model.dim(),
            got: table.dim(),
        });
    }
    if ell == 0 || ell > model.dim() {
        return Err(Error::Parameter(format!(
            "number of components {ell} outside [1, {}]",
            model.dim()
        )));
    }
    let mut out = Vec::with_capacity(table.len() * ell);
    for i in 0..table.len() {
        out.extend(model.project_row(&table.row_f64(i), ell));
    }
    Ok(out)
}
