//! Exact brute-force k-nearest-neighbour voting.

use rayon::prelude::*;

use super::Samples;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

pub const DEFAULT_K: usize = 5;

/// The `k` nearest training rows to `x` as `(squared distance, row)`,
/// ordered by distance then row index.
fn nearest(train: &Samples, x: &[f64], k: usize) -> Vec<(f64, usize)> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, row) in train.rows().enumerate() {
        let d = sq_dist(x, row);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best
}

fn vote(train: &Samples, neighbours: &[(f64, usize)]) -> u32 {
    let mut counts: Vec<(u32, usize, f64)> = Vec::new(); // (label, votes, nearest distance)
    for &(d, i) in neighbours {
        let label = train.y[i];
        match counts.iter_mut().find(|c| c.0 == label) {
            Some(c) => c.1 += 1,
            None => counts.push((label, 1, d)),
        }
    }
    counts
        .into_iter()
        .min_by(|a, b| {
            b.1.cmp(&a.1)
                .then(a.2.total_cmp(&b.2))
                .then(a.0.cmp(&b.0))
        })
        .map(|c| c.0)
        .expect("k >= 1 neighbours")
}

fn check(train: &Samples, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if train.len() < k {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds training set size {}",
            train.len()
        )));
    }
    Ok(())
}

/// Majority vote among the `k` Euclidean-nearest training rows.
///
/// A tied vote goes to the tied class whose nearest member is closest to `x`,
/// then to the lowest label.
pub fn knn_predict(train: &Samples, x: &[f64], k: usize) -> Result<u32> {
    check(train, k)?;
    if x.len() != train.dim {
        return Err(Error::Shape {
            expected: train.dim,
            got: x.len(),
        });
    }
    Ok(vote(train, &nearest(train, x, k)))
}

/// [`knn_predict`] for every row of `queries`, in parallel over queries.
pub fn knn_predict_batch(train: &Samples, queries: &Samples, k: usize) -> Result<Vec<u32>> {
    check(train, k)?;
    if queries.dim != train.dim {
        return Err(Error::Shape {
            expected: train.dim,
            got: queries.dim,
        });
    }
    Ok((0..queries.len())
        .into_par_iter()
        .map(|q| vote(train, &nearest(train, queries.row(q), k)))
        .collect())
}
