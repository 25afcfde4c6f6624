//! Rank-based AUROC and its orientation-free one-vs-one macro average.

use crate::error::{Error, Result};

/// AUROC of `scores` with `positive[i]` marking positives, via the
/// Mann-Whitney rank sum with mid-ranks for ties.
///
/// Returns `None` when either class is empty.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Macro one-vs-one AUROC of a one-dimensional score whose orientation is
/// unknown.
///
/// For each unordered pair of labels present, the AUROC on the rows of that
/// pair is folded to `max(a, 1 - a)`; the result is the unweighted mean over
/// pairs and therefore lies in `[0.5, 1]`.
pub fn ovo_auroc_oriented(scores: &[f64], labels: &[u32]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Task(format!(
            "one-vs-one AUROC needs two classes, found {}",
            classes.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    let mut pair_scores = Vec::new();
    let mut pair_pos = Vec::new();
    for (ai, &a) in classes.iter().enumerate() {
        for &b in &classes[ai + 1..] {
            pair_scores.clear();
            pair_pos.clear();
            for (&s, &l) in scores.iter().zip(labels) {
                if l == a || l == b {
                    pair_scores.push(s);
                    pair_pos.push(l == b);
                }
            }
            let auc = auroc(&pair_scores, &pair_pos).expect("both classes present");
            total += auc.max(1.0 - auc);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
