//! Reference implementations for tests.
//!
//! Everything here is deliberately naive and shares no code with the
//! crates under test: no linear-algebra library, no sorting tricks.

/// Sample covariance (divisor N − 1) of row-major `data` with `d` columns.
pub fn covariance(data: &[f64], d: usize) -> Vec<Vec<f64>> {
    let n = data.len() / d;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += data[i * d + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut c = vec![vec![0.0; d]; d];
    for i in 0..n {
        for a in 0..d {
            let xa = data[i * d + a] - mean[a];
            for b in 0..d {
                c[a][b] += xa * (data[i * d + b] - mean[b]);
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching unit eigenvectors.
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q))).map(|(p, q)| a[p][q] * a[p][q]).sum();
        let scale: f64 = (0..n).map(|p| a[p][p] * a[p][p]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap());
    let vals = idx.iter().map(|&i| a[i][i]).collect();
    let vecs = idx.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Mann–Whitney AUROC by counting every (positive, negative) pair; ties
/// count one half.
pub fn auroc_pairs(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Macro average over class pairs of max(AUROC, 1 − AUROC).
pub fn ovo_auroc_pairs(scores: &[f64], labels: &[u32]) -> f64 {
    let mut classes: Vec<u32> = Vec::new();
    for &l in labels {
        if !classes.contains(&l) {
            classes.push(l);
        }
    }
    classes.sort_unstable();
    let mut total = 0.0;
    let mut count = 0;
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            let (mut s, mut p) = (Vec::new(), Vec::new());
            for (i, &l) in labels.iter().enumerate() {
                if l == classes[a] || l == classes[b] {
                    s.push(scores[i]);
                    p.push(l == classes[b]);
                }
            }
            let v = auroc_pairs(&s, &p).unwrap();
            total += v.max(1.0 - v);
            count += 1;
        }
    }
    total / count as f64
}

/// Otsu by exhaustive scan over every threshold with class means computed
/// from scratch; the smallest t within rounding of the best wins.
pub fn otsu_brute(h: &[u64; 256]) -> u8 {
    let total: u64 = h.iter().sum();
    let var = |t: usize| -> Option<f64> {
        let w0: u64 = h[..t].iter().sum();
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            return None;
        }
        let m0 = (0..t).map(|i| i as f64 * h[i] as f64).sum::<f64>() / w0 as f64;
        let m1 = (t..256).map(|i| i as f64 * h[i] as f64).sum::<f64>() / w1 as f64;
        Some(w0 as f64 * w1 as f64 * (m0 - m1).powi(2) / (total as f64 * total as f64))
    };
    let v: Vec<Option<f64>> = (0..256).map(var).collect();
    let best = v.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..256).find(|&t| v[t].is_some_and(|x| x >= best * (1.0 - 1e-12))).unwrap() as u8
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest class mean; lowest label on ties.
pub fn ncc_brute(train: &[Vec<f64>], labels: &[u32], q: &[f64]) -> u32 {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut best = (f64::INFINITY, 0);
    for &c in &classes {
        let members: Vec<&Vec<f64>> = train.iter().zip(labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
        let mean: Vec<f64> = (0..q.len()).map(|j| members.iter().map(|x| x[j]).sum::<f64>() / members.len() as f64).collect();
        let d = sq_dist(&mean, q);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// k-nearest-neighbour majority vote by full sort. Ties in the vote go to
/// the class with the closest member, then to the lower label.
pub fn knn_brute(train: &[Vec<f64>], labels: &[u32], q: &[f64], k: usize) -> u32 {
    let mut order: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, x)| (sq_dist(x, q), i)).collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let top = &order[..k];
    let mut votes: Vec<(u32, usize, f64)> = Vec::new(); // (label, count, closest distance)
    for &(d, i) in top {
        match votes.iter_mut().find(|v| v.0 == labels[i]) {
            Some(v) => v.1 += 1,
            None => votes.push((labels[i], 1, d)),
        }
    }
    votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.partial_cmp(&b.2).unwrap()).then(a.0.cmp(&b.0)));
    votes[0].0
}

/// Central finite difference of `f` with respect to each coordinate of `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Mean softmax cross-entropy of a linear model written out term by term.
/// `w` is C×D row-major.
pub fn cross_entropy(w: &[f64], b: &[f64], x: &[Vec<f64>], y: &[u32]) -> f64 {
    let c = b.len();
    let d = w.len() / c;
    let mut total = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = (0..c).map(|k| b[k] + (0..d).map(|j| w[k * d + j] * xi[j]).sum::<f64>()).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[yi as usize];
    }
    total / x.len() as f64
}
