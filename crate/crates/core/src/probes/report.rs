use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Ncc,
    Knn,
    Lp,
}

impl Classifier {
    pub const ALL: [Classifier; 3] = [Classifier::Ncc, Classifier::Knn, Classifier::Lp];

    pub fn as_str(self) -> &'static str {
        match self {
            Classifier::Ncc => "ncc",
            Classifier::Knn => "knn",
            Classifier::Lp => "lp",
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Patch-level (micro) accuracy with its confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classifier: Classifier,
    pub seed: u64,
    pub n_test: usize,
    pub accuracy: f64,
    /// Row/column labels of `confusion_matrix`, ascending.
    pub labels: Vec<u32>,
    /// `confusion_matrix[i][j]`: true `labels[i]` predicted as `labels[j]`.
    pub confusion_matrix: Vec<Vec<u64>>,
    /// Recall per entry of `labels`; `None` when the label never occurs in
    /// the test set.
    pub per_class_recall: Vec<Option<f64>>,
}

impl ProbeReport {
    pub fn from_predictions(classifier: Classifier, seed: u64, truth: &[u32], pred: &[u32]) -> Self {
        assert_eq!(truth.len(), pred.len());
        let mut labels: Vec<u32> = truth.iter().chain(pred).copied().collect();
        labels.sort_unstable();
        labels.dedup();
        let pos = |l: u32| labels.binary_search(&l).unwrap();
        let mut cm = vec![vec![0u64; labels.len()]; labels.len()];
        for (&t, &p) in truth.iter().zip(pred) {
            cm[pos(t)][pos(p)] += 1;
        }
        let correct: u64 = (0..labels.len()).map(|i| cm[i][i]).sum();
        let n = truth.len();
        let per_class_recall = cm
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect();
        Self {
            classifier,
            seed,
            n_test: n,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            labels,
            confusion_matrix: cm,
            per_class_recall,
        }
    }

    /// Confusion matrix as CSV with a `true\pred` header row.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.labels {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion_matrix) {
            out.push_str(&l.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
