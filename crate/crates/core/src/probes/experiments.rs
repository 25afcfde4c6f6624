//! Source-site prediction and the biased tumour-vs-normal experiment.

use serde::{Deserialize, Serialize};

use super::knn::knn_predict_batch;
use super::linear::{lp_predict, lp_train, LpConfig};
use super::ncc::NccModel;
use super::report::{Classifier, ProbeReport};
use super::Samples;
use crate::embstore::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::mean_std;
use crate::seed;
use crate::splitter::{build_bias_splits, site_stratified_patient_split, subsample_per_site, BiasSpec, GroupedSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SitePredictionConfig {
    pub budget_per_site: usize,
    pub fractions: [f64; 3],
    pub k: usize,
    pub lp: LpConfig,
}

impl Default for SitePredictionConfig {
    fn default() -> Self {
        Self {
            budget_per_site: 50_000,
            fractions: [0.6, 0.1, 0.3],
            k: super::DEFAULT_K,
            lp: LpConfig::default(),
        }
    }
}

/// Subsampled table with its patient-level split.
#[derive(Debug, Clone)]
pub struct SiteSplit {
    pub table: EmbeddingTable,
    pub split: GroupedSplit,
    pub warnings: Vec<String>,
}

/// Per-site subsampling followed by the patient-level split, stratified by
/// site; shared by the site-prediction and reduced-feature experiments.
pub fn prepare_site_split(
    table: &EmbeddingTable,
    cfg: &SitePredictionConfig,
    seed: u64,
) -> Result<SiteSplit> {
    let sub = subsample_per_site(table, cfg.budget_per_site, seed::derive(seed, "site/subsample"))?;
    let sub_table = table.select(&sub.indices)?;
    let [a, b, c] = cfg.fractions;
    let split = site_stratified_patient_split(&sub_table, (a, b, c), seed::derive(seed, "site/split"))?;
    Ok(SiteSplit {
        table: sub_table,
        split,
        warnings: sub.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePredictionResult {
    pub n_rows: usize,
    pub n_sites: usize,
    /// (train, val, test) row counts.
    pub split_sizes: (usize, usize, usize),
    pub warnings: Vec<String>,
    /// One report per classifier, in NCC, KNN, LP order.
    pub reports: Vec<ProbeReport>,
}

impl SitePredictionResult {
    pub fn report(&self, c: Classifier) -> &ProbeReport {
        self.reports
            .iter()
            .find(|r| r.classifier == c)
            .expect("all classifiers reported")
    }

    /// Accuracy of a classifier that always predicts one site.
    pub fn chance(&self) -> f64 {
        1.0 / self.n_sites as f64
    }
}

/// Predicts the source site of every test patch with NCC, KNN and LP.
pub fn run_site_prediction(
    table: &EmbeddingTable,
    cfg: &SitePredictionConfig,
    seed: u64,
) -> Result<SitePredictionResult> {
    let prepared = prepare_site_split(table, cfg, seed)?;
    let t = &prepared.table;
    let labels = t.site_labels();
    let mut sites = labels.clone();
    sites.sort_unstable();
    sites.dedup();
    if sites.len() < 2 {
        return Err(Error::Task(format!(
            "site prediction needs at least two site labels, found {}",
            sites.len()
        )));
    }
    let split = &prepared.split;
    let train = Samples::from_table(t, &split.train_idx, &labels);
    let val = Samples::from_table(t, &split.val_idx, &labels);
    let test = Samples::from_table(t, &split.test_idx, &labels);

    let ncc = NccModel::fit(&train)?;
    let ncc_pred = ncc.predict_batch(&test)?;
    let knn_pred = knn_predict_batch(&train, &test, cfg.k)?;
    let lp_seed = seed::derive(seed, "site/lp");
    let probe = lp_train(&train, &val, &cfg.lp, lp_seed)?;
    let lp_pred: Vec<u32> = test
        .rows()
        .map(|r| lp_predict(&probe, r))
        .collect::<Result<_>>()?;

    let reports = vec![
        ProbeReport::from_predictions(Classifier::Ncc, seed, &test.y, &ncc_pred),
        ProbeReport::from_predictions(Classifier::Knn, seed, &test.y, &knn_pred),
        ProbeReport::from_predictions(Classifier::Lp, lp_seed, &test.y, &lp_pred),
    ];
    Ok(SitePredictionResult {
        n_rows: t.len(),
        n_sites: sites.len(),
        split_sizes: split.sizes(),
        warnings: prepared.warnings,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub repetitions: usize,
    pub lp: LpConfig,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            repetitions: 5,
            lp: LpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasOutcome {
    pub spec: BiasSpec,
    pub split_sizes: (usize, usize, usize),
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over repetitions.
    pub std: f64,
}

/// Trains a tumour-vs-normal probe `repetitions` times on each biased split
/// and evaluates it on the shared test set.
pub fn run_bias_experiment(
    table: &EmbeddingTable,
    cfg: &BiasConfig,
    seed: u64,
) -> Result<Vec<BiasOutcome>> {
    if cfg.repetitions == 0 {
        return Err(Error::Parameter("at least one repetition required".into()));
    }
    let labels = table.class_labels()?;
    let splits = build_bias_splits(table, seed::derive(seed, "bias/split"))?;
    let lp_base = seed::derive(seed, "bias/lp");
    let mut out = Vec::with_capacity(splits.len());
    for (spec, split) in splits {
        let train = Samples::from_table(table, &split.train_idx, &labels);
        let val = Samples::from_table(table, &split.val_idx, &labels);
        let test = Samples::from_table(table, &split.test_idx, &labels);
        let mut accuracies = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions {
            let probe = lp_train(&train, &val, &cfg.lp, lp_base.wrapping_add(rep as u64))?;
            let mut correct = 0usize;
            for (r, &y) in test.rows().zip(&test.y) {
                if lp_predict(&probe, r)? == y {
                    correct += 1;
                }
            }
            accuracies.push(correct as f64 / test.len() as f64);
        }
        let (mean, std) = mean_std(&accuracies);
        out.push(BiasOutcome {
            spec,
            split_sizes: split.sizes(),
            accuracies,
            mean,
            std,
        });
    }
    Ok(out)
}
