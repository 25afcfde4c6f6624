//! Experiment drivers behind each subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use batchaudit::embstore::{concat_tables, load_table, save_table};
use batchaudit::geometry::{
    distance_profiles, fit_pca, pick_reference, reduced_knn_curve, separability_profile, DistanceGroup,
};
use batchaudit::probes::{prepare_site_split, run_bias_experiment, run_site_prediction, Classifier};
use batchaudit::seed;
use batchaudit::synthgen::generate_with_truth;
use batchaudit::EmbeddingTable;
use batchaudit_stain::pipeline::{run_patch_pipeline, Variant, MANIFEST_FILE};
use serde_json::json;

use crate::config::AuditConfig;
use crate::output::{csv_text, AuditReport, Outputs, SCHEMA_VERSION};

/// Name of the table written by `synth`.
pub const SYNTH_TABLE: &str = "table.emb";

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| e.into().context(format!("stage {name}")))
    }
}

/// Runs the experiment named in `cfg` and commits its outputs.
pub fn execute(cfg: AuditConfig) -> Result<(AuditReport, PathBuf)> {
    let start = Instant::now();
    let seed = cfg.seed().stage("config")?;
    let out = cfg.out_dir().stage("config")?.to_path_buf();
    let mut cfg = cfg;
    let mut files = Outputs::default();
    let payload = match cfg.experiment.as_str() {
        "site-predict" => site_predict(&cfg, seed, &mut files)?,
        "bias" => bias(&cfg, seed, &mut files)?,
        "distances" => distances(&cfg, seed, &mut files)?,
        "reduced" => reduced(&cfg, seed, &mut files)?,
        "separability" => separability(&cfg, &mut files)?,
        "stain" => {
            cfg.stain.seed = seed;
            stain(&cfg, &out)?
        }
        "synth" => {
            cfg.synth.seed = seed;
            synth(&cfg, &out)?
        }
        other => bail!("stage config: unknown experiment {other:?}"),
    };
    let report = AuditReport {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.clone(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        payload,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let path = files.commit(&out, &report).stage("write")?;
    Ok((report, path))
}

fn load_inputs(cfg: &AuditConfig) -> Result<EmbeddingTable> {
    if cfg.inputs.is_empty() {
        bail!("stage load: no input table given (use --input)");
    }
    let tables = cfg
        .inputs
        .iter()
        .map(|p| load_table(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()
        .stage("load")?;
    if tables.len() == 1 {
        return Ok(tables.into_iter().next().unwrap());
    }
    concat_tables(&tables).stage("load")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn site_predict(cfg: &AuditConfig, seed: u64, files: &mut Outputs) -> Result<serde_json::Value> {
    let table = load_inputs(cfg)?;
    let result = run_site_prediction(&table, &cfg.site, seed).stage("site prediction")?;
    let rows = result
        .reports
        .iter()
        .map(|r| vec![r.classifier.to_string(), fmt(r.accuracy), r.n_test.to_string(), fmt(result.chance())]);
    files.add("site_accuracy.csv", csv_text(&["classifier", "accuracy", "n_test", "chance"], rows)?);
    for r in &result.reports {
        files.add(format!("confusion_{}.csv", r.classifier), r.confusion_csv().into_bytes());
    }
    Ok(serde_json::to_value(&result)?)
}

fn bias(cfg: &AuditConfig, seed: u64, files: &mut Outputs) -> Result<serde_json::Value> {
    let table = load_inputs(cfg)?;
    let outcomes = run_bias_experiment(&table, &cfg.bias, seed).stage("bias")?;
    let mut rows = Vec::new();
    for o in &outcomes {
        for (rep, a) in o.accuracies.iter().enumerate() {
            rows.push(vec![o.spec.name.clone(), o.spec.ratio_label.clone(), rep.to_string(), fmt(*a)]);
        }
    }
    files.add("bias_accuracy.csv", csv_text(&["split", "ratio", "repetition", "accuracy"], rows)?);
    Ok(json!({ "splits": outcomes }))
}

fn distances(cfg: &AuditConfig, seed: u64, files: &mut Outputs) -> Result<serde_json::Value> {
    let table = load_inputs(cfg)?;
    let sampling = cfg.distances.sampling();
    let references: Vec<String> = if cfg.distances.references.is_empty() {
        (0..cfg.distances.n_references)
            .map(|i| pick_reference(&table, &sampling, seed::derive(seed, &format!("distances/ref/{i}"))))
            .collect::<batchaudit::Result<_>>()
            .stage("reference selection")?
    } else {
        cfg.distances.references.clone()
    };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (i, r) in references.iter().enumerate() {
        let profiles = distance_profiles(&table, r, &sampling, seed::derive(seed, &format!("distances/profile/{i}")))
            .stage("distances")?;
        let mut groups = serde_json::Map::new();
        for p in &profiles {
            let d: Vec<f64> = p.distances().collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            groups.insert(
                p.group.to_string(),
                json!({ "n": d.len(), "min": d[0], "max": d[d.len() - 1], "mean": mean }),
            );
            for (rank, e) in p.entries.iter().enumerate() {
                rows.push(vec![
                    r.clone(),
                    p.group.to_string(),
                    rank.to_string(),
                    fmt(e.distance),
                    e.class_label.to_string(),
                    e.patch_id.clone(),
                    e.slide_id.clone(),
                ]);
            }
        }
        let max_of = |g: DistanceGroup| profiles.iter().find(|p| p.group == g).unwrap().distances().fold(0.0, f64::max);
        let min_of = |g: DistanceGroup| {
            profiles.iter().find(|p| p.group == g).unwrap().distances().fold(f64::INFINITY, f64::min)
        };
        summaries.push(json!({
            "reference": r,
            "groups": groups,
            "ss_below_osoh": max_of(DistanceGroup::Ss) < min_of(DistanceGroup::Osoh),
        }));
    }
    files.add(
        "distances.csv",
        csv_text(&["reference", "group", "rank", "distance", "class_label", "patch_id", "slide_id"], rows)?,
    );
    Ok(json!({ "references": summaries }))
}

fn reduced(cfg: &AuditConfig, seed: u64, files: &mut Outputs) -> Result<serde_json::Value> {
    let table = load_inputs(cfg)?;
    let prepared = prepare_site_split(&table, &cfg.site, seed).stage("split")?;
    let curve = reduced_knn_curve(&prepared.table, &prepared.split, &cfg.reduced.ells, cfg.reduced.k)
        .stage("reduced features")?;
    let mut rows = vec![vec!["full".to_string(), fmt(curve.baseline)]];
    rows.extend(curve.points.iter().map(|(l, a)| vec![l.to_string(), fmt(*a)]));
    files.add("reduced_curve.csv", csv_text(&["ell", "accuracy"], rows)?);
    Ok(json!({
        "classifier": Classifier::Knn,
        "n_rows": prepared.table.len(),
        "split_sizes": prepared.split.sizes(),
        "warnings": prepared.warnings,
        "curve": curve,
    }))
}

fn separability(cfg: &AuditConfig, files: &mut Outputs) -> Result<serde_json::Value> {
    let table = load_inputs(cfg)?;
    let model = fit_pca(&table).stage("pca")?;
    let n = cfg.separability.n_components.min(table.dim());
    let profile = separability_profile(&table, &model, n).stage("separability")?;
    let rows = profile
        .records
        .iter()
        .map(|r| vec![r.component.to_string(), fmt(r.evr), fmt(r.ovo_auroc)]);
    files.add("separability.csv", csv_text(&["component", "evr", "ovo_auroc"], rows)?);
    Ok(serde_json::to_value(&profile)?)
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

/// Expands directories into their image files, sorted by name.
fn slide_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no slide images among the inputs");
    }
    Ok(out)
}

fn stain(cfg: &AuditConfig, out: &Path) -> Result<serde_json::Value> {
    let slides = slide_paths(&cfg.inputs).stage("load")?;
    let rep = run_patch_pipeline(&slides, &cfg.stain, out).stage("stain pipeline")?;
    let count = |v: Variant| rep.rows.iter().filter(|r| r.kept && r.variant == v).count();
    Ok(json!({
        "manifest": MANIFEST_FILE,
        "slides_processed": rep.slides_processed,
        "slides_failed": rep.slides_failed,
        "tiles": rep.tiles,
        "kept": rep.kept,
        "files": { "raw": count(Variant::Raw), "reinhard": count(Variant::Reinhard), "macenko": count(Variant::Macenko) },
        "reinhard_target": rep.reinhard_target,
        "macenko_target": rep.macenko_target,
    }))
}

fn synth(cfg: &AuditConfig, out: &Path) -> Result<serde_json::Value> {
    let (table, truth) = generate_with_truth(&cfg.synth).stage("synth")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).stage("write")?;
    // Write all three files in a scratch directory, then move them in.
    let scratch = tempfile::tempdir_in(out).stage("write")?;
    let tmp = scratch.path().join(SYNTH_TABLE);
    save_table(&table, &tmp).stage("write")?;
    for suffix in ["", batchaudit::embstore::META_SUFFIX, batchaudit::embstore::CODEBOOK_SUFFIX] {
        let name = format!("{SYNTH_TABLE}{suffix}");
        std::fs::rename(scratch.path().join(&name), out.join(&name)).stage("write")?;
    }
    Ok(json!({
        "table": SYNTH_TABLE,
        "n_rows": table.len(),
        "dims": table.dim(),
        "truth": truth,
    }))
}
