use std::path::{Path, PathBuf};

use batchaudit::embstore::{load_table, save_table, sidecar_path};
use batchaudit::synthgen::{generate, SynthConfig};
use batchaudit_cli::{run_from_args, AuditReport};

fn run(args: &[&str]) -> anyhow::Result<(AuditReport, PathBuf)> {
    run_from_args(std::iter::once("batchaudit").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_then_site_predict_without_signature_is_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let res = dir.path().join("res");
    let (synth, _) = run(&[
        "synth", "--out", p(&data), "--seed", "4", "--dims", "16", "--n-sites", "4",
        "--patients-per-site", "10", "--patches-per-slide", "200", "--site-strength", "0",
    ])
    .unwrap();
    assert_eq!(synth.payload["n_rows"], 8_000);
    let table = data.join("table.emb");
    assert_eq!(load_table(&table).unwrap().len(), 8_000);

    let (report, path) = run(&["site-predict", "--input", p(&table), "--out", p(&res), "--seed", "1"]).unwrap();
    assert_eq!(path, res.join("report.json"));
    assert_eq!(report.payload["n_sites"], 4);
    let rows = read_csv(&res.join("site_accuracy.csv"));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["ncc", "knn", "lp"]);
    for r in &rows {
        let acc: f64 = r[1].parse().unwrap();
        assert!((acc - 0.25).abs() <= 0.05, "{r:?}");
    }
    for clf in ["ncc", "knn", "lp"] {
        assert!(res.join(format!("confusion_{clf}.csv")).exists());
    }
}

#[test]
fn missing_class_labels_stop_class_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.emb");
    let t = generate(&SynthConfig { dims: 4, patches_per_slide: 20, ..SynthConfig::default() }).unwrap();
    save_table(&t, &table).unwrap();
    for cmd in ["bias", "distances"] {
        let err = run(&[cmd, "--input", p(&table), "--out", p(&dir.path().join(cmd)), "--seed", "0"]).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("class label required"), "{msg}");
        assert!(!dir.path().join(cmd).join("report.json").exists());
    }
}

#[test]
fn missing_site_label_fails_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.emb");
    let t = generate(&SynthConfig { dims: 4, patches_per_slide: 20, ..SynthConfig::default() }).unwrap();
    save_table(&t, &table).unwrap();
    let meta = sidecar_path(&table);
    let text = std::fs::read_to_string(&meta).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<&str> = lines[3].split(',').collect();
    cells[3] = "";
    lines[3] = cells.join(",");
    std::fs::write(&meta, lines.join("\n") + "\n").unwrap();
    let err = run(&["site-predict", "--input", p(&table), "--out", p(&dir.path().join("o")), "--seed", "0"]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.starts_with("stage load"), "{msg}");
    assert!(msg.contains("site"), "{msg}");
}

#[test]
fn seed_and_output_are_required() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&["synth", "--out", p(dir.path())]).unwrap_err();
    assert!(format!("{err:#}").contains("seed is required"));
    let err = run(&["synth", "--seed", "1"]).unwrap_err();
    assert!(format!("{err:#}").contains("output directory is required"));
    let err = run(&["--seed", "1", "--out", p(dir.path())]).unwrap_err();
    assert!(format!("{err:#}").contains("no experiment given"));
}

#[test]
fn toml_config_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "experiment = \"synth\"\nseed = 3\n[synth]\ndims = 8\nn_sites = 3\npatches_per_slide = 10\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let (report, _) = run(&["--config", p(&cfg), "--out", p(&out), "synth", "--dims", "6"]).unwrap();
    assert_eq!(report.config.synth.dims, 6);
    assert_eq!(report.config.synth.n_sites, 3);
    assert_eq!(report.config.synth.seed, 3);
    assert_eq!(report.payload["n_rows"], 3 * 10 * 10);

    let err = run(&["--config", p(&cfg), "--out", p(&out), "bias"]).unwrap_err();
    assert!(format!("{err:#}").contains("not \"bias\""));

    std::fs::write(&cfg, "experiment = \"synth\"\nseed = 3\nbogus = 1\n").unwrap();
    let err = run(&["--config", p(&cfg), "--out", p(&out)]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.starts_with("stage config") && msg.contains("bogus"), "{msg}");
}

#[test]
fn report_echo_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run(&["synth", "--out", p(&data), "--seed", "8", "--dims", "8", "--n-sites", "3", "--patches-per-slide", "60"]).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (first, _) = run(&[
        "--input", p(&data.join("table.emb")), "--out", p(&a), "--seed", "2", "separability", "--n-components", "4",
    ])
    .unwrap();
    let (second, _) = run(&["--config", p(&a.join("report.json")), "--out", p(&b)]).unwrap();
    assert_eq!(first.payload, second.payload);
    assert_eq!(second.config.separability.n_components, 4);
    assert_eq!(
        std::fs::read(a.join("separability.csv")).unwrap(),
        std::fs::read(b.join("separability.csv")).unwrap()
    );
    assert_eq!(read_csv(&a.join("separability.csv")).len(), 4);
}
