use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qipf::ingest::{save_bundle, save_predictions, PredictionRecord};
use qipf::manifest::{digest_from_output, manifest_path_for, RunManifest};
use qipf::mlp::{predict, MlpModel, DEFAULT_LAYER_SIZES};
use tempfile::TempDir;

fn qipf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qipf"))
        .args(args)
        .env_remove("QIPF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = qipf(args);
    assert!(
        out.status.success(),
        "qipf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A default-architecture model and its predictions on a grid.
fn toy_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let model = MlpModel::new(&DEFAULT_LAYER_SIZES, 0.0, 3).unwrap();
    let weights = dir.join("toy.qwb");
    save_bundle(&model.to_bundle().unwrap(), &weights).unwrap();
    let xs: Vec<f64> = (0..61).map(|i| -2.0 + 4.5 * i as f64 / 60.0).collect();
    let ys = predict(&model, &xs, 0, 0);
    let records: Vec<PredictionRecord> = xs
        .iter()
        .enumerate()
        .map(|(i, _)| PredictionRecord {
            id: format!("g{i}"),
            y_eval: ys[[0, i]],
            confidence: 0.5 + 0.4 * (i % 2) as f64,
            true_label: (i % 3 == 0) as u32,
            predicted_label: 0,
        })
        .collect();
    let preds = dir.join("grid.csv");
    save_predictions(&preds, &records).unwrap();
    (weights, preds)
}

fn records(rows: &[(&str, f64, f64, u32, u32)]) -> Vec<PredictionRecord> {
    rows.iter()
        .map(|&(id, y, c, t, p)| PredictionRecord {
            id: id.into(),
            y_eval: y,
            confidence: c,
            true_label: t,
            predicted_label: p,
        })
        .collect()
}

#[test]
fn score_writes_mode_columns_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (w, p) = toy_inputs(dir.path());
    let out = dir.path().join("scores.csv");
    ok(&["score", s(&w), s(&p), "--modes", "4", "--sigma-factor", "80", "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    lines.next();
    assert_eq!(lines.next(), Some("id,score,V_1,V_2,V_3,V_4,clamped"));
    assert_eq!(text.lines().count(), 2 + 61);

    let manifest = RunManifest::load(manifest_path_for(&out)).unwrap();
    assert_eq!(digest_from_output(&text), Some(manifest.digest().as_str()));
    assert_eq!(manifest.config["config"]["num_modes"], 4);
    assert_eq!(manifest.inputs.len(), 2);
    assert!(manifest.timings_ms.contains_key("decompose"));
}

#[test]
fn ten_modes_give_ten_columns() {
    let dir = TempDir::new().unwrap();
    let (w, p) = toy_inputs(dir.path());
    let out = ok(&["score", s(&w), s(&p), "--modes", "10"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().nth(1).unwrap();
    assert_eq!(header.split(',').count(), 2 + 10 + 1);
    assert!(header.ends_with("V_10,clamped"));
}

#[test]
fn score_is_byte_identical_across_runs_and_replays() {
    let dir = TempDir::new().unwrap();
    let (w, p) = toy_inputs(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    ok(&["score", s(&w), s(&p), "--out", s(&a)]);
    ok(&["score", s(&w), s(&p), "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m = manifest_path_for(&a);
    ok(&["score", "--replay", s(&m), "--out", s(&c)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    // A changed input is refused on replay.
    fs::write(&p, fs::read_to_string(&p).unwrap().replace("g0,", "h0,")).unwrap();
    let out = qipf(&["score", "--replay", s(&m)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibration_file_changes_offsets() {
    let dir = TempDir::new().unwrap();
    let (w, p) = toy_inputs(dir.path());
    let calib = dir.path().join("calib.csv");
    save_predictions(&calib, &records(&[("c0", -50.0, 0.5, 0, 0), ("c1", 50.0, 0.5, 0, 0)])).unwrap();
    let batch = ok(&["score", s(&w), s(&p)]).stdout;
    let fixed = ok(&["score", s(&w), s(&p), "--calibration", s(&calib)]).stdout;
    assert_ne!(batch, fixed);
}

#[test]
fn missing_weights_is_a_tagged_input_error() {
    let dir = TempDir::new().unwrap();
    let (_, p) = toy_inputs(dir.path());
    let out = qipf(&["score", "/nonexistent/w.qwb", s(&p)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("load stage failed (/nonexistent/w.qwb)"), "{err}");
}

#[test]
fn malformed_predictions_name_the_row() {
    let dir = TempDir::new().unwrap();
    let (w, _) = toy_inputs(dir.path());
    let p = dir.path().join("bad.csv");
    fs::write(&p, "id,y_eval,confidence,true_label,predicted_label\na,0.1,0.5,1,1\nb,oops,0.5,1,1\n").unwrap();
    let out = qipf(&["score", s(&w), s(&p)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("row 2"));
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (w, p) = toy_inputs(dir.path());
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_qipf"))
            .args(["score", s(&w), s(&p)])
            .env("QIPF_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(run("zero").status.code(), Some(2));
    assert_eq!(run("0").status.code(), Some(2));
    let capped = run("1");
    assert!(capped.status.success());
    assert_eq!(capped.stdout, ok(&["score", s(&w), s(&p)]).stdout);
}

fn write_scores_file(path: &Path, rows: &[(&str, f64)]) {
    let mut text = String::from("# manifest_sha256=00\nid,score,V_1,clamped\n");
    for (id, sc) in rows {
        text.push_str(&format!("{id},{sc},{sc},0\n"));
    }
    fs::write(path, text).unwrap();
}

fn metrics_json(dir: &Path, scores: &[(&str, f64)], preds: &[(&str, f64, f64, u32, u32)]) -> serde_json::Value {
    let sp = dir.join("scores.csv");
    let pp = dir.join("preds.csv");
    write_scores_file(&sp, scores);
    save_predictions(&pp, &records(preds)).unwrap();
    let out = ok(&["metrics", s(&sp), s(&pp)]);
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn metrics_report_for_the_four_sample_example() {
    let dir = TempDir::new().unwrap();
    let json = metrics_json(
        dir.path(),
        &[("a", 0.1), ("b", 0.4), ("c", 0.35), ("d", 0.8)],
        &[
            ("a", 0.0, 0.9, 1, 1),
            ("b", 0.0, 0.8, 1, 1),
            ("c", 0.0, 0.7, 1, 0),
            ("d", 0.0, 0.6, 1, 0),
        ],
    );
    assert_eq!(json["roc_auc"], 0.75);
    assert_eq!(json["n"], 4);
    for key in ["pr_auc", "ece", "brier", "point_biserial", "spearman", "manifest_sha256"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn perfectly_separating_scores() {
    let dir = TempDir::new().unwrap();
    let json = metrics_json(
        dir.path(),
        &[("a", 0.1), ("b", 0.2), ("c", 0.7), ("d", 0.9)],
        &[
            ("a", 0.0, 0.9, 0, 0),
            ("b", 0.0, 0.9, 1, 1),
            ("c", 0.0, 0.6, 1, 0),
            ("d", 0.0, 0.6, 0, 1),
        ],
    );
    assert_eq!(json["roc_auc"], 1.0);
    assert_eq!(json["pr_auc"], 1.0);
}

#[test]
fn unmatched_ids_are_listed() {
    let dir = TempDir::new().unwrap();
    let sp = dir.path().join("scores.csv");
    let pp = dir.path().join("preds.csv");
    write_scores_file(&sp, &[("a", 0.1), ("x", 0.2)]);
    save_predictions(&pp, &records(&[("a", 0.0, 0.9, 0, 0), ("b", 0.0, 0.9, 1, 0)])).unwrap();
    let out = qipf(&["metrics", s(&sp), s(&pp)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("join stage failed") && err.contains("\"x\"") && err.contains("\"b\""), "{err}");
}

#[test]
fn sine_demo_has_six_curve_columns() {
    let dir = TempDir::new().unwrap();
    ok(&["demo", "sine", "--modes", "4", "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("sine.csv")).unwrap();
    assert!(text.starts_with("# manifest_sha256="));
    let header: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(header[1..], ["psi", "V_0", "V_1", "V_2", "V_3", "V_4"]);
    assert!(dir.path().join("sine.manifest.json").exists());
}

#[test]
fn regression_demo_writes_one_file_per_l2_deterministically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = |d: &TempDir| {
        vec![
            "demo".to_string(),
            "regression".into(),
            "--l2".into(),
            "0.0,0.01,0.2".into(),
            "--epochs".into(),
            "5".into(),
            "--ensemble".into(),
            "2".into(),
            "--dropout-samples".into(),
            "3".into(),
            "--seed".into(),
            "4".into(),
            "--out".into(),
            d.path().to_str().unwrap().into(),
        ]
    };
    for d in [&a, &b] {
        let v = args(d);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for name in ["regression_l2_0.0.csv", "regression_l2_0.01.csv", "regression_l2_0.2.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
        let text = String::from_utf8(x).unwrap();
        assert_eq!(
            text.lines().nth(1),
            Some("x,target,prediction,qipf_score,ensemble_std,dropout_std,seen")
        );
        assert_eq!(text.lines().count(), 2 + 451);
    }
}

#[test]
fn corrupt_csv_images() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("img.csv");
    fs::write(&input, "height,width\n2,2\n0.1,0.2\n0.3,0.4\n").unwrap();
    let out = ok(&["corrupt", s(&input), "--kind", "rotation", "--intensity", "180"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.ends_with("height,width\n2,2\n0.4,0.3\n0.2,0.1\n"), "{text}");

    let out = ok(&["corrupt", s(&input), "--kind", "shift", "--intensity", "1"]);
    assert!(String::from_utf8(out.stdout).unwrap().ends_with("0,0.1\n0,0.3\n"));

    let out = ok(&["corrupt", s(&input), "--kind", "brightness", "--intensity", "-0.15"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("\n0,0.05"));

    let bad = qipf(&["corrupt", s(&input), "--kind", "zoom", "--intensity", "0"]);
    assert_eq!(bad.status.code(), Some(2));
    let frac = qipf(&["corrupt", s(&input), "--kind", "shift", "--intensity", "0.5"]);
    assert_eq!(frac.status.code(), Some(2));
}

#[test]
fn corrupt_batch_to_directory_with_pgm() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.pgm");
    fs::write(&a, "height,width\n1,4\n0,0.25,0.5,1\n").unwrap();
    let mut pgm = b"P5\n4 1\n255\n".to_vec();
    pgm.extend([0u8, 64, 128, 255]);
    fs::write(&b, pgm).unwrap();
    let out = dir.path().join("out");
    ok(&["corrupt", s(&a), s(&b), "--kind", "shift", "--severity", "50", "--out", s(&out)]);
    let shifted = fs::read_to_string(out.join("a.csv")).unwrap();
    assert!(shifted.ends_with("0,0,0.25,0.5\n"), "{shifted}");
    let bytes = fs::read(out.join("b.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n# manifest_sha256="));
    assert!(bytes.ends_with(&[0, 0, 64, 128]));
    assert!(out.join("corrupt.manifest.json").exists());
}

#[test]
fn bench_floor_case() {
    let out = ok(&["bench", "--ns", "1", "--ks", "1", "--samples", "1", "--repetitions", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().nth(1), Some("n,k,ms_per_sample"));
    assert_eq!(text.lines().count(), 3);
    let summary = String::from_utf8(out.stderr).unwrap();
    assert!(summary.contains("n_exponents"));
}

#[test]
fn bench_reports_growth_per_n() {
    let out = ok(&["bench", "--ns", "16,32", "--ks", "2,4", "--samples", "8", "--repetitions", "2"]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["k_growth"]["by_n"].as_array().unwrap().len(), 2);
    assert_eq!(summary["n_exponents"].as_array().unwrap().len(), 2);
}

#[test]
fn pool_lists_pooled_weights() {
    let dir = TempDir::new().unwrap();
    let (w, _) = toy_inputs(dir.path());
    let out = ok(&["pool", s(&w), "--pool-target", "1024"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().nth(1), Some("index,value"));
    // 20,501 parameters in windows of 21, layer by layer.
    let expected: usize = [100usize, 100, 10_000, 100, 10_000, 100, 100, 1]
        .iter()
        .map(|n| n.div_ceil(21))
        .sum();
    assert_eq!(text.lines().count() - 2, expected);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("20501 parameters, window 21"), "{err}");

    let weights_only = ok(&["pool", s(&w), "--exclude-biases"]);
    let err = String::from_utf8(weights_only.stderr).unwrap();
    assert!(err.starts_with("20200 parameters, window 20"), "{err}");
}
