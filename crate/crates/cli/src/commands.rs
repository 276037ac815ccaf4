use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qipf::bench::{run_bench, BenchConfig};
use qipf::demo::{regression_demo, sine_demo, RegressionDemoConfig, SineDemoConfig};
use qipf::ingest::{load_bundle, load_predictions, pool_window, pool_weights, PredictionRecord};
use qipf::manifest::{manifest_path_for, RunManifest};
use qipf::metrics::MetricsReport;
use qipf::mlp::TrainConfig;
use qipf::pipeline::{
    format_real, join_scores, read_scores, score_predictions, write_scores, ScoreOptions, Stage, StageContext,
    StageError,
};
use qipf::shift::{corrupt_batch, severity_to_corruption, Corruption, CorruptionKind, RasterImage, SineParams};
use qipf::{effective_sigma, Config, QipfError};

use crate::{Cli, Command, DemoKind, Global};

type CmdResult = Result<(), StageError>;

pub fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    match cli.command {
        Command::Score {
            weights,
            predictions,
            replay,
        } => match replay {
            Some(manifest) => replay_score(g, &manifest),
            None => {
                let (Some(w), Some(p)) = (weights, predictions) else {
                    return Err(input_error(Stage::Load, "arguments", "score needs WEIGHTS and PREDICTIONS, or --replay"));
                };
                score(g, score_options(g), &w, &p, g.calibration.as_deref())
            }
        },
        Command::Metrics {
            scores,
            predictions,
            bins,
        } => metrics(g, &scores, &predictions, bins),
        Command::Demo {
            which,
            l2,
            epochs,
            ensemble,
            dropout_samples,
        } => match which {
            DemoKind::Sine => demo_sine(g),
            DemoKind::Regression => demo_regression(g, &l2, epochs, ensemble, dropout_samples),
        },
        Command::Corrupt {
            inputs,
            kind,
            intensity,
            severity,
            dy,
        } => corrupt(g, &inputs, kind.into(), intensity, severity, dy),
        Command::Bench {
            ns,
            ks,
            samples,
            repetitions,
        } => bench(
            g,
            BenchConfig {
                ns,
                ks,
                samples,
                repetitions,
                seed: g.seed,
            },
        ),
        Command::Pool { weights } => pool(g, &weights),
    }
}

fn input_error(stage: Stage, context: impl Into<String>, msg: impl Into<String>) -> StageError {
    StageError::new(stage, context, QipfError::InvalidArgument(msg.into()))
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

fn score_options(g: &Global) -> ScoreOptions {
    ScoreOptions {
        config: Config {
            num_modes: g.modes.unwrap_or(4),
            sigma_factor: g.sigma_factor.unwrap_or(80.0),
            bandwidth_rule: g.bandwidth_rule.into(),
            include_mode_zero_in_score: g.include_mode_zero,
            pool_target: g.pool_target,
            ..Config::default()
        },
        exclude_biases: g.exclude_biases,
    }
}

/// Writes `bytes` to `out` (stdout when `None`) and saves the manifest next
/// to a file output.
fn emit(out: Option<&Path>, bytes: &[u8], manifest: &RunManifest) -> CmdResult {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(QipfError::from).stage(Stage::Write, shown(dir))?;
            }
            fs::write(path, bytes).map_err(QipfError::from).stage(Stage::Write, shown(path))?;
            let mpath = manifest_path_for(path);
            manifest.save(&mpath).stage(Stage::Write, shown(&mpath))
        }
        None => io::stdout()
            .write_all(bytes)
            .map_err(QipfError::from)
            .stage(Stage::Write, "stdout"),
    }
}

fn load_preds(path: &Path) -> Result<Vec<PredictionRecord>, StageError> {
    load_predictions(path).stage(Stage::Load, shown(path))
}

fn score(g: &Global, options: ScoreOptions, weights: &Path, predictions: &Path, calibration: Option<&Path>) -> CmdResult {
    let mut manifest = RunManifest::new("score", &options).stage(Stage::Load, "configuration")?;
    let t = Instant::now();
    manifest.add_input("weights", weights).stage(Stage::Load, shown(weights))?;
    manifest.add_input("predictions", predictions).stage(Stage::Load, shown(predictions))?;
    if let Some(c) = calibration {
        manifest.add_input("calibration", c).stage(Stage::Load, shown(c))?;
    }
    let bundle = load_bundle(weights).stage(Stage::Load, shown(weights))?;
    let preds = load_preds(predictions)?;
    let calib = calibration.map(load_preds).transpose()?;
    manifest.record_timing("load", t.elapsed());

    let run = score_predictions(&bundle, &preds, calib.as_deref(), &options)?;
    for (stage, elapsed) in &run.timings {
        manifest.record_timing(stage.to_string(), *elapsed);
    }
    let ids: Vec<String> = preds.iter().map(|p| p.id.clone()).collect();
    let mut buf = Vec::new();
    write_scores(&mut buf, &ids, &run, Some(&manifest.header_line())).stage(Stage::Write, "scores")?;
    emit(g.out.as_deref(), &buf, &manifest)
}

fn replay_score(g: &Global, manifest_path: &Path) -> CmdResult {
    let ctx = shown(manifest_path);
    let manifest = RunManifest::load(manifest_path).stage(Stage::Load, ctx.clone())?;
    if manifest.command != "score" {
        return Err(input_error(Stage::Load, ctx, format!("manifest is for `{}`, not `score`", manifest.command)));
    }
    manifest.verify_inputs().stage(Stage::Load, ctx.clone())?;
    let options: ScoreOptions = serde_json::from_value(manifest.config.clone())
        .map_err(|e| input_error(Stage::Load, ctx.clone(), format!("bad configuration: {e}")))?;
    let path = |role: &str| manifest.input(role).map(|i| PathBuf::from(&i.path));
    let (Some(w), Some(p)) = (path("weights"), path("predictions")) else {
        return Err(input_error(Stage::Load, ctx, "manifest lacks weights or predictions"));
    };
    score(g, options, &w, &p, path("calibration").as_deref())
}

fn metrics(g: &Global, scores_path: &Path, predictions: &Path, bins: usize) -> CmdResult {
    let mut manifest = RunManifest::new("metrics", &serde_json::json!({ "ece_bins": bins }))
        .stage(Stage::Load, "configuration")?;
    manifest.add_input("scores", scores_path).stage(Stage::Load, shown(scores_path))?;
    manifest.add_input("predictions", predictions).stage(Stage::Load, shown(predictions))?;
    let file = fs::File::open(scores_path).map_err(QipfError::from).stage(Stage::Load, shown(scores_path))?;
    let scores = read_scores(BufReader::new(file)).stage(Stage::Load, shown(scores_path))?;
    let preds = load_preds(predictions)?;
    let data = join_scores(&scores, &preds).stage(Stage::Join, "scores vs predictions")?;
    let t = Instant::now();
    let report = MetricsReport::compute(&data, bins, None).stage(Stage::Metrics, format!("{} samples", data.len()))?;
    manifest.record_timing("metrics", t.elapsed());
    let mut json = serde_json::to_value(&report).expect("report serializes");
    json["manifest_sha256"] = manifest.digest().into();
    let text = serde_json::to_string_pretty(&json).expect("json serializes") + "\n";
    emit(g.out.as_deref(), text.as_bytes(), &manifest)
}

fn demo_dir(g: &Global) -> Result<PathBuf, StageError> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(QipfError::from).stage(Stage::Write, shown(&dir))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(QipfError::from).stage(Stage::Write, shown(path))
}

fn demo_sine(g: &Global) -> CmdResult {
    let config = SineDemoConfig {
        num_modes: g.modes.unwrap_or(4),
        sigma_factor: g.sigma_factor.unwrap_or(8.0),
        bandwidth_rule: g.bandwidth_rule.into(),
        ..SineDemoConfig::default()
    };
    let mut manifest = RunManifest::new("demo sine", &config).stage(Stage::Load, "configuration")?;
    let t = Instant::now();
    let demo = sine_demo(&config).stage(Stage::Decompose, "sine demo")?;
    manifest.record_timing("decompose", t.elapsed());
    let dir = demo_dir(g)?;
    let mut buf = Vec::new();
    demo.write_csv(&mut buf, Some(&manifest.header_line())).stage(Stage::Write, "sine.csv")?;
    write_file(&dir.join("sine.csv"), &buf)?;
    manifest.save(dir.join("sine.manifest.json")).stage(Stage::Write, "sine.manifest.json")?;
    let ratios: Vec<String> = demo.tail_ratios().iter().map(|r| format!("{r:.3}")).collect();
    eprintln!("sigma {:.4}; tail/support mean ratio per mode: {}", demo.sigma, ratios.join(" "));
    Ok(())
}

fn demo_regression(g: &Global, l2s: &[f64], epochs: usize, ensemble: usize, dropout_samples: usize) -> CmdResult {
    if let Some(bad) = l2s.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(input_error(Stage::Load, "--l2", format!("coefficient {bad} must be nonnegative")));
    }
    let defaults = RegressionDemoConfig::default();
    let config = RegressionDemoConfig {
        data: SineParams {
            seed: g.seed,
            ..SineParams::default()
        },
        train: TrainConfig {
            epochs,
            seed: g.seed,
            ..TrainConfig::default()
        },
        qipf: Config {
            num_modes: g.modes.unwrap_or(4),
            sigma_factor: g.sigma_factor.unwrap_or(defaults.qipf.sigma_factor),
            bandwidth_rule: g.bandwidth_rule.into(),
            include_mode_zero_in_score: g.include_mode_zero,
            pool_target: g.pool_target,
            ..defaults.qipf
        },
        ensemble_members: ensemble,
        dropout_samples,
        ..defaults
    };
    let manifest_config = serde_json::json!({ "demo": config, "l2": l2s });
    let mut manifest = RunManifest::new("demo regression", &manifest_config).stage(Stage::Load, "configuration")?;
    let dir = demo_dir(g)?;
    let mut outputs = Vec::new();
    for &l2 in l2s {
        let t = Instant::now();
        let demo = regression_demo(&config, l2).map_err(|e| StageError::new(Stage::Score, format!("l2 = {l2}"), e))?;
        manifest.record_timing(format!("l2={l2}"), t.elapsed());
        eprintln!(
            "l2 {l2}: final loss {:.4}, mean score unseen {:.4} / seen {:.4}",
            demo.final_loss,
            demo.unseen_mean(),
            demo.seen_mean()
        );
        outputs.push((l2, demo));
    }
    let header = manifest.header_line();
    for (l2, demo) in &outputs {
        let name = format!("regression_l2_{}.csv", format_real(*l2));
        let mut buf = Vec::new();
        demo.write_csv(&mut buf, Some(&header)).stage(Stage::Write, name.clone())?;
        write_file(&dir.join(&name), &buf)?;
    }
    manifest
        .save(dir.join("regression.manifest.json"))
        .stage(Stage::Write, "regression.manifest.json")
}

fn read_image(path: &Path) -> qipf::Result<RasterImage> {
    let file = fs::File::open(path)?;
    if is_pgm(path) {
        RasterImage::read_pgm(file)
    } else {
        RasterImage::read_csv(BufReader::new(file))
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn image_bytes(img: &RasterImage, pgm: bool, header: &str) -> qipf::Result<Vec<u8>> {
    let mut buf = Vec::new();
    if pgm {
        img.write_pgm_with_comment(&mut buf, Some(header))?;
    } else {
        writeln!(buf, "{header}")?;
        img.write_csv(&mut buf)?;
    }
    Ok(buf)
}

fn corruption_for(kind: CorruptionKind, intensity: Option<f64>, severity: Option<f64>, dy: i64, width: usize) -> qipf::Result<Corruption> {
    if let Some(s) = severity {
        return severity_to_corruption(kind, s, width);
    }
    let x = intensity.ok_or_else(|| QipfError::InvalidArgument("--intensity or --severity is required".into()))?;
    Ok(match kind {
        CorruptionKind::Rotation => Corruption::Rotation { degrees: x },
        CorruptionKind::Brightness => Corruption::Brightness { delta: x },
        CorruptionKind::Shear => Corruption::Shear { factor: x },
        CorruptionKind::Zoom => Corruption::Zoom { scale: x },
        CorruptionKind::Shift => {
            if x.fract() != 0.0 || x.abs() > i64::MAX as f64 {
                return Err(QipfError::InvalidArgument(format!("shift needs whole pixels, got {x}")));
            }
            Corruption::Shift { dx: x as i64, dy }
        }
    })
}

fn corrupt(
    g: &Global,
    inputs: &[PathBuf],
    kind: CorruptionKind,
    intensity: Option<f64>,
    severity: Option<f64>,
    dy: i64,
) -> CmdResult {
    let images = inputs
        .iter()
        .map(|p| read_image(p).stage(Stage::Load, shown(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let width = images[0].width();
    if images.iter().any(|i| i.width() != width) && severity.is_some() && kind == CorruptionKind::Shift {
        return Err(input_error(Stage::Load, "inputs", "severity-based shift needs images of equal width"));
    }
    let corruption = corruption_for(kind, intensity, severity, dy, width).stage(Stage::Load, "corruption")?;
    corruption.validate().stage(Stage::Load, "corruption")?;
    let mut manifest = RunManifest::new("corrupt", &corruption).stage(Stage::Load, "configuration")?;
    for p in inputs {
        manifest.add_input("image", p).stage(Stage::Load, shown(p))?;
    }
    let t = Instant::now();
    let outputs = corrupt_batch(&images, corruption).stage(Stage::Score, "corruption")?;
    manifest.record_timing("corrupt", t.elapsed());
    let header = manifest.header_line();

    if inputs.len() == 1 {
        let pgm = g.out.as_deref().is_some_and(is_pgm);
        let bytes = image_bytes(&outputs[0], pgm, &header).stage(Stage::Write, "image")?;
        return emit(g.out.as_deref(), &bytes, &manifest);
    }
    let Some(dir) = g.out.as_deref() else {
        return Err(input_error(Stage::Write, "--out", "several inputs need an output directory"));
    };
    fs::create_dir_all(dir).map_err(QipfError::from).stage(Stage::Write, shown(dir))?;
    for (input, img) in inputs.iter().zip(&outputs) {
        let name = input.file_name().expect("input file has a name");
        let path = dir.join(name);
        let bytes = image_bytes(img, is_pgm(input), &header).stage(Stage::Write, shown(&path))?;
        write_file(&path, &bytes)?;
    }
    manifest
        .save(dir.join("corrupt.manifest.json"))
        .stage(Stage::Write, "corrupt.manifest.json")
}

fn bench(g: &Global, config: BenchConfig) -> CmdResult {
    let mut manifest = RunManifest::new("bench", &config).stage(Stage::Load, "configuration")?;
    let t = Instant::now();
    let report = run_bench(&config).stage(Stage::Decompose, "bench")?;
    manifest.record_timing("bench", t.elapsed());
    let mut buf = Vec::new();
    report.write_csv(&mut buf, Some(&manifest.header_line())).stage(Stage::Write, "bench")?;
    let (k_lo, k_hi) = (config.ks[0], config.ks[config.ks.len() - 1]);
    let k_growth: Vec<serde_json::Value> = config
        .ns
        .iter()
        .map(|&n| {
            let d = report.time(n, k_hi).zip(report.time(n, k_lo)).map(|(a, b)| (a - b) * 1e3);
            serde_json::json!({ "n": n, "ms_per_sample_increase": d })
        })
        .collect();
    let summary = serde_json::json!({
        "n_exponents": report.n_exponents.iter().map(|(k, e)| serde_json::json!({ "k": k, "exponent": e })).collect::<Vec<_>>(),
        "additive_fit_ms": {
            "intercept": report.additive.intercept * 1e3,
            "per_weight": report.additive.per_weight * 1e3,
            "per_mode": report.additive.per_mode * 1e3,
            "max_relative_residual": report.additive.max_relative_residual,
        },
        "k_growth": { "from": k_lo, "to": k_hi, "by_n": k_growth },
    });
    eprintln!("{}", serde_json::to_string_pretty(&summary).expect("json serializes"));
    emit(g.out.as_deref(), &buf, &manifest)
}

fn pool(g: &Global, weights: &Path) -> CmdResult {
    let options = score_options(g);
    let mut manifest = RunManifest::new("pool", &options).stage(Stage::Load, "configuration")?;
    manifest.add_input("weights", weights).stage(Stage::Load, shown(weights))?;
    let bundle = load_bundle(weights).stage(Stage::Load, shown(weights))?;
    let source = if options.exclude_biases {
        bundle.without_biases()
    } else {
        bundle
    };
    let t = Instant::now();
    let pooled = pool_weights(&source, options.config.pool_target).stage(Stage::Pool, shown(weights))?;
    manifest.record_timing("pool", t.elapsed());
    let sigma = effective_sigma(&pooled, options.config.sigma_factor, options.config.bandwidth_rule)
        .stage(Stage::Bandwidth, format!("{} pooled weights", pooled.len()))?;
    let mut buf = Vec::new();
    writeln!(buf, "{}", manifest.header_line()).expect("write to memory");
    writeln!(buf, "index,value").expect("write to memory");
    for (i, v) in pooled.iter().enumerate() {
        writeln!(buf, "{i},{}", format_real(*v)).expect("write to memory");
    }
    eprintln!(
        "{} parameters, window {}, {} pooled weights, sigma {}",
        source.total_params(),
        pool_window(source.total_params(), options.config.pool_target),
        pooled.len(),
        format_real(sigma)
    );
    emit(g.out.as_deref(), &buf, &manifest)
}
