//! Scoring pipeline: bundle -> pooled weights -> field -> modes -> scores,
//! plus the score-file format and the score/prediction join used by metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::QipfError;
use crate::ingest::{pool_weights, PredictionRecord, WeightBundle};
use crate::kernel_field::{effective_sigma, WeightField};
use crate::modes::{decompose, uncertainty_score};
use crate::{Config, Decomposition, Scored};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Load,
    Pool,
    Bandwidth,
    Decompose,
    Score,
    Join,
    Metrics,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Load => "load",
            Self::Pool => "pool",
            Self::Bandwidth => "bandwidth",
            Self::Decompose => "decompose",
            Self::Score => "score",
            Self::Join => "join",
            Self::Metrics => "metrics",
            Self::Write => "write",
        };
        f.write_str(s)
    }
}

/// A library error tagged with the pipeline stage and the input it concerned.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed ({context}): {source}")]
pub struct StageError {
    pub stage: Stage,
    pub context: String,
    #[source]
    pub source: QipfError,
}

impl StageError {
    pub fn new(stage: Stage, context: impl Into<String>, source: QipfError) -> Self {
        Self {
            stage,
            context: context.into(),
            source,
        }
    }

    /// 3 for numerical failures, 2 for everything attributable to inputs.
    pub fn exit_code(&self) -> i32 {
        if self.source.is_numerical() {
            3
        } else {
            2
        }
    }
}

/// Attaches a stage and context to library results.
pub trait StageContext<T> {
    fn stage(self, stage: Stage, context: impl Into<String>) -> Result<T, StageError>;
}

impl<T> StageContext<T> for crate::Result<T> {
    fn stage(self, stage: Stage, context: impl Into<String>) -> Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, context, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub config: Config,
    /// Pool only weight matrices, dropping layers named `*bias*`.
    pub exclude_biases: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    pub pooled: Vec<f64>,
    pub sigma: f64,
    pub decomposition: Decomposition,
    pub scores: Vec<f64>,
    pub timings: Vec<(Stage, Duration)>,
}

/// Scores `eval_points` against the weight field of `bundle`.
///
/// Mode offsets come from `calibration_points`, or from the evaluation batch
/// itself when none are given.
pub fn score_bundle(
    bundle: &WeightBundle,
    eval_points: &[f64],
    calibration_points: Option<&[f64]>,
    options: &ScoreOptions,
) -> Result<ScoreRun, StageError> {
    let config = &options.config;
    config.validate().stage(Stage::Score, "configuration")?;
    let mut timings = Vec::new();

    let t = Instant::now();
    let source = if options.exclude_biases {
        bundle.without_biases()
    } else {
        bundle.clone()
    };
    let pooled = pool_weights(&source, config.pool_target)
        .stage(Stage::Pool, format!("{} parameters", source.total_params()))?;
    timings.push((Stage::Pool, t.elapsed()));

    let t = Instant::now();
    let sigma = effective_sigma(&pooled, config.sigma_factor, config.bandwidth_rule)
        .stage(Stage::Bandwidth, format!("{} pooled weights", pooled.len()))?;
    let field = WeightField::new(pooled.clone(), sigma).stage(Stage::Bandwidth, "field")?;
    timings.push((Stage::Bandwidth, t.elapsed()));

    let t = Instant::now();
    let decomposition = decompose(&field, eval_points, calibration_points, config).stage(
        Stage::Decompose,
        format!(
            "{} evaluation points, {} calibration points",
            eval_points.len(),
            calibration_points.map_or(eval_points.len(), <[f64]>::len)
        ),
    )?;
    timings.push((Stage::Decompose, t.elapsed()));

    let t = Instant::now();
    let scores = uncertainty_score(&decomposition, config);
    timings.push((Stage::Score, t.elapsed()));

    Ok(ScoreRun {
        pooled,
        sigma,
        decomposition,
        scores,
        timings,
    })
}

/// Scores a prediction batch; `y_eval` is the evaluation point of each row.
pub fn score_predictions(
    bundle: &WeightBundle,
    predictions: &[PredictionRecord],
    calibration: Option<&[PredictionRecord]>,
    options: &ScoreOptions,
) -> Result<ScoreRun, StageError> {
    let eval: Vec<f64> = predictions.iter().map(|r| r.y_eval).collect();
    let calib: Option<Vec<f64>> = calibration.map(|c| c.iter().map(|r| r.y_eval).collect());
    score_bundle(bundle, &eval, calib.as_deref(), options)
}

/// Column names of a score file with `num_modes` modes.
pub fn score_header(num_modes: usize) -> Vec<String> {
    let mut cols = vec!["id".to_string(), "score".to_string()];
    cols.extend((1..=num_modes).map(|k| format!("V_{k}")));
    cols.push("clamped".into());
    cols
}

/// Writes `id,score,V_1..V_K,clamped`, preceded by the manifest line when
/// given. `clamped` is 1 when any mode hit the denominator floor.
pub fn write_scores<W: Write>(
    mut w: W,
    ids: &[String],
    run: &ScoreRun,
    manifest_line: Option<&str>,
) -> crate::Result<()> {
    let decomp = &run.decomposition;
    if ids.len() != run.scores.len() {
        return Err(QipfError::invalid(format!(
            "{} ids for {} scores",
            ids.len(),
            run.scores.len()
        )));
    }
    if let Some(line) = manifest_line {
        writeln!(w, "{line}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| QipfError::Io(e.into());
    csv.write_record(score_header(decomp.max_order())).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone(), format_real(run.scores[i])];
        row.extend((1..=decomp.max_order()).map(|k| format_real(decomp.mode_values[k][i])));
        row.push(u8::from(decomp.any_clamped(i)).to_string());
        csv.write_record(&row).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_real(x: f64) -> String {
    format!("{x:?}")
}

/// Reads the `id` and `score` columns of a score file, skipping `#` lines.
pub fn read_scores<R: BufRead>(reader: R) -> crate::Result<Vec<(String, f64)>> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers().map_err(|e| QipfError::Parse {
        location: "scores header".into(),
        message: e.to_string(),
    })?;
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| QipfError::Parse {
            location: "scores header".into(),
            message: format!("missing `{name}` column"),
        })
    };
    let (id_col, score_col) = (col("id")?, col("score")?);
    let mut out = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let location = format!("scores row {}", i + 1);
        let row = row.map_err(|e| QipfError::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        let score: f64 = row[score_col].parse().map_err(|e| QipfError::Parse {
            location: location.clone(),
            message: format!("bad score: {e}"),
        })?;
        if !score.is_finite() {
            return Err(QipfError::Parse {
                location,
                message: "score must be finite".into(),
            });
        }
        out.push((row[id_col].to_string(), score));
    }
    Ok(out)
}

/// Pairs scores with predictions by id, in prediction order. Every id must
/// occur exactly once on each side.
pub fn join_scores(scores: &[(String, f64)], predictions: &[PredictionRecord]) -> crate::Result<Scored> {
    let mut by_id = BTreeMap::new();
    for (id, s) in scores {
        if by_id.insert(id.as_str(), *s).is_some() {
            return Err(QipfError::invalid(format!("duplicate id `{id}` in scores")));
        }
    }
    let mut seen = BTreeSet::new();
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            return Err(QipfError::invalid(format!("duplicate id `{}` in predictions", p.id)));
        }
    }
    let only_scores: Vec<&str> = by_id.keys().copied().filter(|id| !seen.contains(id)).collect();
    let only_preds: Vec<&str> = seen.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    if !only_scores.is_empty() || !only_preds.is_empty() {
        return Err(QipfError::invalid(format!(
            "ids do not join: only in scores {only_scores:?}, only in predictions {only_preds:?}"
        )));
    }
    crate::metrics::ScoredDataset::new(
        predictions.iter().map(|p| by_id[p.id.as_str()]).collect(),
        predictions.iter().map(PredictionRecord::is_error).collect(),
        predictions.iter().map(|p| p.confidence).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Layer;

    fn bundle() -> WeightBundle {
        let values: Vec<f32> = (0..64).map(|i| ((i * 37 % 64) as f32 - 32.0) / 16.0).collect();
        WeightBundle::new(vec![
            Layer::new("dense.weight", vec![8, 8], values).unwrap(),
            Layer::new("dense.bias", vec![2], vec![5.0, -5.0]).unwrap(),
        ])
    }

    fn options(k: usize) -> ScoreOptions {
        ScoreOptions {
            config: Config {
                sigma_factor: 1.0,
                pool_target: 16,
                ..Config::with_modes(k)
            },
            exclude_biases: false,
        }
    }

    fn record(id: &str, y: f64, err: bool) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            y_eval: y,
            confidence: 0.8,
            true_label: 1,
            predicted_label: if err { 0 } else { 1 },
        }
    }

    #[test]
    fn scores_every_point_with_zero_minimum() {
        let eval = [-3.0, -1.0, 0.0, 0.5, 2.0, 4.0];
        let run = score_bundle(&bundle(), &eval, None, &options(4)).unwrap();
        assert_eq!(run.scores.len(), eval.len());
        // 66 parameters, window 5: 13 weight windows and one bias window.
        assert_eq!(run.pooled.len(), 13 + 1);
        for k in 0..=4 {
            let min = run.decomposition.mode(k).iter().copied().fold(f64::INFINITY, f64::min);
            assert!(min.abs() < 1e-9, "mode {k}");
        }
    }

    #[test]
    fn excluding_biases_changes_the_pool() {
        let mut opts = options(2);
        opts.exclude_biases = true;
        let run = score_bundle(&bundle(), &[0.0, 1.0], None, &opts).unwrap();
        assert_eq!(run.pooled.len(), 16);
    }

    #[test]
    fn errors_carry_stage_and_exit_code() {
        let err = score_bundle(&WeightBundle::default(), &[0.0], None, &options(2)).unwrap_err();
        assert_eq!(err.stage, Stage::Pool);
        assert_eq!(err.exit_code(), 2);
        let err = score_bundle(&bundle(), &[], None, &options(2)).unwrap_err();
        assert_eq!(err.stage, Stage::Decompose);
        assert!(err.to_string().starts_with("decompose stage failed"));
        let numeric = StageError::new(
            Stage::Decompose,
            "",
            QipfError::NumericalFailure {
                y: 0.0,
                mode: 1,
                detail: String::new(),
            },
        );
        assert_eq!(numeric.exit_code(), 3);
    }

    #[test]
    fn score_file_round_trip() {
        let preds = [record("a", 0.0, false), record("b", 1.0, true), record("c", 9.0, true)];
        let run = score_predictions(&bundle(), &preds, None, &options(3)).unwrap();
        let ids: Vec<String> = preds.iter().map(|p| p.id.clone()).collect();
        let mut buf = Vec::new();
        write_scores(&mut buf, &ids, &run, Some("# manifest_sha256=00")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# manifest_sha256=00"));
        assert_eq!(lines.next(), Some("id,score,V_1,V_2,V_3,clamped"));
        let back = read_scores(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for ((id, s), (want_id, want)) in back.iter().zip(ids.iter().zip(&run.scores)) {
            assert_eq!(id, want_id);
            assert_eq!(s, want);
        }
    }

    #[test]
    fn join_reports_orphans() {
        let preds = [record("a", 0.0, false), record("b", 0.0, true)];
        let scores = vec![("b".to_string(), 0.9), ("a".to_string(), 0.1)];
        let joined = join_scores(&scores, &preds).unwrap();
        assert_eq!(joined.scores, vec![0.1, 0.9]);
        assert_eq!(joined.errors, vec![false, true]);

        let orphan = vec![("a".to_string(), 0.1), ("z".to_string(), 0.5)];
        let msg = join_scores(&orphan, &preds).unwrap_err().to_string();
        assert!(msg.contains("\"z\"") && msg.contains("\"b\""), "{msg}");
        let dup = vec![("a".to_string(), 0.1), ("a".to_string(), 0.2)];
        assert!(join_scores(&dup, &preds).is_err());
    }

    #[test]
    fn separate_calibration_batch() {
        let preds = [record("a", 0.0, false), record("b", 1.0, true)];
        let calib = [record("c", -4.0, false), record("d", 4.0, false)];
        let run = score_predictions(&bundle(), &preds, Some(&calib), &options(2)).unwrap();
        let batch = score_predictions(&bundle(), &preds, None, &options(2)).unwrap();
        assert_ne!(run.decomposition.offsets, batch.decomposition.offsets);
    }
}
