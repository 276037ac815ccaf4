//! Error-detection and calibration metrics.
//!
//! Misclassifications are the positive class; the uncertainty score is the
//! detector. Ties are handled with average ranks (ROC, Spearman) and grouped
//! thresholds (average precision).

use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};
use crate::scalar::{CompensatedSum, Scalar};

/// Uncertainty scores paired with misclassification indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset<T> {
    /// Higher means more uncertain.
    pub scores: Vec<T>,
    /// `true` for a misclassified sample.
    pub errors: Vec<bool>,
    /// Top-class probabilities in `[0, 1]`.
    pub confidences: Vec<T>,
}

impl<T: Scalar> ScoredDataset<T> {
    pub fn new(scores: Vec<T>, errors: Vec<bool>, confidences: Vec<T>) -> Result<Self> {
        if scores.len() != errors.len() || scores.len() != confidences.len() {
            return Err(QipfError::invalid(format!(
                "length mismatch: {} scores, {} error flags, {} confidences",
                scores.len(),
                errors.len(),
                confidences.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(QipfError::NonFinite("scores".into()));
        }
        if confidences
            .iter()
            .any(|&c| !(c >= T::zero() && c <= T::one()))
        {
            return Err(QipfError::invalid("confidences must lie in [0, 1]"));
        }
        Ok(Self {
            scores,
            errors,
            confidences,
        })
    }

    /// Dataset without confidences, for the ranking metrics.
    pub fn from_scores(scores: Vec<T>, errors: Vec<bool>) -> Result<Self> {
        let n = scores.len();
        Self::new(scores, errors, vec![T::one(); n])
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.errors.iter().filter(|&&e| e).count();
        (pos, self.errors.len() - pos)
    }

    fn require_both_classes(&self, metric: &str) -> Result<(usize, usize)> {
        let (pos, neg) = self.class_counts();
        if pos == 0 || neg == 0 {
            return Err(QipfError::UndefinedMetric(format!(
                "{metric} needs both correct and misclassified samples ({pos} errors, {neg} correct)"
            )));
        }
        Ok((pos, neg))
    }
}

fn ascending_order<T: Scalar>(xs: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    idx
}

/// Twice the average rank (1-based) of every entry, so tied ranks stay integral.
fn doubled_average_ranks<T: Scalar>(xs: &[T]) -> Vec<u64> {
    let order = ascending_order(xs);
    let mut ranks = vec![0u64; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean (i + j + 2) / 2.
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Average ranks, ties sharing their mean rank.
pub fn average_ranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    doubled_average_ranks(xs)
        .into_iter()
        .map(|r| T::of(r as f64 / 2.0))
        .collect()
}

/// Area under the ROC curve: the Mann-Whitney probability that an error
/// outscores a correct prediction, ties counting one half.
pub fn roc_auc<T: Scalar>(data: &ScoredDataset<T>) -> Result<T> {
    let (pos, neg) = data.require_both_classes("ROC-AUC")?;
    let ranks = doubled_average_ranks(&data.scores);
    let doubled_rank_sum: u64 = ranks
        .iter()
        .zip(&data.errors)
        .filter(|(_, &e)| e)
        .map(|(&r, _)| r)
        .sum();
    // 2U = 2R - n1 (n1 + 1); exact in integers.
    let doubled_u = doubled_rank_sum - (pos * (pos + 1)) as u64;
    Ok(T::of(doubled_u as f64 / (2.0 * pos as f64 * neg as f64)))
}

/// Average precision over descending score thresholds; tied scores form one
/// threshold.
pub fn pr_auc<T: Scalar>(data: &ScoredDataset<T>) -> Result<T> {
    let (pos, _) = data.class_counts();
    if pos == 0 {
        return Err(QipfError::UndefinedMetric(
            "average precision needs at least one misclassified sample".into(),
        ));
    }
    let mut order = ascending_order(&data.scores);
    order.reverse();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = CompensatedSum::new();
    let mut i = 0;
    while i < order.len() {
        let threshold = data.scores[order[i]];
        let group_tp_before = tp;
        while i < order.len() && data.scores[order[i]] == threshold {
            if data.errors[order[i]] {
                tp += 1;
            }
            seen += 1;
            i += 1;
        }
        if tp > group_tp_before {
            let recall_step = (tp - group_tp_before) as f64 / pos as f64;
            let precision = tp as f64 / seen as f64;
            ap.add(recall_step * precision);
        }
    }
    Ok(T::of(ap.value()))
}

/// Equal-width confidence bins with per-bin accuracy and mean confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `None` for empty bins.
    pub accuracy: Vec<Option<f64>>,
    pub mean_confidence: Vec<Option<f64>>,
}

/// Bins `[0, 1/B), [1/B, 2/B), ..., [(B-1)/B, 1]`.
pub fn calibration_bins<T: Scalar>(data: &ScoredDataset<T>, num_bins: usize) -> Result<CalibrationBins> {
    if num_bins == 0 {
        return Err(QipfError::invalid("at least one bin is required"));
    }
    let edges: Vec<f64> = (0..=num_bins).map(|i| i as f64 / num_bins as f64).collect();
    let mut counts = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf = vec![CompensatedSum::<f64>::new(); num_bins];
    for (&c, &err) in data.confidences.iter().zip(&data.errors) {
        let c = c.to_f64_lossy();
        let bin = ((c * num_bins as f64).floor() as usize).min(num_bins - 1);
        counts[bin] += 1;
        if !err {
            correct[bin] += 1;
        }
        conf[bin].add(c);
    }
    let accuracy = counts
        .iter()
        .zip(&correct)
        .map(|(&n, &k)| (n > 0).then(|| k as f64 / n as f64))
        .collect();
    let mean_confidence = counts
        .iter()
        .zip(&conf)
        .map(|(&n, s)| (n > 0).then(|| s.value() / n as f64))
        .collect();
    Ok(CalibrationBins {
        edges,
        counts,
        accuracy,
        mean_confidence,
    })
}

/// Expected calibration error over `num_bins` equal-width bins.
pub fn expected_calibration_error<T: Scalar>(data: &ScoredDataset<T>, num_bins: usize) -> Result<T> {
    let bins = calibration_bins(data, num_bins)?;
    let n = data.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let ece = bins
        .counts
        .iter()
        .zip(bins.accuracy.iter().zip(&bins.mean_confidence))
        .filter_map(|(&count, (acc, conf))| {
            Some(count as f64 / n as f64 * (acc.as_ref()? - conf.as_ref()?).abs())
        })
        .collect::<CompensatedSum<f64>>()
        .value();
    Ok(T::of(ece))
}

/// Multi-class Brier score `(1/N) sum_i sum_c (p_ic - [c = y_i])^2`.
pub fn brier_score<T: Scalar>(probabilities: &[Vec<T>], true_labels: &[usize]) -> Result<T> {
    if probabilities.len() != true_labels.len() {
        return Err(QipfError::invalid(format!(
            "{} probability rows but {} labels",
            probabilities.len(),
            true_labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(QipfError::invalid("no samples"));
    }
    let mut total = CompensatedSum::new();
    for (i, (row, &label)) in probabilities.iter().zip(true_labels).enumerate() {
        if label >= row.len() {
            return Err(QipfError::invalid(format!(
                "row {i}: label {label} out of range for {} classes",
                row.len()
            )));
        }
        let sum = row.iter().copied().collect::<CompensatedSum<T>>().value();
        if (sum - T::one()).abs() > T::of(1e-6) {
            return Err(QipfError::invalid(format!(
                "row {i}: probabilities sum to {sum}, not 1"
            )));
        }
        for (c, &p) in row.iter().enumerate() {
            let target = if c == label { T::one() } else { T::zero() };
            total.add((p - target) * (p - target));
        }
    }
    Ok(total.value() / T::of_usize(probabilities.len()))
}

fn mean<T: Scalar>(xs: impl Iterator<Item = T>) -> T {
    let mut n = 0usize;
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
        n += 1;
    }
    acc.value() / T::of_usize(n)
}

/// Point-biserial correlation between scores and the error indicator.
pub fn point_biserial<T: Scalar>(data: &ScoredDataset<T>) -> Result<T> {
    let (pos, neg) = data.require_both_classes("point-biserial correlation")?;
    let n = T::of_usize(data.len());
    let all_mean = mean(data.scores.iter().copied());
    let var = mean(data.scores.iter().map(|&s| (s - all_mean) * (s - all_mean)));
    if var <= T::zero() {
        return Err(QipfError::UndefinedMetric(
            "point-biserial correlation needs scores with nonzero variance".into(),
        ));
    }
    let pick = |flag: bool| {
        mean(
            data.scores
                .iter()
                .zip(&data.errors)
                .filter(move |(_, &e)| e == flag)
                .map(|(&s, _)| s),
        )
    };
    let m1 = pick(true);
    let m0 = pick(false);
    let balance = (T::of_usize(pos) * T::of_usize(neg) / (n * n)).sqrt();
    Ok((m1 - m0) / var.sqrt() * balance)
}

/// Pearson correlation of average ranks.
pub fn spearman_rho<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(QipfError::invalid("spearman inputs differ in length"));
    }
    if x.len() < 2 {
        return Err(QipfError::UndefinedMetric("spearman needs two samples".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let mx = mean(x.iter().copied());
    let my = mean(y.iter().copied());
    let mut sxy = CompensatedSum::new();
    let mut sxx = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for (&a, &b) in x.iter().zip(y) {
        sxy.add((a - mx) * (b - my));
        sxx.add((a - mx) * (a - mx));
        syy.add((b - my) * (b - my));
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(QipfError::UndefinedMetric(
            "correlation needs variance in both variables".into(),
        ));
    }
    Ok(sxy.value() / (sxx * syy).sqrt())
}

/// Spearman correlation between scores and the error indicator.
pub fn spearman<T: Scalar>(data: &ScoredDataset<T>) -> Result<T> {
    let errs: Vec<T> = data
        .errors
        .iter()
        .map(|&e| if e { T::one() } else { T::zero() })
        .collect();
    spearman_rho(&data.scores, &errs)
}

/// Metric report as emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub ece: f64,
    pub brier: Option<f64>,
    pub point_biserial: Option<f64>,
    pub spearman: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    /// Computes every metric that is defined for `data`. The Brier score needs
    /// full class probabilities and is filled in only when they are supplied.
    pub fn compute(data: &ScoredDataset<f64>, num_bins: usize, brier: Option<f64>) -> Result<Self> {
        Ok(Self {
            roc_auc: roc_auc(data).ok(),
            pr_auc: pr_auc(data).ok(),
            ece: expected_calibration_error(data, num_bins)?,
            brier,
            point_biserial: point_biserial(data).ok(),
            spearman: spearman(data).ok(),
            n: data.len(),
        })
    }
}
