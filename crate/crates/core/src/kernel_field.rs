//! Gaussian potential field of a set of weight samples.
//!
//! The field is the empirical kernel mean embedding of the weights evaluated
//! in prediction space,
//!
//! ```text
//! psi(y) = (1/n) * sum_t exp(-(y - w_t)^2 / (2 sigma^2))
//! ```
//!
//! with unit-peak kernels, so `0 < psi <= 1`. First and second derivatives are
//! analytic per-kernel sums accumulated with compensated summation.

use rayon::prelude::*;

use crate::error::{QipfError, Result};
use crate::scalar::{CompensatedSum, Scalar};

/// Unit-peak Gaussian kernel `exp(-(y - w)^2 / (2 sigma^2))`.
pub fn gaussian_kernel<T: Scalar>(w: T, y: T, sigma: T) -> Result<T> {
    if !w.is_finite() || !y.is_finite() {
        return Err(QipfError::invalid("kernel arguments must be finite"));
    }
    check_sigma(sigma)?;
    let d = y - w;
    Ok((-(d * d) / (T::of(2.0) * sigma * sigma)).exp())
}

fn check_sigma<T: Scalar>(sigma: T) -> Result<()> {
    if !(sigma.is_finite() && sigma > T::zero()) {
        return Err(QipfError::invalid(format!(
            "kernel width must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

/// Pooled weight samples and the kernel width defining the potential field.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField<T> {
    points: Vec<T>,
    sigma: T,
}

/// Field value with its first and second derivative in `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEval<T> {
    pub value: T,
    pub d1: T,
    pub d2: T,
}

/// Field evaluation with the magnitude factored out.
///
/// `log_value` is `ln psi(y)`; `grad_ratio` and `lap_ratio` are `psi'/psi` and
/// `psi''/psi`. All three stay finite far outside the support where `psi`
/// itself underflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledEval<T> {
    pub log_value: T,
    pub grad_ratio: T,
    pub lap_ratio: T,
}

impl<T: Scalar> ScaledEval<T> {
    /// `psi(y)`; zero once it underflows.
    pub fn value(&self) -> T {
        self.log_value.exp()
    }
}

impl<T: Scalar> WeightField<T> {
    pub fn new(points: Vec<T>, sigma: T) -> Result<Self> {
        if points.is_empty() {
            return Err(QipfError::invalid("weight field needs at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(QipfError::NonFinite(format!("weight field point {i}")));
        }
        check_sigma(sigma)?;
        Ok(Self { points, sigma })
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Perturbation intensity `sigma^2 / 2`.
    pub fn intensity(&self) -> T {
        self.sigma * self.sigma / T::of(2.0)
    }

    /// Value, slope and curvature of the field at `y`.
    ///
    /// The value underflows to zero roughly 38 kernel widths outside the
    /// support; use [`WeightField::evaluate_scaled`] when only ratios matter.
    pub fn evaluate(&self, y: T) -> Result<FieldEval<T>> {
        check_point(y)?;
        let inv_s2 = (self.sigma * self.sigma).recip();
        let half = T::of(0.5);
        let mut value = CompensatedSum::new();
        let mut d1 = CompensatedSum::new();
        let mut d2 = CompensatedSum::new();
        for &w in &self.points {
            let d = y - w;
            let u = d * d * inv_s2;
            let g = (-half * u).exp();
            value.add(g);
            d1.add(-g * d * inv_s2);
            d2.add(g * (u - T::one()) * inv_s2);
        }
        let n = T::of_usize(self.points.len());
        Ok(FieldEval {
            value: value.value() / n,
            d1: d1.value() / n,
            d2: d2.value() / n,
        })
    }

    /// Log-value and derivative ratios at `y`, computed with the largest
    /// kernel exponent factored out so nothing underflows.
    pub fn evaluate_scaled(&self, y: T) -> Result<ScaledEval<T>> {
        check_point(y)?;
        let inv_s2 = (self.sigma * self.sigma).recip();
        let half = T::of(0.5);
        let shift = self
            .points
            .iter()
            .map(|&w| {
                let d = y - w;
                -half * d * d * inv_s2
            })
            .fold(T::neg_infinity(), T::max);
        let mut mass = CompensatedSum::new();
        let mut slope = CompensatedSum::new();
        let mut curvature = CompensatedSum::new();
        for &w in &self.points {
            let d = y - w;
            let u = d * d * inv_s2;
            let g = (-half * u - shift).exp();
            mass.add(g);
            slope.add(-g * d * inv_s2);
            curvature.add(g * (u - T::one()) * inv_s2);
        }
        let mass = mass.value();
        let n = T::of_usize(self.points.len());
        Ok(ScaledEval {
            log_value: shift + (mass / n).ln(),
            grad_ratio: slope.value() / mass,
            lap_ratio: curvature.value() / mass,
        })
    }

    /// Evaluates the field at every `y` in parallel. Each entry is computed
    /// independently, so results do not depend on how the work is split.
    pub fn evaluate_many(&self, ys: &[T]) -> Result<Vec<FieldEval<T>>> {
        ys.par_iter().map(|&y| self.evaluate(y)).collect()
    }
}

fn check_point<T: Scalar>(y: T) -> Result<()> {
    if !y.is_finite() {
        return Err(QipfError::invalid(format!(
            "evaluation point must be finite, got {y}"
        )));
    }
    Ok(())
}

/// Rule-of-thumb bandwidth variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `0.9 * min(s, IQR / 1.34) * n^(-1/5)`.
    #[default]
    Silverman,
    /// `1.06 * s * n^(-1/5)`.
    NormalReference,
}

impl BandwidthRule {
    pub fn bandwidth<T: Scalar>(self, samples: &[T]) -> Result<T> {
        if samples.len() < 2 {
            return Err(QipfError::invalid(
                "bandwidth selection needs at least two samples",
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(QipfError::NonFinite(format!("bandwidth sample {i}")));
        }
        let first = samples[0];
        if samples.iter().all(|&s| s == first) {
            return Err(QipfError::DegenerateData(
                "all samples are identical; bandwidth would be zero".into(),
            ));
        }
        let n = T::of_usize(samples.len());
        let sd = sample_std(samples);
        let rate = n.powf(T::of(-0.2));
        let spread = match self {
            Self::NormalReference => return Ok(T::of(1.06) * sd * rate),
            Self::Silverman => {
                let mut sorted = samples.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
                let iqr = quantile_sorted(&sorted, T::of(0.75)) - quantile_sorted(&sorted, T::of(0.25));
                // A zero IQR with nonzero spread (heavy ties) falls back to s.
                if iqr > T::zero() {
                    sd.min(iqr / T::of(1.34))
                } else {
                    sd
                }
            }
        };
        Ok(T::of(0.9) * spread * rate)
    }
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth<T: Scalar>(samples: &[T]) -> Result<T> {
    BandwidthRule::Silverman.bandwidth(samples)
}

/// Bandwidth scaled by a cross-validated multiplier.
pub fn effective_sigma<T: Scalar>(samples: &[T], factor: T, rule: BandwidthRule) -> Result<T> {
    if !(factor.is_finite() && factor > T::zero()) {
        return Err(QipfError::invalid(format!(
            "bandwidth factor must be positive, got {factor}"
        )));
    }
    Ok(factor * rule.bandwidth(samples)?)
}

fn sample_std<T: Scalar>(samples: &[T]) -> T {
    let n = T::of_usize(samples.len());
    let mean = samples.iter().copied().collect::<CompensatedSum<T>>().value() / n;
    let ss = samples
        .iter()
        .map(|&s| (s - mean) * (s - mean))
        .collect::<CompensatedSum<T>>()
        .value();
    (ss / (n - T::one())).sqrt()
}

/// Quantile with linear interpolation between order statistics
/// (position `(n - 1) * p`).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let pos = T::of_usize(sorted.len() - 1) * p;
    let lo = pos.floor();
    let i = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    let j = (i + 1).min(sorted.len() - 1);
    let frac = pos - lo;
    sorted[i] + (sorted[j] - sorted[i]) * frac
}
