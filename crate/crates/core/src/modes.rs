//! Mode decomposition of the weight field.
//!
//! Mode `k` of the field at `y` is
//!
//! ```text
//! V_k(y) = E^k + (sigma^2 / 2) * psi_k''(y) / psi_k(y)
//! ```
//!
//! where `psi_0` is the field itself and `psi_k = h_k(psi_0)` for `k >= 1` is
//! its composition with the orthonormal Hermite polynomial of order `k`. The
//! offset `E^k` is minus the smallest raw ratio over a calibration set, so
//! every mode is zero at its calibration minimum and nonnegative across the
//! calibration set.
//!
//! Ratios are formed from the scale-free quantities `psi'/psi` and
//! `psi''/psi`, so they stay finite where `psi_0` underflows. For odd `k` the
//! composition `h_k(psi_0)` carries a factor of `psi_0`; the denominator is
//! taken as `h_k(psi_0) / psi_0` so that only genuine sign changes of the
//! Hermite factor, not the decay of the field, trigger the clamp.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};
use crate::hermite::HermiteTable;
use crate::kernel_field::{BandwidthRule, FieldEval, WeightField};
use crate::scalar::Scalar;

/// Settings for mode extraction and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QipfConfig<T> {
    /// Highest mode order `K`; modes `0..=K` are computed.
    pub num_modes: usize,
    /// Multiplier applied to the rule-of-thumb bandwidth of the pooled weights.
    pub sigma_factor: T,
    pub bandwidth_rule: BandwidthRule,
    /// Average modes `0..=K` instead of `1..=K` in the score.
    pub include_mode_zero_in_score: bool,
    /// Smallest magnitude allowed in a ratio denominator.
    pub denom_epsilon: T,
    /// Approximate number of pooled weights.
    pub pool_target: usize,
}

impl<T: Scalar> Default for QipfConfig<T> {
    fn default() -> Self {
        Self {
            num_modes: 4,
            sigma_factor: T::of(80.0),
            bandwidth_rule: BandwidthRule::Silverman,
            include_mode_zero_in_score: false,
            denom_epsilon: T::of(1e-12),
            pool_target: 1024,
        }
    }
}

impl<T: Scalar> QipfConfig<T> {
    pub fn with_modes(num_modes: usize) -> Self {
        Self {
            num_modes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_modes < 1 {
            return Err(QipfError::invalid("at least one mode is required"));
        }
        self.validate_numerics()
    }

    // Decomposition alone also accepts K = 0 (the unperturbed term only).
    fn validate_numerics(&self) -> Result<()> {
        if self.num_modes > crate::hermite::MAX_HERMITE_ORDER {
            return Err(QipfError::UnsupportedOrder {
                order: self.num_modes,
                max: crate::hermite::MAX_HERMITE_ORDER,
            });
        }
        if !(self.denom_epsilon.is_finite() && self.denom_epsilon > T::zero()) {
            return Err(QipfError::invalid("denominator epsilon must be positive"));
        }
        if !(self.sigma_factor.is_finite() && self.sigma_factor > T::zero()) {
            return Err(QipfError::invalid("sigma factor must be positive"));
        }
        if self.pool_target < 1 {
            return Err(QipfError::invalid("pool target must be at least 1"));
        }
        Ok(())
    }
}

/// Per-point mode values, offsets and clamp diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecomposition<T> {
    pub eval_points: Vec<T>,
    /// `mode_values[k][i]` is `V_k` at `eval_points[i]`.
    pub mode_values: Vec<Vec<T>>,
    /// `E^k` for `k = 0..=K`.
    pub offsets: Vec<T>,
    /// `clamped[k][i]` marks a denominator that hit `denom_epsilon`.
    pub clamped: Vec<Vec<bool>>,
}

impl<T: Scalar> ModeDecomposition<T> {
    /// Highest mode order `K`.
    pub fn max_order(&self) -> usize {
        self.mode_values.len() - 1
    }

    pub fn mode(&self, k: usize) -> &[T] {
        &self.mode_values[k]
    }

    /// True when any mode was clamped at point `i`.
    pub fn any_clamped(&self, i: usize) -> bool {
        self.clamped.iter().any(|row| row[i])
    }
}

/// Raw ratios `(sigma^2/2) psi_k''/psi_k` at one point, before offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct RawModes<T> {
    pub ratios: Vec<T>,
    pub clamped: Vec<bool>,
}

/// `psi_k = h_k(psi_0)` with its derivatives, by the chain rule.
///
/// `psi_k' = h_k'(psi_0) psi_0'` and `psi_k'' = h_k''(psi_0) psi_0'^2 + h_k'(psi_0) psi_0''`.
/// Order 0 returns the field itself.
pub fn project<T: Scalar>(base: FieldEval<T>, k: usize) -> Result<FieldEval<T>> {
    if k == 0 {
        return Ok(base);
    }
    let hv = HermiteTable::new(k, base.value)?.get(k);
    Ok(FieldEval {
        value: hv.h,
        d1: hv.dh * base.d1,
        d2: hv.d2h * base.d1 * base.d1 + hv.dh * base.d2,
    })
}

/// Raw mode ratios at `y` for orders `0..=max_order`.
pub fn raw_mode_ratios<T: Scalar>(
    field: &WeightField<T>,
    y: T,
    max_order: usize,
    denom_epsilon: T,
) -> Result<RawModes<T>> {
    let scaled = field.evaluate_scaled(y)?;
    let psi = scaled.value();
    let a = scaled.grad_ratio;
    let b = scaled.lap_ratio;
    let lambda = field.intensity();
    let table = HermiteTable::new(max_order, psi)?;
    // Below this, h_k(psi)/psi is replaced by its limit h_k'(0) ~ h_k'(psi).
    let tiny = T::min_positive_value().sqrt();

    let mut ratios = Vec::with_capacity(max_order + 1);
    let mut clamped = Vec::with_capacity(max_order + 1);
    ratios.push(lambda * b);
    clamped.push(false);
    for k in 1..=max_order {
        let hv = table.get(k);
        // psi_k'' / psi_0
        let curvature = hv.d2h * psi * a * a + hv.dh * b;
        let (numerator, denom) = if k % 2 == 1 {
            let reduced = if psi > tiny { hv.h / psi } else { hv.dh };
            (curvature, reduced)
        } else {
            (psi * curvature, hv.h)
        };
        let hit = denom.abs() < denom_epsilon;
        let denom = if hit {
            if denom < T::zero() {
                -denom_epsilon
            } else {
                denom_epsilon
            }
        } else {
            denom
        };
        let r = lambda * numerator / denom;
        if !r.is_finite() {
            return Err(QipfError::NumericalFailure {
                y: y.to_f64_lossy(),
                mode: k,
                detail: format!("non-finite mode ratio {r}"),
            });
        }
        ratios.push(r);
        clamped.push(hit);
    }
    if !ratios[0].is_finite() {
        return Err(QipfError::NumericalFailure {
            y: y.to_f64_lossy(),
            mode: 0,
            detail: format!("non-finite base ratio {}", ratios[0]),
        });
    }
    Ok(RawModes { ratios, clamped })
}

fn raw_batch<T: Scalar>(
    field: &WeightField<T>,
    points: &[T],
    config: &QipfConfig<T>,
) -> Result<Vec<RawModes<T>>> {
    points
        .par_iter()
        .map(|&y| raw_mode_ratios(field, y, config.num_modes, config.denom_epsilon))
        .collect()
}

/// Decomposes the field at `eval_points`.
///
/// Offsets are fitted on `calibration_points`, or on `eval_points` when none
/// are given.
pub fn decompose<T: Scalar>(
    field: &WeightField<T>,
    eval_points: &[T],
    calibration_points: Option<&[T]>,
    config: &QipfConfig<T>,
) -> Result<ModeDecomposition<T>> {
    config.validate_numerics()?;
    if eval_points.is_empty() {
        return Err(QipfError::invalid("no evaluation points"));
    }
    if calibration_points.is_some_and(|c| c.is_empty()) {
        return Err(QipfError::invalid("calibration set is empty"));
    }
    let modes = config.num_modes + 1;

    let eval_raw = raw_batch(field, eval_points, config)?;
    let calib_raw;
    let calib = match calibration_points {
        Some(points) => {
            calib_raw = raw_batch(field, points, config)?;
            &calib_raw
        }
        None => &eval_raw,
    };

    let offsets: Vec<T> = (0..modes)
        .map(|k| {
            -calib
                .iter()
                .map(|r| r.ratios[k])
                .fold(T::infinity(), T::min)
        })
        .collect();

    let mut mode_values = vec![Vec::with_capacity(eval_points.len()); modes];
    let mut clamped = vec![Vec::with_capacity(eval_points.len()); modes];
    for raw in &eval_raw {
        for k in 0..modes {
            mode_values[k].push(offsets[k] + raw.ratios[k]);
            clamped[k].push(raw.clamped[k]);
        }
    }
    Ok(ModeDecomposition {
        eval_points: eval_points.to_vec(),
        mode_values,
        offsets,
        clamped,
    })
}

/// Mean mode value per evaluation point.
///
/// Averages modes `1..=K`, or `0..=K` with `include_mode_zero_in_score`. A
/// decomposition with only mode 0 scores with mode 0.
pub fn uncertainty_score<T: Scalar>(decomp: &ModeDecomposition<T>, config: &QipfConfig<T>) -> Vec<T> {
    let top = decomp.max_order();
    let first = if config.include_mode_zero_in_score || top == 0 {
        0
    } else {
        1
    };
    let count = T::of_usize(top - first + 1);
    (0..decomp.eval_points.len())
        .map(|i| {
            (first..=top)
                .map(|k| decomp.mode_values[k][i])
                .fold(T::zero(), |acc, v| acc + v)
                / count
        })
        .collect()
}
