use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};

/// Input domain of the toy regression task.
pub const DOMAIN: (f64, f64) = (-2.0, 2.5);

/// Envelope `a(x)` of the target `a(x) sin(omega x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Amplitude {
    /// `a(x) = x`.
    #[default]
    Linear,
    Constant(f64),
}

impl Amplitude {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            Self::Linear => x,
            Self::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineParams {
    pub n_train: usize,
    pub seed: u64,
    pub noise_sd: f64,
    /// Disjoint `[lo, hi]` intervals inside [`DOMAIN`] that training inputs
    /// are drawn from.
    pub seen_intervals: Vec<(f64, f64)>,
    pub amplitude: Amplitude,
    pub omega: f64,
    pub grid_points: usize,
}

impl Default for SineParams {
    fn default() -> Self {
        Self {
            n_train: 120,
            seed: 0,
            noise_sd: 0.1,
            seen_intervals: vec![(-1.25, -0.25), (0.5, 1.5)],
            amplitude: Amplitude::Linear,
            omega: 2.0 * std::f64::consts::PI / 1.5,
            grid_points: 451,
        }
    }
}

impl SineParams {
    pub fn target(&self, x: f64) -> f64 {
        self.amplitude.at(x) * (self.omega * x).sin()
    }

    pub fn is_seen(&self, x: f64) -> bool {
        self.seen_intervals
            .iter()
            .any(|&(lo, hi)| (lo..=hi).contains(&x))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 {
            return Err(QipfError::invalid("need at least two training points"));
        }
        if self.grid_points < 2 {
            return Err(QipfError::invalid("need at least two grid points"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(QipfError::invalid("noise sd must be finite and nonnegative"));
        }
        if !self.omega.is_finite() {
            return Err(QipfError::invalid("omega must be finite"));
        }
        if self.seen_intervals.is_empty() {
            return Err(QipfError::invalid("no seen intervals"));
        }
        for &(lo, hi) in &self.seen_intervals {
            if !(lo < hi && lo >= DOMAIN.0 && hi <= DOMAIN.1) {
                return Err(QipfError::invalid(format!(
                    "interval [{lo}, {hi}] is empty or leaves the domain [{}, {}]",
                    DOMAIN.0, DOMAIN.1
                )));
            }
        }
        Ok(())
    }
}

/// Training sample plus an evaluation grid over the whole domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SineDataset {
    pub train_xs: Vec<f64>,
    pub train_ys: Vec<f64>,
    pub grid_xs: Vec<f64>,
    /// Noise-free target on the grid.
    pub grid_ys: Vec<f64>,
    pub seen_mask: Vec<bool>,
}

pub fn make_sine_dataset(params: &SineParams) -> Result<SineDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise_sd)
        .map_err(|e| QipfError::invalid(format!("noise: {e}")))?;
    let total: f64 = params.seen_intervals.iter().map(|(lo, hi)| hi - lo).sum();

    let mut train_xs = Vec::with_capacity(params.n_train);
    let mut train_ys = Vec::with_capacity(params.n_train);
    for _ in 0..params.n_train {
        // A uniform draw over the concatenated intervals picks each interval
        // in proportion to its length.
        let mut u = rng.random_range(0.0..total);
        let mut x = params.seen_intervals[params.seen_intervals.len() - 1].1;
        for &(lo, hi) in &params.seen_intervals {
            if u < hi - lo {
                x = lo + u;
                break;
            }
            u -= hi - lo;
        }
        train_xs.push(x);
        train_ys.push(params.target(x) + noise.sample(&mut rng));
    }

    let step = (DOMAIN.1 - DOMAIN.0) / (params.grid_points - 1) as f64;
    let grid_xs: Vec<f64> = (0..params.grid_points)
        .map(|i| DOMAIN.0 + step * i as f64)
        .collect();
    let grid_ys = grid_xs.iter().map(|&x| params.target(x)).collect();
    let seen_mask: Vec<bool> = grid_xs.iter().map(|&x| params.is_seen(x)).collect();
    if seen_mask.iter().all(|&s| s) || !seen_mask.iter().any(|&s| s) {
        return Err(QipfError::invalid(
            "grid must contain both seen and unseen points",
        ));
    }
    Ok(SineDataset {
        train_xs,
        train_ys,
        grid_xs,
        grid_ys,
        seen_mask,
    })
}
