//! Illustrative experiments: modes of a sine-wave signal in its value space,
//! and the toy regression with seen/unseen input regions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};
use crate::kernel_field::{effective_sigma, BandwidthRule, WeightField};
use crate::mlp::{self, TrainConfig};
use crate::modes::decompose;
use crate::pipeline::{format_real, score_bundle, ScoreOptions};
use crate::shift::{make_sine_dataset, SineParams};
use crate::{Config, Decomposition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineDemoConfig {
    /// Signal samples `sin(t)` on an even grid of `t` over `periods` periods.
    pub n_samples: usize,
    pub periods: f64,
    pub num_modes: usize,
    pub sigma_factor: f64,
    pub bandwidth_rule: BandwidthRule,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
}

impl Default for SineDemoConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            periods: 2.0,
            num_modes: 4,
            sigma_factor: 8.0,
            bandwidth_rule: BandwidthRule::Silverman,
            grid_min: -6.0,
            grid_max: 6.0,
            grid_points: 801,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineDemo {
    pub samples: Vec<f64>,
    pub sigma: f64,
    pub grid: Vec<f64>,
    /// Field value at each grid point.
    pub psi: Vec<f64>,
    pub decomposition: Decomposition,
}

pub fn sine_demo(config: &SineDemoConfig) -> Result<SineDemo> {
    if config.n_samples < 2 || config.grid_points < 2 {
        return Err(QipfError::invalid("need at least two samples and two grid points"));
    }
    if !(config.grid_min < config.grid_max && config.periods > 0.0) {
        return Err(QipfError::invalid("empty grid or signal range"));
    }
    let t_max = config.periods * std::f64::consts::TAU;
    let samples: Vec<f64> = (0..config.n_samples)
        .map(|i| (t_max * i as f64 / (config.n_samples - 1) as f64).sin())
        .collect();
    let sigma = effective_sigma(&samples, config.sigma_factor, config.bandwidth_rule)?;
    let field = WeightField::new(samples.clone(), sigma)?;
    let step = (config.grid_max - config.grid_min) / (config.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..config.grid_points)
        .map(|i| config.grid_min + step * i as f64)
        .collect();
    let psi = grid
        .iter()
        .map(|&y| Ok(field.evaluate_scaled(y)?.value()))
        .collect::<Result<_>>()?;
    let qipf = Config {
        sigma_factor: config.sigma_factor,
        bandwidth_rule: config.bandwidth_rule,
        ..Config::with_modes(config.num_modes)
    };
    let decomposition = decompose(&field, &grid, None, &qipf)?;
    Ok(SineDemo {
        samples,
        sigma,
        grid,
        psi,
        decomposition,
    })
}

impl SineDemo {
    /// Grid points more than three sample standard deviations from the
    /// sample mean.
    pub fn tail_mask(&self) -> Vec<bool> {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        let var = self.samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        let cut = 3.0 * var.sqrt();
        self.grid.iter().map(|y| (y - mean).abs() > cut).collect()
    }

    /// Mean of `V_k` over tail points divided by its mean elsewhere, per mode.
    pub fn tail_ratios(&self) -> Vec<f64> {
        let tail = self.tail_mask();
        self.decomposition
            .mode_values
            .iter()
            .map(|v| masked_mean(v, &tail, true) / masked_mean(v, &tail, false))
            .collect()
    }

    /// `y,psi,V_0..V_K`.
    pub fn write_csv<W: Write>(&self, mut w: W, manifest_line: Option<&str>) -> Result<()> {
        if let Some(line) = manifest_line {
            writeln!(w, "{line}")?;
        }
        let k = self.decomposition.max_order();
        let mut header = vec!["y".to_string(), "psi".to_string()];
        header.extend((0..=k).map(|j| format!("V_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, y) in self.grid.iter().enumerate() {
            let mut row = vec![format_real(*y), format_real(self.psi[i])];
            row.extend((0..=k).map(|j| format_real(self.decomposition.mode_values[j][i])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn masked_mean(values: &[f64], mask: &[bool], want: bool) -> f64 {
    let (sum, count) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    sum / count as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDemoConfig {
    pub data: SineParams,
    pub train: TrainConfig,
    pub qipf: Config,
    /// Ensemble members for the baseline; 0 skips it.
    pub ensemble_members: usize,
    /// Dropout rate of the separately trained MC-dropout baseline.
    pub dropout_rate: f64,
    /// Stochastic passes for the baseline; 0 skips it.
    pub dropout_samples: usize,
}

impl Default for RegressionDemoConfig {
    fn default() -> Self {
        Self {
            data: SineParams::default(),
            train: TrainConfig::default(),
            qipf: Config {
                sigma_factor: 20.0,
                ..Config::with_modes(4)
            },
            ensemble_members: 10,
            dropout_rate: 0.1,
            dropout_samples: 100,
        }
    }
}

impl RegressionDemoConfig {
    /// QIPF only, no baselines.
    pub fn without_baselines(mut self) -> Self {
        self.ensemble_members = 0;
        self.dropout_samples = 0;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDemo {
    pub l2: f64,
    pub grid: Vec<f64>,
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
    pub qipf_score: Vec<f64>,
    pub ensemble_std: Option<Vec<f64>>,
    pub dropout_std: Option<Vec<f64>>,
    pub seen_mask: Vec<bool>,
    pub final_loss: f64,
    pub sigma: f64,
}

impl RegressionDemo {
    pub fn unseen_mean(&self) -> f64 {
        masked_mean(&self.qipf_score, &self.seen_mask, false)
    }

    pub fn seen_mean(&self) -> f64 {
        masked_mean(&self.qipf_score, &self.seen_mask, true)
    }

    /// Mean score over unseen grid points divided by the mean over seen ones.
    pub fn unseen_seen_ratio(&self) -> f64 {
        self.unseen_mean() / self.seen_mean()
    }

    /// `x,target,prediction,qipf_score,ensemble_std,dropout_std,seen`; skipped
    /// baselines are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W, manifest_line: Option<&str>) -> Result<()> {
        if let Some(line) = manifest_line {
            writeln!(w, "{line}")?;
        }
        writeln!(w, "x,target,prediction,qipf_score,ensemble_std,dropout_std,seen")?;
        let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |v| format_real(v[i]));
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                format_real(self.grid[i]),
                format_real(self.target[i]),
                format_real(self.prediction[i]),
                format_real(self.qipf_score[i]),
                opt(&self.ensemble_std, i),
                opt(&self.dropout_std, i),
                u8::from(self.seen_mask[i])
            )?;
        }
        Ok(())
    }
}

/// Trains the regressor at one `l2`, scores its grid predictions against its
/// own pooled weights (calibrated on the grid batch) and, if enabled, the
/// ensemble and MC-dropout baselines. Data and model seeds are `data.seed`.
pub fn regression_demo(config: &RegressionDemoConfig, l2: f64) -> Result<RegressionDemo> {
    let data = make_sine_dataset(&config.data)?;
    let seed = config.data.seed;
    let train_cfg = TrainConfig {
        dropout_rate: 0.0,
        ..config.train.clone()
    };

    let main = || -> Result<_> {
        let trained = mlp::train(&data.train_xs, &data.train_ys, seed, l2, &train_cfg)?;
        let prediction = mlp::predict(&trained.model, &data.grid_xs, 0, seed).row(0).to_vec();
        let bundle = trained.model.to_bundle()?;
        let options = ScoreOptions {
            config: config.qipf,
            exclude_biases: false,
        };
        let run = score_bundle(&bundle, &prediction, None, &options).map_err(|e| e.source)?;
        let loss = *trained.loss_history.last().expect("history is never empty");
        Ok((prediction, run.scores, run.sigma, loss))
    };
    let ensemble = || -> Result<Option<Vec<f64>>> {
        if config.ensemble_members == 0 {
            return Ok(None);
        }
        mlp::ensemble_uncertainty(&data, config.ensemble_members, seed, l2, &train_cfg).map(Some)
    };
    let dropout = || -> Result<Option<Vec<f64>>> {
        if config.dropout_samples == 0 {
            return Ok(None);
        }
        let cfg = TrainConfig {
            dropout_rate: config.dropout_rate,
            ..config.train.clone()
        };
        let trained = mlp::train(&data.train_xs, &data.train_ys, seed, l2, &cfg)?;
        let rows = mlp::predict(&trained.model, &data.grid_xs, config.dropout_samples, seed);
        Ok(Some(mlp::column_std(&rows)))
    };

    let (main, (ensemble, dropout)) = rayon::join(main, || rayon::join(ensemble, dropout));
    let (prediction, qipf_score, sigma, final_loss) = main?;
    Ok(RegressionDemo {
        l2,
        grid: data.grid_xs,
        target: data.grid_ys,
        prediction,
        qipf_score,
        ensemble_std: ensemble?,
        dropout_std: dropout?,
        seen_mask: data.seen_mask,
        final_loss,
        sigma,
    })
}

/// [`regression_demo`] over several seeds, in parallel.
pub fn regression_sweep(config: &RegressionDemoConfig, l2: f64, seeds: &[u64]) -> Result<Vec<RegressionDemo>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut cfg = config.clone();
            cfg.data.seed = s;
            regression_demo(&cfg, l2)
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
