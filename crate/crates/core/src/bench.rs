//! Per-sample cost of decomposition and scoring over a grid of field sizes
//! `n` and mode counts `K`.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};
use crate::kernel_field::WeightField;
use crate::modes::{decompose, uncertainty_score};
use crate::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    /// Evaluation points per timed batch.
    pub samples: usize,
    /// Timed sweeps over the grid; the fastest time per cell is kept.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ns: (8..=13).map(|p| 1 << p).collect(),
            ks: vec![4, 8],
            samples: 256,
            repetitions: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub seconds_per_sample: f64,
}

/// Least-squares fit `t = a + b n + c K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFit {
    pub intercept: f64,
    pub per_weight: f64,
    pub per_mode: f64,
    /// Largest `|fit - t| / t` over the grid.
    pub max_relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Log-log slope of time against `n`, per `K`.
    pub n_exponents: Vec<(usize, f64)>,
    pub additive: AdditiveFit,
}

impl BenchReport {
    pub fn time(&self, n: usize, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.k == k)
            .map(|r| r.seconds_per_sample)
    }

    pub fn max_exponent(&self) -> f64 {
        self.n_exponents.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, manifest_line: Option<&str>) -> Result<()> {
        if let Some(line) = manifest_line {
            writeln!(w, "{line}")?;
        }
        writeln!(w, "n,k,ms_per_sample")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.n, r.k, r.seconds_per_sample * 1e3)?;
        }
        Ok(())
    }
}

fn normal_draws(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// One timed decompose+score pass, per sample.
fn time_pass(field: &WeightField<f64>, eval: &[f64], k: usize) -> Result<f64> {
    let config = Config::with_modes(k);
    let start = Instant::now();
    let decomp = decompose(field, eval, None, &config)?;
    black_box(uncertainty_score(&decomp, &config));
    Ok(start.elapsed().as_secs_f64() / eval.len() as f64)
}

/// Ordinary least-squares slope of `ys` on `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Fits `t = a + b n + c K` minimizing squared relative residuals, by the
/// weighted normal equations (Cramer's rule).
pub fn fit_additive(rows: &[BenchRow]) -> Result<AdditiveFit> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for r in rows {
        let w = 1.0 / (r.seconds_per_sample * r.seconds_per_sample);
        let x = [1.0, r.n as f64, r.k as f64];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += w * x[i] * x[j];
            }
            atb[i] += w * x[i] * r.seconds_per_sample;
        }
    }
    let d = det3(ata);
    if d.abs() <= 1e-12 * ata[0][0] * ata[1][1] * ata[2][2] {
        return Err(QipfError::DegenerateData(
            "the additive fit needs at least two n values and two K values".into(),
        ));
    }
    let mut coef = [0.0; 3];
    for (c, slot) in coef.iter_mut().enumerate() {
        let mut m = ata;
        for i in 0..3 {
            m[i][c] = atb[i];
        }
        *slot = det3(m) / d;
    }
    let max_relative_residual = rows
        .iter()
        .map(|r| {
            let fit = coef[0] + coef[1] * r.n as f64 + coef[2] * r.k as f64;
            (fit - r.seconds_per_sample).abs() / r.seconds_per_sample
        })
        .fold(0.0, f64::max);
    Ok(AdditiveFit {
        intercept: coef[0],
        per_weight: coef[1],
        per_mode: coef[2],
        max_relative_residual,
    })
}

/// Times every `(n, K)` cell on one thread so cells are comparable.
/// Repetitions sweep the whole grid in turn, so a transient slowdown hits one
/// repetition of many cells rather than every repetition of one cell.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.ns.is_empty() || config.ks.is_empty() || config.samples == 0 {
        return Err(QipfError::invalid("bench grid is empty"));
    }
    let pool = single_thread()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eval = normal_draws(config.samples, &mut rng);
    let fields = config
        .ns
        .iter()
        .map(|&n| WeightField::new(normal_draws(n.max(1), &mut rng), 0.5))
        .collect::<Result<Vec<_>>>()?;
    let mut best = vec![f64::INFINITY; config.ns.len() * config.ks.len()];
    // The first sweep only warms caches and the allocator.
    for rep in 0..=config.repetitions.max(1) {
        for (i, field) in fields.iter().enumerate() {
            for (j, &k) in config.ks.iter().enumerate() {
                let t = pool.install(|| time_pass(field, &eval, k))?;
                if rep > 0 {
                    let cell = &mut best[i * config.ks.len() + j];
                    *cell = cell.min(t);
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(best.len());
    for (i, &n) in config.ns.iter().enumerate() {
        for (j, &k) in config.ks.iter().enumerate() {
            rows.push(BenchRow {
                n,
                k,
                seconds_per_sample: best[i * config.ks.len() + j],
            });
        }
    }
    let n_exponents = config
        .ks
        .iter()
        .map(|&k| {
            let cells: Vec<&BenchRow> = rows.iter().filter(|r| r.k == k).collect();
            let xs: Vec<f64> = cells.iter().map(|r| (r.n as f64).ln()).collect();
            let ys: Vec<f64> = cells.iter().map(|r| r.seconds_per_sample.ln()).collect();
            (k, if xs.len() > 1 { slope(&xs, &ys) } else { f64::NAN })
        })
        .collect();
    let additive = if config.ns.len() > 1 && config.ks.len() > 1 {
        fit_additive(&rows)?
    } else {
        AdditiveFit {
            intercept: f64::NAN,
            per_weight: f64::NAN,
            per_mode: f64::NAN,
            max_relative_residual: f64::NAN,
        }
    };
    Ok(BenchReport {
        rows,
        n_exponents,
        additive,
    })
}

fn single_thread() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| QipfError::invalid(format!("thread pool: {e}")))
}

/// Extra per-sample cost of `k_high` over `k_low` modes at field size `n`:
/// the median over `pairs` back-to-back timings, alternating which runs first.
pub fn mode_increment(n: usize, k_low: usize, k_high: usize, samples: usize, pairs: usize, seed: u64) -> Result<f64> {
    let pool = single_thread()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = normal_draws(samples.max(1), &mut rng);
    let field = WeightField::new(normal_draws(n.max(1), &mut rng), 0.5)?;
    pool.install(|| time_pass(&field, &eval, k_high))?;
    let mut diffs = Vec::with_capacity(pairs.max(1));
    for p in 0..pairs.max(1) {
        let (low, high) = if p % 2 == 0 {
            let low = pool.install(|| time_pass(&field, &eval, k_low))?;
            (low, pool.install(|| time_pass(&field, &eval, k_high))?)
        } else {
            let high = pool.install(|| time_pass(&field, &eval, k_high))?;
            (pool.install(|| time_pass(&field, &eval, k_low))?, high)
        };
        diffs.push(high - low);
    }
    diffs.sort_by(f64::total_cmp);
    Ok(diffs[diffs.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_case_runs() {
        let cfg = BenchConfig {
            ns: vec![1],
            ks: vec![1],
            samples: 1,
            repetitions: 1,
            seed: 0,
        };
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].seconds_per_sample > 0.0);
        assert!(report.n_exponents[0].1.is_nan());
    }

    #[test]
    fn additive_fit_recovers_exact_model() {
        let mut rows = Vec::new();
        for n in [10, 20, 40] {
            for k in [2, 4] {
                rows.push(BenchRow {
                    n,
                    k,
                    seconds_per_sample: 1.0 + 0.5 * n as f64 + 3.0 * k as f64,
                });
            }
        }
        let fit = fit_additive(&rows).unwrap();
        assert!((fit.intercept - 1.0).abs() < 1e-9);
        assert!((fit.per_weight - 0.5).abs() < 1e-12);
        assert!((fit.per_mode - 3.0).abs() < 1e-9);
        assert!(fit.max_relative_residual < 1e-12);
        assert!(fit_additive(&rows[..1]).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| (3.0 * x).ln()).collect();
        assert!((slope(&xs, &ys) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let report = BenchReport {
            rows: vec![BenchRow {
                n: 4,
                k: 2,
                seconds_per_sample: 0.002,
            }],
            n_exponents: vec![],
            additive: fit_additive(&[
                BenchRow { n: 1, k: 1, seconds_per_sample: 1.0 },
                BenchRow { n: 2, k: 1, seconds_per_sample: 2.0 },
                BenchRow { n: 1, k: 2, seconds_per_sample: 1.5 },
            ])
            .unwrap(),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,k,ms_per_sample\n4,2,2\n");
    }
}
