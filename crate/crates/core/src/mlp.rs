//! Small fully-connected regressor: tanh hidden layers, linear output,
//! mean-squared error plus an L2 penalty on weights, trained with Adam.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QipfError, Result};
use crate::ingest::{Layer, WeightBundle};
use crate::shift::SineDataset;

pub const DEFAULT_LAYER_SIZES: [usize; 5] = [1, 100, 100, 100, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` has shape `[out, in]`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub l2_coeff: f64,
    pub dropout_rate: f64,
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpModel {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights
    /// and biases.
    pub fn new(layer_sizes: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(QipfError::invalid(format!(
                "layer sizes must list at least two positive widths, got {layer_sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(QipfError::invalid(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::from_shape_simple_fn(fan_out, || {
                rng.random_range(-bound..bound)
            }));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            l2_coeff: 0.0,
            dropout_rate,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>()
            + self.biases.iter().map(Array1::len).sum::<usize>()
    }

    /// `sum ||W||^2` over weight matrices (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layer_sizes.len();
        if l < 2 || self.weights.len() != l - 1 || self.biases.len() != l - 1 {
            return Err(QipfError::invalid("layer count mismatch"));
        }
        for (i, pair) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[i].dim() != (pair[1], pair[0]) || self.biases[i].len() != pair[1] {
                return Err(QipfError::ShapeMismatch {
                    layer: format!("dense_{i}"),
                    expected: pair[0] * pair[1],
                    actual: self.weights[i].len(),
                });
            }
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(QipfError::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Forward pass on a `[n, in]` batch. Returns the activations of every
    /// layer, input first. `masks[l]`, when given, multiplies hidden layer `l`.
    fn forward(&self, x: &Array2<f64>, masks: Option<&[Array2<f64>]>) -> Vec<Array2<f64>> {
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(x.clone());
        for l in 0..=last {
            let mut z = acts[l].dot(&self.weights[l].t()) + &self.biases[l];
            if l < last {
                z.mapv_inplace(f64::tanh);
                if let Some(m) = masks {
                    z *= &m[l];
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Exports as `dense_{i}.weight` (`[out, in]`) and `dense_{i}.bias` layers.
    pub fn to_bundle(&self) -> Result<WeightBundle> {
        let mut layers = Vec::with_capacity(2 * self.num_layers());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            layers.push(Layer::new(
                format!("dense_{i}.weight"),
                vec![w.nrows(), w.ncols()],
                w.iter().map(|&v| v as f32).collect(),
            )?);
            layers.push(Layer::new(
                format!("dense_{i}.bias"),
                vec![b.len()],
                b.iter().map(|&v| v as f32).collect(),
            )?);
        }
        let mut bundle = WeightBundle::new(layers);
        bundle.meta.insert("architecture".into(), format!("{:?}", self.layer_sizes));
        bundle.meta.insert("activation".into(), "tanh".into());
        Ok(bundle)
    }

    /// Rebuilds a model written by [`MlpModel::to_bundle`].
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0.. {
            let find = |name: String| bundle.layers.iter().find(|l| l.name == name);
            let (Some(w), Some(b)) = (find(format!("dense_{i}.weight")), find(format!("dense_{i}.bias"))) else {
                break;
            };
            let [out, inp] = w.shape[..] else {
                return Err(QipfError::invalid(format!("`{}` is not a matrix", w.name)));
            };
            if b.shape != [out] {
                return Err(QipfError::invalid(format!("`{}` does not match `{}`", b.name, w.name)));
            }
            let values = w.values.iter().map(|&v| f64::from(v)).collect();
            weights.push(Array2::from_shape_vec((out, inp), values).expect("shape checked by Layer"));
            biases.push(b.values.iter().map(|&v| f64::from(v)).collect());
        }
        if weights.is_empty() {
            return Err(QipfError::invalid("bundle has no dense_0 layer"));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        layer_sizes.extend(weights.iter().map(Array2::nrows));
        let model = Self {
            layer_sizes,
            weights,
            biases,
            l2_coeff: 0.0,
            dropout_rate: 0.0,
        };
        model.validate()?;
        Ok(model)
    }
}

fn column(xs: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column shape")
}

fn check_data(model: &MlpModel, xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(QipfError::invalid(format!(
            "need equal, nonzero numbers of inputs and targets, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if model.layer_sizes[0] != 1 || model.layer_sizes[model.layer_sizes.len() - 1] != 1 {
        return Err(QipfError::invalid("the regressor maps scalars to scalars"));
    }
    Ok(())
}

fn loss_and_gradient_masked(
    model: &MlpModel,
    x: &Array2<f64>,
    y: &Array2<f64>,
    l2: f64,
    masks: Option<&[Array2<f64>]>,
) -> (f64, Gradients) {
    let n = x.nrows() as f64;
    let acts = model.forward(x, masks);
    let residual = &acts[acts.len() - 1] - y;
    let mse = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let loss = mse + l2 * model.weight_sq_norm();

    let mut grads = model.zeros_like();
    let mut delta = residual * (2.0 / n);
    for l in (0..model.num_layers()).rev() {
        grads.weights[l] = delta.t().dot(&acts[l]) + &(&model.weights[l] * (2.0 * l2));
        grads.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&model.weights[l]);
            if let Some(m) = masks {
                back *= &m[l - 1];
            }
            // acts[l] already carries the mask, but a zeroed unit has zero
            // gradient either way, so 1 - a^2 is safe to apply after it.
            let pre = acts[l].mapv(|a| 1.0 - a * a);
            delta = back * pre;
        }
    }
    (loss, grads)
}

/// Training objective and its analytic gradient, without dropout.
pub fn loss_and_gradient(model: &MlpModel, xs: &[f64], ys: &[f64], l2: f64) -> Result<(f64, Gradients)> {
    check_data(model, xs, ys)?;
    Ok(loss_and_gradient_masked(model, &column(xs), &column(ys), l2, None))
}

/// Objective value only, without dropout.
pub fn loss(model: &MlpModel, xs: &[f64], ys: &[f64], l2: f64) -> Result<f64> {
    check_data(model, xs, ys)?;
    let acts = model.forward(&column(xs), None);
    let out = &acts[acts.len() - 1];
    let mse = out
        .iter()
        .zip(ys)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / xs.len() as f64;
    Ok(mse + l2 * model.weight_sq_norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    /// Seeds minibatch shuffling and training-time dropout masks.
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 0,
            seed: 0,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            dropout_rate: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(QipfError::invalid("learning rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(QipfError::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(QipfError::invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: MlpModel,
    /// Full-training-set objective before each epoch, then after the last.
    pub loss_history: Vec<f64>,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn step(&mut self, model: &mut MlpModel, g: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_eps;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..model.num_layers() {
            ndarray::Zip::from(&mut model.weights[l])
                .and(&g.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut model.biases[l])
                .and(&g.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

fn dropout_masks(model: &MlpModel, rows: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let keep = 1.0 - model.dropout_rate;
    let scale = 1.0 / keep;
    model.layer_sizes[1..model.layer_sizes.len() - 1]
        .iter()
        .map(|&width| {
            Array2::from_shape_simple_fn((rows, width), || {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Fits a freshly initialized model by Adam on `mse + l2 * sum ||W||^2`.
pub fn train(xs: &[f64], ys: &[f64], model_init_seed: u64, l2: f64, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(QipfError::invalid(format!("l2 coefficient {l2} must be nonnegative")));
    }
    let mut model = MlpModel::new(&config.layer_sizes, config.dropout_rate, model_init_seed)?;
    model.l2_coeff = l2;
    check_data(&model, xs, ys)?;
    if let Some(i) = xs.iter().chain(ys).position(|v| !v.is_finite()) {
        return Err(QipfError::NonFinite(format!("training data entry {i}")));
    }

    let n = xs.len();
    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let x_all = column(xs);
    let y_all = column(ys);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam {
        m: model.zeros_like(),
        v: model.zeros_like(),
        t: 0,
    };
    let mut history = Vec::with_capacity(config.epochs + 1);
    let use_dropout = model.dropout_rate > 0.0;

    for epoch in 0..config.epochs {
        // Full-batch training without dropout gets the pre-update loss from
        // the gradient pass; otherwise it is measured separately.
        let fused = batch == n && !use_dropout;
        if !fused {
            history.push(loss(&model, xs, ys, l2)?);
        }
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (x, y) = if batch == n {
                (x_all.clone(), y_all.clone())
            } else {
                (x_all.select(Axis(0), chunk), y_all.select(Axis(0), chunk))
            };
            let masks = use_dropout.then(|| dropout_masks(&model, chunk.len(), &mut rng));
            let (l, g) = loss_and_gradient_masked(&model, &x, &y, l2, masks.as_deref());
            if !l.is_finite() {
                return Err(QipfError::TrainingFailure { epoch, loss: l });
            }
            if fused {
                history.push(l);
            }
            adam.step(&mut model, &g, config);
        }
    }
    let last = loss(&model, xs, ys, l2)?;
    if !last.is_finite() {
        return Err(QipfError::TrainingFailure {
            epoch: config.epochs,
            loss: last,
        });
    }
    history.push(last);
    Ok(TrainedModel {
        model,
        loss_history: history,
    })
}

/// Predictions as a `[rows, xs.len()]` matrix: one deterministic row when
/// `dropout_samples == 0`, else one row per stochastic pass with inverted
/// dropout on hidden units.
pub fn predict(model: &MlpModel, xs: &[f64], dropout_samples: usize, seed: u64) -> Array2<f64> {
    let x = column(xs);
    if dropout_samples == 0 {
        let acts = model.forward(&x, None);
        return acts[acts.len() - 1].t().to_owned();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((dropout_samples, xs.len()));
    for s in 0..dropout_samples {
        let masks = dropout_masks(model, xs.len(), &mut rng);
        let acts = model.forward(&x, Some(&masks));
        out.row_mut(s).assign(&acts[acts.len() - 1].column(0));
    }
    out
}

/// Population standard deviation of each column.
pub fn column_std(rows: &Array2<f64>) -> Vec<f64> {
    let n = rows.nrows() as f64;
    rows.columns()
        .into_iter()
        .map(|c| {
            // Shifting by the first entry makes identical rows exactly zero.
            let d: Vec<f64> = c.iter().map(|v| v - c[0]).collect();
            let mean = d.iter().sum::<f64>() / n;
            (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Grid predictions of `members` models initialized with `seed + t`.
pub fn ensemble_predictions(
    dataset: &SineDataset,
    members: usize,
    seed: u64,
    l2: f64,
    config: &TrainConfig,
) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = (0..members as u64)
        .into_par_iter()
        .map(|t| {
            let trained = train(&dataset.train_xs, &dataset.train_ys, seed + t, l2, config)?;
            Ok(predict(&trained.model, &dataset.grid_xs, 0, 0).into_raw_vec_and_offset().0)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.concat();
    Ok(Array2::from_shape_vec((members, dataset.grid_xs.len()), flat).expect("ensemble shape"))
}

/// Per-grid-point population standard deviation across an ensemble.
pub fn ensemble_uncertainty(
    dataset: &SineDataset,
    members: usize,
    seed: u64,
    l2: f64,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if members < 2 {
        return Err(QipfError::invalid("an ensemble needs at least two members"));
    }
    Ok(column_std(&ensemble_predictions(dataset, members, seed, l2, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(epochs: usize, sizes: &[usize]) -> TrainConfig {
        TrainConfig {
            epochs,
            layer_sizes: sizes.to_vec(),
            ..TrainConfig::default()
        }
    }

    fn flatten(g: &Gradients) -> Vec<f64> {
        g.weights
            .iter()
            .zip(&g.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn default_architecture_parameter_count() {
        let m = MlpModel::new(&DEFAULT_LAYER_SIZES, 0.0, 0).unwrap();
        assert_eq!(m.num_params(), 100 + 100 + 10_000 + 100 + 10_000 + 100 + 100 + 1);
        assert_eq!(m.num_params(), 20_501);
        assert_eq!(m.to_bundle().unwrap().total_params(), 20_501);
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let m = MlpModel::new(&[1, 16, 1], 0.0, 3).unwrap();
        assert!(m.weights[0].iter().all(|v| v.abs() < 1.0));
        assert!(m.weights[1].iter().all(|v| v.abs() < 0.25));
        assert!(MlpModel::new(&[1], 0.0, 0).is_err());
        assert!(MlpModel::new(&[1, 0, 1], 0.0, 0).is_err());
        assert!(MlpModel::new(&[1, 2, 1], 1.0, 0).is_err());
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let xs = [0.0, 0.5, 1.0];
        let ys = [1.0, 0.0, 1.0];
        let trained = train(&xs, &ys, 7, 0.0, &quick(0, &[1, 8, 1])).unwrap();
        assert_eq!(trained.model, MlpModel::new(&[1, 8, 1], 0.0, 7).unwrap());
        assert_eq!(trained.loss_history.len(), 1);
    }

    #[test]
    fn fits_a_noiseless_line() {
        let xs: Vec<f64> = (0..50).map(|i| -1.0 + 2.0 * i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x + 0.2).collect();
        let trained = train(&xs, &ys, 0, 0.0, &quick(200, &[1, 100, 100, 100, 1])).unwrap();
        let mse = loss(&trained.model, &xs, &ys, 0.0).unwrap();
        assert!(mse < 1e-2, "mse = {mse}");
        let h = &trained.loss_history;
        assert_eq!(h.len(), 201);
        assert!(h[200] <= h[0]);
    }

    fn param_mut(m: &mut MlpModel, l: usize, p: usize) -> &mut f64 {
        let nw = m.weights[l].len();
        if p < nw {
            &mut m.weights[l].as_slice_mut().unwrap()[p]
        } else {
            &mut m.biases[l].as_slice_mut().unwrap()[p - nw]
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let xs = [-1.0, -0.3, 0.2, 0.9, 1.4];
        let ys = [0.3, -0.2, 0.5, 0.1, -0.4];
        let h = 1e-5;
        let l2 = 0.05;
        for seed in 0..20 {
            let mut model = MlpModel::new(&[1, 4, 1], 0.0, seed).unwrap();
            let (_, g) = loss_and_gradient(&model, &xs, &ys, l2).unwrap();
            let analytic = flatten(&g);
            let mut idx = 0;
            for l in 0..model.num_layers() {
                for p in 0..model.weights[l].len() + model.biases[l].len() {
                    let orig = *param_mut(&mut model, l, p);
                    *param_mut(&mut model, l, p) = orig + h;
                    let up = loss(&model, &xs, &ys, l2).unwrap();
                    *param_mut(&mut model, l, p) = orig - h;
                    let down = loss(&model, &xs, &ys, l2).unwrap();
                    *param_mut(&mut model, l, p) = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    assert!(rel < 1e-5, "seed {seed} layer {l} param {p}: {a} vs {numeric}");
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn l2_shrinks_weights() {
        let xs: Vec<f64> = (0..40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let cfg = quick(300, &[1, 32, 32, 1]);
        let free = train(&xs, &ys, 1, 0.0, &cfg).unwrap();
        let tied = train(&xs, &ys, 1, 0.2, &cfg).unwrap();
        assert!(tied.model.weight_sq_norm() < free.model.weight_sq_norm());
    }

    #[test]
    fn training_is_deterministic() {
        let xs = [0.0, 0.3, 0.6, 0.9];
        let ys = [0.0, 0.2, 0.1, 0.4];
        let mut cfg = quick(30, &[1, 8, 8, 1]);
        cfg.batch_size = 2;
        cfg.dropout_rate = 0.2;
        let a = train(&xs, &ys, 5, 0.01, &cfg).unwrap();
        let b = train(&xs, &ys, 5, 0.01, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let xs = [0.0, 1.0];
        let ys = [1e300, -1e300];
        let err = train(&xs, &ys, 0, 0.0, &quick(5, &[1, 4, 1])).unwrap_err();
        assert!(matches!(err, QipfError::TrainingFailure { epoch: 0, .. }), "{err:?}");
    }

    #[test]
    fn dropout_free_passes_agree() {
        let model = MlpModel::new(&[1, 8, 8, 1], 0.0, 2).unwrap();
        let xs = [-1.0, 0.0, 2.0];
        let rows = predict(&model, &xs, 5, 9);
        assert_eq!(rows.nrows(), 5);
        for r in rows.rows() {
            assert_eq!(r, rows.row(0));
        }
        assert_eq!(predict(&model, &xs, 0, 0), predict(&model, &xs, 0, 1));
        assert_eq!(predict(&model, &xs, 0, 0).row(0), rows.row(0));
    }

    #[test]
    fn dropout_passes_vary() {
        let model = MlpModel::new(&[1, 32, 1], 0.1, 2).unwrap();
        let rows = predict(&model, &[0.5, 1.5], 100, 4);
        assert!(column_std(&rows).iter().all(|&s| s > 0.0));
        assert_eq!(rows, predict(&model, &[0.5, 1.5], 100, 4));
    }

    #[test]
    fn two_member_std_is_half_the_gap() {
        let rows = ndarray::arr2(&[[1.0, -2.0, 0.5], [3.0, 2.0, 0.5]]);
        assert_eq!(column_std(&rows), vec![1.0, 2.0, 0.0]);
        let same = ndarray::arr2(&[[0.3, 0.7], [0.3, 0.7], [0.3, 0.7]]);
        assert_eq!(column_std(&same), vec![0.0, 0.0]);
    }

    #[test]
    fn bundle_round_trip() {
        let model = MlpModel::new(&[1, 3, 2, 1], 0.0, 4).unwrap();
        let bundle = model.to_bundle().unwrap();
        let names: Vec<&str> = bundle.layers.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            names,
            ["dense_0.weight", "dense_0.bias", "dense_1.weight", "dense_1.bias", "dense_2.weight", "dense_2.bias"]
        );
        assert_eq!(bundle.layers[0].shape, vec![3, 1]);
        let back = MlpModel::from_bundle(&WeightBundle::from_bytes(&bundle.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back.layer_sizes, vec![1, 3, 2, 1]);
        for (a, b) in back.weights[1].iter().zip(model.weights[1].iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }
}
