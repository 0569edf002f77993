//! Mini-batch training of the hash head with Adam and step learning-rate decay.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{classify_pair, LabelVector};
use crate::model::{Gradients, HashModel};
use crate::objective::{cost_gradient, total_cost, LossConfig, Pair, PairBatch};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_every: usize,
    pub decay_rate: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            base_lr: 1e-3,
            decay_every: 500,
            decay_rate: 0.5,
            max_iterations: 1000,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.base_lr));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay rate must be in (0, 1], got {}", self.decay_rate));
        }
        if self.decay_every == 0 {
            return bad("decay interval must be at least 1".into());
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        Ok(())
    }
}

/// `base_lr * decay_rate ^ floor(iteration / decay_every)`.
pub fn lr_at(iteration: usize, cfg: &TrainConfig) -> f64 {
    let steps = (iteration / cfg.decay_every.max(1)) as i32;
    cfg.base_lr * cfg.decay_rate.powi(steps)
}

/// Adam moment estimates, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Gradients<T>,
    pub second: Gradients<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &HashModel<T>) -> Self {
        Self {
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
            step: 0,
        }
    }
}

fn same_shape<T: Scalar>(model: &HashModel<T>, g: &Gradients<T>) -> bool {
    model.layers().len() == g.layers.len()
        && model
            .layers()
            .iter()
            .zip(&g.layers)
            .all(|(l, d)| l.weights.dim() == d.weights.dim() && l.bias.len() == d.bias.len())
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    model: &mut HashModel<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !same_shape(model, grads) || !same_shape(model, &state.first) || !same_shape(model, &state.second) {
        return Err(Error::InvalidParameter("gradient shape does not match model".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::of(1.0 - cfg.beta1.powi(t)), T::of(1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::of(lr), T::of(cfg.epsilon));
    let one = T::one();

    let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    for (k, layer) in model.layers_mut().iter_mut().enumerate() {
        let (g, m, v) = (&grads.layers[k], &mut state.first.layers[k], &mut state.second.layers[k]);
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

/// Draws `batch_size` distinct items and pairs them all (`i < j`).
///
/// Pair indices refer to positions within the returned item list.
pub fn sample_batch<R: Rng>(labels: &[LabelVector], batch_size: usize, rng: &mut R) -> Result<(Vec<usize>, PairBatch)> {
    if batch_size < 2 {
        return Err(Error::InvalidParameter(format!("batch size must be at least 2, got {batch_size}")));
    }
    if labels.len() < batch_size {
        return Err(Error::InvalidParameter(format!(
            "dataset of {} items is smaller than batch size {batch_size}",
            labels.len()
        )));
    }
    let items = rand::seq::index::sample(rng, labels.len(), batch_size).into_vec();
    let mut pairs = Vec::with_capacity(batch_size * (batch_size - 1) / 2);
    for a in 0..batch_size {
        for b in (a + 1)..batch_size {
            pairs.push(Pair {
                i: a,
                j: b,
                similarity: classify_pair(&labels[items[a]], &labels[items[b]])?,
            });
        }
    }
    Ok((items, PairBatch::new(pairs)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr: f64,
    pub total_cost: f64,
    pub similarity_loss: f64,
    pub quantization_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
}

impl TrainReport {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// Trailing-window moving average of total cost, one value per iteration.
    pub fn smoothed_cost(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let costs: Vec<f64> = self.iterations.iter().map(|r| r.total_cost).collect();
        (0..costs.len())
            .map(|k| {
                let lo = (k + 1).saturating_sub(w);
                costs[lo..=k].iter().sum::<f64>() / (k + 1 - lo) as f64
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,lr,total_cost,sim_loss,quant_loss")?;
        for r in &self.iterations {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration, r.lr, r.total_cost, r.similarity_loss, r.quantization_loss
            )?;
        }
        w.flush()
    }
}

/// Runs `cfg.max_iterations` of sample, forward, cost gradient, backward, Adam.
///
/// `features` has one training item per row, aligned with `labels`.
pub fn train<T: Scalar>(
    features: ndarray::ArrayView2<'_, T>,
    labels: &[LabelVector],
    mut model: HashModel<T>,
    cfg: &TrainConfig,
    loss: &LossConfig<T>,
) -> Result<(HashModel<T>, TrainReport)> {
    cfg.validate()?;
    loss.validate()?;
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "training labels",
            expected: features.nrows(),
            actual: labels.len(),
        });
    }
    if features.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "training features",
            expected: model.input_dim(),
            actual: features.ncols(),
        });
    }
    if loss.bits != model.code_bits() {
        return Err(Error::DimensionMismatch {
            context: "loss code length",
            expected: model.code_bits(),
            actual: loss.bits,
        });
    }
    if cfg.max_iterations > 0 && labels.len() < cfg.batch_size {
        return Err(Error::InvalidParameter(format!(
            "training set of {} items is smaller than batch size {}",
            labels.len(),
            cfg.batch_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut report = TrainReport {
        iterations: Vec::with_capacity(cfg.max_iterations),
    };
    let mut batch_x = Array2::<T>::zeros((cfg.batch_size, features.ncols()));

    for iteration in 0..cfg.max_iterations {
        let (items, pairs) = sample_batch(labels, cfg.batch_size, &mut rng)?;
        for (row, &item) in items.iter().enumerate() {
            batch_x.row_mut(row).assign(&features.row(item));
        }
        let trace = model
            .forward_batch(batch_x.view())
            .map_err(|_| Error::Diverged { iteration })?;
        let cost = total_cost(trace.output(), &pairs, loss)?;
        if !cost.total.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        let grad_u = cost_gradient(trace.output(), &pairs, loss)?;
        let grads = model.backward_batch(&trace, grad_u.view())?;
        let lr = lr_at(iteration, cfg);
        adam_step(&mut model, &grads, &mut adam, lr, &cfg.adam)?;

        report.iterations.push(IterationRecord {
            iteration,
            lr,
            total_cost: cost.total.as_f64(),
            similarity_loss: cost.similarity.as_f64(),
            quantization_loss: cost.quantization.as_f64(),
        });
    }
    Ok((model, report))
}
