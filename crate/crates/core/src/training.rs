//! AdamW, gradient clipping and the supervised action-regression loop.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::bc::BcPolicy;
use crate::dataset::{NormStats, OfflineDataset, WindowSampler};
use crate::dt::{action_loss, DecisionTransformer, WindowBatch};
use crate::error::{Error, Result};
use crate::nn::derive_seed;
use crate::params::{Param, Parameterized};
use crate::scalar::Scalar;

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled, scaled by the learning rate.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Global-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 64,
            iterations: 1000,
            seed: 0,
            grad_clip: Some(0.25),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config("batch_size and iterations must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !positive(c) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !positive(self.eps) {
            return Err(Error::Config("need 0 ≤ β < 1 and ε > 0".into()));
        }
        Ok(())
    }
}

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamW<T> {
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One bias-corrected update of every trainable parameter. Frozen
    /// parameters are never touched. Nothing is modified if any gradient is
    /// non-finite.
    pub fn update(
        &mut self,
        params: Vec<&mut Param<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
        cfg: &TrainConfig,
    ) -> Result<()> {
        let trainable: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.trainable).collect();
        for p in &trainable {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| Error::Contract(format!("no gradient for trainable parameter {}", p.name)))?;
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam gradient", g.shape(), p.value.shape()));
            }
            if let Some(bad) = g.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("{} (value {bad})", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, wd, eps) = (T::of(cfg.learning_rate), T::of(cfg.weight_decay), T::of(cfg.eps));
        for p in trainable {
            let g = grads[&p.name].data();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *w);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| {
            let x = x.f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

/// A policy trained by regressing expert actions from windows.
pub trait ActionModel<T: Scalar>: Parameterized<T> {
    /// Window length the model reads.
    fn context_len(&self) -> usize;
    /// `[B, K, d_a]` predictions.
    fn predict_actions(&self, tape: &mut Tape<T>, batch: &WindowBatch<T>) -> Result<Var>;
}

impl<T: Scalar> ActionModel<T> for DecisionTransformer<T> {
    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn predict_actions(&self, tape: &mut Tape<T>, batch: &WindowBatch<T>) -> Result<Var> {
        DecisionTransformer::predict_actions(self, tape, batch)
    }
}

impl<T: Scalar> ActionModel<T> for BcPolicy<T> {
    fn context_len(&self) -> usize {
        1
    }

    fn predict_actions(&self, tape: &mut Tape<T>, batch: &WindowBatch<T>) -> Result<Var> {
        BcPolicy::predict_actions(self, tape, batch)
    }
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_grads<T: Scalar, M: ActionModel<T> + ?Sized>(
    model: &M,
    batch: &WindowBatch<T>,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let mut tape = Tape::new();
    let pred = model.predict_actions(&mut tape, batch)?;
    let target = tape.constant(batch.actions.clone());
    let loss = action_loss(&mut tape, pred, target, &batch.pad_mask)?;
    let value = tape.value(loss).item().f64();
    let grads = tape.backward(loss)?.by_name();
    Ok((value, grads))
}

/// Masked action MSE over every anchor of the dataset, without gradients.
pub fn dataset_mse<T: Scalar, M: ActionModel<T> + ?Sized>(
    model: &M,
    dataset: &OfflineDataset,
    stats: &NormStats,
) -> Result<f64> {
    let k = model.context_len();
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in dataset.anchors().chunks(64) {
        let rows = chunk
            .iter()
            .map(|&(i, t)| dataset.window::<T>(i, t, k, stats))
            .collect::<Result<Vec<_>>>()?;
        let batch = WindowBatch::stack(&rows)?;
        let mut tape = Tape::inference();
        let pred = model.predict_actions(&mut tape, &batch)?;
        let pred = tape.value(pred);
        let d_a = batch.actions.last_dim();
        for (cell, &pad) in batch.pad_mask.iter().enumerate() {
            if pad {
                continue;
            }
            for j in cell * d_a..(cell + 1) * d_a {
                let e = pred.data()[j].f64() - batch.actions.data()[j].f64();
                sum += e * e;
            }
            count += d_a;
        }
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
    /// Gradient norm before clipping.
    pub grad_norms: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// `iteration,loss` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "loss"])?;
        for (i, l) in self.losses.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<loss log>", e))?;
        Ok(())
    }
}

/// Samples windows, regresses actions and updates trainable parameters for
/// `cfg.iterations` steps. Deterministic given the seed.
pub fn train<T: Scalar, M: ActionModel<T>>(
    model: &mut M,
    dataset: &OfflineDataset,
    stats: &NormStats,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut sampler = WindowSampler::new(dataset, derive_seed(cfg.seed, 5));
    let mut opt = AdamW::new();
    let mut log = TrainLog::default();
    let k = model.context_len();
    for iteration in 0..cfg.iterations {
        let batch = sampler.batch::<T>(dataset, cfg.batch_size, k, stats)?;
        let (loss, mut grads) = loss_and_grads(model, &batch)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { iteration, loss });
        }
        let norm = match cfg.grad_clip {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => clip_grad_norm(&mut grads, f64::INFINITY),
        };
        opt.update(model.params_mut(), &grads, cfg)?;
        if iteration % 100 == 0 {
            log::debug!("iteration {iteration}: loss {loss:.6}, grad norm {norm:.4}");
        }
        log.losses.push(loss);
        log.grad_norms.push(norm);
        progress(iteration, loss);
    }
    Ok(log)
}
