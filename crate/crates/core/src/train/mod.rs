//! Losses, optimizer, learning-rate schedule, augmentation and the training loop.

mod augment;
mod trainer;
pub mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Graph, Tensor, Var};

pub use augment::{augment, AugmentConfig, Sample};
pub use trainer::{EpochRecord, TrainConfig, Trainer};

/// Mean `-log softmax(logits)[label]` over non-ignored pixels.
///
/// The printed form of this loss lacks its leading minus sign; taken
/// literally it would be non-positive. The negated form is the one that a
/// minimizer can drive towards zero.
pub fn cross_entropy_loss<T: Element>(g: &mut Graph<T>, logits: Var, labels: &[u8], ignore: Option<u8>) -> Result<Var> {
    g.cross_entropy(logits, labels, ignore)
}

/// Unweighted sum of the per-stage losses.
pub fn deep_supervision_loss<T: Element>(g: &mut Graph<T>, stages: &[Var], labels: &[u8], ignore: Option<u8>) -> Result<Var> {
    let (first, rest) = stages
        .split_first()
        .ok_or_else(|| Error::Contract("deep supervision over zero stages".into()))?;
    let mut total = g.cross_entropy(*first, labels, ignore)?;
    for &s in rest {
        let l = g.cross_entropy(s, labels, ignore)?;
        total = g.add(total, l)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment buffers per learnable parameter and the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: HashMap<String, Vec<f64>>,
    pub v: HashMap<String, Vec<f64>>,
}

/// One Adam update of every learnable parameter. Convolution weights first
/// receive `g += weight_decay * theta`.
pub fn adam_step<T: Element>(
    store: &mut ParamStore<T>,
    state: &mut AdamState,
    grads: &HashMap<String, Tensor<T>>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let missing: Vec<String> = store
        .iter()
        .filter(|(n, k, _)| k.is_learnable() && !grads.contains_key(*n))
        .map(|(n, _, _)| n.to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Contract(format!("no gradient for {}", missing.join(", "))));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, kind, theta) in store.iter_mut() {
        if !kind.is_learnable() {
            continue;
        }
        let g = &grads[name];
        if g.shape() != theta.shape() {
            return Err(Error::Contract(format!("gradient of {name} has shape {:?}", g.shape())));
        }
        let n = theta.numel();
        let m = state.m.entry(name.to_owned()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_owned()).or_insert_with(|| vec![0.0; n]);
        let wd = if kind.takes_weight_decay() { cfg.weight_decay } else { 0.0 };
        for (i, th) in theta.data_mut().iter_mut().enumerate() {
            let x = th.as_f64();
            let gi = g.data()[i].as_f64() + wd * x;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            *th = T::from_f64(x - step);
        }
    }
    Ok(())
}

/// Exponential warm-up from `lr0` to `lr1`, then step decay by `step_factor`
/// every `step_interval` epochs counted from the end of warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub lr0: f64,
    pub lr1: f64,
    pub warmup_epochs: usize,
    pub step_interval: usize,
    pub step_factor: f64,
    pub iters_per_epoch: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 1e-5,
            lr1: 1e-3,
            warmup_epochs: 100,
            step_interval: 200,
            step_factor: 0.1,
            iters_per_epoch: 1,
        }
    }
}

impl LrSchedule {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lr0 > 0.0 && self.lr1 > 0.0) {
            p.push(format!("learning rates must be positive (lr0 {}, lr1 {})", self.lr0, self.lr1));
        }
        if !(self.step_factor > 0.0 && self.step_factor < 1.0) {
            p.push(format!("step_factor {} must lie in (0, 1)", self.step_factor));
        }
        if self.step_interval == 0 {
            p.push("step_interval must be positive".into());
        }
        if self.iters_per_epoch == 0 {
            p.push("iters_per_epoch must be positive".into());
        }
        p
    }

    pub fn lr(&self, epoch: usize, iter_in_epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let cur = (epoch * self.iters_per_epoch + iter_in_epoch) as f64;
            let total = (self.warmup_epochs * self.iters_per_epoch) as f64;
            self.lr0 * (self.lr1 / self.lr0).powf(cur / total)
        } else {
            let drops = (epoch - self.warmup_epochs) / self.step_interval;
            self.lr1 * self.step_factor.powi(drops as i32)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    #[test]
    fn schedule_landmarks() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0, 0), 1e-5);
        assert_eq!(s.lr(100, 0), 1e-3);
        assert!((s.lr(350, 0) - 1e-4).abs() < 1e-18);
        assert!((s.lr(299, 0) - 1e-3).abs() < 1e-18);
        assert!((s.lr(300, 0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.register("w", ParamKind::ConvWeight, Tensor::scalar(0.5)).unwrap();
        let mut st = AdamState::default();
        let grads = HashMap::from([("w".to_string(), Tensor::scalar(1.0))]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &mut st, &grads, 1e-3, &cfg).unwrap();
        let d = store.get("w").unwrap().item() - 0.5;
        assert!((d + 1e-3).abs() < 1e-10, "{d}");
        assert_eq!(st.t, 1);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut store = ParamStore::<f32>::new();
        store.register("w", ParamKind::Bias, Tensor::zeros([1])).unwrap();
        store.register("rm", ParamKind::RunningMean, Tensor::zeros([1])).unwrap();
        let r = adam_step(&mut store, &mut AdamState::default(), &HashMap::new(), 1e-3, &AdamConfig::default());
        assert!(matches!(r, Err(Error::Contract(m)) if m.contains('w') && !m.contains("rm")));
    }
}
