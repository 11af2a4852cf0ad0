//! The segmentation architecture: attention modules, fusion blocks, residual
//! backbones and the six buildable variants.
//!
//! Layers are lightweight descriptions holding parameter *names*; values live
//! in a [`ParamStore`]. A forward pass binds parameters into a
//! [`ForwardCtx`], which owns the autodiff graph for that pass.

mod attention;
mod backbone;
mod blocks;
mod model;
mod variant;

use std::collections::HashMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{BatchNormSpec, BnMode, RunningStats};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Element, Graph, Tensor, Var};

pub use attention::{Attention, AttentionKind};
pub use backbone::{Backbone, BackboneConfig, BackboneKind};
pub use blocks::{Cab, GlobalContext, Mafb, Rafb, Rrb};
pub use model::{build_model, Model, ModelOutput, Segmenter, STAGE_STRIDES};
pub use variant::{ModelVariant, VariantTag};

/// Reduction ratio of the attention bottleneck.
pub const ATTENTION_REDUCTION: usize = 16;

/// State of a single forward pass.
pub struct ForwardCtx<'s, T: Element = f32> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bn: BatchNormSpec,
    track_params: bool,
    bound: HashMap<String, Var>,
    running: Vec<(String, RunningStats<T>)>,
    taps: Option<Vec<(String, Var)>>,
}

impl<'s, T: Element> ForwardCtx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: BnMode, track_params: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bn: BatchNormSpec {
                mode,
                ..BatchNormSpec::default()
            },
            track_params,
            bound: HashMap::new(),
            running: Vec::new(),
            taps: None,
        }
    }

    /// Batch statistics, gradients tracked for every parameter.
    pub fn training(store: &'s ParamStore<T>) -> Self {
        Self::new(store, BnMode::Train, true)
    }

    /// Running statistics, nothing tracked.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Self::new(store, BnMode::Eval, false)
    }

    pub fn with_taps(mut self) -> Self {
        self.taps = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> BnMode {
        self.bn.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    /// Graph leaf for a stored parameter; repeated lookups share one leaf.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.store.require(name)?.clone();
        let v = self.graph.leaf(value, self.track_params);
        self.bound.insert(name.to_owned(), v);
        Ok(v)
    }

    pub(crate) fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mean = self.store.require(&format!("{prefix}.running_mean"))?;
        let var = self.store.require(&format!("{prefix}.running_var"))?;
        let (y, stats) = self.graph.batch_norm(x, gamma, beta, (mean, var), self.bn)?;
        if let Some(s) = stats {
            self.running.push((prefix.to_owned(), s));
        }
        Ok(y)
    }

    pub(crate) fn tap(&mut self, name: impl FnOnce() -> String, v: Var) {
        if let Some(t) = self.taps.as_mut() {
            t.push((name(), v));
        }
    }

    pub fn taps(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.taps
            .iter()
            .flatten()
            .map(|(n, v)| (n.as_str(), self.graph.value(*v)))
    }

    /// Gradients of every bound parameter after `graph.backward`.
    pub fn param_grads(&self) -> HashMap<String, Tensor<T>> {
        self.bound
            .iter()
            .filter_map(|(n, &v)| self.graph.grad(v).map(|g| (n.clone(), g)))
            .collect()
    }

    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.running
    }
}

/// Write running statistics gathered by a training pass back into `store`.
pub fn commit_running_stats<T: Element>(store: &mut ParamStore<T>, stats: &[(String, RunningStats<T>)]) -> Result<()> {
    for (prefix, s) in stats {
        store.set(&format!("{prefix}.running_mean"), s.mean.clone())?;
        store.set(&format!("{prefix}.running_var"), s.var.clone())?;
    }
    Ok(())
}

pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `[-b, b)` with `b = sqrt(6 / fan_in)`.
    fn fan_in_uniform<T: Element>(&mut self, shape: [usize; 4]) -> Tensor<T> {
        let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
        let bound = (6.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| T::from_f64((self.rng.random::<f64>() * 2.0 - 1.0) * bound))
    }
}

/// Square convolution with "same" padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
            bias,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        let w = init.fan_in_uniform([self.cout, self.cin, self.k, self.k]);
        store.register(self.weight_name(), ParamKind::ConvWeight, w)?;
        if self.bias {
            store.register(self.bias_name(), ParamKind::Bias, Tensor::zeros([self.cout]))?;
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let b = if self.bias {
            Some(ctx.param(&self.bias_name())?)
        } else {
            None
        };
        ctx.graph.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let c = self.channels;
        store.register(format!("{}.gamma", self.name), ParamKind::BnGamma, Tensor::ones([c]))?;
        store.register(format!("{}.beta", self.name), ParamKind::BnBeta, Tensor::zeros([c]))?;
        store.register(format!("{}.running_mean", self.name), ParamKind::RunningMean, Tensor::zeros([c]))?;
        store.register(format!("{}.running_var", self.name), ParamKind::RunningVar, Tensor::ones([c]))?;
        Ok(())
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        ctx.batch_norm(&self.name, x)
    }
}

#[cfg(test)]
mod tests;
