//! Layer primitives recorded on the autodiff tape.

pub mod kernels;

use crate::error::Result;
use crate::tensor::graph::Op;
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BnMode {
    #[default]
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Running statistics produced by a training-mode batch norm, already blended
/// with the previous running values. The caller decides whether to commit them.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Static description of a batch-norm layer applied to a graph value.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormSpec {
    pub mode: BnMode,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormSpec {
    fn default() -> Self {
        Self {
            mode: BnMode::Train,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }
}

impl<T: Element> Graph<T> {
    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let iw = self.check(weight)?;
        let ib = bias.map(|b| self.check(b)).transpose()?;
        let y = kernels::conv2d_forward(self.val(ix), self.val(iw), ib.map(|b| self.val(b)), stride, pad)?;
        let mut inputs = vec![ix, iw];
        inputs.extend(ib);
        self.push(
            "conv2d",
            y,
            Op::Conv2d {
                x: ix,
                w: iw,
                b: ib,
                stride,
                pad,
            },
            &inputs,
        )
    }

    /// Batch normalization. In training mode the batch statistics normalize the
    /// input and the returned running statistics are the momentum blend of
    /// `running` with the batch mean and unbiased batch variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&Tensor<T>, &Tensor<T>),
        spec: BatchNormSpec,
    ) -> Result<(Var, Option<RunningStats<T>>)> {
        let (ix, ig, ibeta) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let eps = T::from_f64(spec.epsilon);
        match spec.mode {
            BnMode::Train => {
                let (y, cache, stats) = kernels::batch_norm_train_forward(self.val(ix), self.val(ig), self.val(ibeta), eps)?;
                let m = T::from_f64(spec.momentum);
                let keep = T::one() - m;
                let unbias = T::from_f64(stats.count as f64 / (stats.count - 1) as f64);
                let mean = Tensor::from_fn([stats.mean.len()], |c| keep * running.0.data()[c] + m * stats.mean[c]);
                let var = Tensor::from_fn([stats.var.len()], |c| keep * running.1.data()[c] + m * stats.var[c] * unbias);
                let v = self.push(
                    "batch_norm",
                    y,
                    Op::BatchNormTrain {
                        x: ix,
                        gamma: ig,
                        beta: ibeta,
                        cache,
                    },
                    &[ix, ig, ibeta],
                )?;
                Ok((v, Some(RunningStats { mean, var })))
            }
            BnMode::Eval => {
                let (y, inv_std) =
                    kernels::batch_norm_eval_forward(self.val(ix), self.val(ig), self.val(ibeta), running.0, running.1, eps)?;
                let v = self.push(
                    "batch_norm",
                    y,
                    Op::BatchNormEval {
                        x: ix,
                        gamma: ig,
                        beta: ibeta,
                        mean: running.0.data().to_vec(),
                        inv_std,
                    },
                    &[ix, ig, ibeta],
                )?;
                Ok((v, None))
            }
        }
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (y, argmax) = kernels::max_pool2d_forward(self.val(ix), k, stride)?;
        self.push("max_pool2d", y, Op::MaxPool { x: ix, argmax }, &[ix])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let y = kernels::global_avg_pool_forward(self.val(ix))?;
        self.push("global_avg_pool", y, Op::GlobalAvgPool(ix), &[ix])
    }

    /// Bilinear upsampling by an integer factor. Half-pixel source mapping
    /// unless `align_corners` is set.
    pub fn bilinear_upsample(&mut self, x: Var, scale: usize, align_corners: bool) -> Result<Var> {
        let ix = self.check(x)?;
        if scale == 1 {
            return Ok(x);
        }
        let y = kernels::bilinear_upsample_forward(self.val(ix), scale, align_corners)?;
        self.push(
            "bilinear_upsample",
            y,
            Op::Upsample {
                x: ix,
                scale,
                align_corners,
            },
            &[ix],
        )
    }

    pub fn softmax_over_classes(&mut self, logits: Var) -> Result<Var> {
        let ix = self.check(logits)?;
        let y = kernels::softmax_channels_forward(self.val(ix))?;
        self.push("softmax", y, Op::Softmax(ix), &[ix])
    }

    /// Mean per-pixel categorical cross entropy, `-log softmax(logits)[label]`,
    /// over pixels whose label differs from `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: Option<u8>) -> Result<Var> {
        let ix = self.check(logits)?;
        let (loss, probs, count) = kernels::cross_entropy_forward(self.val(ix), labels, ignore)?;
        let rank = self.val(ix).rank();
        let y = Tensor::new(vec![1; rank], vec![loss])?;
        self.push(
            "cross_entropy",
            y,
            Op::CrossEntropy {
                logits: ix,
                labels: labels.to_vec(),
                ignore,
                probs,
                count,
            },
            &[ix],
        )
    }
}
