//! Finite-difference verification of every differentiable op and block.
//!
//! Each check draws random inputs and parameters in double precision, reduces
//! the output to a scalar through a fixed random projection, and compares the
//! tape gradient with central differences at every coordinate (or a seeded
//! sample of coordinates for large tensors).

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{Attention, Cab, ForwardCtx, GlobalContext, Init, Mafb, ModelVariant, Rafb, Rrb, VariantTag};
use crate::error::{Error, Result};
use crate::nn::BnMode;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::gradcheck::relative_error;
use crate::tensor::{Tensor, Var};
use crate::train::deep_supervision_loss;

/// Tolerance for single ops and fused blocks.
pub const BLOCK_TOLERANCE: f64 = 1e-6;
/// Tolerance for the whole model with deep supervision.
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: u64 = 5;

/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-3;

/// Outcome of one named check over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub seeds: u64,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Inputs and parameters for one seeded instance of a check.
pub struct Fixture {
    pub inputs: Vec<Tensor<f64>>,
    pub store: ParamStore<f64>,
}

/// Scalar loss from bound inputs.
pub type LossFn = dyn Fn(&mut ForwardCtx<'_, f64>, &[Var]) -> Result<Var>;

/// A named check: fixture factory, loss and tolerance. `max_coords` bounds
/// the number of probed coordinates per tensor, `max_params` the number of
/// parameter tensors probed.
pub struct GradCheck {
    pub name: String,
    pub tolerance: f64,
    /// Central-difference step. Large enough to keep rounding noise well
    /// below the tolerance, small enough that deep stacks of ReLUs rarely
    /// see a kink inside the stencil.
    pub step: f64,
    pub max_coords: usize,
    pub max_params: usize,
    pub fixture: Box<dyn Fn(u64) -> Result<Fixture>>,
    pub loss: Box<LossFn>,
}

fn uniform(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Values bounded away from zero, for inputs that feed a ReLU kink directly.
fn off_zero(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = 0.1 + 0.9 * rng.random::<f64>();
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values spaced far apart relative to the step, so max pooling
/// never changes its winner under perturbation.
fn distinct(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    Tensor::new(shape, order.iter().map(|&i| i as f64 / n as f64 - 0.5).collect()).expect("shape matches")
}

/// Project `y` onto a fixed random direction so every output element matters.
fn project(ctx: &mut ForwardCtx<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let r = uniform(ctx.graph.value(y).shape().to_vec(), &mut rng);
    let r = ctx.graph.constant(r);
    let p = ctx.graph.mul(y, r)?;
    ctx.graph.sum(p)
}

/// Registered parameters with biases and normalization affine terms drawn at
/// random, so none of them sits at its initial constant.
fn randomized(register: impl FnOnce(&mut ParamStore<f64>, &mut Init) -> Result<()>, seed: u64) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    register(&mut store, &mut Init::new(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    for (_, kind, t) in store.iter_mut() {
        match kind {
            ParamKind::Bias | ParamKind::BnBeta => t.data_mut().iter_mut().for_each(|v| *v = 0.5 * (rng.random::<f64>() - 0.5)),
            ParamKind::BnGamma => t.data_mut().iter_mut().for_each(|v| *v = 0.5 + rng.random::<f64>()),
            _ => {}
        }
    }
    Ok(store)
}

fn loss_value(check: &GradCheck, inputs: &[Tensor<f64>], store: &ParamStore<f64>) -> Result<f64> {
    let mut ctx = ForwardCtx::new(store, BnMode::Train, false);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.graph.constant(t.clone())).collect();
    let l = (check.loss)(&mut ctx, &vars)?;
    scalar(&ctx, l)
}

fn scalar(ctx: &ForwardCtx<'_, f64>, l: Var) -> Result<f64> {
    let v = ctx.graph.value(l);
    if v.numel() != 1 {
        return Err(Error::Contract(format!("gradient check loss has shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

fn probe_indices(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}

impl GradCheck {
    /// Maximum relative error for a single seed and the number of probed coordinates.
    pub fn run_seed(&self, seed: u64) -> Result<(f64, usize)> {
        let Fixture { mut inputs, mut store } = (self.fixture)(seed)?;
        let (input_grads, param_grads) = {
            let mut ctx = ForwardCtx::new(&store, BnMode::Train, true);
            let vars: Vec<Var> = inputs.iter().map(|t| ctx.graph.leaf(t.clone(), true)).collect();
            let l = (self.loss)(&mut ctx, &vars)?;
            ctx.graph.backward(l)?;
            let ig: Vec<Tensor<f64>> = vars
                .iter()
                .zip(&inputs)
                .map(|(&v, t)| ctx.graph.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
                .collect();
            (ig, ctx.param_grads())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        let mut worst = 0f64;
        let mut probed = 0;
        for k in 0..inputs.len() {
            for i in probe_indices(inputs[k].numel(), self.max_coords, &mut rng) {
                let orig = inputs[k].data()[i];
                inputs[k].data_mut()[i] = orig + self.step;
                let plus = loss_value(self, &inputs, &store)?;
                inputs[k].data_mut()[i] = orig - self.step;
                let minus = loss_value(self, &inputs, &store)?;
                inputs[k].data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                worst = worst.max(relative_error(input_grads[k].data()[i], numeric, FLOOR));
                probed += 1;
            }
        }
        let names: Vec<String> = store
            .iter()
            .filter(|(_, k, _)| k.is_learnable())
            .map(|(n, _, _)| n.to_owned())
            .collect();
        let picked = probe_indices(names.len(), self.max_params, &mut rng);
        for name in picked.into_iter().map(|i| &names[i]) {
            let analytic = param_grads.get(name).cloned();
            let n = store.require(name)?.numel();
            for i in probe_indices(n, self.max_coords, &mut rng) {
                let orig = store.require(name)?.data()[i];
                let set = |s: &mut ParamStore<f64>, v: f64| s.get_mut(name).expect("registered").data_mut()[i] = v;
                set(&mut store, orig + self.step);
                let plus = loss_value(self, &inputs, &store)?;
                set(&mut store, orig - self.step);
                let minus = loss_value(self, &inputs, &store)?;
                set(&mut store, orig);
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
                worst = worst.max(relative_error(a, numeric, FLOOR));
                probed += 1;
            }
        }
        Ok((worst, probed))
    }

    pub fn run(&self, seeds: u64) -> Result<CheckReport> {
        let start = Instant::now();
        let mut worst = 0f64;
        let mut coordinates = 0;
        for seed in 0..seeds {
            let (e, c) = self.run_seed(seed)?;
            worst = worst.max(e);
            coordinates += c;
        }
        Ok(CheckReport {
            name: self.name.clone(),
            seeds,
            coordinates,
            max_rel_error: worst,
            tolerance: self.tolerance,
            elapsed: start.elapsed(),
        })
    }
}

fn op_check(
    name: &str,
    fixture: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    f: impl Fn(&mut ForwardCtx<'_, f64>, &[Var]) -> Result<Var> + 'static,
) -> GradCheck {
    GradCheck {
        name: name.into(),
        tolerance: BLOCK_TOLERANCE,
        step: 1e-4,
        max_coords: usize::MAX,
        max_params: usize::MAX,
        fixture: Box::new(move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Fixture {
                inputs: fixture(&mut rng),
                store: ParamStore::new(),
            })
        }),
        loss: Box::new(move |ctx, v| {
            let y = f(ctx, v)?;
            project(ctx, y, 0)
        }),
    }
}

/// A check of a block whose parameters come from `register`.
fn block_check<R, F>(name: &str, shapes: Vec<Vec<usize>>, register: R, f: F) -> GradCheck
where
    R: Fn(&mut ParamStore<f64>, &mut Init) -> Result<()> + 'static,
    F: Fn(&mut ForwardCtx<'_, f64>, &[Var]) -> Result<Var> + 'static,
{
    GradCheck {
        name: name.into(),
        tolerance: BLOCK_TOLERANCE,
        step: 1e-4,
        max_coords: 24,
        max_params: usize::MAX,
        fixture: Box::new(move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Fixture {
                inputs: shapes.iter().map(|s| uniform(s.clone(), &mut rng)).collect(),
                store: randomized(&register, seed)?,
            })
        }),
        loss: Box::new(move |ctx, v| {
            let y = f(ctx, v)?;
            project(ctx, y, 1)
        }),
    }
}

/// Every primitive op on the tape.
pub fn primitive_checks() -> Vec<GradCheck> {
    let mut v = vec![
        op_check("add (broadcast)", |r| vec![uniform([2, 3, 4, 4], r), uniform([1, 3, 1, 1], r)], |c, v| c.graph.add(v[0], v[1])),
        op_check("sub (broadcast)", |r| vec![uniform([2, 3, 4, 4], r), uniform([2, 1, 4, 4], r)], |c, v| c.graph.sub(v[0], v[1])),
        op_check("mul (broadcast)", |r| vec![uniform([2, 3, 4, 4], r), uniform([2, 3, 1, 1], r)], |c, v| c.graph.mul(v[0], v[1])),
        op_check("scale", |r| vec![uniform([2, 3, 3], r)], |c, v| c.graph.scale(v[0], -1.7)),
        op_check("sum", |r| vec![uniform([3, 4], r)], |c, v| c.graph.sum(v[0])),
        op_check("reduce_mean", |r| vec![uniform([2, 3, 4, 5], r)], |c, v| c.graph.reduce_mean(v[0], &[2, 3])),
        op_check("concat_channels", |r| vec![uniform([2, 2, 3, 3], r), uniform([2, 3, 3, 3], r)], |c, v| {
            c.graph.concat_channels(&[v[0], v[1]])
        }),
        op_check("slice_channels", |r| vec![uniform([2, 5, 3, 3], r)], |c, v| c.graph.slice_channels(v[0], 1, 3)),
        op_check("relu", |r| vec![off_zero([2, 3, 4, 4], r)], |c, v| c.graph.relu(v[0])),
        op_check("sigmoid", |r| vec![uniform([2, 3, 4, 4], r)], |c, v| c.graph.sigmoid(v[0])),
        op_check("max_pool2d", |r| vec![distinct([2, 3, 6, 6], r)], |c, v| c.graph.max_pool2d(v[0], 2, 2)),
        op_check("global_avg_pool", |r| vec![uniform([2, 3, 4, 5], r)], |c, v| c.graph.global_avg_pool(v[0])),
        op_check("bilinear_upsample", |r| vec![uniform([2, 3, 3, 4], r)], |c, v| c.graph.bilinear_upsample(v[0], 4, false)),
        op_check("bilinear_upsample (corners)", |r| vec![uniform([1, 2, 3, 3], r)], |c, v| {
            c.graph.bilinear_upsample(v[0], 2, true)
        }),
        op_check("softmax", |r| vec![uniform([2, 4, 3, 3], r)], |c, v| c.graph.softmax_over_classes(v[0])),
    ];
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7)] {
        v.push(op_check(
            &format!("conv2d k{k} s{stride} p{pad}"),
            move |r| vec![uniform([2, 3, 7, 7], r), uniform([4, 3, k, k], r), uniform([4], r)],
            move |c, v| c.graph.conv2d(v[0], v[1], Some(v[2]), stride, pad),
        ));
    }
    v.push(op_check(
        "batch_norm (train)",
        |r| vec![uniform([3, 2, 3, 3], r), uniform([2], r), uniform([2], r)],
        |c, v| {
            let stats = (&Tensor::zeros([2]), &Tensor::ones([2]));
            Ok(c.graph.batch_norm(v[0], v[1], v[2], stats, Default::default())?.0)
        },
    ));
    v.push(op_check(
        "batch_norm (eval)",
        |r| vec![uniform([3, 2, 3, 3], r), uniform([2], r), uniform([2], r)],
        |c, v| {
            let mean = Tensor::new([2], vec![0.2, -0.1])?;
            let var = Tensor::new([2], vec![0.5, 2.0])?;
            let spec = crate::nn::BatchNormSpec {
                mode: BnMode::Eval,
                ..Default::default()
            };
            Ok(c.graph.batch_norm(v[0], v[1], v[2], (&mean, &var), spec)?.0)
        },
    ));
    v.push(GradCheck {
        loss: Box::new(|c, v| {
            let labels: Vec<u8> = (0..18).map(|i| [0, 1, 2, 3, 255][i % 5]).collect();
            c.graph.cross_entropy(v[0], &labels, Some(255))
        }),
        ..op_check("cross_entropy", |r| vec![uniform([2, 4, 3, 3], r)], |_, v| Ok(v[0]))
    });
    v
}

/// Attention, residual refinement, fusion, context blocks and the full tiny model.
pub fn block_checks() -> Vec<GradCheck> {
    let d = 32;
    let ca = Attention::channel("ca", 2 * d, d);
    let sa = Attention::spatial("sa", 2 * d);
    let rrb = Rrb::new("rrb", 24, d);
    let cab = Cab::new("cab", d);
    let mafb = Mafb::new("mafb", 24, 16, d);
    let rafb = Rafb::new("rafb", d, false);
    let gc = GlobalContext::new("gc", 24, d);
    let mut v = vec![
        {
            let a = ca.clone();
            block_check("channel attention", vec![vec![2, 2 * d, 4, 4]], move |s, i| a.register(s, i), move |c, x| ca.forward(c, x[0]))
        },
        {
            let a = sa.clone();
            block_check("spatial attention", vec![vec![2, 2 * d, 4, 4]], move |s, i| a.register(s, i), move |c, x| sa.forward(c, x[0]))
        },
        {
            let a = rrb.clone();
            block_check("rrb", vec![vec![2, 24, 4, 4]], move |s, i| a.register(s, i), move |c, x| rrb.forward(c, x[0]))
        },
        {
            let a = cab.clone();
            block_check(
                "cab",
                vec![vec![2, d, 4, 4], vec![2, d, 4, 4]],
                move |s, i| a.register(s, i),
                move |c, x| cab.forward(c, x[0], x[1]),
            )
        },
        {
            let a = mafb.clone();
            block_check(
                "mafb",
                vec![vec![2, 24, 4, 4], vec![2, 16, 4, 4]],
                move |s, i| a.register(s, i),
                move |c, x| mafb.forward(c, x[0], x[1]),
            )
        },
        {
            let a = rafb.clone();
            block_check(
                "rafb",
                vec![vec![2, d, 4, 4], vec![2, d, 4, 4]],
                move |s, i| a.register(s, i),
                move |c, x| rafb.forward(c, x[0], x[1]),
            )
        },
        {
            let a = gc.clone();
            block_check("global context", vec![vec![2, 24, 4, 4]], move |s, i| a.register(s, i), move |c, x| gc.forward(c, x[0]))
        },
    ];
    v.push(full_model_check());
    v
}

/// Tiny MPVN-RM on a 2x(3+2)x32x32 batch, summed per-stage cross entropy.
pub fn full_model_check() -> GradCheck {
    let variant = ModelVariant::tiny(VariantTag::MpvnRm);
    let model = crate::arch::Model::new(&variant).expect("tiny variant is valid");
    let k = variant.num_classes;
    let fixture_model = model.clone();
    GradCheck {
        name: "full tiny model".into(),
        tolerance: MODEL_TOLERANCE,
        step: 1e-6,
        max_coords: 3,
        max_params: 16,
        fixture: Box::new(move |seed| {
            let store = randomized(|s, _| fixture_model.register(s, seed), seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Fixture {
                inputs: vec![uniform([2, 3, 32, 32], &mut rng), uniform([2, 2, 32, 32], &mut rng)],
                store,
            })
        }),
        loss: Box::new(move |ctx, v| {
            let labels: Vec<u8> = (0..2 * 32 * 32).map(|i| ((i / 97 + i % 7) % k) as u8).collect();
            let out = model.forward(ctx, v[0], Some(v[1]))?;
            deep_supervision_loss(&mut ctx.graph, &out.logits, &labels, None)
        }),
    }
}

/// Run every check over `seeds` seeds.
pub fn run_suite(seeds: u64) -> Result<Vec<CheckReport>> {
    primitive_checks()
        .into_iter()
        .chain(block_checks())
        .map(|c| c.run(seeds))
        .collect()
}

/// Aligned pass/fail table.
pub fn format_table(reports: &[CheckReport]) -> String {
    let w = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w$}  {:>6}  {:>12}  {:>9}  {:>8}  result\n", "op", "coords", "max rel err", "tolerance", "time");
    for r in reports {
        s.push_str(&format!(
            "{:<w$}  {:>6}  {:>12.3e}  {:>9.0e}  {:>7.2}s  {}\n",
            r.name,
            r.coordinates,
            r.max_rel_error,
            r.tolerance,
            r.elapsed.as_secs_f64(),
            if r.passed() { "ok" } else { "FAIL" }
        ));
    }
    s
}
