//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs without the libtest harness so every line is printed even when
//! output capture is on.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use afnet::arch::{build_model, Attention, ForwardCtx, Mafb, Model, ModelVariant, VariantTag};
use afnet::geodata::{argmax_classes, slice, stitch, tta_predict, Dihedral, Predictor, RasterImage, Role, StitchMode, TileGrid};
use afnet::metrics::{mean_of, ConfusionMatrix};
use afnet::nn::kernels::{bilinear_upsample_forward, conv2d_forward, max_pool2d_forward, softmax_channels_forward};
use afnet::params::ParamStore;
use afnet::train::synthetic::{shapes_dataset, Keying};
use afnet::train::{AdamConfig, LrSchedule, Sample, TrainConfig, Trainer};
use afnet::verify::{run_suite, BLOCK_TOLERANCE, MODEL_TOLERANCE};
use afnet::{Graph, Tensor};
use common::*;
use rand::RngExt;

const SUITE_SEEDS: u64 = 5;
const SUITE_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_INSTANCES: u64 = 100;
const ORACLE_TOL: f64 = 1e-6;
const LR_TOL: f64 = 1e-12;
const CONVERGENCE_TARGET: f64 = 0.99;
const CONVERGENCE_EPOCHS: usize = 200;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(600);
const DIRECTIONAL_THRESHOLD: f64 = 0.95;
const DIRECTIONAL_SEEDS: u64 = 5;
const F1_ROW: [f64; 5] = [93.1, 96.5, 85.8, 90.6, 88.8];
const F1_MEAN: f64 = 90.96;
const ATTENTION_INPUTS: u64 = 1000;
const SHUFFLE_TOL: f64 = 1e-12;

type Outcome = (bool, String);

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let reports = match run_suite(SUITE_SEEDS) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let elapsed = t.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let worst = |tol: f64| {
        reports
            .iter()
            .filter(|r| r.tolerance == tol)
            .map(|r| r.max_rel_error)
            .fold(f64::NAN, f64::max)
    };
    let (worst_block, model) = (worst(BLOCK_TOLERANCE), worst(MODEL_TOLERANCE));
    let ok = failed.is_empty() && elapsed < SUITE_BUDGET && worst_block < BLOCK_TOLERANCE && model < MODEL_TOLERANCE;
    (
        ok,
        format!(
            "{} checks x {SUITE_SEEDS} seeds, worst primitive/block {worst_block:.1e}, full model {model:.1e}, {:.0}s{}",
            reports.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(" ")) }
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut worst = [0.0f64; 5];
    let mut count_mismatches = 0u64;
    for seed in 0..ORACLE_INSTANCES {
        let mut r = rng(seed);
        let k = [1, 3, 5][r.random_range(0..3)];
        let (stride, pad) = (r.random_range(1..=2), r.random_range(0..=k / 2 + 1));
        let x = random_tensor(&mut r, &[2, 3, k + 5, k + 4]);
        let w = random_tensor(&mut r, &[4, 3, k, k]);
        let b = random_tensor(&mut r, &[4]);
        let got = conv2d_forward(&x, &w, Some(&b), stride, pad).unwrap();
        worst[0] = worst[0].max(max_abs_diff(got.data(), conv2d(&x, &w, Some(&b), stride, pad).data()));

        let pk = r.random_range(1..=3);
        let (got, _) = max_pool2d_forward(&x, pk, pk).unwrap();
        worst[1] = worst[1].max(max_abs_diff(got.data(), max_pool2d(&x, pk, pk).data()));

        let scale = r.random_range(1..=4);
        let align = r.random_bool(0.5);
        let got = bilinear_upsample_forward(&x, scale, align).unwrap();
        worst[2] = worst[2].max(max_abs_diff(got.data(), bilinear(&x, scale, align).data()));

        let logits = x.map(|v| 6.0 * v);
        let got = softmax_channels_forward(&logits).unwrap();
        worst[3] = worst[3].max(max_abs_diff(got.data(), softmax(&logits).data()));

        let labels: Vec<u8> = (0..2 * (k + 5) * (k + 4))
            .map(|i| if i > 0 && r.random_bool(0.1) { 255 } else { r.random_range(0..3u8) })
            .collect();
        let mut g = Graph::<f64>::new();
        let v = g.constant(logits.clone());
        let l = g.cross_entropy(v, &labels, Some(255)).unwrap();
        worst[4] = worst[4].max((g.value(l).item() - cross_entropy(&logits, &labels, Some(255))).abs());

        let kc = r.random_range(2..=6);
        let gt: Vec<u8> = (0..300).map(|_| r.random_range(0..kc) as u8).collect();
        let pred: Vec<u8> = gt.iter().map(|&g| if r.random_bool(0.6) { g } else { r.random_range(0..kc) as u8 }).collect();
        let cm = ConfusionMatrix::from_maps(&pred, &gt, kc, None).unwrap();
        let naive = confusion(&pred, &gt, None);
        for a in 0..kc {
            for p in 0..kc {
                if cm.get(a, p) != *naive.get(&(a as u8, p as u8)).unwrap_or(&0) {
                    count_mismatches += 1;
                }
            }
            let got = cm.class_prf(a);
            let (pp, rr, ff) = prf(&pred, &gt, a as u8);
            let e = (got.precision - pp).abs().max((got.recall - rr).abs()).max((got.f1 - ff).abs());
            worst[4] = worst[4].max(e);
        }
        worst[4] = worst[4].max((cm.overall_accuracy().unwrap() - overall_accuracy(&pred, &gt)).abs());
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    (
        max <= ORACLE_TOL && count_mismatches == 0,
        format!(
            "{ORACLE_INSTANCES} instances each; max |diff| conv {:.1e}, pool {:.1e}, bilinear {:.1e}, softmax {:.1e}, CE/OA/PRF {:.1e}; {count_mismatches} count mismatches",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn architecture_contract() -> Outcome {
    let mut r = rng(0);
    let o: Tensor<f32> = random_tensor(&mut r, &[2, 3, 64, 64]).cast();
    let a: Tensor<f32> = random_tensor(&mut r, &[2, 2, 64, 64]).cast();
    let mut bad = Vec::new();
    for tag in [VariantTag::Dfn, VariantTag::MDfn, VariantTag::Mpvn, VariantTag::MpvnM, VariantTag::MpvnR, VariantTag::MpvnRm] {
        let (model, store) = build_model(&ModelVariant::tiny(tag), 0).unwrap();
        let mut ctx = ForwardCtx::inference(&store);
        let ov = ctx.input(o.clone());
        let av = tag.uses_aux().then(|| ctx.input(a.clone()));
        match model.forward(&mut ctx, ov, av) {
            Ok(out) => {
                let shapes: Vec<&[usize]> = out.logits.iter().map(|&v| ctx.graph.value(v).shape()).collect();
                if shapes != vec![&[2, 6, 64, 64][..]; 4] {
                    bad.push(format!("{tag:?} {shapes:?}"));
                }
            }
            Err(e) => bad.push(format!("{tag:?} {e}")),
        }
    }
    let full = Model::new(&ModelVariant::full(VariantTag::MpvnM)).unwrap().fusion_widths();
    let block = Mafb::new("mafb", 2048, 512, 512);
    let mut store = ParamStore::<f32>::new();
    block.init_params(&mut store, 0).unwrap();
    let mut ctx = ForwardCtx::inference(&store);
    let m = ctx.input(random_tensor(&mut r, &[1, 2048, 2, 2]).cast());
    let x = ctx.input(random_tensor(&mut r, &[1, 512, 2, 2]).cast());
    let y = block.forward(&mut ctx, m, x).unwrap();
    let width = ctx.graph.value(y).shape()[1];
    (
        bad.is_empty() && full == [512; 4] && width == 512,
        format!(
            "6 variants -> 4 x [2,6,64,64]{}; full-scale MAFB widths {full:?}, block output {width} channels",
            if bad.is_empty() { String::new() } else { format!(" (wrong: {})", bad.join(" ")) }
        ),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn lr_schedule() -> Outcome {
    let ipe = 7;
    let s = LrSchedule { iters_per_epoch: ipe, ..LrSchedule::default() };
    let start = s.lr(0, 0);
    let peak = s.lr(100, 0);
    let mut plateau = 0.0f64;
    for e in 100..1000 {
        let want = 1e-3 * 0.1f64.powi(((e - 100) / 200) as i32);
        for i in 0..ipe {
            plateau = plateau.max(rel(s.lr(e, i), want));
        }
    }
    // extend the warm-up curve by one iteration past its last point
    let growth = (s.lr1 / s.lr0).powf(1.0 / (100 * ipe) as f64);
    let junction = rel(s.lr(99, ipe - 1) * growth, peak);
    let ok = start == 1e-5 && peak == 1e-3 && plateau <= LR_TOL && junction <= LR_TOL;
    (
        ok,
        format!("lr(0,0) = {start:e}, lr(100,0) = {peak:e}, plateau rel err {plateau:.1e}, junction rel err {junction:.1e}"),
    )
}

fn pipeline_exactness() -> Outcome {
    let extents = [(8, 8), (9, 13), (31, 17), (37, 45), (64, 64), (65, 33), (100, 21), (127, 129)];
    let mut broken = Vec::new();
    for (i, &(w, h)) in extents.iter().enumerate() {
        let mut r = rng(i as u64);
        let probs = random_raster(&mut r, w, h, 3);
        let labels = RasterImage::from_u8(w, h, 1, Role::Label, (0..w * h).map(|_| r.random_range(0..6u8)).collect()).unwrap();
        for tile in [16, 32] {
            let Ok(grid) = TileGrid::new(w, h, tile, tile / 2) else { continue };
            for img in [&probs, &labels] {
                let back = slice(img, &grid).and_then(|t| stitch(&t, &grid, StitchMode::Crop));
                if back.as_ref().ok() != Some(img) {
                    broken.push(format!("{w}x{h}/{tile}"));
                }
            }
        }
    }
    let mut tta_mismatch = 0usize;
    let mut pixels = 0usize;
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let (w, h) = (r.random_range(5..24), r.random_range(5..24));
        let x = integer_raster(&mut r, w, h, 4).to_tensor();
        let single = argmax_classes(&EquivariantModel.predict_probs(&x, None).unwrap()).unwrap();
        let (_, tta) = tta_predict(&EquivariantModel, &x, None, &Dihedral::all()).unwrap();
        tta_mismatch += single.iter().zip(&tta).filter(|(a, b)| a != b).count();
        pixels += single.len();
    }
    (
        broken.is_empty() && tta_mismatch == 0,
        format!(
            "{} extents x 2 tile sizes bit-exact{}; 8-way TTA argmax differs on {tta_mismatch}/{pixels} pixels",
            extents.len(),
            if broken.is_empty() { String::new() } else { format!(" except {}", broken.join(" ")) }
        ),
    )
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        schedule: LrSchedule { lr0: 2e-4, lr1: 2e-3, warmup_epochs: 5, step_interval: 1000, step_factor: 0.1, iters_per_epoch: 1 },
        adam: AdamConfig { weight_decay: 0.0, ..AdamConfig::default() },
        augment: None,
        seed,
        ignore: None,
    }
}

/// Train until training-set pixel accuracy reaches `target` or `max_epochs`
/// pass. Returns the number of epochs taken, if reached, and the last accuracy.
fn epochs_to(tag: VariantTag, data: &[Sample], seed: u64, target: f64, max_epochs: usize) -> (Option<usize>, f64) {
    let (model, store) = build_model(&ModelVariant::tiny(tag), seed).unwrap();
    let mut t = Trainer::new(model, store, train_config(seed));
    let mut acc = 0.0;
    for e in 1..=max_epochs {
        t.train_epoch(data).unwrap();
        acc = t.evaluate(data).unwrap().1;
        if acc >= target {
            return (Some(e), acc);
        }
    }
    (None, acc)
}

fn convergence() -> Outcome {
    let t = Instant::now();
    let data = shapes_dataset(16, 32, Keying::Joint, 1).unwrap();
    let (reached, acc) = epochs_to(VariantTag::MpvnRm, &data, 1, CONVERGENCE_TARGET, CONVERGENCE_EPOCHS);
    let converge_time = t.elapsed();

    // MPVN-M first; MPVN only needs to run long enough to show it is not faster.
    let mut per_seed = Vec::new();
    let mut directional = true;
    for s in 0..DIRECTIONAL_SEEDS {
        let data = shapes_dataset(8, 32, Keying::AuxOnly, 100 + s).unwrap();
        let (m, _) = epochs_to(VariantTag::MpvnM, &data, s, DIRECTIONAL_THRESHOLD, CONVERGENCE_EPOCHS);
        let budget = m.map_or(CONVERGENCE_EPOCHS, |m| m - 1);
        let (b, _) = epochs_to(VariantTag::Mpvn, &data, s, DIRECTIONAL_THRESHOLD, budget);
        directional &= b.is_none();
        let show = |v: Option<usize>, cap: usize| v.map_or(format!(">{cap}"), |v| v.to_string());
        per_seed.push(format!("{}/{}", show(b, budget), show(m, CONVERGENCE_EPOCHS)));
    }
    let total = t.elapsed();
    let ok = reached.is_some() && directional && total < CONVERGENCE_BUDGET;
    (
        ok,
        format!(
            "MPVN-RM {:.2}% after {} epochs ({:.0}s); epochs to {:.0}% aux-only, MPVN/MPVN-M per seed: {}; total {:.0}s",
            100.0 * acc,
            reached.map_or(format!(">{CONVERGENCE_EPOCHS}"), |e| e.to_string()),
            converge_time.as_secs_f64(),
            100.0 * DIRECTIONAL_THRESHOLD,
            per_seed.join(" "),
            total.as_secs_f64()
        ),
    )
}

fn metrics_fixture() -> Outcome {
    let m = mean_of(&F1_ROW).unwrap();
    let shown = format!("{m:.2}");
    ((m - F1_MEAN).abs() < 1e-9 && shown == "90.96", format!("mean_f1({F1_ROW:?}) = {shown}"))
}

fn attention_behavior() -> Outcome {
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    let mut shuffle = 0.0f64;
    for seed in 0..ATTENTION_INPUTS {
        let mut r = rng(seed);
        let c = r.random_range(1..=40);
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let spread = r.random_range(0.1..5.0);
        let x = random_tensor(&mut r, &[1, c, h, w]).map(|v| spread * v);
        let ca = Attention::channel("ca", c, c);
        let sa = Attention::spatial("sa", c);
        let mut store = ParamStore::<f64>::new();
        ca.init_params(&mut store, seed).unwrap();
        sa.init_params(&mut store, seed + 1).unwrap();
        for p in store.iter_mut() {
            if p.0.ends_with(".bias") {
                p.2.data_mut().iter_mut().for_each(|b| *b = r.random_range(-1.0..1.0));
            }
        }
        // the same channel attention on a spatially permuted copy
        let mut perm: Vec<usize> = (0..h * w).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let mut shuffled = x.clone();
        for ch in 0..c {
            for (dst, &src) in perm.iter().enumerate() {
                shuffled.data_mut()[ch * h * w + dst] = x.data()[ch * h * w + src];
            }
        }
        let mut ctx = ForwardCtx::inference(&store);
        let xv = ctx.input(x);
        let sv = ctx.input(shuffled);
        let (a, b, s) = (ca.forward(&mut ctx, xv).unwrap(), ca.forward(&mut ctx, sv).unwrap(), sa.forward(&mut ctx, xv).unwrap());
        for v in [a, s] {
            for &y in ctx.graph.value(v).data() {
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        shuffle = shuffle.max(ctx.graph.value(a).max_abs_diff(ctx.graph.value(b)));
    }
    (
        lo > 0.0 && hi < 1.0 && shuffle <= SHUFFLE_TOL,
        format!("{ATTENTION_INPUTS} inputs: min output {lo:.1e}, 1 - max output {:.1e}; CA shuffle drift {shuffle:.1e}", 1.0 - hi),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("architecture contract", architecture_contract),
        ("learning-rate schedule", lr_schedule),
        ("pipeline exactness", pipeline_exactness),
        ("convergence", convergence),
        ("metrics fixture", metrics_fixture),
        ("attention range", attention_behavior),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut all = true;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let (ok, detail) = run();
        all &= ok;
        println!("criterion {id} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
