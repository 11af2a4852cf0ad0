use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

fn zeroed(mut store: ParamStore<f64>) -> ParamStore<f64> {
    for (_, _, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    store
}

fn registered(f: impl FnOnce(&mut ParamStore<f64>, &mut Init)) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    f(&mut s, &mut Init::new(7));
    s
}

#[test]
fn zero_attention_is_one_half() {
    let ca = Attention::channel("ca", 16, 16);
    let sa = Attention::spatial("sa", 16);
    let store = zeroed(registered(|s, i| {
        ca.register(s, i).unwrap();
        sa.register(s, i).unwrap();
    }));
    let mut ctx = ForwardCtx::inference(&store);
    let x = ctx.input(random([2, 16, 8, 8], 1));
    let c = ca.forward(&mut ctx, x).unwrap();
    let s = sa.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(c).shape(), &[2, 16, 1, 1]);
    assert_eq!(ctx.graph.value(s).shape(), &[2, 1, 8, 8]);
    assert!(ctx.graph.value(c).data().iter().all(|&v| v == 0.5));
    assert!(ctx.graph.value(s).data().iter().all(|&v| v == 0.5));
}

#[test]
fn attention_rejects_wrong_channels() {
    let ca = Attention::channel("ca", 16, 16);
    let store = registered(|s, i| ca.register(s, i).unwrap());
    let mut ctx = ForwardCtx::inference(&store);
    let x = ctx.input(random([1, 8, 4, 4], 1));
    assert!(matches!(ca.forward(&mut ctx, x), Err(Error::DimensionMismatch { axis: 1, .. })));
}

#[test]
fn rrb_with_silent_branch_is_identity_on_nonnegative_input() {
    let rrb = Rrb::new("r", 4, 4);
    let mut store = zeroed(registered(|s, i| rrb.register(s, i).unwrap()));
    store.set("r.unify.weight", Tensor::from_fn([4, 4, 1, 1], |i| if i % 5 == 0 { 1.0 } else { 0.0 })).unwrap();
    store.set("r.bn.gamma", Tensor::ones([4])).unwrap();
    store.set("r.bn.running_var", Tensor::ones([4])).unwrap();
    let x = random([1, 4, 6, 6], 3).map(f64::abs);
    let mut ctx = ForwardCtx::inference(&store);
    let xv = ctx.input(x.clone());
    let y = rrb.forward(&mut ctx, xv).unwrap();
    assert_eq!(ctx.graph.value(y), &x);
}

#[test]
fn rafb_and_cab_zero_attention() {
    let cab = Cab::new("cab", 4);
    let rafb = Rafb::new("rafb", 4, false);
    let store = zeroed(registered(|s, i| {
        cab.register(s, i).unwrap();
        rafb.register(s, i).unwrap();
    }));
    let (low, high) = (random([1, 4, 5, 5], 1), random([1, 4, 5, 5], 2));
    let mut ctx = ForwardCtx::inference(&store);
    let (l, h) = (ctx.input(low.clone()), ctx.input(high.clone()));
    let c = cab.forward(&mut ctx, l, h).unwrap();
    let r = rafb.forward(&mut ctx, l, h).unwrap();
    for i in 0..low.numel() {
        let (a, b) = (low.data()[i], high.data()[i]);
        assert_eq!(ctx.graph.value(c).data()[i], 0.5 * a + b);
        assert_eq!(ctx.graph.value(r).data()[i], 0.5 * a + 0.5 * b);
    }
}

#[test]
fn mafb_reduces_to_decoder_width() {
    let m = Mafb::new("m", 8, 4, 16);
    let store = registered(|s, i| m.register(s, i).unwrap());
    let mut ctx = ForwardCtx::inference(&store).with_taps();
    let a = ctx.input(random([1, 8, 4, 4], 1));
    let b = ctx.input(random([1, 4, 4, 4], 2));
    let y = m.forward(&mut ctx, a, b).unwrap();
    assert_eq!(ctx.graph.value(y).shape(), &[1, 16, 4, 4]);
    let taps: Vec<_> = ctx.taps().map(|(n, t)| (n.to_owned(), t.shape().to_vec())).collect();
    assert_eq!(taps, vec![("m.sa".into(), vec![1, 1, 4, 4]), ("m.ca".into(), vec![1, 32, 1, 1])]);
}

#[test]
fn global_context_on_constant_input() {
    let gc = GlobalContext::new("gc", 3, 2);
    let mut store = registered(|s, i| gc.register(s, i).unwrap());
    store.set("gc.conv.bias", Tensor::new(vec![2], vec![0.25, -0.5]).unwrap()).unwrap();
    let w = store.get("gc.conv.weight").unwrap().clone();
    let mut ctx = ForwardCtx::inference(&store);
    let x = ctx.input(Tensor::full([1, 3, 4, 4], 1.5));
    let y = gc.forward(&mut ctx, x).unwrap();
    let y = ctx.graph.value(y);
    assert_eq!(y.shape(), &[1, 2, 1, 1]);
    for o in 0..2 {
        let want = 1.5 * w.data()[o * 3..o * 3 + 3].iter().sum::<f64>() + [0.25, -0.5][o];
        assert!((y.data()[o] - want).abs() < 1e-12);
    }
}

#[test]
fn tiny_backbone_stride_contract() {
    let b = Backbone::new("main", &BackboneConfig::tiny(3)).unwrap();
    let store = registered(|s, i| b.register(s, i).unwrap());
    let mut ctx = ForwardCtx::inference(&store);
    let x = ctx.input(random([1, 3, 64, 64], 1));
    let f = b.forward(&mut ctx, x).unwrap();
    let shapes: Vec<_> = f.iter().map(|&v| ctx.graph.value(v).shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![1, 16, 16, 16], vec![1, 32, 8, 8], vec![1, 64, 4, 4], vec![1, 128, 2, 2]]);
}

#[test]
fn every_variant_forwards_to_full_resolution() {
    for tag in VariantTag::ALL {
        let v = ModelVariant::tiny(tag);
        let (model, store) = build_model(&v, 3).unwrap();
        let mut ctx = ForwardCtx::inference(&store);
        let o = ctx.input(Tensor::zeros([1, 3, 64, 64]));
        let a = tag.uses_aux().then(|| ctx.input(Tensor::zeros([1, 2, 64, 64])));
        let out = model.forward(&mut ctx, o, a).unwrap();
        assert_eq!(out.logits.len(), 4);
        for l in out.logits {
            assert_eq!(ctx.graph.value(l).shape(), &[1, 6, 64, 64], "{tag}");
        }
    }
}

#[test]
fn input_contracts() {
    let (dfn, s) = build_model(&ModelVariant::tiny(VariantTag::Dfn), 1).unwrap();
    let (mp, s2) = build_model(&ModelVariant::tiny(VariantTag::Mpvn), 1).unwrap();
    let mut ctx = ForwardCtx::inference(&s);
    let o = ctx.input(Tensor::zeros([1, 3, 32, 32]));
    let a = ctx.input(Tensor::zeros([1, 2, 32, 32]));
    assert!(matches!(dfn.forward(&mut ctx, o, Some(a)), Err(Error::Contract(_))));
    let mut ctx = ForwardCtx::inference(&s2);
    let o = ctx.input(Tensor::zeros([1, 3, 32, 32]));
    assert!(matches!(mp.forward(&mut ctx, o, None), Err(Error::Contract(_))));
    let o = ctx.input(Tensor::zeros([1, 3, 48, 32]));
    let a = ctx.input(Tensor::zeros([1, 2, 48, 32]));
    assert!(matches!(mp.forward(&mut ctx, o, Some(a)), Err(Error::Geometry(_))));
}

#[test]
fn initialization_is_seeded() {
    let v = ModelVariant::tiny(VariantTag::MpvnRm);
    let (_, a) = build_model(&v, 5).unwrap();
    let (_, b) = build_model(&v, 5).unwrap();
    let (_, c) = build_model(&v, 6).unwrap();
    assert_eq!(a.to_records(), b.to_records());
    assert_ne!(a.to_records(), c.to_records());
    let (_, dfn) = build_model(&ModelVariant::tiny(VariantTag::Dfn), 5).unwrap();
    assert!(a.learnable_elements() > dfn.learnable_elements());
}
