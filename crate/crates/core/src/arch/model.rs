use super::{Backbone, Cab, Conv, ForwardCtx, GlobalContext, Init, Mafb, ModelVariant, Rafb, Rrb, VariantTag};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geodata::Predictor;
use crate::params::{load_checkpoint, ParamStore};
use crate::tensor::{Element, Tensor, Var};

/// Checkpoint record naming the variant a checkpoint was written for.
pub const VARIANT_RECORD: &str = "@variant";

/// Strides of the four encoder stages.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
enum Fusion {
    Single,
    /// Elementwise sum; the auxiliary feature is projected first when the
    /// two encoders disagree on width.
    Sum { aux_proj: Option<Conv> },
    Mafb(Mafb),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Merge {
    Cab(Cab),
    Rafb(Rafb),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct DecoderStage {
    stride: usize,
    rrb_in: Rrb,
    merge: Option<Merge>,
    rrb_out: Rrb,
    head: Conv,
}

/// A built architecture. Holds structure and parameter names only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Model {
    pub variant: ModelVariant,
    main: Backbone,
    aux: Option<Backbone>,
    fusion: Vec<Fusion>,
    gc: GlobalContext,
    /// Top (stride 32) first.
    decoder: Vec<DecoderStage>,
}

/// Logits per decoder stage at input resolution, strides 32, 16, 8, 4.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits: Vec<Var>,
}

impl ModelOutput {
    /// The finest stage, used for prediction.
    pub fn prediction(&self) -> Var {
        *self.logits.last().expect("four stages")
    }
}

/// Construct `variant` and initialize its parameters deterministically from `seed`.
pub fn build_model(variant: &ModelVariant, seed: u64) -> Result<(Model, ParamStore)> {
    let model = Model::new(variant)?;
    let mut store = ParamStore::new();
    model.register(&mut store, seed)?;
    Ok((model, store))
}

impl Model {
    pub fn new(variant: &ModelVariant) -> Result<Self> {
        variant.validate()?;
        let d = variant.decoder_width;
        let main = Backbone::new("main", &variant.main)?;
        let aux = variant.aux.as_ref().map(|c| Backbone::new("aux", c)).transpose()?;
        let mw = main.widths();
        let mut fusion = Vec::with_capacity(4);
        let mut fused_w = [0; 4];
        for i in 0..4 {
            let name = format!("fuse.s{}", STAGE_STRIDES[i]);
            let f = match &aux {
                None => Fusion::Single,
                Some(a) if variant.uses_mafb() => Fusion::Mafb(Mafb::new(&name, mw[i], a.widths()[i], d)),
                Some(a) => {
                    let aw = a.widths()[i];
                    Fusion::Sum {
                        aux_proj: (aw != mw[i]).then(|| Conv::new(format!("{name}.aux_proj"), aw, mw[i], 1, 1, true)),
                    }
                }
            };
            fused_w[i] = if matches!(f, Fusion::Mafb(_)) { d } else { mw[i] };
            fusion.push(f);
        }
        let decoder = (0..4)
            .rev()
            .map(|i| {
                let stride = STAGE_STRIDES[i];
                let p = format!("dec.s{stride}");
                let merge = (i < 3).then(|| {
                    if variant.tag.has_rafb() {
                        Merge::Rafb(Rafb::new(&format!("{p}.rafb"), d, variant.rafb_caption_wiring))
                    } else {
                        Merge::Cab(Cab::new(&format!("{p}.cab"), d))
                    }
                });
                DecoderStage {
                    stride,
                    rrb_in: Rrb::new(&format!("{p}.rrb_in"), fused_w[i], d),
                    merge,
                    rrb_out: Rrb::new(&format!("{p}.rrb_out"), d, d),
                    head: Conv::new(format!("{p}.head"), d, variant.num_classes, 1, 1, true),
                }
            })
            .collect();
        Ok(Self {
            variant: variant.clone(),
            main,
            aux,
            fusion,
            gc: GlobalContext::new("gc", fused_w[3], d),
            decoder,
        })
    }

    pub fn tag(&self) -> VariantTag {
        self.variant.tag
    }

    pub fn num_classes(&self) -> usize {
        self.variant.num_classes
    }

    /// Output width of the encoder fusion at each stride.
    pub fn fusion_widths(&self) -> [usize; 4] {
        let mw = self.main.widths();
        std::array::from_fn(|i| match self.fusion[i] {
            Fusion::Mafb(ref m) => m.width(),
            _ => mw[i],
        })
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let mut init = Init::new(seed);
        self.main.register(store, &mut init)?;
        if let Some(a) = &self.aux {
            a.register(store, &mut init)?;
        }
        for f in &self.fusion {
            match f {
                Fusion::Single | Fusion::Sum { aux_proj: None } => {}
                Fusion::Sum { aux_proj: Some(c) } => c.register(store, &mut init)?,
                Fusion::Mafb(m) => m.register(store, &mut init)?,
            }
        }
        self.gc.register(store, &mut init)?;
        for s in &self.decoder {
            s.rrb_in.register(store, &mut init)?;
            match &s.merge {
                None => {}
                Some(Merge::Cab(c)) => c.register(store, &mut init)?,
                Some(Merge::Rafb(r)) => r.register(store, &mut init)?,
            }
            s.rrb_out.register(store, &mut init)?;
            s.head.register(store, &mut init)?;
        }
        Ok(())
    }

    /// Check the input contract and return `(n, h, w)`.
    pub fn check_inputs<T: Element>(&self, optical: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = optical.dims4()?;
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::Geometry(format!("input extent {h}x{w} must be a positive multiple of 32")));
        }
        if c != self.variant.optical_channels {
            return Err(Error::DimensionMismatch {
                op: "model input",
                axis: 1,
                left: c,
                right: self.variant.optical_channels,
            });
        }
        match (aux, self.variant.tag.uses_aux()) {
            (Some(_), false) => Err(Error::Contract(format!("{} takes no auxiliary input", self.tag()))),
            (None, true) => Err(Error::Contract(format!("{} requires an auxiliary input", self.tag()))),
            (None, false) => Ok((n, h, w)),
            (Some(a), true) => {
                let (an, ac, ah, aw) = a.dims4()?;
                for (axis, l, r) in [(0, an, n), (1, ac, self.variant.aux_channels), (2, ah, h), (3, aw, w)] {
                    if l != r {
                        return Err(Error::DimensionMismatch {
                            op: "auxiliary input",
                            axis,
                            left: l,
                            right: r,
                        });
                    }
                }
                Ok((n, h, w))
            }
        }
    }

    /// Encoder features per branch at strides 4, 8, 16, 32.
    pub fn encode<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, optical: Var, aux: Option<Var>) -> Result<([Var; 4], Option<[Var; 4]>)> {
        self.check_inputs(ctx.graph.value(optical), aux.map(|a| ctx.graph.value(a)))?;
        match (&self.aux, aux) {
            (None, Some(a)) => {
                let stacked = ctx.graph.concat_channels(&[optical, a])?;
                Ok((self.main.forward(ctx, stacked)?, None))
            }
            (None, None) => Ok((self.main.forward(ctx, optical)?, None)),
            (Some(b), Some(a)) => {
                let m = self.main.forward(ctx, optical)?;
                Ok((m, Some(b.forward(ctx, a)?)))
            }
            (Some(_), None) => unreachable!("checked by check_inputs"),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, optical: Var, aux: Option<Var>) -> Result<ModelOutput> {
        let (main, aux_f) = self.encode(ctx, optical, aux)?;
        let mut fused = [main[0]; 4];
        for i in 0..4 {
            fused[i] = match (&self.fusion[i], &aux_f) {
                (Fusion::Single, _) => main[i],
                (Fusion::Sum { aux_proj }, Some(a)) => {
                    let a = match aux_proj {
                        Some(c) => c.forward(ctx, a[i])?,
                        None => a[i],
                    };
                    ctx.graph.add(main[i], a)?
                }
                (Fusion::Mafb(m), Some(a)) => m.forward(ctx, main[i], a[i])?,
                (_, None) => unreachable!("multipath fusion always has auxiliary features"),
            };
        }
        let align = self.variant.align_corners;
        let mut logits = Vec::with_capacity(4);
        let mut prev: Option<Var> = None;
        for (s, i) in self.decoder.iter().zip((0..4).rev()) {
            let mut f = s.rrb_in.forward(ctx, fused[i])?;
            f = match (&s.merge, prev) {
                (None, _) => {
                    let g = self.gc.forward(ctx, fused[3])?;
                    ctx.graph.add(f, g)?
                }
                (Some(m), Some(deeper)) => {
                    let high = ctx.graph.bilinear_upsample(deeper, 2, align)?;
                    match m {
                        Merge::Cab(c) => c.forward(ctx, f, high)?,
                        Merge::Rafb(r) => r.forward(ctx, f, high)?,
                    }
                }
                (Some(_), None) => unreachable!("only the top stage lacks a deeper feature"),
            };
            let out = s.rrb_out.forward(ctx, f)?;
            let head = s.head.forward(ctx, out)?;
            logits.push(ctx.graph.bilinear_upsample(head, s.stride, align)?);
            prev = Some(out);
        }
        Ok(ModelOutput { logits })
    }

    /// Short description stored with checkpoints, e.g. `MPVN-RM classes=6 decoder=32 main=tiny aux=tiny`.
    pub fn descriptor(&self) -> String {
        let v = &self.variant;
        let mut d = format!(
            "{} classes={} decoder={} main={}",
            v.tag,
            v.num_classes,
            v.decoder_width,
            v.main.kind.name()
        );
        if let Some(a) = &v.aux {
            d.push_str(&format!(" aux={}", a.kind.name()));
        }
        d
    }

    /// Parameter records plus the `@variant` descriptor.
    pub fn checkpoint_records<T: Element>(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<f32>)> {
        let desc = self.descriptor();
        let bytes: Vec<f32> = desc.bytes().map(f32::from).collect();
        let mut r = vec![(VARIANT_RECORD.to_owned(), Tensor::new([bytes.len()], bytes).expect("1-d"))];
        r.extend(store.to_records());
        r
    }

    /// Build a parameter store from checkpoint records, refusing records
    /// written for a different variant.
    pub fn load_store(&self, records: &[(String, Tensor<f32>)]) -> Result<ParamStore> {
        if let Some((_, t)) = records.iter().find(|(n, _)| n == VARIANT_RECORD) {
            let found: String = t.data().iter().map(|&b| b as u8 as char).collect();
            let expected = self.descriptor();
            if found != expected {
                return Err(Error::VariantMismatch { expected, found });
            }
        }
        let (_, mut store) = build_model(&self.variant, 0)?;
        store.load_records(records)?;
        Ok(store)
    }

    /// Per-pixel class probabilities of the finest stage, running statistics.
    pub fn predict_probs<T: Element>(&self, store: &ParamStore<T>, optical: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut ctx = ForwardCtx::inference(store);
        let o = ctx.input(optical.clone());
        let a = aux.map(|a| ctx.input(a.clone()));
        let out = self.forward(&mut ctx, o, a)?;
        let p = ctx.graph.softmax_over_classes(out.prediction())?;
        Ok(ctx.graph.value(p).clone())
    }
}

/// A model bound to its parameters.
#[derive(Clone, Debug)]
pub struct Segmenter {
    pub model: Model,
    pub store: ParamStore,
}

impl Segmenter {
    /// Freshly initialized parameters.
    pub fn new(variant: &ModelVariant, seed: u64) -> Result<Self> {
        let (model, store) = build_model(variant, seed)?;
        Ok(Self { model, store })
    }

    /// Parameters from a checkpoint written for `variant`.
    pub fn load(variant: &ModelVariant, checkpoint: &Path) -> Result<Self> {
        let model = Model::new(variant)?;
        let store = model.load_store(&load_checkpoint(checkpoint)?)?;
        Ok(Self { model, store })
    }

    /// Attention maps of the fusion blocks, by tap name, for one forward pass.
    pub fn features(&self, optical: &Tensor<f32>, aux: Option<&Tensor<f32>>) -> Result<Vec<(String, Tensor<f32>)>> {
        let mut ctx = ForwardCtx::inference(&self.store).with_taps();
        let o = ctx.input(optical.clone());
        let a = aux.map(|a| ctx.input(a.clone()));
        self.model.forward(&mut ctx, o, a)?;
        Ok(ctx.taps().map(|(n, t)| (n.to_owned(), t.clone())).collect())
    }
}

impl Predictor for Segmenter {
    fn predict_probs(&self, optical: &Tensor<f32>, aux: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        self.model.predict_probs(&self.store, optical, aux)
    }
}
