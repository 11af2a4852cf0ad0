use super::{Attention, BatchNorm, Conv, ForwardCtx, Init};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{Element, Var};

/// Refinement residual block: `relu(x' + conv_b(relu(bn(conv_a(x')))))` with
/// `x' = unify(x)`, a 1x1 convolution to the decoder width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rrb {
    pub unify: Conv,
    pub conv_a: Conv,
    pub bn: BatchNorm,
    pub conv_b: Conv,
}

impl Rrb {
    pub fn new(name: &str, cin: usize, width: usize) -> Self {
        Self {
            unify: Conv::new(format!("{name}.unify"), cin, width, 1, 1, true),
            conv_a: Conv::new(format!("{name}.conv_a"), width, width, 3, 1, false),
            bn: BatchNorm::new(format!("{name}.bn"), width),
            conv_b: Conv::new(format!("{name}.conv_b"), width, width, 3, 1, true),
        }
    }

    pub fn width(&self) -> usize {
        self.unify.cout
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.unify.register(store, init)?;
        self.conv_a.register(store, init)?;
        self.bn.register(store)?;
        self.conv_b.register(store, init)
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let x = self.unify.forward(ctx, x)?;
        let g = self.conv_a.forward(ctx, x)?;
        let g = self.bn.forward(ctx, g)?;
        let g = ctx.graph.relu(g)?;
        let g = self.conv_b.forward(ctx, g)?;
        let y = ctx.graph.add(x, g)?;
        ctx.graph.relu(y)
    }
}

/// Channel attention block of the baseline decoder: `ca(low ++ high) * low + high`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cab {
    pub ca: Attention,
}

impl Cab {
    pub fn new(name: &str, width: usize) -> Self {
        Self {
            ca: Attention::channel(&format!("{name}.ca"), 2 * width, width),
        }
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.ca.register(store, init)
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, low: Var, high: Var) -> Result<Var> {
        let cat = ctx.graph.concat_channels(&[low, high])?;
        let w = self.ca.forward(ctx, cat)?;
        let gated = ctx.graph.mul(w, low)?;
        ctx.graph.add(gated, high)
    }
}

/// Multipath fusion of encoder features: both paths are refined, concatenated
/// to `xc`, gated by spatial and channel attention, and reduced back to the
/// decoder width with a 1x1 convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mafb {
    pub name: String,
    pub rrb_main: Rrb,
    pub rrb_aux: Rrb,
    pub sa: Attention,
    pub ca: Attention,
    pub reduce: Conv,
}

impl Mafb {
    pub fn new(name: &str, cin_main: usize, cin_aux: usize, width: usize) -> Self {
        Self {
            name: name.to_owned(),
            rrb_main: Rrb::new(&format!("{name}.rrb_main"), cin_main, width),
            rrb_aux: Rrb::new(&format!("{name}.rrb_aux"), cin_aux, width),
            sa: Attention::spatial(&format!("{name}.sa"), 2 * width),
            ca: Attention::channel(&format!("{name}.ca"), 2 * width, 2 * width),
            reduce: Conv::new(format!("{name}.reduce"), 4 * width, width, 1, 1, true),
        }
    }

    pub fn width(&self) -> usize {
        self.reduce.cout
    }

    /// Register freshly initialized parameters, for using the block on its own.
    pub fn init_params<T: Element>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        self.register(store, &mut Init::new(seed))
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.rrb_main.register(store, init)?;
        self.rrb_aux.register(store, init)?;
        self.sa.register(store, init)?;
        self.ca.register(store, init)?;
        self.reduce.register(store, init)
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, main: Var, aux: Var) -> Result<Var> {
        let x1 = self.rrb_main.forward(ctx, main)?;
        let x2 = self.rrb_aux.forward(ctx, aux)?;
        let xc = ctx.graph.concat_channels(&[x1, x2])?;
        let s = self.sa.forward(ctx, xc)?;
        let c = self.ca.forward(ctx, xc)?;
        ctx.tap(|| format!("{}.sa", self.name), s);
        ctx.tap(|| format!("{}.ca", self.name), c);
        let by_s = ctx.graph.mul(s, xc)?;
        let by_c = ctx.graph.mul(c, xc)?;
        let both = ctx.graph.concat_channels(&[by_s, by_c])?;
        self.reduce.forward(ctx, both)
    }
}

/// Decoder fusion: `ca(low ++ high) * low + sa(low ++ high) * high`.
///
/// `caption_wiring` swaps the gates (spatial weight on `low`, channel weight on
/// `high`), the alternative reading of the figure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rafb {
    pub name: String,
    pub ca: Attention,
    pub sa: Attention,
    pub caption_wiring: bool,
}

impl Rafb {
    pub fn new(name: &str, width: usize, caption_wiring: bool) -> Self {
        Self {
            name: name.to_owned(),
            ca: Attention::channel(&format!("{name}.ca"), 2 * width, width),
            sa: Attention::spatial(&format!("{name}.sa"), 2 * width),
            caption_wiring,
        }
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.ca.register(store, init)?;
        self.sa.register(store, init)
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, low: Var, high: Var) -> Result<Var> {
        let xc = ctx.graph.concat_channels(&[low, high])?;
        let c = self.ca.forward(ctx, xc)?;
        let s = self.sa.forward(ctx, xc)?;
        ctx.tap(|| format!("{}.sa", self.name), s);
        ctx.tap(|| format!("{}.ca", self.name), c);
        let (w_low, w_high) = if self.caption_wiring { (s, c) } else { (c, s) };
        let a = ctx.graph.mul(w_low, low)?;
        let b = ctx.graph.mul(w_high, high)?;
        ctx.graph.add(a, b)
    }
}

/// Global pooling followed by a 1x1 convolution to the decoder width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalContext {
    pub conv: Conv,
}

impl GlobalContext {
    pub fn new(name: &str, cin: usize, width: usize) -> Self {
        Self {
            conv: Conv::new(format!("{name}.conv"), cin, width, 1, 1, true),
        }
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.conv.register(store, init)
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, top: Var) -> Result<Var> {
        let p = ctx.graph.global_avg_pool(top)?;
        self.conv.forward(ctx, p)
    }
}
