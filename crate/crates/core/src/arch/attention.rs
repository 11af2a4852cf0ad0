use super::{Conv, ForwardCtx, Init, ATTENTION_REDUCTION};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Global average pool, then the 1x1 bottleneck: one weight per channel.
    Channel,
    /// The 1x1 bottleneck at every pixel: one weight per position.
    Spatial,
}

/// `sigmoid(conv2(relu(conv1(x))))`, preceded by global average pooling for
/// the channel variant. Both convolutions are 1x1 with bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attention {
    pub kind: AttentionKind,
    pub conv1: Conv,
    pub conv2: Conv,
}

impl Attention {
    pub fn channel(name: &str, cin: usize, c_att: usize) -> Self {
        Self::build(AttentionKind::Channel, name, cin, c_att)
    }

    pub fn spatial(name: &str, cin: usize) -> Self {
        Self::build(AttentionKind::Spatial, name, cin, 1)
    }

    fn build(kind: AttentionKind, name: &str, cin: usize, cout: usize) -> Self {
        let hidden = (cin / ATTENTION_REDUCTION).max(1);
        Self {
            kind,
            conv1: Conv::new(format!("{name}.conv1"), cin, hidden, 1, 1, true),
            conv2: Conv::new(format!("{name}.conv2"), hidden, cout, 1, 1, true),
        }
    }

    pub fn hidden(&self) -> usize {
        self.conv1.cout
    }

    /// Register freshly initialized parameters, for using the block on its own.
    pub fn init_params<T: Element>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        self.register(store, &mut Init::new(seed))
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.conv1.register(store, init)?;
        self.conv2.register(store, init)
    }

    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.graph.value(x).dims4()?.1;
        if c != self.conv1.cin {
            return Err(Error::DimensionMismatch {
                op: "attention",
                axis: 1,
                left: c,
                right: self.conv1.cin,
            });
        }
        let src = match self.kind {
            AttentionKind::Channel => ctx.graph.global_avg_pool(x)?,
            AttentionKind::Spatial => x,
        };
        let h = self.conv1.forward(ctx, src)?;
        let h = ctx.graph.relu(h)?;
        let h = self.conv2.forward(ctx, h)?;
        ctx.graph.sigmoid(h)
    }
}
