use serde::{Deserialize, Serialize};

use super::{BatchNorm, Conv, ForwardCtx, Init};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Tiny,
    Resnet18,
    Resnet34,
    Resnet50,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Tiny => "tiny",
            BackboneKind::Resnet18 => "resnet18",
            BackboneKind::Resnet34 => "resnet34",
            BackboneKind::Resnet50 => "resnet50",
        }
    }
}

/// Residual encoder layout. Stage `i` emits features at stride `4 << i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub in_channels: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub blocks: [usize; 4],
    pub widths: [usize; 4],
    /// 1x1-3x3-1x1 blocks with a quarter-width middle instead of two 3x3 convs.
    pub bottleneck: bool,
}

impl BackboneConfig {
    pub fn of_kind(kind: BackboneKind, in_channels: usize) -> Self {
        let basic = |blocks| Self {
            kind,
            in_channels,
            stem_width: 64,
            stem_kernel: 7,
            blocks,
            widths: [64, 128, 256, 512],
            bottleneck: false,
        };
        match kind {
            BackboneKind::Tiny => Self {
                kind,
                in_channels,
                stem_width: 16,
                stem_kernel: 3,
                blocks: [1; 4],
                widths: [16, 32, 64, 128],
                bottleneck: false,
            },
            BackboneKind::Resnet18 => basic([2, 2, 2, 2]),
            BackboneKind::Resnet34 => basic([3, 4, 6, 3]),
            BackboneKind::Resnet50 => Self {
                widths: [256, 512, 1024, 2048],
                bottleneck: true,
                ..basic([3, 4, 6, 3])
            },
        }
    }

    pub fn tiny(in_channels: usize) -> Self {
        Self::of_kind(BackboneKind::Tiny, in_channels)
    }

    pub fn problems(&self, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.in_channels == 0 {
            out.push(format!("{label}: in_channels must be positive"));
        }
        if self.stem_width == 0 || self.stem_kernel == 0 {
            out.push(format!("{label}: stem width and kernel must be positive"));
        }
        if self.blocks.contains(&0) {
            out.push(format!("{label}: every stage needs at least one block"));
        }
        if self.widths.contains(&0) {
            out.push(format!("{label}: stage widths must be positive"));
        }
        if self.widths.windows(2).any(|w| w[1] < w[0]) {
            out.push(format!("{label}: stage widths {:?} must be non-decreasing", self.widths));
        }
        if self.bottleneck && self.widths.iter().any(|w| w % 4 != 0) {
            out.push(format!("{label}: bottleneck widths must be multiples of 4"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            conv: Conv::new(format!("{name}.conv"), cin, cout, k, stride, false),
            bn: BatchNorm::new(format!("{name}.bn"), cout),
        }
    }

    fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.conv.register(store, init)?;
        self.bn.register(store)
    }

    fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        self.bn.forward(ctx, y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ResBlock {
    body: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

impl ResBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, bottleneck: bool) -> Self {
        let body = if bottleneck {
            let mid = cout / 4;
            vec![
                ConvBn::new(&format!("{name}.c1"), cin, mid, 1, 1),
                ConvBn::new(&format!("{name}.c2"), mid, mid, 3, stride),
                ConvBn::new(&format!("{name}.c3"), mid, cout, 1, 1),
            ]
        } else {
            vec![
                ConvBn::new(&format!("{name}.c1"), cin, cout, 3, stride),
                ConvBn::new(&format!("{name}.c2"), cout, cout, 3, 1),
            ]
        };
        let shortcut = (cin != cout || stride != 1).then(|| ConvBn::new(&format!("{name}.down"), cin, cout, 1, stride));
        Self { body, shortcut }
    }

    fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        for c in self.body.iter().chain(&self.shortcut) {
            c.register(store, init)?;
        }
        Ok(())
    }

    fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let mut y = x;
        for (i, c) in self.body.iter().enumerate() {
            y = c.forward(ctx, y)?;
            if i + 1 < self.body.len() {
                y = ctx.graph.relu(y)?;
            }
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.graph.add(y, skip)?;
        ctx.graph.relu(y)
    }
}

/// Stem (strided conv, BN, ReLU, 2x2 max pool) then four residual stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Backbone {
    pub config: BackboneConfig,
    stem: ConvBn,
    stages: Vec<Vec<ResBlock>>,
}

impl Backbone {
    pub fn new(prefix: &str, config: &BackboneConfig) -> Result<Self> {
        let problems = config.problems(prefix);
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let stem = ConvBn::new(&format!("{prefix}.stem"), config.in_channels, config.stem_width, config.stem_kernel, 2);
        let mut cin = config.stem_width;
        let mut stages = Vec::with_capacity(4);
        for (s, (&n, &w)) in config.blocks.iter().zip(&config.widths).enumerate() {
            let blocks = (0..n)
                .map(|b| {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let blk = ResBlock::new(&format!("{prefix}.layer{}.{b}", s + 1), cin, w, stride, config.bottleneck);
                    cin = w;
                    blk
                })
                .collect();
            stages.push(blocks);
        }
        Ok(Self {
            config: config.clone(),
            stem,
            stages,
        })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.config.widths
    }

    pub(crate) fn register<T: Element>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.stem.register(store, init)?;
        for b in self.stages.iter().flatten() {
            b.register(store, init)?;
        }
        Ok(())
    }

    /// End-of-stage features at strides 4, 8, 16 and 32.
    pub fn forward<T: Element>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<[Var; 4]> {
        let c = ctx.graph.value(x).dims4()?.1;
        if c != self.config.in_channels {
            return Err(Error::DimensionMismatch {
                op: "backbone input",
                axis: 1,
                left: c,
                right: self.config.in_channels,
            });
        }
        let y = self.stem.forward(ctx, x)?;
        let y = ctx.graph.relu(y)?;
        let mut y = ctx.graph.max_pool2d(y, 2, 2)?;
        let mut feats = [y; 4];
        for (s, stage) in self.stages.iter().enumerate() {
            for b in stage {
                y = b.forward(ctx, y)?;
            }
            feats[s] = y;
        }
        Ok(feats)
    }
}
