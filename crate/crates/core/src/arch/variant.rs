use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BackboneConfig, BackboneKind};
use crate::error::{Error, Result};

/// The six buildable architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantTag {
    #[serde(rename = "DFN")]
    Dfn,
    #[serde(rename = "mDFN")]
    MDfn,
    #[serde(rename = "MPVN")]
    Mpvn,
    #[serde(rename = "MPVN-M")]
    MpvnM,
    #[serde(rename = "MPVN-R")]
    MpvnR,
    #[serde(rename = "MPVN-RM")]
    MpvnRm,
}

impl VariantTag {
    pub const ALL: [VariantTag; 6] = [
        VariantTag::Dfn,
        VariantTag::MDfn,
        VariantTag::Mpvn,
        VariantTag::MpvnM,
        VariantTag::MpvnR,
        VariantTag::MpvnRm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantTag::Dfn => "DFN",
            VariantTag::MDfn => "mDFN",
            VariantTag::Mpvn => "MPVN",
            VariantTag::MpvnM => "MPVN-M",
            VariantTag::MpvnR => "MPVN-R",
            VariantTag::MpvnRm => "MPVN-RM",
        }
    }

    /// Two parameter-independent encoders.
    pub fn is_multipath(self) -> bool {
        !matches!(self, VariantTag::Dfn | VariantTag::MDfn)
    }

    /// Whether the auxiliary raster is consumed at all.
    pub fn uses_aux(self) -> bool {
        self != VariantTag::Dfn
    }

    pub fn has_mafb(self) -> bool {
        matches!(self, VariantTag::MpvnM | VariantTag::MpvnRm)
    }

    pub fn has_rafb(self) -> bool {
        matches!(self, VariantTag::MpvnR | VariantTag::MpvnRm)
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected one of DFN, mDFN, MPVN, MPVN-M, MPVN-R, MPVN-RM")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelVariant {
    pub tag: VariantTag,
    pub optical_channels: usize,
    pub aux_channels: usize,
    pub main: BackboneConfig,
    pub aux: Option<BackboneConfig>,
    pub decoder_width: usize,
    pub num_classes: usize,
    /// Swap the RAFB gates (spatial on low, channel on high).
    pub rafb_caption_wiring: bool,
    /// Replace MAFB by summation; used to compare wiring across the lattice.
    pub mafb_disabled: bool,
    /// Corner-aligned instead of half-pixel bilinear upsampling.
    pub align_corners: bool,
}

impl ModelVariant {
    pub fn new(
        tag: VariantTag,
        main: BackboneKind,
        aux: BackboneKind,
        decoder_width: usize,
        num_classes: usize,
    ) -> Self {
        let (optical, aux_ch) = (3, 2);
        let main_in = if tag == VariantTag::MDfn { optical + aux_ch } else { optical };
        Self {
            tag,
            optical_channels: optical,
            aux_channels: aux_ch,
            main: BackboneConfig::of_kind(main, main_in),
            aux: tag.is_multipath().then(|| BackboneConfig::of_kind(aux, aux_ch)),
            decoder_width,
            num_classes,
            rafb_caption_wiring: false,
            mafb_disabled: false,
            align_corners: false,
        }
    }

    /// Desk-scale model: tiny backbones, decoder width 32, six classes.
    pub fn tiny(tag: VariantTag) -> Self {
        Self::new(tag, BackboneKind::Tiny, BackboneKind::Tiny, 32, 6)
    }

    /// ResNet-50 main path, ResNet-18 auxiliary path, decoder width 512.
    pub fn full(tag: VariantTag) -> Self {
        Self::new(tag, BackboneKind::Resnet50, BackboneKind::Resnet18, 512, 6)
    }

    /// The same model with encoder fusion by summation instead of MAFB.
    pub fn without_mafb(mut self) -> Self {
        self.mafb_disabled = true;
        self
    }

    pub fn uses_mafb(&self) -> bool {
        self.tag.has_mafb() && !self.mafb_disabled
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.num_classes < 2 {
            p.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_classes > 255 {
            p.push(format!("num_classes must fit below the ignore label 255, got {}", self.num_classes));
        }
        if self.decoder_width == 0 {
            p.push("decoder_width must be positive".into());
        }
        if self.optical_channels == 0 {
            p.push("optical_channels must be positive".into());
        }
        if self.tag.uses_aux() && self.aux_channels == 0 {
            p.push(format!("{} needs at least one auxiliary channel", self.tag));
        }
        p.extend(self.main.problems("main backbone"));
        let want_main = if self.tag == VariantTag::MDfn {
            self.optical_channels + self.aux_channels
        } else {
            self.optical_channels
        };
        if self.main.in_channels != want_main {
            p.push(format!(
                "main backbone takes {} channels but {} feeds it {}",
                self.main.in_channels, self.tag, want_main
            ));
        }
        match (&self.aux, self.tag.is_multipath()) {
            (Some(a), true) => {
                p.extend(a.problems("aux backbone"));
                if a.in_channels != self.aux_channels {
                    p.push(format!(
                        "aux backbone takes {} channels but the auxiliary raster has {}",
                        a.in_channels, self.aux_channels
                    ));
                }
            }
            (None, true) => p.push(format!("{} requires an auxiliary backbone", self.tag)),
            (Some(_), false) => p.push(format!("{} is single-path and takes no auxiliary backbone", self.tag)),
            (None, false) => {}
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}
