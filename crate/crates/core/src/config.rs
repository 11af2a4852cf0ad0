//! Run configuration: one TOML document with every field spelled out.
//!
//! Unknown keys are rejected, and [`RunConfig::validate`] reports every
//! problem at once before any computation starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{BackboneKind, ModelVariant, VariantTag};
use crate::error::{Error, Result};
use crate::geodata::{Dihedral, StitchMode, CLASS_NAMES};
use crate::metrics::{DEFAULT_ERODE_RADIUS, DEFAULT_F1_CLASSES};
use crate::train::{AdamConfig, AugmentConfig, LrSchedule, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub data: DataSection,
    pub augment: AugmentConfig,
    pub optim: OptimSection,
    pub inference: InferenceSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: VariantTag,
    pub main_backbone: BackboneKind,
    pub aux_backbone: BackboneKind,
    pub decoder_width: usize,
    pub num_classes: usize,
    pub rafb_caption_wiring: bool,
    pub align_corners: bool,
}

/// Slicing of training tiles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub slice: usize,
    pub overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr1: f64,
    pub warmup_epochs: usize,
    pub step_interval: usize,
    pub step_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub tile: usize,
    pub overlap: usize,
    pub tta: bool,
    /// Names as accepted by [`Dihedral`]'s `FromStr`.
    pub transforms: Vec<String>,
    pub stitch: StitchMode,
    pub write_probabilities: bool,
    pub dump_features: bool,
    /// Boundary erosion radius for evaluation; 0 scores every pixel.
    pub erode: usize,
    pub f1_classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub manifest: PathBuf,
    /// Output of `prepare`, input of `train`.
    pub prepared: PathBuf,
    /// Prepared validation slices, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
    pub stats: PathBuf,
    pub run_dir: PathBuf,
    /// Checkpoint read by `infer`.
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
    pub ground_truth: PathBuf,
    pub reports: PathBuf,
}

impl Default for RunConfig {
    /// Full-scale settings: ResNet-50/ResNet-18 encoders, 800-pixel slices
    /// cropped to 640, 1920-pixel inference tiles.
    fn default() -> Self {
        let sched = LrSchedule::default();
        let adam = AdamConfig::default();
        Self {
            seed: 0,
            model: ModelSection {
                variant: VariantTag::MpvnRm,
                main_backbone: BackboneKind::Resnet50,
                aux_backbone: BackboneKind::Resnet18,
                decoder_width: 512,
                num_classes: CLASS_NAMES.len(),
                rafb_caption_wiring: false,
                align_corners: false,
            },
            data: DataSection { slice: 800, overlap: 400 },
            augment: AugmentConfig {
                hflip: true,
                vflip: true,
                rotate: true,
                crop: 640,
            },
            optim: OptimSection {
                batch_size: 2,
                epochs: 1000,
                lr0: sched.lr0,
                lr1: sched.lr1,
                warmup_epochs: sched.warmup_epochs,
                step_interval: sched.step_interval,
                step_factor: sched.step_factor,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                weight_decay: adam.weight_decay,
            },
            inference: InferenceSection {
                tile: 1920,
                overlap: 960,
                tta: true,
                transforms: Dihedral::all().iter().map(|d| d.name().to_owned()).collect(),
                stitch: StitchMode::Crop,
                write_probabilities: false,
                dump_features: false,
                erode: DEFAULT_ERODE_RADIUS,
                f1_classes: DEFAULT_F1_CLASSES.to_vec(),
            },
            paths: PathsSection {
                manifest: "data/manifest.txt".into(),
                prepared: "work/prepared".into(),
                validation: None,
                stats: "work/prepared/stats.csv".into(),
                run_dir: "work/run".into(),
                checkpoint: "work/run/best.afck".into(),
                predictions: "work/predictions".into(),
                ground_truth: "data/labels".into(),
                reports: "work/reports".into(),
            },
        }
    }
}

fn check_tiling(p: &mut Vec<String>, what: &str, tile: usize, overlap: usize) {
    if tile == 0 || !tile.is_multiple_of(4) {
        p.push(format!("{what} size {tile} must be a positive multiple of 4"));
    }
    if overlap * 2 != tile {
        p.push(format!("{what} overlap {overlap} must be half the {what} size {tile}"));
    }
}

impl RunConfig {
    /// A configuration small enough for a laptop CPU: tiny encoders, decoder
    /// width 32, 64-pixel slices and tiles.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model.main_backbone = BackboneKind::Tiny;
        c.model.aux_backbone = BackboneKind::Tiny;
        c.model.decoder_width = 32;
        c.data = DataSection { slice: 64, overlap: 32 };
        c.augment.crop = 64;
        c.optim.epochs = 200;
        c.optim.warmup_epochs = 10;
        c.optim.step_interval = 100;
        c.inference.tile = 64;
        c.inference.overlap = 32;
        c
    }

    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Every problem with the configuration, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if let Err(Error::Validation(v)) = self.variant().validate() {
            p.extend(v);
        }
        check_tiling(&mut p, "slice", self.data.slice, self.data.overlap);
        let crop = self.augment.crop;
        if crop == 0 || !crop.is_multiple_of(32) {
            p.push(format!("augment.crop {crop} must be a positive multiple of 32"));
        }
        if crop > self.data.slice {
            p.push(format!("augment.crop {crop} exceeds the slice size {}", self.data.slice));
        }
        let o = &self.optim;
        if o.batch_size == 0 {
            p.push("optim.batch_size must be positive".into());
        }
        if o.epochs == 0 {
            p.push("optim.epochs must be positive".into());
        }
        p.extend(self.schedule(1).problems().into_iter().map(|m| format!("optim: {m}")));
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("optim.{name} {b} must lie in [0, 1)"));
            }
        }
        if !(o.eps > 0.0) {
            p.push(format!("optim.eps {} must be positive", o.eps));
        }
        if !(o.weight_decay >= 0.0) {
            p.push(format!("optim.weight_decay {} must be non-negative", o.weight_decay));
        }
        let inf = &self.inference;
        check_tiling(&mut p, "inference tile", inf.tile, inf.overlap);
        if !inf.tile.is_multiple_of(32) {
            p.push(format!("inference tile {} must be a multiple of 32", inf.tile));
        }
        let mut seen = Vec::new();
        for name in &inf.transforms {
            match name.parse::<Dihedral>() {
                Ok(d) if seen.contains(&d) => p.push(format!("inference.transforms lists {d} twice")),
                Ok(d) => seen.push(d),
                Err(_) => p.push(format!("inference.transforms: unknown transform {name:?}")),
            }
        }
        if !seen.contains(&Dihedral::IDENTITY) {
            p.push("inference.transforms must include the identity (rot0)".into());
        }
        if inf.f1_classes.is_empty() {
            p.push("inference.f1_classes must not be empty".into());
        }
        for &c in &inf.f1_classes {
            if c >= self.model.num_classes {
                p.push(format!("inference.f1_classes: class {c} is not below num_classes {}", self.model.num_classes));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    pub fn variant(&self) -> ModelVariant {
        let m = &self.model;
        let mut v = ModelVariant::new(m.variant, m.main_backbone, m.aux_backbone, m.decoder_width, m.num_classes);
        v.rafb_caption_wiring = m.rafb_caption_wiring;
        v.align_corners = m.align_corners;
        v
    }

    pub fn schedule(&self, iters_per_epoch: usize) -> LrSchedule {
        let o = &self.optim;
        LrSchedule {
            lr0: o.lr0,
            lr1: o.lr1,
            warmup_epochs: o.warmup_epochs,
            step_interval: o.step_interval,
            step_factor: o.step_factor,
            iters_per_epoch,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optim;
        TrainConfig {
            batch_size: o.batch_size,
            schedule: self.schedule(1),
            adam: AdamConfig {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
            },
            augment: Some(self.augment),
            seed: self.seed,
            ignore: Some(crate::geodata::IGNORE_LABEL),
        }
    }

    /// The test-time transform set; only the identity when TTA is off.
    pub fn transforms(&self) -> Result<Vec<Dihedral>> {
        if !self.inference.tta {
            return Ok(vec![Dihedral::IDENTITY]);
        }
        self.inference.transforms.iter().map(|s| s.parse()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        for c in [RunConfig::default(), RunConfig::desk()] {
            c.validate().unwrap();
            let text = c.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = RunConfig::default().to_toml().unwrap().replace("[optim]\n", "[optim]\nmomentum = 0.9\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(m)) if m.contains("momentum")));
    }

    #[test]
    fn all_problems_reported_together() {
        let mut c = RunConfig::default();
        c.data.overlap = 100;
        c.optim.batch_size = 0;
        c.inference.transforms = vec!["rot90".into(), "spin".into()];
        match c.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }
}
