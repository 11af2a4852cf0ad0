//! The `afnet` command line: `prepare`, `train`, `infer`, `eval` and `gradcheck`.
//!
//! Each command is also a library function taking a validated [`RunConfig`],
//! so tests and other front ends can drive the same code paths.

mod eval;
mod infer;
mod prepare;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::arch::{build_model, Model, Segmenter, VariantTag};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geodata::{encode_labels, read_manifest, read_raster, read_stats, write_raster, Palette, CLASS_NAMES};
use crate::metrics::Report;
use crate::params::load_checkpoint;
use crate::train::{EpochRecord, Trainer};
use crate::verify::{format_table, run_suite, CheckReport};

pub use eval::{evaluate_dirs, score_pair};
pub use infer::{predict_raster, InferOptions, TilePrediction};
pub use prepare::{
    load_prepared, load_tile, model_inputs, prepare_tiles, read_labels, slice_name, tile_stats, PrepareSummary, SourceTile,
    STATS_CHANNELS,
};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "AFNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "afnet", version, about = "Multipath attention-fusion segmentation of aerial tiles")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// DFN, mDFN, MPVN, MPVN-M, MPVN-R or MPVN-RM.
    #[arg(long, global = true, value_name = "TAG")]
    pub variant: Option<VariantTag>,
    #[arg(long, global = true, value_enum)]
    pub tta: Option<Toggle>,
    /// Boundary erosion radius for `eval`.
    #[arg(long, global = true, value_name = "R")]
    pub erode: Option<usize>,
    /// Write attention maps of the fusion blocks during `infer`.
    #[arg(long, global = true)]
    pub dump_features: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute statistics and write normalized slices from the manifest.
    Prepare,
    /// Train on prepared slices.
    Train {
        /// Continue from `last.afck` in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Predict label rasters for every manifest tile.
    Infer {
        /// Checkpoint to load instead of `paths.checkpoint`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval,
    /// Finite-difference check of every op and block.
    Gradcheck {
        #[arg(long, default_value_t = crate::verify::DEFAULT_SEEDS)]
        seeds: u64,
    },
    /// Print the resolved configuration.
    Config,
}

impl Cli {
    /// The configuration file (or defaults) with command-line overrides applied, validated.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(v) = self.variant {
            c.model.variant = v;
        }
        if let Some(t) = self.tta {
            c.inference.tta = t == Toggle::On;
        }
        if let Some(r) = self.erode {
            c.inference.erode = r;
        }
        if self.dump_features {
            c.inference.dump_features = true;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Size the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn class_names(cfg: &RunConfig) -> Vec<String> {
    (0..cfg.model.num_classes)
        .map(|c| CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| (*s).to_owned()))
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `prepare`: read the manifest, write statistics and slices.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let palette = Palette::default();
    let entries = read_manifest(&cfg.paths.manifest)?;
    let tiles = entries
        .iter()
        .map(|e| load_tile(e, cfg.model.num_classes, &palette))
        .collect::<Result<Vec<_>>>()?;
    prepare_tiles(&tiles, &cfg.paths.prepared, &cfg.paths.stats, cfg.data.slice, cfg.data.overlap)
}

/// `train`: fit on `paths.prepared`, writing `metrics.log`, `last.afck`,
/// `best.afck` and the resolved `config.toml` to `paths.run_dir`.
pub fn cmd_train(cfg: &RunConfig, resume: bool, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
    let train = load_prepared(&cfg.paths.prepared)?;
    let val = cfg.paths.validation.as_deref().map(load_prepared).transpose()?;
    let dir = &cfg.paths.run_dir;
    create_dir(dir)?;
    cfg.save(&dir.join("config.toml"))?;
    let variant = cfg.variant();
    let last = dir.join("last.afck");
    let mut trainer = if resume {
        Trainer::resume(Model::new(&variant)?, &load_checkpoint(&last)?, cfg.train_config())?
    } else {
        let log = dir.join("metrics.log");
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        let (model, store) = build_model(&variant, cfg.seed)?;
        Trainer::new(model, store, cfg.train_config())
    };
    let remaining = cfg.optim.epochs.saturating_sub(trainer.epoch);
    trainer.run(&train, val.as_deref(), remaining, Some(dir), |r| {
        on_epoch(r);
        true
    })
}

/// `infer`: predict every manifest tile; write `<tile>.ppm` color labels and,
/// when configured, `<tile>.prob.aft` and attention dumps under `features/`.
pub fn cmd_infer(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let ckpt = checkpoint.unwrap_or(&cfg.paths.checkpoint);
    let seg = Segmenter::load(&cfg.variant(), ckpt)?;
    let stats = read_stats(&cfg.paths.stats)?;
    let opts = InferOptions {
        tile: cfg.inference.tile,
        overlap: cfg.inference.overlap,
        transforms: cfg.transforms()?,
        stitch: cfg.inference.stitch,
        dump_features: cfg.inference.dump_features,
    };
    let out = &cfg.paths.predictions;
    create_dir(out)?;
    let palette = Palette::default();
    let mut written = Vec::new();
    for e in read_manifest(&cfg.paths.manifest)? {
        let optical = read_raster(&e.optical)?;
        let dsm = read_raster(&e.dsm)?;
        if (dsm.width, dsm.height) != (optical.width, optical.height) {
            return Err(Error::Geometry(format!(
                "tile {}: DSM extent {}x{} differs from optical extent {}x{}",
                e.tile_id, dsm.width, dsm.height, optical.width, optical.height
            )));
        }
        let (opt, aux) = model_inputs(&optical, &dsm, &stats)?;
        let pred = predict_raster(&seg, &e.tile_id, &opt, &aux, &opts)?;
        let path = out.join(format!("{}.ppm", e.tile_id));
        write_raster(&encode_labels(&pred.classes, &palette)?, &path)?;
        written.push(path);
        if cfg.inference.write_probabilities {
            let path = out.join(format!("{}.prob.aft", e.tile_id));
            write_raster(&pred.probs, &path)?;
            written.push(path);
        }
        if !pred.features.is_empty() {
            let dir = out.join("features");
            create_dir(&dir)?;
            for (name, map) in &pred.features {
                let path = dir.join(format!("{name}.aft"));
                write_raster(map, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// `eval`: score `paths.predictions` against `paths.ground_truth`, writing
/// `report.csv` and `report.txt` to `paths.reports`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Report> {
    let report = evaluate_dirs(
        &cfg.paths.predictions,
        &cfg.paths.ground_truth,
        &class_names(cfg),
        &cfg.inference.f1_classes,
        cfg.inference.erode,
        &Palette::default(),
    )?;
    let dir = &cfg.paths.reports;
    create_dir(dir)?;
    for (name, text) in [("report.csv", report.to_csv()?), ("report.txt", report.to_text()?)] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

pub fn cmd_gradcheck(seeds: u64) -> Result<Vec<CheckReport>> {
    run_suite(seeds)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if let Command::Gradcheck { seeds } = cli.command {
        let reports = cmd_gradcheck(seeds)?;
        print!("{}", format_table(&reports));
        return Ok(reports.iter().all(CheckReport::passed));
    }
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Prepare => {
            let s = cmd_prepare(&cfg)?;
            println!(
                "prepared {} slices from {} tiles into {}",
                s.slices,
                s.tiles,
                cfg.paths.prepared.display()
            );
        }
        Command::Train { resume } => {
            println!("epoch,lr,train_loss,val_loss,val_acc");
            cmd_train(&cfg, *resume, |r| {
                println!("{}", r.log_line());
                let _ = std::io::stdout().flush();
            })?;
        }
        Command::Infer { checkpoint } => {
            let files = cmd_infer(&cfg, checkpoint.as_deref())?;
            println!("wrote {} files to {}", files.len(), cfg.paths.predictions.display());
        }
        Command::Eval => print!("{}", cmd_eval(&cfg)?.to_text()?),
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::Gradcheck { .. } => unreachable!("handled above"),
    }
    Ok(true)
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| dispatch(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
