use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodata::{Palette, IGNORE_LABEL};
use crate::metrics::{boundary_ignore_mask, ConfusionMatrix, Report};

use super::prepare::read_labels;

/// Label rasters in `dir` by tile id (file stem), `.ppm` or `.pgm`.
fn label_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_owned(), p)))
        .collect();
    out.sort();
    Ok(out)
}

/// Confusion matrix of one prediction against its ground truth. Ground-truth
/// pixels holding the ignore label, and with `erode > 0` pixels near a class
/// boundary, are left out.
pub fn score_pair(pred: &[u8], gt: &[u8], width: usize, height: usize, num_classes: usize, erode: usize) -> Result<ConfusionMatrix> {
    let mut mask = boundary_ignore_mask(gt, width, height, erode)?;
    for (m, &g) in mask.iter_mut().zip(gt) {
        *m |= g == IGNORE_LABEL;
    }
    ConfusionMatrix::from_maps(pred, gt, num_classes, Some(&mask))
}

/// Score every prediction in `pred_dir` against the same-named file in
/// `gt_dir`. Tiles present on only one side are all listed in the error.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    class_names: &[String],
    f1_classes: &[usize],
    erode: usize,
    palette: &Palette,
) -> Result<Report> {
    let preds = label_files(pred_dir)?;
    let gts = label_files(gt_dir)?;
    let pred_ids: BTreeSet<&str> = preds.iter().map(|(id, _)| id.as_str()).collect();
    let gt_ids: BTreeSet<&str> = gts.iter().map(|(id, _)| id.as_str()).collect();
    let mut missing: Vec<String> = pred_ids
        .difference(&gt_ids)
        .map(|id| format!("tile {id} has a prediction but no ground truth in {}", gt_dir.display()))
        .collect();
    missing.extend(
        gt_ids
            .difference(&pred_ids)
            .map(|id| format!("tile {id} has ground truth but no prediction in {}", pred_dir.display())),
    );
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }
    let k = class_names.len();
    let tiles = preds
        .par_iter()
        .zip(&gts)
        .map(|((id, p), (_, g))| {
            let pred = read_labels(p, k, palette)?;
            let gt = read_labels(g, k, palette)?;
            if (pred.width, pred.height) != (gt.width, gt.height) {
                return Err(Error::Geometry(format!(
                    "tile {id}: prediction {}x{} vs ground truth {}x{}",
                    pred.width, pred.height, gt.width, gt.height
                )));
            }
            let cm = score_pair(
                pred.as_u8().expect("labels are u8"),
                gt.as_u8().expect("labels are u8"),
                gt.width,
                gt.height,
                k,
                erode,
            )?;
            Ok((id.clone(), cm))
        })
        .collect::<Result<Vec<_>>>()?;
    Report::new(class_names.to_vec(), f1_classes.to_vec(), tiles)
}
