use rayon::prelude::*;

use crate::arch::Segmenter;
use crate::error::{Error, Result};
use crate::geodata::{argmax_classes, slice, stitch, tta_predict, Dihedral, RasterImage, Role, StitchMode, TileGrid};

use super::prepare::slice_name;

/// Tiled prediction settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferOptions {
    pub tile: usize,
    pub overlap: usize,
    pub transforms: Vec<Dihedral>,
    pub stitch: StitchMode,
    pub dump_features: bool,
}

/// Result of predicting one raster.
#[derive(Clone, Debug)]
pub struct TilePrediction {
    /// Mean class probabilities over the transform set, `K` channels.
    pub probs: RasterImage,
    pub classes: RasterImage,
    /// `(<tile>_<row>_<col>.<tap>, map)` per slice and attention tap.
    pub features: Vec<(String, RasterImage)>,
}

/// Mirror-pad, slice, predict every slice with test-time augmentation and
/// stitch the probabilities back to the input extent. `optical` and `aux`
/// are already normalized; `aux` is ignored by variants that take none.
pub fn predict_raster(
    seg: &Segmenter,
    tile_id: &str,
    optical: &RasterImage,
    aux: &RasterImage,
    opts: &InferOptions,
) -> Result<TilePrediction> {
    if (aux.width, aux.height) != (optical.width, optical.height) {
        return Err(Error::Geometry(format!(
            "auxiliary extent {}x{} differs from optical extent {}x{}",
            aux.width, aux.height, optical.width, optical.height
        )));
    }
    let grid = TileGrid::new(optical.width, optical.height, opts.tile, opts.overlap)?;
    let opt = slice(optical, &grid)?;
    let aux = slice(aux, &grid)?;
    let with_aux = seg.model.tag().uses_aux();
    let layout = grid.tiles();
    let n = opts.transforms.len() as f32;
    let per_slice = opt
        .par_iter()
        .zip(&aux)
        .zip(&layout)
        .map(|((o, a), t)| {
            let o = o.to_tensor();
            let a = with_aux.then(|| a.to_tensor());
            let (sum, _) = tta_predict(seg, &o, a.as_ref(), &opts.transforms)?;
            let probs = RasterImage::from_tensor(&sum.map(|v| v / n), Role::Probability)?;
            let mut feats = Vec::new();
            if opts.dump_features {
                let stem = slice_name(tile_id, t.row, t.col);
                for (name, map) in seg.features(&o, a.as_ref())? {
                    feats.push((format!("{stem}.{name}"), RasterImage::from_tensor(&map, Role::Probability)?));
                }
            }
            Ok((probs, feats))
        })
        .collect::<Result<Vec<_>>>()?;
    let (probs, features): (Vec<RasterImage>, Vec<_>) = per_slice.into_iter().unzip();
    let probs = stitch(&probs, &grid, opts.stitch)?;
    let classes = argmax_classes(&probs.to_tensor())?;
    let classes = RasterImage::label(probs.width, probs.height, classes, seg.model.num_classes())?;
    Ok(TilePrediction {
        probs,
        classes,
        features: features.into_iter().flatten().collect(),
    })
}
