use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodata::{
    decode_labels, normalize, read_raster, slice, write_raster, write_stats, ChannelStats, ManifestEntry, Palette, RasterImage,
    Role, StatsAccumulator, TileGrid,
};
use crate::train::Sample;

/// Channels of the statistics file: the three optical bands, then DSM.
pub const STATS_CHANNELS: usize = 4;

/// One manifest tile read from disk with matching extents.
#[derive(Clone, Debug)]
pub struct SourceTile {
    pub id: String,
    pub optical: RasterImage,
    pub dsm: RasterImage,
    pub label: Option<RasterImage>,
}

fn extent(img: &RasterImage) -> String {
    format!("{}x{}", img.width, img.height)
}

/// Read a label raster: a palette-colored PPM or a one-channel class map.
pub fn read_labels(path: &Path, num_classes: usize, palette: &Palette) -> Result<RasterImage> {
    let img = read_raster(path)?;
    match (img.channels, img.as_u8()) {
        (3, Some(_)) => decode_labels(&img, palette),
        (1, Some(v)) => RasterImage::label(img.width, img.height, v.to_vec(), num_classes),
        _ => Err(Error::Format(format!(
            "{}: labels must be a color PPM or a one-channel class map",
            path.display()
        ))),
    }
}

pub fn load_tile(entry: &ManifestEntry, num_classes: usize, palette: &Palette) -> Result<SourceTile> {
    let optical = read_raster(&entry.optical)?;
    if optical.channels != 3 {
        return Err(Error::Format(format!(
            "{}: optical raster has {} channels, expected 3",
            entry.optical.display(),
            optical.channels
        )));
    }
    let dsm = read_raster(&entry.dsm)?;
    if dsm.channels != 1 {
        return Err(Error::Format(format!(
            "{}: DSM raster has {} channels, expected 1",
            entry.dsm.display(),
            dsm.channels
        )));
    }
    if (dsm.width, dsm.height) != (optical.width, optical.height) {
        return Err(Error::Geometry(format!(
            "tile {}: DSM extent {} differs from optical extent {}",
            entry.tile_id,
            extent(&dsm),
            extent(&optical)
        )));
    }
    let label = entry
        .label
        .as_deref()
        .map(|p| read_labels(p, num_classes, palette))
        .transpose()?;
    if let Some(l) = &label {
        if (l.width, l.height) != (optical.width, optical.height) {
            return Err(Error::Geometry(format!(
                "tile {}: label extent {} differs from optical extent {}",
                entry.tile_id,
                extent(l),
                extent(&optical)
            )));
        }
    }
    Ok(SourceTile {
        id: entry.tile_id.clone(),
        optical,
        dsm,
        label,
    })
}

/// Per-channel statistics of optical bands and DSM over every tile.
pub fn tile_stats(tiles: &[SourceTile]) -> Result<ChannelStats> {
    let mut opt = StatsAccumulator::new();
    let mut dsm = StatsAccumulator::new();
    for t in tiles {
        opt.push(&t.optical)?;
        dsm.push(&t.dsm)?;
    }
    Ok(opt.finish()?.concat(&dsm.finish()?))
}

/// Normalized optical bands and the packed auxiliary raster (NDVI, normalized DSM).
pub fn model_inputs(optical: &RasterImage, dsm: &RasterImage, stats: &ChannelStats) -> Result<(RasterImage, RasterImage)> {
    if stats.channels() != STATS_CHANNELS {
        return Err(Error::Contract(format!(
            "statistics cover {} channels, expected {STATS_CHANNELS}",
            stats.channels()
        )));
    }
    let opt = normalize(optical, &stats.select(&[0, 1, 2]))?;
    let ndvi = optical.ndvi()?;
    let dsm = normalize(dsm, &stats.select(&[3]))?;
    let aux = RasterImage::stack(&[&ndvi, &dsm], Role::Aux)?;
    Ok((opt, aux))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareSummary {
    pub tiles: usize,
    pub slices: usize,
    pub stats: ChannelStats,
}

/// Slice name `<tile>_<row>_<col>`.
pub fn slice_name(tile: &str, row: usize, col: usize) -> String {
    format!("{tile}_{row}_{col}")
}

/// Compute statistics, then write normalized optical, auxiliary and label
/// slices of every tile to `out_dir` as `<tile>_<row>_<col>.{optical.aft,aux.aft,label.pgm}`.
pub fn prepare_tiles(tiles: &[SourceTile], out_dir: &Path, stats_path: &Path, slice_size: usize, overlap: usize) -> Result<PrepareSummary> {
    if tiles.is_empty() {
        return Err(Error::DegenerateInput("manifest lists no tiles".into()));
    }
    let stats = tile_stats(tiles)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if let Some(dir) = stats_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_stats(stats_path, &stats)?;
    let counts = tiles
        .par_iter()
        .map(|t| {
            let grid = TileGrid::new(t.optical.width, t.optical.height, slice_size, overlap)?;
            let (opt, aux) = model_inputs(&t.optical, &t.dsm, &stats)?;
            let opt = slice(&opt, &grid)?;
            let aux = slice(&aux, &grid)?;
            let labels = t.label.as_ref().map(|l| slice(l, &grid)).transpose()?;
            for (i, tile) in grid.tiles().iter().enumerate() {
                let stem = out_dir.join(slice_name(&t.id, tile.row, tile.col));
                write_raster(&opt[i], &with_suffix(&stem, "optical.aft"))?;
                write_raster(&aux[i], &with_suffix(&stem, "aux.aft"))?;
                if let Some(l) = &labels {
                    write_raster(&l[i], &with_suffix(&stem, "label.pgm"))?;
                }
            }
            Ok(grid.len())
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(PrepareSummary {
        tiles: tiles.len(),
        slices: counts.iter().sum(),
        stats,
    })
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Labeled training samples from a directory written by [`prepare_tiles`], in name order.
pub fn load_prepared(dir: &Path) -> Result<Vec<Sample>> {
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".optical.aft").map(|s| dir.join(s))
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::DegenerateInput(format!("{} holds no prepared slices", dir.display())));
    }
    stems
        .par_iter()
        .map(|stem| {
            let opt = read_raster(&with_suffix(stem, "optical.aft"))?;
            let aux = read_raster(&with_suffix(stem, "aux.aft"))?;
            let label_path = with_suffix(stem, "label.pgm");
            if !label_path.exists() {
                return Err(Error::Contract(format!("slice {} has no labels", stem.display())));
            }
            let label = read_raster(&label_path)?;
            let labels = label
                .as_u8()
                .ok_or_else(|| Error::Format(format!("{}: labels must be u8", label_path.display())))?
                .to_vec();
            Sample::new(opt.to_tensor(), Some(aux.to_tensor()), labels)
        })
        .collect()
}
