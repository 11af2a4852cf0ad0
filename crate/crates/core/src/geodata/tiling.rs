use serde::{Deserialize, Serialize};

use super::{RasterData, RasterImage};
use crate::error::{Error, Result};

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror `margin` pixels onto every side, reflecting about the border pixel
/// itself: row `[a, b, c]` with margin 1 becomes `[b, a, b, c, b]`.
pub fn mirror_pad(img: &RasterImage, margin: usize) -> Result<RasterImage> {
    if margin == 0 {
        return Ok(img.clone());
    }
    if margin >= img.width.min(img.height) {
        return Err(Error::Geometry(format!(
            "mirror margin {margin} needs a raster larger than {}x{}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width, img.height);
    let (pw, ph) = (w + 2 * margin, h + 2 * margin);
    let m = margin as isize;
    fn fill<X: Copy>(src: &[X], c: usize, w: usize, h: usize, pw: usize, ph: usize, m: isize) -> Vec<X> {
        let mut out = Vec::with_capacity(c * pw * ph);
        for ch in 0..c {
            for y in 0..ph {
                let sy = reflect(y as isize - m, h);
                let row = (ch * h + sy) * w;
                out.extend((0..pw).map(|x| src[row + reflect(x as isize - m, w)]));
            }
        }
        out
    }
    let data = match &img.data {
        RasterData::U8(v) => RasterData::U8(fill(v, img.channels, w, h, pw, ph, m)),
        RasterData::F32(v) => RasterData::F32(fill(v, img.channels, w, h, pw, ph, m)),
    };
    RasterImage::new(pw, ph, img.channels, img.role, data)
}

/// One axis of a grid, in padded coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub origin: usize,
    pub valid_start: usize,
    pub valid_end: usize,
}

fn axis_spans(extent: usize, tile: usize, margin: usize, stride: usize) -> Result<Vec<Span>> {
    let padded = extent + 2 * margin;
    if tile > padded {
        return Err(Error::Geometry(format!(
            "tile {tile} exceeds padded extent {padded} (extent {extent}, margin {margin})"
        )));
    }
    let last = padded - tile;
    let mut origins: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o <= last).collect();
    if *origins.last().expect("origin 0") != last {
        origins.push(last);
    }
    let n = origins.len();
    Ok((0..n)
        .map(|i| Span {
            origin: origins[i],
            valid_start: origins[i] + margin,
            valid_end: if i + 1 < n { origins[i + 1] + margin } else { padded - margin },
        })
        .collect())
}

/// A tile of the grid in padded coordinates; `valid` is `(x0, y0, x1, y1)`, half-open.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub x: usize,
    pub y: usize,
    pub valid: (usize, usize, usize, usize),
}

/// Overlapping square tiles with a 50% overlap over a mirror-padded raster.
/// The margin is a quarter tile, the stride half a tile, and each tile keeps
/// its central `stride x stride` region, stretched at the ends so the valid
/// regions partition the original extent exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tile: usize,
    pub margin: usize,
    pub stride: usize,
    pub cols: Vec<Span>,
    pub rows: Vec<Span>,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile: usize, overlap: usize) -> Result<Self> {
        if tile == 0 || !tile.is_multiple_of(4) {
            return Err(Error::Geometry(format!("tile size {tile} must be a positive multiple of 4")));
        }
        if overlap != tile / 2 {
            return Err(Error::Geometry(format!(
                "overlap {overlap} unsupported; only half the tile ({}) is",
                tile / 2
            )));
        }
        let (margin, stride) = (tile / 4, tile / 2);
        if margin >= width.min(height) {
            return Err(Error::Geometry(format!(
                "{width}x{height} raster is too small for mirror margin {margin}"
            )));
        }
        Ok(Self {
            width,
            height,
            tile,
            margin,
            stride,
            cols: axis_spans(width, tile, margin, stride)?,
            rows: axis_spans(height, tile, margin, stride)?,
        })
    }

    pub fn padded_extent(&self) -> (usize, usize) {
        (self.width + 2 * self.margin, self.height + 2 * self.margin)
    }

    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> Vec<Tile> {
        let mut out = Vec::with_capacity(self.len());
        for (row, r) in self.rows.iter().enumerate() {
            for (col, c) in self.cols.iter().enumerate() {
                out.push(Tile {
                    row,
                    col,
                    x: c.origin,
                    y: r.origin,
                    valid: (c.valid_start, r.valid_start, c.valid_end, r.valid_end),
                });
            }
        }
        out
    }
}

/// Mirror-pad `img` and cut it into the grid's tiles, row-major.
pub fn slice(img: &RasterImage, grid: &TileGrid) -> Result<Vec<RasterImage>> {
    if (img.width, img.height) != (grid.width, grid.height) {
        return Err(Error::Geometry(format!(
            "raster {}x{} does not match grid {}x{}",
            img.width, img.height, grid.width, grid.height
        )));
    }
    let padded = mirror_pad(img, grid.margin)?;
    grid.tiles()
        .iter()
        .map(|t| padded.crop(t.x, t.y, grid.tile, grid.tile))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StitchMode {
    /// Each pixel comes from the one tile whose valid region holds it.
    #[default]
    Crop,
    /// Each pixel is the mean over every tile that covers it (`f32` only).
    Average,
}

/// Reassemble tiles (row-major, as produced by [`slice`]) to the original extent.
pub fn stitch(tiles: &[RasterImage], grid: &TileGrid, mode: StitchMode) -> Result<RasterImage> {
    let layout = grid.tiles();
    if tiles.len() != layout.len() {
        return Err(Error::Contract(format!(
            "grid has {} tiles, got {}",
            layout.len(),
            tiles.len()
        )));
    }
    let first = &tiles[0];
    let c = first.channels;
    for t in tiles {
        if (t.width, t.height, t.channels) != (grid.tile, grid.tile, c)
            || std::mem::discriminant(&t.data) != std::mem::discriminant(&first.data)
        {
            return Err(Error::Contract(format!(
                "tile {}x{}x{} does not match {}x{}x{c}",
                t.width, t.height, t.channels, grid.tile, grid.tile
            )));
        }
    }
    let (w, h, m, ts) = (grid.width, grid.height, grid.margin, grid.tile);
    match mode {
        StitchMode::Crop => {
            fn place<X: Copy + Default>(
                parts: Vec<&[X]>,
                layout: &[Tile],
                c: usize,
                w: usize,
                h: usize,
                m: usize,
                ts: usize,
            ) -> Vec<X> {
                let mut out = vec![X::default(); c * w * h];
                for (src, t) in parts.into_iter().zip(layout) {
                    let (x0, y0, x1, y1) = t.valid;
                    for ch in 0..c {
                        for py in y0..y1 {
                            let s = (ch * ts + py - t.y) * ts + x0 - t.x;
                            let d = (ch * h + py - m) * w + x0 - m;
                            out[d..d + x1 - x0].copy_from_slice(&src[s..s + x1 - x0]);
                        }
                    }
                }
                out
            }
            let data = match &first.data {
                RasterData::U8(_) => RasterData::U8(place(
                    tiles.iter().map(|t| t.as_u8().expect("checked")).collect(),
                    &layout,
                    c,
                    w,
                    h,
                    m,
                    ts,
                )),
                RasterData::F32(_) => RasterData::F32(place(
                    tiles.iter().map(|t| t.as_f32().expect("checked")).collect(),
                    &layout,
                    c,
                    w,
                    h,
                    m,
                    ts,
                )),
            };
            RasterImage::new(w, h, c, first.role, data)
        }
        StitchMode::Average => {
            if first.as_f32().is_none() {
                return Err(Error::Contract("average stitching needs f32 tiles".into()));
            }
            let mut sum = vec![0f64; c * w * h];
            let mut count = vec![0u32; w * h];
            for (tile, t) in tiles.iter().zip(&layout) {
                let src = tile.as_f32().expect("checked");
                let (gx0, gy0) = (t.x.max(m), t.y.max(m));
                let (gx1, gy1) = ((t.x + ts).min(w + m), (t.y + ts).min(h + m));
                for py in gy0..gy1 {
                    for px in gx0..gx1 {
                        count[(py - m) * w + px - m] += 1;
                        for ch in 0..c {
                            sum[(ch * h + py - m) * w + px - m] += src[(ch * ts + py - t.y) * ts + px - t.x] as f64;
                        }
                    }
                }
            }
            let p = w * h;
            let data = sum
                .iter()
                .enumerate()
                .map(|(i, s)| (s / count[i % p] as f64) as f32)
                .collect();
            RasterImage::from_f32(w, h, c, first.role, data)
        }
    }
}
