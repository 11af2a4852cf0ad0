//! Raster handling for multisource aerial tiles: I/O, normalization, NDVI,
//! mirrored overlap tiling, stitching and test-time augmentation.
//!
//! Rasters are stored planar (`C x H x W`, row-major) so they map directly
//! onto `[1, C, H, W]` tensors.

mod dihedral;
mod io;
mod manifest;
mod palette;
mod preprocess;
mod tiling;
mod tta;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dihedral::Dihedral;
pub use io::{read_raster, read_raster_from, write_raster, write_raster_to, RasterFormat};
pub use manifest::{read_manifest, ManifestEntry};
pub use palette::{decode_labels, encode_labels, Palette, CLASS_NAMES};
pub use preprocess::{compute_ndvi, normalize, read_stats, write_stats, ChannelStats, StatsAccumulator};
pub use tiling::{mirror_pad, slice, stitch, StitchMode, Tile, TileGrid};
pub use tta::{argmax_classes, tta_predict, Predictor};

/// Label value excluded from training and evaluation.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Optical,
    Dsm,
    Ndvi,
    Label,
    Probability,
    /// Packed auxiliary channels (NDVI then DSM).
    Aux,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub role: Role,
    pub data: RasterData,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, role: Role, data: RasterData) -> Result<Self> {
        let want = width * height * channels;
        if data.len() != want {
            return Err(Error::Contract(format!(
                "raster {width}x{height}x{channels} needs {want} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            role,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, role: Role, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, channels, role, RasterData::U8(data))
    }

    pub fn from_f32(width: usize, height: usize, channels: usize, role: Role, data: Vec<f32>) -> Result<Self> {
        Self::new(width, height, channels, role, RasterData::F32(data))
    }

    /// A label map; every value must be below `num_classes` or equal to [`IGNORE_LABEL`].
    pub fn label(width: usize, height: usize, classes: Vec<u8>, num_classes: usize) -> Result<Self> {
        if let Some((i, &c)) = classes
            .iter()
            .enumerate()
            .find(|(_, &c)| c != IGNORE_LABEL && c as usize >= num_classes)
        {
            return Err(Error::validation(format!(
                "label {c} at pixel ({}, {}) is not below {num_classes}",
                i % width.max(1),
                i / width.max(1)
            )));
        }
        Self::from_u8(width, height, 1, Role::Label, classes)
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Some(v),
            RasterData::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Some(v),
            RasterData::U8(_) => None,
        }
    }

    /// Samples as `f32`, converting `u8` values without rescaling.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            RasterData::U8(v) => v.iter().map(|&b| b as f32).collect(),
            RasterData::F32(v) => v.clone(),
        }
    }

    pub fn channel_f32(&self, c: usize) -> Vec<f32> {
        let p = self.plane_len();
        match &self.data {
            RasterData::U8(v) => v[c * p..(c + 1) * p].iter().map(|&b| b as f32).collect(),
            RasterData::F32(v) => v[c * p..(c + 1) * p].to_vec(),
        }
    }

    /// `[1, C, H, W]` tensor of the samples.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([1, self.channels, self.height, self.width], self.to_f32_vec()).expect("raster length checked")
    }

    pub fn from_tensor(t: &Tensor<f32>, role: Role) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 {
            return Err(Error::Contract(format!("raster from a batch of {n}; expected 1")));
        }
        Self::from_f32(w, h, c, role, t.data().to_vec())
    }

    /// Stack the channels of several same-extent rasters into one `f32` raster.
    pub fn stack(parts: &[&RasterImage], role: Role) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stacking zero rasters".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if (p.width, p.height) != (first.width, first.height) {
                return Err(Error::Geometry(format!(
                    "cannot stack a {}x{} raster onto {}x{}",
                    p.width, p.height, first.width, first.height
                )));
            }
            data.extend(p.to_f32_vec());
            channels += p.channels;
        }
        Self::from_f32(first.width, first.height, channels, role, data)
    }

    /// Copy the window `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h} at ({x0}, {y0}) leaves the {}x{} raster",
                self.width, self.height
            )));
        }
        #[allow(clippy::too_many_arguments)]
        fn window<X: Copy>(src: &[X], c: usize, sw: usize, sh: usize, x0: usize, y0: usize, w: usize, h: usize) -> Vec<X> {
            let mut out = Vec::with_capacity(c * w * h);
            for ch in 0..c {
                for y in y0..y0 + h {
                    let row = (ch * sh + y) * sw;
                    out.extend_from_slice(&src[row + x0..row + x0 + w]);
                }
            }
            out
        }
        let (c, sw, sh) = (self.channels, self.width, self.height);
        let data = match &self.data {
            RasterData::U8(v) => RasterData::U8(window(v, c, sw, sh, x0, y0, w, h)),
            RasterData::F32(v) => RasterData::F32(window(v, c, sw, sh, x0, y0, w, h)),
        };
        Self::new(w, h, c, self.role, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rejects_out_of_range_values() {
        assert!(RasterImage::label(2, 1, vec![0, 6], 6).is_err());
        assert!(RasterImage::label(2, 1, vec![0, IGNORE_LABEL], 6).is_ok());
    }

    #[test]
    fn crop_copies_window() {
        let r = RasterImage::from_u8(3, 2, 1, Role::Label, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let c = r.crop(1, 0, 2, 2).unwrap();
        assert_eq!(c.as_u8().unwrap(), &[1, 2, 4, 5]);
        assert!(r.crop(2, 0, 2, 1).is_err());
    }
}
