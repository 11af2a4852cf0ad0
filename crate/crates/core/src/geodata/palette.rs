use super::{RasterImage, Role, IGNORE_LABEL};
use crate::error::{Error, Result};

pub const CLASS_NAMES: [&str; 6] = ["imp_surf", "building", "low_veg", "tree", "car", "clutter"];

/// Class index to RGB color, one entry per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    /// White, blue, cyan, green, yellow, red.
    fn default() -> Self {
        Self {
            colors: vec![
                [255, 255, 255],
                [0, 0, 255],
                [0, 255, 255],
                [0, 255, 0],
                [255, 255, 0],
                [255, 0, 0],
            ],
        }
    }
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        for (i, c) in colors.iter().enumerate() {
            if colors[..i].contains(c) {
                return Err(Error::validation(format!("palette color {c:?} used by two classes")));
            }
        }
        Ok(Self { colors })
    }

    pub fn class_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.colors.iter().position(|&c| c == rgb).map(|i| i as u8)
    }
}

/// Color raster of a class map. Ignored pixels are drawn black.
pub fn encode_labels(labels: &RasterImage, palette: &Palette) -> Result<RasterImage> {
    let classes = labels
        .as_u8()
        .filter(|_| labels.channels == 1)
        .ok_or_else(|| Error::Contract("encode_labels needs a one-channel u8 class map".into()))?;
    let p = labels.plane_len();
    let mut out = vec![0u8; 3 * p];
    for (i, &c) in classes.iter().enumerate() {
        let rgb = match palette.colors.get(c as usize) {
            Some(rgb) => *rgb,
            None if c == IGNORE_LABEL => [0, 0, 0],
            None => return Err(Error::validation(format!("class {c} has no palette color"))),
        };
        for ch in 0..3 {
            out[ch * p + i] = rgb[ch];
        }
    }
    RasterImage::from_u8(labels.width, labels.height, 3, Role::Optical, out)
}

/// Class map of a color raster. Black decodes to the ignore label unless the
/// palette assigns it to a class.
pub fn decode_labels(color: &RasterImage, palette: &Palette) -> Result<RasterImage> {
    let data = color
        .as_u8()
        .filter(|_| color.channels == 3)
        .ok_or_else(|| Error::Contract("decode_labels needs a three-channel u8 raster".into()))?;
    let p = color.plane_len();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let rgb = [data[i], data[p + i], data[2 * p + i]];
        match palette.class_of(rgb) {
            Some(c) => out.push(c),
            None if rgb == [0, 0, 0] => out.push(IGNORE_LABEL),
            None => {
                return Err(Error::Decode(format!(
                    "color {rgb:?} at pixel ({}, {}) is not in the palette",
                    i % color.width,
                    i / color.width
                )))
            }
        }
    }
    RasterImage::from_u8(color.width, color.height, 1, Role::Label, out)
}
