use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{RasterData, RasterImage, Role};
use crate::error::{Error, Result};
use crate::tensor::{read_aft1, write_aft1, Tensor, AFT1_MAGIC};

/// On-disk raster encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterFormat {
    /// Binary PPM (`P6`), three `u8` channels.
    Ppm,
    /// Binary PGM (`P5`), one `u8` channel.
    Pgm,
    /// `AFT1` tensor of shape `[C, H, W]`, `f32` samples.
    Aft1,
}

impl RasterFormat {
    pub fn for_raster(img: &RasterImage) -> Result<Self> {
        match (&img.data, img.channels) {
            (RasterData::F32(_), _) => Ok(RasterFormat::Aft1),
            (RasterData::U8(_), 3) => Ok(RasterFormat::Ppm),
            (RasterData::U8(_), 1) => Ok(RasterFormat::Pgm),
            (RasterData::U8(_), c) => Err(Error::Format(format!("no u8 raster format holds {c} channels"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::Ppm => "ppm",
            RasterFormat::Pgm => "pgm",
            RasterFormat::Aft1 => "aft",
        }
    }
}

pub fn read_raster(path: &Path) -> Result<RasterImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_raster_from(&bytes)
}

pub fn write_raster(img: &RasterImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_raster_to(img, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_raster_to<W: Write>(img: &RasterImage, out: &mut W) -> Result<()> {
    let io = |source| Error::Stream {
        context: "writing raster",
        source,
    };
    match RasterFormat::for_raster(img)? {
        RasterFormat::Aft1 => {
            let t = Tensor::new([img.channels, img.height, img.width], img.to_f32_vec())?;
            write_aft1(out, &t)
        }
        fmt => {
            let magic = if fmt == RasterFormat::Ppm { "P6" } else { "P5" };
            write!(out, "{magic}\n{} {}\n255\n", img.width, img.height).map_err(io)?;
            let planar = img.as_u8().expect("u8 format");
            let p = img.plane_len();
            let mut interleaved = Vec::with_capacity(planar.len());
            for i in 0..p {
                for c in 0..img.channels {
                    interleaved.push(planar[c * p + i]);
                }
            }
            out.write_all(&interleaved).map_err(io)
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: format!("{what} does not fit in usize"),
            })
    }
}

/// Decode a raster, detecting the format from its magic bytes.
pub fn read_raster_from(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.starts_with(AFT1_MAGIC) {
        let t = read_aft1(&mut &bytes[..], 0)?;
        let (c, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            [1, c, h, w] => (c, h, w),
            ref s => return Err(Error::Format(format!("AFT1 raster must be [H,W], [C,H,W] or [1,C,H,W], got {s:?}"))),
        };
        let role = if c == 1 { Role::Dsm } else { Role::Probability };
        return RasterImage::from_f32(w, h, c, role, t.into_data());
    }
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                message: "unknown raster magic; expected P6, P5 or AFT1".into(),
            })
        }
    };
    let mut hd = Header { bytes, pos: 2 };
    let width = hd.number("width")?;
    let height = hd.number("height")?;
    let maxval_at = hd.pos;
    let maxval = hd.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("maxval {maxval} at byte {maxval_at} is unsupported; only 255 is")));
    }
    if !hd.bytes.get(hd.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(hd.err("expected a single whitespace byte after maxval"));
    }
    hd.pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| hd.err("raster extent overflows"))?;
    let payload = &bytes[hd.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload truncated: {} of {need} bytes", payload.len()),
        });
    }
    let p = width * height;
    let mut planar = vec![0u8; need];
    for (i, px) in payload[..need].chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * p + i] = v;
        }
    }
    let role = if channels == 3 { Role::Optical } else { Role::Label };
    RasterImage::from_u8(width, height, channels, role, planar)
}
