use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Dihedral;
use crate::tensor::Tensor;

/// A training example: optical and optional auxiliary planes `[1, C, H, W]`
/// plus an `H x W` label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub optical: Tensor<f32>,
    pub aux: Option<Tensor<f32>>,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn new(optical: Tensor<f32>, aux: Option<Tensor<f32>>, labels: Vec<u8>) -> Result<Self> {
        let (n, _, h, w) = optical.dims4()?;
        if n != 1 {
            return Err(Error::Contract(format!("a sample holds one image, got {n}")));
        }
        if let Some(a) = &aux {
            let (an, _, ah, aw) = a.dims4()?;
            if (an, ah, aw) != (1, h, w) {
                return Err(Error::Geometry(format!("auxiliary planes {ah}x{aw} do not match optical {h}x{w}")));
            }
        }
        if labels.len() != h * w {
            return Err(Error::Geometry(format!("{} labels for a {h}x{w} sample", labels.len())));
        }
        Ok(Self { optical, aux, labels })
    }

    pub fn extent(&self) -> (usize, usize) {
        let s = self.optical.shape();
        (s[2], s[3])
    }

    pub fn transform(&self, d: Dihedral) -> Result<Self> {
        let (h, w) = self.extent();
        Ok(Self {
            optical: d.apply_tensor(&self.optical)?,
            aux: self.aux.as_ref().map(|a| d.apply_tensor(a)).transpose()?,
            labels: d.apply_planes(&self.labels, h, w),
        })
    }

    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Result<Self> {
        let (h, w) = self.extent();
        if y0 + size > h || x0 + size > w {
            return Err(Error::Contract(format!("crop {size} at ({y0}, {x0}) exceeds {h}x{w}")));
        }
        let cut = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
            let c = t.shape()[1];
            let mut data = Vec::with_capacity(c * size * size);
            for ch in 0..c {
                for y in y0..y0 + size {
                    let row = (ch * h + y) * w;
                    data.extend_from_slice(&t.data()[row + x0..row + x0 + size]);
                }
            }
            Tensor::new([1, c, size, size], data)
        };
        let mut labels = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            labels.extend_from_slice(&self.labels[y * w + x0..y * w + x0 + size]);
        }
        Ok(Self {
            optical: cut(&self.optical)?,
            aux: self.aux.as_ref().map(cut).transpose()?,
            labels,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Random multiple of a quarter turn.
    pub rotate: bool,
    /// Side of the random square crop; equal to the slice size for none.
    pub crop: usize,
}

impl AugmentConfig {
    pub fn off(crop: usize) -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotate: false,
            crop,
        }
    }
}

/// Apply one random geometric transform to all planes of `sample` alike.
/// Crop offsets are uniform over `0..=extent - crop` on each axis.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, rng: &mut R, cfg: &AugmentConfig) -> Result<Sample> {
    let (h, w) = sample.extent();
    if cfg.crop == 0 || cfg.crop > h.min(w) {
        return Err(Error::Contract(format!("crop {} does not fit a {h}x{w} sample", cfg.crop)));
    }
    let mut s = if cfg.crop < h || cfg.crop < w {
        let y0 = rng.random_range(0..=h - cfg.crop);
        let x0 = rng.random_range(0..=w - cfg.crop);
        sample.crop(y0, x0, cfg.crop)?
    } else {
        sample.clone()
    };
    if cfg.hflip && rng.random_bool(0.5) {
        s = s.transform(Dihedral::hflip())?;
    }
    if cfg.vflip && rng.random_bool(0.5) {
        s = s.transform(Dihedral::vflip())?;
    }
    if cfg.rotate {
        let k = rng.random_range(0..4u8);
        if k > 0 {
            s = s.transform(Dihedral::rotation(k))?;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample(h: usize, w: usize) -> Sample {
        let optical = Tensor::from_fn([1, 3, h, w], |i| i as f32);
        let aux = Some(Tensor::from_fn([1, 2, h, w], |i| -(i as f32)));
        Sample::new(optical, aux, (0..h * w).map(|i| (i % 6) as u8).collect()).unwrap()
    }

    #[test]
    fn disabled_config_is_identity() {
        let s = sample(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &mut rng, &AugmentConfig::off(8)).unwrap(), s);
        assert!(augment(&s, &mut rng, &AugmentConfig::off(9)).is_err());
    }

    #[test]
    fn hflip_twice_is_identity() {
        let s = sample(4, 6);
        let d = Dihedral::hflip();
        assert_eq!(s.transform(d).unwrap().transform(d).unwrap(), s);
    }

    #[test]
    fn labels_follow_pixels() {
        // label 1 where optical channel 0 is odd
        let mut s = sample(6, 6);
        s.labels = s.optical.data()[..36].iter().map(|&v| (v as usize % 2) as u8).collect();
        let cfg = AugmentConfig {
            hflip: true,
            vflip: true,
            rotate: true,
            crop: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = augment(&s, &mut rng, &cfg).unwrap();
            for i in 0..16 {
                assert_eq!(a.labels[i], (a.optical.data()[i] as usize % 2) as u8);
                assert_eq!(a.aux.as_ref().unwrap().data()[i], -a.optical.data()[i]);
            }
        }
    }

    #[test]
    fn crop_offsets_cover_inclusive_range() {
        let mut s = sample(5, 5);
        s.labels = (0..25).map(|i| i as u8).collect();
        let cfg = AugmentConfig::off(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..400 {
            seen.insert(augment(&s, &mut rng, &cfg).unwrap().labels[0]);
        }
        // top-left corners (y, x) in 0..=2 each
        assert_eq!(seen.len(), 9);
    }
}
