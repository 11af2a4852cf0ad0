use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// An element of the symmetry group of the square: an optional horizontal
/// flip followed by `rot` counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    /// All eight elements, identity first.
    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral {
            flip: i >= 4,
            rot: (i % 4) as u8,
        })
    }

    pub fn hflip() -> Self {
        Dihedral { flip: true, rot: 0 }
    }

    /// A vertical flip is a horizontal flip followed by a half turn.
    pub fn vflip() -> Self {
        Dihedral { flip: true, rot: 2 }
    }

    pub fn rotation(quarter_turns: u8) -> Self {
        Dihedral {
            flip: false,
            rot: quarter_turns % 4,
        }
    }

    pub fn inverse(self) -> Self {
        if self.flip {
            // (R^k F)^-1 = F R^-k = R^k F
            self
        } else {
            Dihedral {
                flip: false,
                rot: (4 - self.rot) % 4,
            }
        }
    }

    /// Canonical name: `rot0`..`rot270`, `flip`, `flip_rot90`..`flip_rot270`.
    pub fn name(self) -> &'static str {
        const NAMES: [&str; 8] = ["rot0", "rot90", "rot180", "rot270", "flip", "flip_rot90", "flip_rot180", "flip_rot270"];
        NAMES[usize::from(self.flip) * 4 + usize::from(self.rot % 4)]
    }

    /// Extent `(h, w)` of the transformed plane.
    pub fn output_extent(self, h: usize, w: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Transform every consecutive `h x w` plane of `data`.
    pub fn apply_planes<X: Copy>(self, data: &[X], h: usize, w: usize) -> Vec<X> {
        let plane = h * w;
        let (oh, ow) = self.output_extent(h, w);
        let mut out = Vec::with_capacity(data.len());
        if plane == 0 {
            return out;
        }
        for p in data.chunks_exact(plane) {
            for y in 0..oh {
                for x in 0..ow {
                    // undo the rotation, then the flip
                    let (sy, mut sx) = match self.rot % 4 {
                        0 => (y, x),
                        1 => (x, w - 1 - y),
                        2 => (h - 1 - y, w - 1 - x),
                        _ => (h - 1 - x, y),
                    };
                    if self.flip {
                        sx = w - 1 - sx;
                    }
                    out.push(p[sy * w + sx]);
                }
            }
        }
        out
    }

    pub fn apply_tensor<T: Element>(self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = t.dims4()?;
        let (oh, ow) = self.output_extent(h, w);
        Tensor::new([n, c, oh, ow], self.apply_planes(t.data(), h, w))
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts the canonical names plus `identity`, `hflip` and `vflip`.
impl FromStr for Dihedral {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => return Ok(Dihedral::IDENTITY),
            "hflip" => return Ok(Dihedral::hflip()),
            "vflip" => return Ok(Dihedral::vflip()),
            _ => {}
        }
        Dihedral::all()
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown transform {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in Dihedral::all() {
            assert_eq!(d.name().parse::<Dihedral>().unwrap(), d);
        }
        assert_eq!("vflip".parse::<Dihedral>().unwrap(), Dihedral::vflip());
        assert!("rot45".parse::<Dihedral>().is_err());
    }

    fn grid(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn([1, 2, h, w], |i| i as f64)
    }

    #[test]
    fn matches_tensor_primitives() {
        let t = grid(3, 4);
        assert_eq!(Dihedral::hflip().apply_tensor(&t).unwrap(), t.flip_horizontal().unwrap());
        assert_eq!(Dihedral::vflip().apply_tensor(&t).unwrap(), t.flip_vertical().unwrap());
        for k in 0..4 {
            assert_eq!(Dihedral::rotation(k).apply_tensor(&t).unwrap(), t.rot90(k).unwrap());
        }
    }

    #[test]
    fn inverse_undoes_every_element() {
        let t = grid(3, 5);
        for d in Dihedral::all() {
            let y = d.apply_tensor(&t).unwrap();
            assert_eq!(d.inverse().apply_tensor(&y).unwrap(), t, "{d:?}");
        }
    }

    #[test]
    fn elements_are_distinct() {
        let t = grid(4, 4);
        let outs: Vec<_> = Dihedral::all().iter().map(|d| d.apply_tensor(&t).unwrap()).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(outs[i], outs[j]);
            }
        }
    }
}
