//! Dense row-major tensors and the reverse-mode autodiff tape built on them.
//!
//! [`Tensor`] is a plain value: a shape plus a contiguous buffer with the last
//! axis fastest. Feature maps use NCHW. Differentiation lives in [`Graph`],
//! which records operations on tensors and replays them backwards.

mod aft;
mod broadcast;
pub mod gradcheck;
pub(crate) mod graph;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use crate::error::{Error, Result};

pub use aft::{read_aft1, write_aft1, AFT1_MAGIC};
pub use broadcast::broadcast_shape;
pub use graph::{BackwardMode, Graph, Var};

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Element:
    num_traits::Float + Default + Debug + Display + Send + Sync + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} holds {n} elements but buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// True when every extent is 1.
    pub fn is_scalar(&self) -> bool {
        self.shape.iter().all(|&d| d == 1)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::RankMismatch {
                op: "dims4",
                expected: 4,
                got: self.shape.len(),
            }),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Channel range `[start, start + len)` of an NCHW tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if start + len > c {
            return Err(Error::Contract(format!(
                "channel slice {start}..{} exceeds {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor {
            shape: vec![n, len, h, w],
            data: out,
        })
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (n, _, h, w) = first.dims4()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            for (axis, (a, b)) in [(0, (n, pn)), (2, (h, ph)), (3, (w, pw))] {
                if a != b {
                    return Err(Error::DimensionMismatch {
                        op: "concat_channels",
                        axis,
                        left: a,
                        right: b,
                    });
                }
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let base = b * pc * plane;
                data.extend_from_slice(&p.data[base..base + pc * plane]);
            }
        }
        Ok(Tensor {
            shape: vec![n, total_c, h, w],
            data,
        })
    }

    /// Element `[n, c, y, x]` of a rank-4 tensor.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let s = &self.shape;
        self.data[((n * s[1] + c) * s[2] + y) * s[3] + x]
    }

    /// Mirror the spatial axes left-right.
    pub fn flip_horizontal(&self) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        Ok(Self::from_fn([n, c, h, w], |i| {
            let x = i % w;
            self.data[i - x + (w - 1 - x)]
        }))
    }

    /// Mirror the spatial axes top-bottom.
    pub fn flip_vertical(&self) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        Ok(Self::from_fn([n, c, h, w], |i| {
            let x = i % w;
            let y = (i / w) % h;
            let plane = i / (w * h);
            self.data[(plane * h + (h - 1 - y)) * w + x]
        }))
    }

    /// Rotate each spatial plane 90 degrees counter-clockwise, `quarter_turns` times.
    pub fn rot90(&self, quarter_turns: u8) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        match quarter_turns % 4 {
            0 => Ok(self.clone()),
            2 => Ok(Self::from_fn([n, c, h, w], |i| {
                let plane = i / (w * h);
                let r = i % (w * h);
                self.data[plane * h * w + (h * w - 1 - r)]
            })),
            k => {
                // out is (w x h); counter-clockwise: out[y][x] = in[x][w-1-y]
                let (oh, ow) = (w, h);
                Ok(Self::from_fn([n, c, oh, ow], |i| {
                    let x = i % ow;
                    let y = (i / ow) % oh;
                    let plane = i / (oh * ow);
                    let (sy, sx) = if k == 1 { (x, w - 1 - y) } else { (h - 1 - x, y) };
                    self.data[(plane * h + sy) * w + sx]
                }))
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Sum of all entries in `f64`.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: [usize; 4]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = seq([2, 3, 4, 4]);
        let b = seq([2, 2, 4, 4]).map(|v| -v);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 5, 4, 4]);
        assert_eq!(c.slice_channels(0, 3).unwrap(), a);
        assert_eq!(c.slice_channels(3, 2).unwrap(), b);
    }

    #[test]
    fn concat_rejects_mismatched_height() {
        let a = seq([1, 1, 4, 4]);
        let b = seq([1, 1, 3, 4]);
        match Tensor::concat_channels(&[&a, &b]) {
            Err(Error::DimensionMismatch { axis: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rotations_compose() {
        let t = seq([1, 2, 3, 5]);
        let r1 = t.rot90(1).unwrap();
        assert_eq!(r1.shape(), &[1, 2, 5, 3]);
        assert_eq!(r1.rot90(3).unwrap(), t);
        assert_eq!(r1.rot90(1).unwrap(), t.rot90(2).unwrap());
        assert_eq!(t.rot90(2).unwrap().rot90(2).unwrap(), t);
        // counter-clockwise: top-right corner moves to top-left
        assert_eq!(r1.at4(0, 0, 0, 0), t.at4(0, 0, 0, 4));
    }

    #[test]
    fn flips_are_involutions() {
        let t = seq([2, 1, 3, 4]);
        assert_eq!(t.flip_horizontal().unwrap().flip_horizontal().unwrap(), t);
        assert_eq!(t.flip_vertical().unwrap().flip_vertical().unwrap(), t);
        assert_eq!(t.flip_horizontal().unwrap().at4(1, 0, 2, 0), t.at4(1, 0, 2, 3));
    }
}
