//! Procedural two-path datasets for convergence experiments.
//!
//! Each sample holds a few rectangles and discs on a background, rasterized on
//! a grid of 4x4-pixel cells so the finest decoder stage (stride 4) can
//! represent every edge. Every shape has an optical color and an auxiliary
//! "height"; its class is a function of both.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::Result;
use crate::tensor::Tensor;

/// Which input determines the class of a shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keying {
    /// Class depends on optical color and height together.
    Joint,
    /// Class depends on height alone; optical color is random noise.
    AuxOnly,
}

/// `count` samples of `size x size` pixels with 3 optical and 2 auxiliary
/// channels. Labels are `0` for background and `1..=4` (joint keying) or
/// `1..=2` (auxiliary keying) for shapes.
pub fn shapes_dataset(count: usize, size: usize, keying: Keying, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| one(&mut rng, size, keying)).collect()
}

const CELL: usize = 4;
const COLORS: [[f32; 3]; 2] = [[1.0, -0.5, -0.5], [-0.5, 1.0, -0.5]];
const HEIGHTS: [f32; 2] = [0.3, 1.5];

fn one(rng: &mut ChaCha8Rng, size: usize, keying: Keying) -> Result<Sample> {
    let p = size * size;
    let mut optical = vec![0f32; 3 * p];
    let mut aux = vec![0f32; 2 * p];
    let mut labels = vec![0u8; p];
    // background: gray, flat, class 0
    for i in 0..p {
        for c in 0..3 {
            optical[c * p + i] = -0.2 + 0.1 * rng.random::<f32>();
        }
        aux[p + i] = 0.05 * rng.random::<f32>();
    }
    let shapes = rng.random_range(2..=4);
    for _ in 0..shapes {
        let color = rng.random_range(0..2usize);
        let tall = rng.random_range(0..2usize);
        let class = match keying {
            Keying::Joint => 1 + (2 * color + tall) as u8,
            Keying::AuxOnly => 1 + tall as u8,
        };
        let disc = rng.random_bool(0.5);
        let cells = (size / CELL) as i64;
        let r = rng.random_range(1..=(cells / 4).max(1));
        let cy = rng.random_range(r..cells - r);
        let cx = rng.random_range(r..cells - r);
        let noise_color = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = ((y / CELL) as i64 - cy, (x / CELL) as i64 - cx);
                let inside = if disc {
                    dy * dy + dx * dx <= r * r
                } else {
                    dy.abs() <= r && dx.abs() <= r
                };
                if !inside {
                    continue;
                }
                let i = y * size + x;
                for c in 0..3 {
                    optical[c * p + i] = match keying {
                        Keying::Joint => COLORS[color][c],
                        Keying::AuxOnly => noise_color[c] * 2.0 - 1.0,
                    };
                }
                aux[p + i] = HEIGHTS[tall];
                labels[i] = class;
            }
        }
    }
    // first auxiliary channel mimics NDVI from the first two optical channels
    for i in 0..p {
        let (n, r) = (optical[i], optical[p + i]);
        aux[i] = (n - r) / 2.0;
    }
    Sample::new(
        Tensor::new([1, 3, size, size], optical)?,
        Some(Tensor::new([1, 2, size, size], aux)?),
        labels,
    )
}
