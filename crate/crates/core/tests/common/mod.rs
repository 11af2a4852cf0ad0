//! Naive reference implementations used as independent oracles, and small fixtures.
#![allow(dead_code)]

use std::collections::HashMap;

use afnet::geodata::{Predictor, RasterImage, Role};
use afnet::tensor::Tensor;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn at(shape: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + y) * shape[3] + x
}

/// Convolution by explicit zero padding followed by a dense window sum.
pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
    let mut padded = vec![0.0; n * cin * hp * wp];
    for i in 0..n {
        for c in 0..cin {
            for y in 0..h {
                for xx in 0..wd {
                    padded[((i * cin + c) * hp + y + pad) * wp + xx + pad] = x.data()[at(s, i, c, y, xx)];
                }
            }
        }
    }
    let ho = (hp - k) / stride + 1;
    let wo = (wp - k) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for i in 0..n {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let v = padded[((i * cin + c) * hp + oy * stride + ky) * wp + ox * stride + kx];
                                acc += v * w.data()[((o * cin + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((i * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new([n, cout, ho, wo], out).unwrap()
}

pub fn max_pool2d(x: &Tensor<f64>, k: usize, stride: usize) -> Tensor<f64> {
    let s = x.shape();
    let ho = (s[2] - k) / stride + 1;
    let wo = (s[3] - k) / stride + 1;
    let mut out = Vec::new();
    for i in 0..s[0] {
        for c in 0..s[1] {
            for oy in 0..ho {
                for ox in 0..wo {
                    let m = (0..k * k)
                        .map(|j| x.data()[at(s, i, c, oy * stride + j / k, ox * stride + j % k)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.push(m);
                }
            }
        }
    }
    Tensor::new([s[0], s[1], ho, wo], out).unwrap()
}

/// Bilinear interpolation written as a weighted sum of the four neighbors.
pub fn bilinear(x: &Tensor<f64>, scale: usize, align_corners: bool) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let (ho, wo) = (h * scale, w * scale);
    let coord = |d: usize, inp: usize, outp: usize| -> f64 {
        if align_corners {
            if outp == 1 {
                0.0
            } else {
                d as f64 * (inp - 1) as f64 / (outp - 1) as f64
            }
        } else {
            let c = (d as f64 + 0.5) * inp as f64 / outp as f64 - 0.5;
            c.max(0.0).min((inp - 1) as f64)
        }
    };
    let mut out = Vec::new();
    for i in 0..s[0] {
        for c in 0..s[1] {
            for oy in 0..ho {
                let sy = coord(oy, h, ho);
                for ox in 0..wo {
                    let sx = coord(ox, w, wo);
                    let mut acc = 0.0;
                    for yy in 0..h {
                        for xx in 0..w {
                            let wy = (1.0 - (sy - yy as f64).abs()).max(0.0);
                            let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                            acc += wy * wx * x.data()[at(s, i, c, yy, xx)];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new([s[0], s[1], ho, wo], out).unwrap()
}

pub fn softmax(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let mut out = x.clone();
    for i in 0..s[0] {
        for y in 0..s[2] {
            for xx in 0..s[3] {
                let z: f64 = (0..s[1]).map(|c| x.data()[at(s, i, c, y, xx)].exp()).sum();
                for c in 0..s[1] {
                    out.data_mut()[at(s, i, c, y, xx)] = x.data()[at(s, i, c, y, xx)].exp() / z;
                }
            }
        }
    }
    out
}

/// Mean negative log-likelihood over pixels whose label differs from `ignore`.
pub fn cross_entropy(logits: &Tensor<f64>, labels: &[u8], ignore: Option<u8>) -> f64 {
    let s = logits.shape();
    let p = softmax(logits);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..s[0] {
        for y in 0..s[2] {
            for xx in 0..s[3] {
                let l = labels[(i * s[2] + y) * s[3] + xx];
                if Some(l) == ignore {
                    continue;
                }
                sum -= p.data()[at(s, i, l as usize, y, xx)].ln();
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Confusion counts keyed by `(ground truth, prediction)`.
pub fn confusion(pred: &[u8], gt: &[u8], ignore: Option<&[bool]>) -> HashMap<(u8, u8), u64> {
    let mut m = HashMap::new();
    for i in 0..pred.len() {
        if ignore.is_some_and(|mask| mask[i]) {
            continue;
        }
        *m.entry((gt[i], pred[i])).or_insert(0) += 1;
    }
    m
}

pub fn overall_accuracy(pred: &[u8], gt: &[u8]) -> f64 {
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    hits as f64 / pred.len() as f64
}

/// `(precision, recall, f1)` of class `c` counted directly from the maps.
pub fn prf(pred: &[u8], gt: &[u8], c: u8) -> (f64, f64, f64) {
    let tp = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g == c).count() as f64;
    let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
    let actual = gt.iter().filter(|&&g| g == c).count() as f64;
    let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let r = if actual > 0.0 { tp / actual } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rotation- and reflection-equivariant stand-in for a network: a 3x3 blur with
/// a symmetric kernel of power-of-two weights, then a per-pixel softmax. On
/// integer-valued inputs every blurred value is exact, so predictions of
/// transformed inputs are bit-identical transforms of each other.
pub struct EquivariantModel;

impl Predictor for EquivariantModel {
    fn predict_probs(&self, optical: &Tensor<f32>, _: Option<&Tensor<f32>>) -> afnet::Result<Tensor<f32>> {
        let (n, c, h, w) = optical.dims4()?;
        let kernel = [1.0f32, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0];
        let mut blurred = vec![0f32; n * c * h * w];
        for p in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0f32;
                    for (j, kv) in kernel.iter().enumerate() {
                        let (yy, xx) = (y as isize + j as isize / 3 - 1, x as isize + j as isize % 3 - 1);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            acc += kv * optical.data()[(p * h + yy as usize) * w + xx as usize];
                        }
                    }
                    blurred[(p * h + y) * w + x] = acc / 16.0;
                }
            }
        }
        afnet::nn::kernels::softmax_channels_forward(&Tensor::new([n, c, h, w], blurred)?)
    }
}

/// Integer-valued random optical raster.
pub fn integer_raster(rng: &mut impl Rng, w: usize, h: usize, channels: usize) -> RasterImage {
    let data = (0..w * h * channels).map(|_| rng.random_range(0..16) as f32).collect();
    RasterImage::from_f32(w, h, channels, Role::Optical, data).unwrap()
}

/// Random f32 raster with `channels` channels.
pub fn random_raster(rng: &mut impl Rng, w: usize, h: usize, channels: usize) -> RasterImage {
    let data = (0..w * h * channels).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    RasterImage::from_f32(w, h, channels, Role::Probability, data).unwrap()
}
