//! Forward and backward kernels for the layer primitives. These operate on
//! plain tensors; [`Graph`](crate::tensor::Graph) wires them into the tape.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) fn out_extent(op: &str, input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::Geometry(format!("{op}: kernel {k} and stride {stride} must be positive")));
    }
    if input + 2 * pad < k {
        return Err(Error::Geometry(format!(
            "{op}: input extent {input} with padding {pad} is smaller than kernel {k}"
        )));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose source `o*stride + off - pad` lands inside `[0, len)`.
#[inline]
fn valid_range(off: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    // need o*stride + off >= pad  and  o*stride + off < len + pad
    let lo = if off >= pad { 0 } else { (pad - off).div_ceil(stride) };
    let hi = if len + pad > off {
        ((len + pad - off).div_ceil(stride)).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv_geom<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            axis: 1,
            left: cin,
            right: wcin,
        });
    }
    if kh != kw {
        return Err(Error::Geometry(format!("conv2d: non-square kernel {kh}x{kw}")));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::DimensionMismatch {
                op: "conv2d bias",
                axis: 0,
                left: cout,
                right: b.numel(),
            });
        }
    }
    let ho = out_extent("conv2d", h, kh, stride, pad)?;
    let wo = out_extent("conv2d", w, kw, stride, pad)?;
    Ok(ConvGeom { n, cin, h, w, cout, k: kh, ho, wo })
}

/// Direct cross-correlation with zero padding. For every output element the
/// products are accumulated in (input channel, kernel row, kernel column)
/// order starting from zero, and the bias is added last.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, weight, bias, stride, pad)?;
    let ConvGeom { n, cin, h, w, cout, k, ho, wo, .. } = g;
    let mut out = vec![T::zero(); n * cout * ho * wo];
    let xd = x.data();
    let wd = weight.data();
    let oplane = ho * wo;
    for b in 0..n {
        for oc in 0..cout {
            let o = &mut out[(b * cout + oc) * oplane..(b * cout + oc + 1) * oplane];
            for ci in 0..cin {
                let xp = &xd[(b * cin + ci) * h * w..(b * cin + ci + 1) * h * w];
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(ky, pad, stride, h, ho);
                    for kx in 0..k {
                        let wv = wd[((oc * cin + ci) * k + ky) * k + kx];
                        let (xlo, xhi) = valid_range(kx, pad, stride, w, wo);
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let row = &xp[iy * w..(iy + 1) * w];
                            let orow = &mut o[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                let shift = kx as isize - pad as isize;
                                for ox in xlo..xhi {
                                    orow[ox] = orow[ox] + wv * row[(ox as isize + shift) as usize];
                                }
                            } else {
                                for ox in xlo..xhi {
                                    orow[ox] = orow[ox] + wv * row[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                let bv = bias.data()[oc];
                for v in o.iter_mut() {
                    *v = *v + bv;
                }
            }
        }
    }
    Tensor::new([n, cout, ho, wo], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    stride: usize,
    pad: usize,
    gy: &[T],
) -> Result<ConvGrads<T>> {
    let g = conv_geom(x, weight, None, stride, pad)?;
    let ConvGeom { n, cin, h, w, cout, k, ho, wo, .. } = g;
    let xd = x.data();
    let wd = weight.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); wd.len()];
    let mut gb = vec![T::zero(); if with_bias { cout } else { 0 }];
    let oplane = ho * wo;
    for b in 0..n {
        for oc in 0..cout {
            let go = &gy[(b * cout + oc) * oplane..(b * cout + oc + 1) * oplane];
            if with_bias {
                gb[oc] = gb[oc] + go.iter().copied().sum::<T>();
            }
            for ci in 0..cin {
                let base = (b * cin + ci) * h * w;
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(ky, pad, stride, h, ho);
                    for kx in 0..k {
                        let widx = ((oc * cin + ci) * k + ky) * k + kx;
                        let wv = wd[widx];
                        let (xlo, xhi) = valid_range(kx, pad, stride, w, wo);
                        let mut acc = T::zero();
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let xrow = base + iy * w;
                            let grow = &go[oy * wo..(oy + 1) * wo];
                            for ox in xlo..xhi {
                                let ix = xrow + ox * stride + kx - pad;
                                let gv = grow[ox];
                                acc = acc + gv * xd[ix];
                                gx[ix] = gx[ix] + gv * wv;
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: if with_bias { Some(Tensor::new([cout], gb)?) } else { None },
    })
}

pub(crate) struct BnTrainCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    pub count: usize,
}

pub(crate) fn check_bn_params<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    for p in [gamma, beta] {
        if p.numel() != c {
            return Err(Error::DimensionMismatch {
                op: "batch_norm",
                axis: 1,
                left: c,
                right: p.numel(),
            });
        }
    }
    Ok((n, c, h * w))
}

pub(crate) fn batch_stats<T: Element>(x: &Tensor<T>) -> Result<BnBatchStats<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(Error::DegenerateInput("batch_norm: zero elements per channel".into()));
    }
    let xd = x.data();
    let inv = T::one() / T::from_f64(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + xd[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied().sum::<T>();
        }
        let m = s * inv;
        let mut v = T::zero();
        for b in 0..n {
            for &xv in &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                let d = xv - m;
                v = v + d * d;
            }
        }
        mean[ch] = m;
        var[ch] = v * inv;
    }
    Ok(BnBatchStats { mean, var, count })
}

pub(crate) fn batch_norm_train_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BnTrainCache<T>, BnBatchStats<T>)> {
    let (n, c, plane) = check_bn_params(x, gamma, beta)?;
    let stats = batch_stats(x)?;
    if stats.count < 2 {
        return Err(Error::DegenerateInput(format!(
            "batch_norm: training mode needs at least 2 values per channel, got {}",
            stats.count
        )));
    }
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    for b in 0..n {
        for ch in 0..c {
            let (m, is, g, be) = (stats.mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                let xh = (xd[i] - m) * is;
                xhat[i] = xh;
                y[i] = g * xh + be;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), y)?, BnTrainCache { xhat, inv_std }, stats))
}

pub(crate) fn batch_norm_train_backward<T: Element>(
    shape: &[usize],
    gamma: &[T],
    cache: &BnTrainCache<T>,
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::from_f64((n * plane) as f64);
    let mut gx = vec![T::zero(); gy.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for b in 0..n {
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                sg = sg + gy[i];
                sgx = sgx + gy[i] * cache.xhat[i];
            }
        }
        gb[ch] = sg;
        gg[ch] = sgx;
        let scale = gamma[ch] * cache.inv_std[ch] / m;
        for b in 0..n {
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                gx[i] = scale * (m * gy[i] - sg - cache.xhat[i] * sgx);
            }
        }
    }
    (gx, gg, gb)
}

pub(crate) fn batch_norm_eval_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, plane) = check_bn_params(x, gamma, beta)?;
    check_bn_params(x, mean, var)?;
    if x.numel() == 0 {
        return Err(Error::DegenerateInput("batch_norm: zero elements per channel".into()));
    }
    let inv_std: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let (m, is, g, be) = (mean.data()[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                y[i] = g * ((xd[i] - m) * is) + be;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), y)?, inv_std))
}

/// Max pooling without padding; ties resolve to the first element in row-major window order.
pub fn max_pool2d_forward<T: Element>(x: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let ho = out_extent("max_pool2d", h, k, stride, 0)?;
    let wo = out_extent("max_pool2d", w, k, stride, 0)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new([n, c, ho, wo], out)?, arg))
}

/// Per-channel spatial mean, `[N,C,H,W] -> [N,C,1,1]`.
pub fn global_avg_pool_forward<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::DegenerateInput("global_avg_pool on empty spatial extent".into()));
    }
    let inv = T::one() / T::from_f64(plane as f64);
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Tensor::new([n, c, 1, 1], out)
}

/// Source taps for half-pixel bilinear sampling along one axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
}

pub(crate) fn bilinear_taps(in_len: usize, out_len: usize, scale: usize, align_corners: bool) -> Vec<Tap> {
    (0..out_len)
        .map(|d| {
            let src = if align_corners {
                if out_len > 1 {
                    d as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
                } else {
                    0.0
                }
            } else {
                ((d as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (in_len - 1) as f64)
            };
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap { i0, i1, frac: src - i0 as f64 }
        })
        .collect()
}

pub fn bilinear_upsample_forward<T: Element>(x: &Tensor<T>, scale: usize, align_corners: bool) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if scale == 0 {
        return Err(Error::Geometry("bilinear_upsample: scale must be >= 1".into()));
    }
    if h == 0 || w == 0 {
        return Err(Error::DegenerateInput("bilinear_upsample of empty plane".into()));
    }
    let (ho, wo) = (h * scale, w * scale);
    let ty = bilinear_taps(h, ho, scale, align_corners);
    let tx = bilinear_taps(w, wo, scale, align_corners);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        for t in &ty {
            let fy = T::from_f64(t.frac);
            let r0 = &src[t.i0 * w..(t.i0 + 1) * w];
            let r1 = &src[t.i1 * w..(t.i1 + 1) * w];
            for s in &tx {
                let fx = T::from_f64(s.frac);
                let top = r0[s.i0] + (r0[s.i1] - r0[s.i0]) * fx;
                let bot = r1[s.i0] + (r1[s.i1] - r1[s.i0]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub(crate) fn bilinear_upsample_backward<T: Element>(
    in_shape: &[usize],
    scale: usize,
    align_corners: bool,
    gy: &[T],
) -> Vec<T> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (ho, wo) = (h * scale, w * scale);
    let ty = bilinear_taps(h, ho, scale, align_corners);
    let tx = bilinear_taps(w, wo, scale, align_corners);
    let mut gx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let g = &mut gx[p * h * w..(p + 1) * h * w];
        let go = &gy[p * ho * wo..(p + 1) * ho * wo];
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::from_f64(t.frac);
            for (ox, s) in tx.iter().enumerate() {
                let fx = T::from_f64(s.frac);
                let v = go[oy * wo + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                g[t.i0 * w + s.i0] = g[t.i0 * w + s.i0] + top * (T::one() - fx);
                g[t.i0 * w + s.i1] = g[t.i0 * w + s.i1] + top * fx;
                g[t.i1 * w + s.i0] = g[t.i1 * w + s.i0] + bot * (T::one() - fx);
                g[t.i1 * w + s.i1] = g[t.i1 * w + s.i1] + bot * fx;
            }
        }
    }
    gx
}

/// Softmax over the channel axis of an NCHW tensor, with max subtraction.
pub fn softmax_channels_forward<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, h, w) = x.dims4()?;
    if k < 2 {
        return Err(Error::Contract(format!("softmax over {k} classes; need at least 2")));
    }
    let plane = h * w;
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(xd[base + c * plane + p]);
            }
            let mut s = T::zero();
            for c in 0..k {
                let e = (xd[base + c * plane + p] - m).exp();
                out[base + c * plane + p] = e;
                s = s + e;
            }
            let inv = T::one() / s;
            for c in 0..k {
                out[base + c * plane + p] = out[base + c * plane + p] * inv;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_channels_backward<T: Element>(y: &Tensor<T>, gy: &[T]) -> Vec<T> {
    let s = y.shape();
    let (n, k, plane) = (s[0], s[1], s[2] * s[3]);
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut dot = T::zero();
            for c in 0..k {
                let i = base + c * plane + p;
                dot = dot + gy[i] * yd[i];
            }
            for c in 0..k {
                let i = base + c * plane + p;
                gx[i] = yd[i] * (gy[i] - dot);
            }
        }
    }
    gx
}

/// Mean categorical cross entropy over non-ignored pixels. Returns the loss,
/// the softmax probabilities and the number of contributing pixels.
pub(crate) fn cross_entropy_forward<T: Element>(
    logits: &Tensor<T>,
    labels: &[u8],
    ignore: Option<u8>,
) -> Result<(T, Tensor<T>, usize)> {
    let (n, k, h, w) = logits.dims4()?;
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(Error::Contract(format!(
            "cross_entropy: {} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let probs = softmax_channels_forward(logits)?;
    let xd = logits.data();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let l = labels[b * plane + p];
            if Some(l) == ignore {
                continue;
            }
            if l as usize >= k {
                return Err(Error::validation(format!(
                    "label {l} at pixel {p} of sample {b} is outside [0, {k})"
                )));
            }
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(xd[base + c * plane + p]);
            }
            let mut s = T::zero();
            for c in 0..k {
                s = s + (xd[base + c * plane + p] - m).exp();
            }
            let log_p = xd[base + l as usize * plane + p] - m - s.ln();
            total -= log_p.as_f64();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateInput("cross_entropy: every pixel is ignored".into()));
    }
    Ok((T::from_f64(total / count as f64), probs, count))
}

pub(crate) fn cross_entropy_backward<T: Element>(
    probs: &Tensor<T>,
    labels: &[u8],
    ignore: Option<u8>,
    count: usize,
    g: T,
) -> Vec<T> {
    let s = probs.shape();
    let (n, k, plane) = (s[0], s[1], s[2] * s[3]);
    let scale = g / T::from_f64(count as f64);
    let pd = probs.data();
    let mut gx = vec![T::zero(); pd.len()];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let l = labels[b * plane + p];
            if Some(l) == ignore {
                continue;
            }
            for c in 0..k {
                let i = base + c * plane + p;
                let target = if c == l as usize { T::one() } else { T::zero() };
                gx[i] = (pd[i] - target) * scale;
            }
        }
    }
    gx
}
