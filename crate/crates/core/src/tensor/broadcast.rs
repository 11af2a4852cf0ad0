use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Output shape of a broadcast between `a` and `b`. Shapes are right-aligned;
/// each aligned pair must be equal or contain a 1.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for axis in 0..rank {
        let da = aligned(a, rank, axis);
        let db = aligned(b, rank, axis);
        out[axis] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::DimensionMismatch {
                    op,
                    axis,
                    left: x,
                    right: y,
                })
            }
        };
    }
    Ok(out)
}

fn aligned(shape: &[usize], rank: usize, axis: usize) -> usize {
    let pad = rank - shape.len();
    if axis < pad {
        1
    } else {
        shape[axis - pad]
    }
}

/// Strides of `shape` as seen from an output of shape `out`, zero on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for axis in (0..rank).rev() {
        let d = aligned(shape, rank, axis);
        strides[axis] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

/// Walks every output index, yielding the matching flat offsets into both operands.
pub(crate) fn for_each_pair(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    let inner = if rank == 0 { 1 } else { out[rank - 1] };
    let (ia, ib) = if rank == 0 { (0, 0) } else { (sa[rank - 1], sb[rank - 1]) };
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut o = 0usize;
    while o < n {
        for k in 0..inner {
            f(o + k, oa + k * ia, ob + k * ib);
        }
        o += inner;
        // advance the outer multi-index
        let mut axis = rank.saturating_sub(1);
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            oa -= sa[axis] * idx[axis];
            ob -= sb[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::new(out, data)
}

/// Sum `grad` (shaped `out`) down onto `target`, the shape of a broadcast operand.
pub(crate) fn reduce_to<T: Element>(grad: &[T], out: &[usize], target: &[usize]) -> Vec<T> {
    if out == target {
        return grad.to_vec();
    }
    let st = broadcast_strides(target, out);
    let zeros = vec![0; out.len()];
    let mut acc = vec![T::zero(); target.iter().product()];
    for_each_pair(out, &st, &zeros, |o, it, _| acc[it] = acc[it] + grad[o]);
    acc
}

/// Mean over `axes`, keeping reduced axes with extent 1.
pub(crate) fn mean_axes<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<(Tensor<T>, usize)> {
    if x.numel() == 0 {
        return Err(Error::DegenerateInput("mean of an empty tensor".into()));
    }
    let mut out_shape = x.shape().to_vec();
    for &a in axes {
        if a >= x.rank() {
            return Err(Error::Contract(format!(
                "reduce axis {a} out of range for rank {}",
                x.rank()
            )));
        }
        out_shape[a] = 1;
    }
    let count = x.numel() / out_shape.iter().product::<usize>();
    let so = broadcast_strides(&out_shape, x.shape());
    let zeros = vec![0; x.rank()];
    let mut acc = vec![T::zero(); out_shape.iter().product()];
    let xd = x.data();
    for_each_pair(x.shape(), &so, &zeros, |i, o, _| acc[o] = acc[o] + xd[i]);
    let inv = T::one() / T::from_f64(count as f64);
    for v in &mut acc {
        *v = *v * inv;
    }
    Ok((Tensor::new(out_shape, acc)?, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rules() {
        assert_eq!(broadcast_shape("t", &[1, 3, 4, 4], &[1, 3, 1, 1]).unwrap(), vec![1, 3, 4, 4]);
        assert_eq!(broadcast_shape("t", &[4], &[2, 1]).unwrap(), vec![2, 4]);
        match broadcast_shape("t", &[1, 3, 4, 4], &[1, 2, 4, 4]) {
            Err(Error::DimensionMismatch { axis: 1, left: 3, right: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn per_channel_scaling() {
        let x = Tensor::<f64>::ones([1, 2, 2, 2]);
        let w = Tensor::new([1, 2, 1, 1], vec![2.0, 3.0]).unwrap();
        let y = binary("mul", &x, &w, |a, b| a * b).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        let g = reduce_to(y.data(), y.shape(), w.shape());
        assert_eq!(g, vec![8.0, 12.0]);
    }

    #[test]
    fn mean_over_axes() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let (m, count) = mean_axes(&x, &[0, 1, 2, 3]).unwrap();
        assert_eq!(count, 4);
        assert_eq!(m.data(), &[4.0]);
        let (id, c) = mean_axes(&x, &[]).unwrap();
        assert_eq!((id, c), (x.clone(), 1));
        let (rows, _) = mean_axes(&x, &[3]).unwrap();
        assert_eq!(rows.data(), &[2.0, 6.0]);
        assert!(mean_axes(&Tensor::<f64>::zeros([0, 2]), &[0]).is_err());
    }
}
