//! Central finite differences, the reference against which analytic gradients are checked.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Estimate `d f / d x` elementwise as `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite difference step must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        out.push(T::from_f64(central_difference(&mut f, &mut probe, i, eps)?));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Central difference for a single coordinate. `probe` is restored before returning.
pub fn central_difference<T, F>(f: &mut F, probe: &mut Tensor<T>, i: usize, eps: f64) -> Result<f64>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let orig = probe.data()[i];
    probe.data_mut()[i] = T::from_f64(orig.as_f64() + eps);
    let plus = scalar_of(f(probe)?)?;
    probe.data_mut()[i] = T::from_f64(orig.as_f64() - eps);
    let minus = scalar_of(f(probe)?)?;
    probe.data_mut()[i] = orig;
    Ok((plus - minus) / (2.0 * eps))
}

fn scalar_of<T: Element>(t: Tensor<T>) -> Result<f64> {
    if !t.is_scalar() {
        return Err(Error::Contract(format!(
            "finite differences need a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item().as_f64())
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero gradients from
/// turning rounding noise into huge ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error<T: Element>(a: &Tensor<T>, b: &Tensor<T>, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| relative_error(x.as_f64(), y.as_f64(), floor))
        .fold(0.0, f64::max)
}
