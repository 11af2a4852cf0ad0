use super::Dihedral;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything that maps an input batch to per-pixel class probabilities `[N, K, H, W]`.
pub trait Predictor {
    fn predict_probs(&self, optical: &Tensor<f32>, aux: Option<&Tensor<f32>>) -> Result<Tensor<f32>>;
}

/// Per-pixel argmax over the class axis, lowest class index on ties.
pub fn argmax_classes(probs: &Tensor<f32>) -> Result<Vec<u8>> {
    let (n, k, h, w) = probs.dims4()?;
    if k > 256 {
        return Err(Error::Contract(format!("{k} classes do not fit in u8")));
    }
    let p = h * w;
    let d = probs.data();
    let mut out = Vec::with_capacity(n * p);
    for b in 0..n {
        for i in 0..p {
            let base = b * k * p + i;
            let mut best = 0;
            for c in 1..k {
                if d[base + c * p] > d[base + best * p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// Sum of inverse-transformed probability maps over `transforms`, and its argmax.
/// The set must contain the identity and no element twice.
pub fn tta_predict<P: Predictor + ?Sized>(
    model: &P,
    optical: &Tensor<f32>,
    aux: Option<&Tensor<f32>>,
    transforms: &[Dihedral],
) -> Result<(Tensor<f32>, Vec<u8>)> {
    if !transforms.contains(&Dihedral::IDENTITY) {
        return Err(Error::Contract("test-time transforms must include the identity".into()));
    }
    for (i, t) in transforms.iter().enumerate() {
        if transforms[..i].contains(t) {
            return Err(Error::Contract(format!("transform {t:?} listed twice")));
        }
    }
    let mut sum: Option<Tensor<f32>> = None;
    for &t in transforms {
        let o = t.apply_tensor(optical)?;
        let a = aux.map(|a| t.apply_tensor(a)).transpose()?;
        let p = model.predict_probs(&o, a.as_ref())?;
        let p = t.inverse().apply_tensor(&p)?;
        sum = Some(match sum {
            None => p,
            Some(mut s) => {
                if s.shape() != p.shape() {
                    return Err(Error::Contract(format!(
                        "prediction shape {:?} differs from {:?}",
                        p.shape(),
                        s.shape()
                    )));
                }
                s.data_mut().iter_mut().zip(p.data()).for_each(|(a, b)| *a += b);
                s
            }
        });
    }
    let sum = sum.expect("identity present");
    let classes = argmax_classes(&sum)?;
    Ok((sum, classes))
}
