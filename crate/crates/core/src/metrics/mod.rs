//! Confusion-matrix based segmentation metrics and reports.

mod report;

use crate::error::{Error, Result};

pub use report::{parse_report_csv, Report, ReportRow};

/// Classes averaged by [`ConfusionMatrix::mean_f1_default`]: every class but clutter.
pub const DEFAULT_F1_CLASSES: [usize; 5] = [0, 1, 2, 3, 4];

/// Default boundary erosion radius in pixels.
pub const DEFAULT_ERODE_RADIUS: usize = 3;

/// `K x K` counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

/// Precision, recall and F1 of one class. `guarded` marks a 0/0 replaced by 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub guarded: bool,
}

fn ratio(num: f64, den: f64, guarded: &mut bool) -> f64 {
    if den == 0.0 {
        *guarded = true;
        0.0
    } else {
        num / den
    }
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Contract(format!("{k}x{k} matrix needs {} counts, got {}", k * k, counts.len())));
        }
        Ok(Self { k, counts })
    }

    /// Count `pred` against `gt`, skipping pixels where `ignore` is set.
    pub fn from_maps(pred: &[u8], gt: &[u8], k: usize, ignore: Option<&[bool]>) -> Result<Self> {
        let mut cm = Self::new(k);
        cm.add(pred, gt, ignore)?;
        Ok(cm)
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8], ignore: Option<&[bool]>) -> Result<()> {
        if pred.len() != gt.len() || ignore.is_some_and(|m| m.len() != gt.len()) {
            return Err(Error::Geometry(format!(
                "prediction ({}), ground truth ({}) and mask sizes differ",
                pred.len(),
                gt.len()
            )));
        }
        let mut bad = Vec::new();
        for i in 0..gt.len() {
            if ignore.is_some_and(|m| m[i]) {
                continue;
            }
            let (g, p) = (gt[i] as usize, pred[i] as usize);
            if g >= self.k || p >= self.k {
                if bad.len() < 8 {
                    bad.push(format!("pixel {i}: ground truth {g}, prediction {p} (classes 0..{})", self.k));
                }
                continue;
            }
            self.counts[g * self.k + p] += 1;
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Contract(format!("cannot add a {}-class matrix to a {}-class one", other.k, self.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Ground-truth pixels per class (row sums).
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::DegenerateInput("overall accuracy of an empty confusion matrix".into())),
            t => Ok(self.trace() as f64 / t as f64),
        }
    }

    pub fn class_prf(&self, c: usize) -> Prf {
        let tp = self.get(c, c) as f64;
        let col: u64 = (0..self.k).map(|g| self.get(g, c)).sum();
        let row = self.support(c);
        let fp = col as f64 - tp;
        let fn_ = row as f64 - tp;
        let mut guarded = false;
        let precision = ratio(tp, tp + fp, &mut guarded);
        let recall = ratio(tp, tp + fn_, &mut guarded);
        let f1 = ratio(2.0 * precision * recall, precision + recall, &mut guarded);
        Prf {
            precision,
            recall,
            f1,
            guarded,
        }
    }

    pub fn mean_f1(&self, classes: &[usize]) -> Result<f64> {
        if let Some(&c) = classes.iter().find(|&&c| c >= self.k) {
            return Err(Error::Contract(format!("class {c} outside 0..{}", self.k)));
        }
        mean_of(&classes.iter().map(|&c| self.class_prf(c).f1).collect::<Vec<_>>())
    }

    /// Mean F1 over [`DEFAULT_F1_CLASSES`], or over all classes when there are fewer.
    pub fn mean_f1_default(&self) -> Result<f64> {
        if self.k >= DEFAULT_F1_CLASSES.len() {
            self.mean_f1(&DEFAULT_F1_CLASSES)
        } else {
            self.mean_f1(&(0..self.k).collect::<Vec<_>>())
        }
    }
}

/// Arithmetic mean of per-class scores.
pub fn mean_of(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Contract("mean F1 over an empty class set".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Pixels within Chebyshev distance `radius` of a pixel with a different
/// label. Equivalently, pixels whose `(2r+1)^2` window is not uniform.
pub fn boundary_ignore_mask(gt: &[u8], width: usize, height: usize, radius: usize) -> Result<Vec<bool>> {
    if gt.len() != width * height {
        return Err(Error::Geometry(format!("label map of {} pixels is not {width}x{height}", gt.len())));
    }
    if radius == 0 || gt.is_empty() {
        return Ok(vec![false; gt.len()]);
    }
    // separable sliding min and max
    let pass = |src: &[u8], horizontal: bool, pick: fn(u8, u8) -> u8| -> Vec<u8> {
        let mut out = vec![0u8; src.len()];
        for y in 0..height {
            for x in 0..width {
                let (pos, len) = if horizontal { (x, width) } else { (y, height) };
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(len - 1);
                let mut v = src[y * width + x];
                for q in lo..=hi {
                    let i = if horizontal { y * width + q } else { q * width + x };
                    v = pick(v, src[i]);
                }
                out[y * width + x] = v;
            }
        }
        out
    };
    let mn = pass(&pass(gt, true, u8::min), false, u8::min);
    let mx = pass(&pass(gt, true, u8::max), false, u8::max);
    Ok(mn.iter().zip(&mx).map(|(a, b)| a != b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_and_prf_by_hand() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 2, 4]).unwrap();
        assert!((cm.overall_accuracy().unwrap() - 0.7).abs() < 1e-15);
        // class 0: TP 8, FP 2, FN 4
        let cm = ConfusionMatrix::from_counts(2, vec![8, 4, 2, 0]).unwrap();
        let p = cm.class_prf(0);
        assert!((p.precision - 0.8).abs() < 1e-12);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.f1 - 16.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_guarded_zero() {
        let cm = ConfusionMatrix::from_counts(2, vec![5, 0, 0, 0]).unwrap();
        let p = cm.class_prf(1);
        assert_eq!((p.precision, p.recall, p.f1, p.guarded), (0.0, 0.0, 0.0, true));
        assert!(!cm.class_prf(0).guarded);
    }

    #[test]
    fn empty_inputs() {
        assert!(ConfusionMatrix::new(3).overall_accuracy().is_err());
        assert!(ConfusionMatrix::new(3).mean_f1(&[]).is_err());
        let cm = ConfusionMatrix::from_maps(&[0, 1], &[1, 1], 2, Some(&[true, true])).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(ConfusionMatrix::from_maps(&[0, 2], &[0, 0], 2, None).is_err());
    }

    #[test]
    fn half_plane_band() {
        let (w, h) = (8, 5);
        let gt: Vec<u8> = (0..w * h).map(|i| u8::from(i % w >= 4)).collect();
        let m = boundary_ignore_mask(&gt, w, h, 1).unwrap();
        for i in 0..w * h {
            assert_eq!(m[i], matches!(i % w, 3 | 4), "pixel {i}");
        }
        assert!(boundary_ignore_mask(&gt, w, h, 0).unwrap().iter().all(|&b| !b));
    }
}
