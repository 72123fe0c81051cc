//! Confusion matrix and class-wise intersection over union.

use serde::Serialize;

use crate::data::IGNORE_LABEL;
use crate::error::{Error, Result};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    pub ignore_label: u8,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            ignore_label: IGNORE_LABEL,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one label map and its prediction; ignored pixels are skipped.
    pub fn update(&mut self, truth: &[u8], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Validation(format!(
                "{} labels against {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let k = self.num_classes;
        for (&t, &p) in truth.iter().zip(pred) {
            if t == self.ignore_label {
                continue;
            }
            let t = t as usize;
            if t >= k || p >= k {
                return Err(Error::Validation(format!(
                    "class pair ({t}, {p}) outside 0..{k}"
                )));
            }
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Validation(
                "confusion matrices of different sizes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| {
            (0..self.num_classes).map(|k| self.get(k, k)).sum::<u64>() as f64 / total as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    /// `None` where the class is absent from both truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `IoU_k = cm[k][k] / (row_k + col_k − cm[k][k])`, averaged over classes
/// with a nonzero denominator.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = cm.num_classes();
    let ratios: Vec<Option<(u64, u64)>> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let row: u64 = (0..k).map(|j| cm.get(c, j)).sum();
            let col: u64 = (0..k).map(|i| cm.get(i, c)).sum();
            let union = row + col - tp;
            (union > 0).then_some((tp, union))
        })
        .collect();
    let per_class = ratios
        .iter()
        .map(|r| r.map(|(t, u)| t as f64 / u as f64))
        .collect();
    let present: Vec<(u64, u64)> = ratios.into_iter().flatten().collect();
    Ok(IouReport {
        per_class,
        mean: mean_of_ratios(&present),
    })
}

/// Mean of `t/u` ratios, summed as exact fractions so that a hand-counted
/// result such as 7/12 comes out as the nearest double; falls back to
/// floating point if the denominators outgrow u128.
fn mean_of_ratios(ratios: &[(u64, u64)]) -> f64 {
    let exact = ratios
        .iter()
        .try_fold((0u128, 1u128), |(num, den), &(t, u)| {
            let (t, u) = (t as u128, u as u128);
            let n = num.checked_mul(u)?.checked_add(t.checked_mul(den)?)?;
            let d = den.checked_mul(u)?;
            let g = gcd(n, d);
            Some((n / g, d / g))
        });
    match exact.and_then(|(n, d)| Some((n, d.checked_mul(ratios.len() as u128)?))) {
        Some((n, d)) => {
            let g = gcd(n, d);
            (n / g) as f64 / (d / g) as f64
        }
        None => {
            ratios
                .iter()
                .map(|&(t, u)| t as f64 / u as f64)
                .sum::<f64>()
                / ratios.len() as f64
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class, [Some(0.5), Some(2.0 / 3.0)]);
        assert_eq!(r.mean, 7.0 / 12.0);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 2, 2, 255], &[0, 2, 2, 1]).unwrap();
        let r = miou(&cm).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.per_class[1], None);
    }

    #[test]
    fn all_ignored_is_empty() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[255, 255], &[0, 1]).unwrap();
        assert!(matches!(miou(&cm), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn out_of_range_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.update(&[2], &[0]).is_err());
        assert!(cm.update(&[0], &[5]).is_err());
    }
}
