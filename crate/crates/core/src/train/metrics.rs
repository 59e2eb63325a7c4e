use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Square count matrix: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Input(format!(
                "{} counts cannot form a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    /// Tallies `(truth, prediction)` pairs.
    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Input(format!(
                "class pair ({truth}, {predicted}) out of range for {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Input(
                "cannot merge confusion matrices of different sizes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Input("confusion matrix is empty".into()))
        } else {
            Ok(())
        }
    }
}

/// Fraction of samples on the diagonal.
pub fn categorical_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.ensure_nonempty()?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// F1 of one class from its true-positive, false-positive and
/// false-negative counts; zero when precision and recall are both zero.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of per-class F1 over every class of the matrix.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.ensure_nonempty()?;
    let total: f64 = (0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c);
            f1_from_counts(tp, cm.col_sum(c) - tp, cm.row_sum(c) - tp)
        })
        .sum();
    Ok(total / cm.classes() as f64)
}

/// Mean and sample (n - 1) standard deviation; the deviation is zero for
/// fewer than two values.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}
