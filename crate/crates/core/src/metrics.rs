//! Confusion matrices, macro-averaged classification metrics and PSNR.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::InvalidConfig("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { classes, counts: rows.into_iter().flatten().collect() })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        assert!(truth < self.classes && predicted < self.classes, "class index out of range");
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// One-vs-rest `(tp, fp, fn)` for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let column: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (tp, column - tp, row - tp)
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u64>>::deserialize(d)?;
        ConfusionMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Per-class scores as fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics in percent, unrounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_) = cm.one_vs_rest(c);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassScores { precision, recall, f1: f1_score(precision, recall) }
        })
        .collect()
}

/// Accuracy plus macro precision, recall and F1. A class with a zero
/// denominator contributes 0 to the corresponding mean.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 || cm.classes() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let scores = class_scores(cm);
    let n = scores.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(Metrics {
        accuracy: ratio(cm.trace(), total) * 100.0,
        precision: mean(|s| s.precision) * 100.0,
        recall: mean(|s| s.recall) * 100.0,
        f1: mean(|s| s.f1) * 100.0,
    })
}

/// Round to two decimals for reporting.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// `10 log10(1 / mse)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "psnr of different-sized images");
    if a.is_empty() {
        return PSNR_CAP;
    }
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}
