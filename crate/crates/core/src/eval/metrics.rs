use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{LabelMap, IGNORE_LABEL};

/// `counts[g][p]`: pixels of ground-truth class `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
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

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel where both maps carry a class. Pixels
    /// ignored on either side are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::ShapeMismatch(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        pred.validate(self.classes)?;
        gt.validate(self.classes)?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p != IGNORE_LABEL && g != IGNORE_LABEL {
                self.counts[g as usize * self.classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iou: f64,
    pub fw_iou: f64,
}

impl Metrics {
    pub fn rows(&self) -> [(&'static str, f64); 4] {
        [
            ("pixel_acc", self.pixel_acc),
            ("mean_acc", self.mean_acc),
            ("mean_iou", self.mean_iou),
            ("fw_iou", self.fw_iou),
        ]
    }

    /// `metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in self.rows() {
            out.push_str(&format!("{name},{v}\n"));
        }
        out
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.rows() {
            writeln!(f, "{name:<10} {:>7.2}%", 100.0 * v)?;
        }
        Ok(())
    }
}

/// Pixel accuracy, mean class accuracy, mean IoU and frequency-weighted IoU.
///
/// Classes absent from both ground truth and prediction are left out of the
/// means; mean accuracy averages over classes present in the ground truth.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let n = cm.classes;
    let diag: Vec<u64> = (0..n).map(|i| cm.get(i, i)).collect();
    let gt_totals: Vec<u64> = (0..n).map(|i| (0..n).map(|j| cm.get(i, j)).sum()).collect();
    let pred_totals: Vec<u64> = (0..n).map(|i| (0..n).map(|j| cm.get(j, i)).sum()).collect();

    let pixel_acc = diag.iter().sum::<u64>() as f64 / total as f64;

    let accs: Vec<f64> = (0..n)
        .filter(|&i| gt_totals[i] > 0)
        .map(|i| diag[i] as f64 / gt_totals[i] as f64)
        .collect();
    let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;

    let iou = |i: usize| diag[i] as f64 / (gt_totals[i] + pred_totals[i] - diag[i]) as f64;
    let ious: Vec<f64> = (0..n)
        .filter(|&i| gt_totals[i] + pred_totals[i] > 0)
        .map(iou)
        .collect();
    let mean_iou = ious.iter().sum::<f64>() / ious.len() as f64;

    let fw_iou = (0..n)
        .filter(|&i| gt_totals[i] > 0)
        .map(|i| gt_totals[i] as f64 * iou(i))
        .sum::<f64>()
        / total as f64;

    Ok(Metrics {
        pixel_acc,
        mean_acc,
        mean_iou,
        fw_iou,
    })
}
