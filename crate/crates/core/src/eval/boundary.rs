use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{LabelMap, IGNORE_LABEL};

/// Semantic boundary pixels of a label map.
///
/// A pixel is on the boundary when one of its 4-neighbors carries a
/// different class. Pairs where either side is ignored are not edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BoundaryMap {
    pub fn from_labels(labels: &LabelMap) -> Self {
        let (h, w) = (labels.height(), labels.width());
        let mut data = vec![false; h * w];
        let edge = |a: u32, b: u32| a != b && a != IGNORE_LABEL && b != IGNORE_LABEL;
        for r in 0..h {
            for c in 0..w {
                let here = labels.get(r, c);
                if c + 1 < w && edge(here, labels.get(r, c + 1)) {
                    data[r * w + c] = true;
                    data[r * w + c + 1] = true;
                }
                if r + 1 < h && edge(here, labels.get(r + 1, c)) {
                    data[r * w + c] = true;
                    data[(r + 1) * w + c] = true;
                }
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(p, _)| (p / self.width, p % self.width))
    }

    /// Whether a boundary pixel lies within Euclidean distance `tolerance`
    /// of `(row, col)`.
    fn near(&self, row: usize, col: usize, tolerance: f64) -> bool {
        let reach = tolerance.floor() as usize;
        let tol2 = tolerance * tolerance;
        let rows = row.saturating_sub(reach)..(row + reach + 1).min(self.height);
        rows.into_iter().any(|r| {
            let cols = col.saturating_sub(reach)..(col + reach + 1).min(self.width);
            cols.into_iter().any(|c| {
                let (dr, dc) = (r as f64 - row as f64, c as f64 - col as f64);
                self.get(r, c) && dr * dr + dc * dc <= tol2
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Boundary precision and recall at a pixel tolerance.
///
/// Precision is the fraction of predicted boundary pixels within `tolerance`
/// of a ground-truth boundary pixel, recall the converse. An empty side
/// scores 1, and F is 0 when precision and recall are both 0.
pub fn boundary_pr(pred: &LabelMap, gt: &LabelMap, tolerance: f64) -> Result<BoundaryScore> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(Error::Config(format!(
            "boundary tolerance must be a finite value >= 0, got {tolerance}"
        )));
    }
    let (pb, gb) = (BoundaryMap::from_labels(pred), BoundaryMap::from_labels(gt));
    let hit_rate = |from: &BoundaryMap, to: &BoundaryMap| {
        let total = from.count();
        if total == 0 {
            return 1.0;
        }
        let hits = from.pixels().filter(|&(r, c)| to.near(r, c, tolerance)).count();
        hits as f64 / total as f64
    };
    let precision = hit_rate(&pb, &gb);
    let recall = hit_rate(&gb, &pb);
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BoundaryScore {
        precision,
        recall,
        f_measure,
    })
}

/// `tolerance,precision,recall,f_measure` rows, one per tolerance.
pub fn bpr_curve_csv(pred: &LabelMap, gt: &LabelMap, tolerances: &[f64]) -> Result<String> {
    let mut out = String::from("tolerance,precision,recall,f_measure\n");
    for &t in tolerances {
        let s = boundary_pr(pred, gt, t)?;
        let _ = writeln!(out, "{t},{},{},{}", s.precision, s.recall, s.f_measure);
    }
    Ok(out)
}
