use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Settings for [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates probed; all of them when the input is smaller.
    pub samples: usize,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is zero are compared on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-5,
            samples: 200,
            floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central differences of the scalar function
/// `f` at `x`, probing a random subset of coordinates.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    cfg: &GradCheck,
) -> Result<GradCheckReport> {
    if x.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let coords: Vec<usize> = if x.len() <= cfg.samples {
        (0..x.len()).collect()
    } else {
        let mut rng = SeedStream::new(cfg.seed).rng("grad-check");
        let mut picked = index::sample(&mut rng, x.len(), cfg.samples).into_vec();
        picked.sort_unstable();
        picked
    };
    let mut point = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: coords.first().copied().unwrap_or(0),
        checked: coords.len(),
    };
    for &k in &coords {
        let orig = point[k];
        point[k] = orig + cfg.h;
        let up = f(&point);
        point[k] = orig - cfg.h;
        let down = f(&point);
        point[k] = orig;
        let numeric = (up - down) / (2.0 * cfg.h);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = k;
        }
    }
    Ok(report)
}
