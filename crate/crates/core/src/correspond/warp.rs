use crate::error::{Error, Result};
use crate::grid::FlowSet;

/// Total per-pixel displacement from one frame to another; `None` marks a
/// track that left the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Displacement {
    height: usize,
    width: usize,
    data: Vec<Option<(f64, f64)>>,
}

impl Displacement {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Some((0.0, 0.0)); height * width],
        }
    }

    /// The same displacement at every pixel, with no lost tracks.
    pub fn uniform(height: usize, width: usize, d: (f64, f64)) -> Self {
        Self {
            height,
            width,
            data: vec![Some(d); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Option<(f64, f64)>>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "displacement holds {} entries, {height}x{width} needs {}",
                data.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<(f64, f64)> {
        self.data[row * self.width + col]
    }

    /// Destination pixel of the track starting at flat index `pixel`.
    #[inline]
    pub fn target_of(&self, pixel: usize) -> Option<usize> {
        let (dx, dy) = self.data[pixel]?;
        let x = (pixel / self.width) as f64 + dx;
        let y = (pixel % self.width) as f64 + dy;
        snap(x, y, self.height, self.width).map(|(r, c)| r * self.width + c)
    }
}

/// Nearest grid cell, rounding halves away from zero; `None` off the grid.
#[inline]
fn snap(x: f64, y: f64, height: usize, width: usize) -> Option<(usize, usize)> {
    let (r, c) = (x.round(), y.round());
    if r < 0.0 || c < 0.0 || r >= height as f64 || c >= width as f64 {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

/// Chains consecutive flow fields from frame `from` to frame `to`.
///
/// Each pixel is advected step by step: at every step the tracked point moves
/// by the flow sampled at its nearest-integer position. Forward fields are
/// used when `from < to`, backward fields otherwise. A point whose rounded
/// position leaves the grid is lost.
pub fn compose_flow(flows: &FlowSet, from: usize, to: usize) -> Result<Displacement> {
    let steps: Vec<_> = if from < to {
        (from..to)
            .map(|k| {
                flows.forward.get(k).ok_or(Error::MissingFlowField {
                    direction: "forward",
                    from: k,
                    to: k + 1,
                })
            })
            .collect::<Result<_>>()?
    } else {
        (to..from)
            .rev()
            .map(|k| {
                flows.backward.get(k).ok_or(Error::MissingFlowField {
                    direction: "backward",
                    from: k + 1,
                    to: k,
                })
            })
            .collect::<Result<_>>()?
    };
    let Some(first) = steps.first() else {
        // from == to: no motion
        let (h, w) = flows
            .forward
            .first()
            .map_or((0, 0), |f| (f.height(), f.width()));
        return Ok(Displacement::zeros(h, w));
    };
    let (h, w) = (first.height(), first.width());
    let data = (0..h * w)
        .map(|p| {
            let (x0, y0) = ((p / w) as f64, (p % w) as f64);
            let (mut x, mut y) = (x0, y0);
            for field in &steps {
                let (r, c) = snap(x, y, h, w)?;
                let (dx, dy) = field.get(r, c);
                x += dx;
                y += dy;
            }
            snap(x, y, h, w)?;
            Some((x - x0, y - y0))
        })
        .collect();
    Ok(Displacement {
        height: h,
        width: w,
        data,
    })
}

/// Moves every pixel of a region by its displacement and snaps it to the
/// nearest grid cell. Lost pixels are dropped; the result is sorted and
/// deduplicated.
pub fn warp_region(pixels: &[u32], displacement: &Displacement) -> Vec<u32> {
    let mut out: Vec<u32> = pixels
        .iter()
        .filter_map(|&p| displacement.target_of(p as usize).map(|t| t as u32))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// `|A ∩ B| / |A ∪ B|` for sorted, deduplicated pixel sets; 0 when both are
/// empty.
pub fn iou(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
