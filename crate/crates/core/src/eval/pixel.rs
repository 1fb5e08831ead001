use crate::correspond::compose_flow;
use crate::error::{Error, Result};
use crate::grid::{FeatureStack, FlowSet};
use crate::pool::DenseScoreMap;

/// Averages features along per-pixel flow tracks starting in the target
/// frame, without superpixels.
///
/// Each target pixel is advected to every sampled frame; frames where its
/// track left the grid are dropped from its average. The target frame
/// always contributes.
pub fn pixel_correspondence_baseline(
    features: &FeatureStack,
    flows: &FlowSet,
    sampled: &[usize],
    target: usize,
) -> Result<DenseScoreMap> {
    let [n, ch, h, w] = features.shape();
    if let Some(&f) = sampled.iter().chain([&target]).find(|&&f| f >= n) {
        return Err(Error::FrameOutOfRange { frame: f, frames: n });
    }
    let mut frames: Vec<usize> = sampled.iter().copied().chain([target]).collect();
    frames.sort_unstable();
    frames.dedup();

    let plane = h * w;
    let mut sum = vec![0.0; ch * plane];
    let mut count = vec![0u32; plane];
    for &u in &frames {
        let src = features.frame(u);
        if u == target {
            for c in 0..ch {
                for q in 0..plane {
                    sum[c * plane + q] += src[c * plane + q];
                }
            }
            count.iter_mut().for_each(|k| *k += 1);
            continue;
        }
        let disp = compose_flow(flows, target, u)?;
        if disp.height() != h || disp.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "flow fields are {}x{}, features are {h}x{w}",
                disp.height(),
                disp.width()
            )));
        }
        for q in 0..plane {
            if let Some(dst) = disp.target_of(q) {
                for c in 0..ch {
                    sum[c * plane + q] += src[c * plane + dst];
                }
                count[q] += 1;
            }
        }
    }
    for c in 0..ch {
        for q in 0..plane {
            sum[c * plane + q] /= count[q] as f64;
        }
    }
    DenseScoreMap::new(ch, h, w, sum)
}
