use super::{
    region_to_pixel_bwd, region_to_pixel_fwd, spatial_pool_bwd, spatial_pool_fwd,
    temporal_pool_bwd, temporal_pool_fwd, DenseScoreMap, PoolMode, RegionFeatureMap,
    RegionFeatureStack,
};
use crate::error::{Error, Result};
use crate::grid::{FeatureStack, SuperpixelStack};

/// Spatial pooling, temporal pooling and region-to-pixel broadcast chained
/// into one layer that maps per-frame features to target-frame scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Std2pHead {
    pub spatial: PoolMode,
    pub temporal: PoolMode,
}

impl Default for Std2pHead {
    fn default() -> Self {
        Self {
            spatial: PoolMode::Avg,
            temporal: PoolMode::Avg,
        }
    }
}

/// Forward state kept for [`Std2pHead::backward`].
#[derive(Clone, Debug)]
pub struct HeadCache {
    spatial: RegionFeatureStack,
    temporal: RegionFeatureMap,
    target: usize,
}

impl HeadCache {
    pub fn spatial(&self) -> &RegionFeatureStack {
        &self.spatial
    }

    pub fn temporal(&self) -> &RegionFeatureMap {
        &self.temporal
    }

    /// Stack position of the frame the scores were produced for.
    pub fn target(&self) -> usize {
        self.target
    }
}

impl Std2pHead {
    pub fn new(spatial: PoolMode, temporal: PoolMode) -> Self {
        Self { spatial, temporal }
    }

    /// Scores `(C, H, W)` for the target frame of `superpixels`.
    ///
    /// With more than one frame the stack must be canonical, i.e. every
    /// frame already uses the target frame's region indices. A single frame
    /// is its own target.
    pub fn forward(
        &self,
        features: &FeatureStack,
        superpixels: &SuperpixelStack,
    ) -> Result<(DenseScoreMap, HeadCache)> {
        let target = target_of(superpixels)?;
        let spatial = spatial_pool_fwd(features, superpixels, self.spatial)?;
        let temporal = temporal_pool_fwd(&spatial, self.temporal)?;
        let scores = region_to_pixel_fwd(&temporal, superpixels, target)?;
        Ok((
            scores,
            HeadCache {
                spatial,
                temporal,
                target,
            },
        ))
    }

    /// Gradient with respect to `features`, `(N, C, H, W)`.
    pub fn backward(
        &self,
        grad_scores: &[f64],
        superpixels: &SuperpixelStack,
        cache: &HeadCache,
    ) -> Result<Vec<f64>> {
        let g = region_to_pixel_bwd(grad_scores, superpixels, cache.target)?;
        let g = temporal_pool_bwd(&g, &cache.spatial, &cache.temporal)?;
        spatial_pool_bwd(&g, superpixels, &cache.spatial)
    }
}

fn target_of(superpixels: &SuperpixelStack) -> Result<usize> {
    match superpixels.canonical_target() {
        Some(t) => Ok(t),
        None if superpixels.frames() == 1 => Ok(0),
        None => Err(Error::NonCanonical(format!(
            "{} frames given without a correspondence relabeling",
            superpixels.frames()
        ))),
    }
}
