//! Spatio-temporal data-driven pooling for video semantic segmentation.
//!
//! Per-frame features are pooled inside superpixels, fused across frames
//! along region correspondences found with optical flow, and broadcast back
//! onto the pixels of a target frame.

pub mod cli;
pub mod config;
pub mod correspond;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod learn;
pub mod pool;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    FeatureStack, FlowDirection, FlowField, FlowSet, LabelMap, Sequence, SuperpixelStack,
    IGNORE_LABEL, NO_MATCH,
};
pub use pool::{DenseScoreMap, PoolMode, RegionFeatureMap, RegionFeatureStack, Std2pHead};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-formats.md")]
    mod data_formats {}
    #[doc = include_str!("../../../book/src/correspondence.md")]
    mod correspondence {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
