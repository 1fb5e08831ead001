use std::str::FromStr;

use rand::seq::SliceRandom;

use super::head::{cross_entropy, LinearHead};
use super::optim::{sgd_step, Sgd};
use crate::correspond::{build_table, sample_frames, SamplingPolicy};
use crate::error::{Error, Result};
use crate::eval::pixel_correspondence_baseline;
use crate::grid::{FeatureStack, LabelMap, Sequence, SuperpixelStack};
use crate::pool::{DenseScoreMap, Std2pHead};
use crate::rng::SeedStream;

/// How views of a sequence are combined for the target frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViewMode {
    /// Superpixel pooling on the target frame alone.
    Single,
    /// Superpixel pooling over region correspondences in sampled frames.
    Multi,
    /// Features averaged along per-pixel flow tracks, no superpixels.
    Pixel,
}

impl ViewMode {
    pub fn name(self) -> &'static str {
        match self {
            ViewMode::Single => "single",
            ViewMode::Multi => "multi",
            ViewMode::Pixel => "pixel",
        }
    }
}

impl FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(ViewMode::Single),
            "multi" => Ok(ViewMode::Multi),
            "pixel" => Ok(ViewMode::Pixel),
            other => Err(Error::Config(format!(
                "view mode must be single, multi or pixel, got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleOptions {
    pub view: ViewMode,
    pub policy: SamplingPolicy,
    pub tau: f64,
}

impl Default for ExampleOptions {
    fn default() -> Self {
        Self {
            view: ViewMode::Multi,
            policy: SamplingPolicy::default(),
            tau: crate::correspond::DEFAULT_TAU,
        }
    }
}

/// One target frame ready for the network: the input stack, the region
/// maps guiding pooling (absent in pixel mode), and the target labels.
#[derive(Clone, Debug)]
pub struct Example {
    pub features: FeatureStack,
    pub superpixels: Option<SuperpixelStack>,
    pub labels: Option<LabelMap>,
    /// Video frames the example draws on, ascending.
    pub frames: Vec<usize>,
    pub target: usize,
}

/// Samples frames around `target` and precomputes whatever the view mode
/// needs, so training epochs only run the network.
pub fn prepare_example(seq: &Sequence, target: usize, opts: &ExampleOptions) -> Result<Example> {
    let labels = seq.labels.get(target).cloned();
    if target >= seq.frames() {
        return Err(Error::FrameOutOfRange {
            frame: target,
            frames: seq.frames(),
        });
    }
    let (features, superpixels, frames) = match opts.view {
        ViewMode::Single => (
            seq.features.select_frames(&[target])?,
            Some(seq.superpixels.select_frames(&[target])?),
            vec![target],
        ),
        ViewMode::Multi => {
            let sampled = sample_frames(seq.frames(), target, &opts.policy)?;
            let c = build_table(target, &sampled, &seq.superpixels, &seq.flows, opts.tau)?;
            (seq.features.select_frames(&c.frames)?, Some(c.canonical), c.frames)
        }
        ViewMode::Pixel => {
            let sampled = sample_frames(seq.frames(), target, &opts.policy)?;
            let fused = pixel_correspondence_baseline(&seq.features, &seq.flows, &sampled, target)?;
            let (c, h, w) = (fused.channels(), fused.height(), fused.width());
            (FeatureStack::new(1, c, h, w, fused.into_data())?, None, sampled)
        }
    };
    Ok(Example {
        features,
        superpixels,
        labels,
        frames,
        target,
    })
}

/// Class scores `(ncl, H, W)` for the example's target frame.
pub fn forward(head: &LinearHead, pool: Std2pHead, ex: &Example) -> Result<DenseScoreMap> {
    let per_frame = head.apply(&ex.features)?;
    match &ex.superpixels {
        Some(sp) => Ok(pool.forward(&per_frame, sp)?.0),
        None => dense_from_single_frame(per_frame),
    }
}

fn dense_from_single_frame(stack: FeatureStack) -> Result<DenseScoreMap> {
    let [n, c, h, w] = stack.shape();
    if n != 1 {
        return Err(Error::NonCanonical(format!(
            "{n} frames without superpixels to pool over"
        )));
    }
    DenseScoreMap::new(c, h, w, stack.into_data())
}

/// Mean cross-entropy on the target labels and its gradient with respect to
/// the head parameters.
pub fn loss_and_grad(head: &LinearHead, pool: Std2pHead, ex: &Example) -> Result<(f64, Vec<f64>)> {
    let labels = ex.labels.as_ref().ok_or_else(|| {
        Error::Config(format!("target frame {} has no labels to train on", ex.target))
    })?;
    let per_frame = head.apply(&ex.features)?;
    let (loss, grad_frames) = match &ex.superpixels {
        Some(sp) => {
            let (scores, cache) = pool.forward(&per_frame, sp)?;
            let (loss, g) = cross_entropy(&scores, labels)?;
            (loss, pool.backward(&g, sp, &cache)?)
        }
        None => cross_entropy(&dense_from_single_frame(per_frame)?, labels)?,
    };
    Ok((loss, head.backward(&ex.features, &grad_frames)?))
}

pub fn predict(head: &LinearHead, pool: Std2pHead, ex: &Example) -> Result<(DenseScoreMap, LabelMap)> {
    let scores = forward(head, pool, ex)?;
    let labels = scores.argmax_labels();
    Ok((scores, labels))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Index of the first epoch, so a resumed run draws the same example
    /// orders as an uninterrupted one.
    pub start_epoch: usize,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            start_epoch: 0,
            shuffle: true,
            seed: 0,
        }
    }
}

/// One SGD step per example (minibatch of one sequence). Returns the mean
/// pre-step loss of every epoch.
pub fn train(
    examples: &[Example],
    head: &mut LinearHead,
    pool: Std2pHead,
    opt: &mut Sgd,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if cfg.epochs > 0 && examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in cfg.start_epoch..cfg.start_epoch + cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut seeds.child("epoch", epoch as u64).rng("example-order"));
        }
        let mut total = 0.0;
        for &k in &order {
            let (loss, grad) = loss_and_grad(head, pool, &examples[k])?;
            if !loss.is_finite() {
                return Err(Error::Internal(format!("loss diverged at epoch {epoch}")));
            }
            sgd_step(head.params_mut(), &grad, opt)?;
            total += loss;
        }
        let mean = total / examples.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
    }
    Ok(trace)
}
