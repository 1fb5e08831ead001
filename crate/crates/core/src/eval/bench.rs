use super::metrics::{metrics, ConfusionMatrix, Metrics};
use crate::correspond::{SamplingPolicy, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::learn::{predict, prepare_example, train, Example, ExampleOptions, LinearHead, Sgd, TrainConfig, ViewMode};
use crate::pool::{PoolMode, Std2pHead};
use crate::rng::SeedStream;
use crate::synth::{corrupt_flow, generate, BandedScene};

/// A controlled train/test comparison on freshly generated banded scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub scene: BandedScene,
    /// Gaussian noise added to both flow directions, in pixels.
    pub flow_noise: f64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub target: usize,
    pub policy: SamplingPolicy,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self {
            scene: BandedScene {
                noise_std: 3.0,
                ..BandedScene::default()
            },
            flow_noise: 0.0,
            train_scenes: 4,
            test_scenes: 4,
            target: 10,
            policy: SamplingPolicy {
                interval: 2,
                ..SamplingPolicy::default()
            },
            tau: DEFAULT_TAU,
            epochs: 100,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// One configuration under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub view: ViewMode,
    pub pool: Std2pHead,
}

impl Variant {
    pub fn new(view: ViewMode, spatial: PoolMode, temporal: PoolMode) -> Self {
        Self {
            view,
            pool: Std2pHead::new(spatial, temporal),
        }
    }

    /// e.g. `multi-avg-avg`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}",
            self.view.name(),
            self.pool.spatial.name(),
            self.pool.temporal.name()
        )
    }
}

impl Benchmark {
    fn examples(&self, seeds: &SeedStream, split: &str, count: usize, view: ViewMode) -> Result<Vec<Example>> {
        let opts = ExampleOptions {
            view,
            policy: self.policy.clone(),
            tau: self.tau,
        };
        (0..count)
            .map(|k| {
                let scene_seed = seeds.child(split, k as u64).seed();
                let bundle = generate(&self.scene.spec(scene_seed))?;
                let bundle = corrupt_flow(&bundle, self.flow_noise, scene_seed);
                let policy_seed = seeds.child("sampling", k as u64).seed();
                let opts = ExampleOptions {
                    policy: SamplingPolicy {
                        seed: policy_seed,
                        ..opts.policy.clone()
                    },
                    ..opts.clone()
                };
                prepare_example(&bundle.sequence, self.target, &opts)
            })
            .collect()
    }

    /// Trains and tests every variant on the scenes drawn from `seed`; all
    /// variants see the same scenes. Returns test metrics per variant.
    pub fn run(&self, seed: u64, variants: &[Variant]) -> Result<Vec<Metrics>> {
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::Config("benchmark needs train and test scenes".into()));
        }
        let seeds = SeedStream::new(seed);
        let mut cache: Vec<(ViewMode, Vec<Example>, Vec<Example>)> = Vec::new();
        let mut out = Vec::with_capacity(variants.len());
        for v in variants {
            if !cache.iter().any(|(view, _, _)| *view == v.view) {
                let train_set = self.examples(&seeds, "train", self.train_scenes, v.view)?;
                let test_set = self.examples(&seeds, "test", self.test_scenes, v.view)?;
                cache.push((v.view, train_set, test_set));
            }
            let (_, train_set, test_set) = cache.iter().find(|(view, _, _)| *view == v.view).unwrap();
            let mut head = LinearHead::new(self.scene.classes, self.scene.channels);
            let mut opt = Sgd::new(self.lr, self.momentum, self.weight_decay, head.params().len());
            let cfg = TrainConfig {
                epochs: self.epochs,
                start_epoch: 0,
                shuffle: true,
                seed: seeds.child("train-order", 0).seed(),
            };
            train(train_set, &mut head, v.pool, &mut opt, &cfg)?;
            let mut cm = ConfusionMatrix::new(self.scene.classes);
            for ex in test_set {
                let (_, pred) = predict(&head, v.pool, ex)?;
                let gt = ex.labels.as_ref().expect("generated scenes are labeled");
                cm.accumulate(&pred, gt)?;
            }
            out.push(metrics(&cm)?);
        }
        Ok(out)
    }
}
