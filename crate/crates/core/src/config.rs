//! Flat `key = value` configuration files.
//!
//! A pipeline config names its input either as a generated scene (keys with
//! a `scene.` prefix, as read by [`SceneSpec::parse`]) or as four data files
//! (`features`, `superpixels`, `flows`, `labels`). Relative paths resolve
//! against the config file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::correspond::{Direction, SamplingPolicy, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_BPR_TOLERANCE;
use crate::learn::ViewMode;
use crate::pool::PoolMode;
use crate::synth::SceneSpec;

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys are
/// errors. Pairs are returned in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Replaces or appends `key` in a pair list.
pub fn set_kv(pairs: &mut Vec<(String, String)>, key: &str, value: impl Into<String>) {
    let value = value.into();
    match pairs.iter_mut().find(|(k, _)| k == key) {
        Some(slot) => slot.1 = value,
        None => pairs.push((key.to_string(), value)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Scene(SceneSpec),
    Files {
        features: PathBuf,
        superpixels: PathBuf,
        flows: PathBuf,
        labels: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub shuffle: bool,
    /// Labeled target frames used as training examples; defaults to `target`.
    pub targets: Vec<usize>,
    /// Continue from an existing model file instead of starting at zero.
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub max_distances: Vec<usize>,
    pub directions: Vec<Direction>,
    pub trials: usize,
    pub noise_std: f64,
    pub flow_noise: f64,
    pub train_scenes: usize,
    pub test_scenes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<Input>,
    pub target: Option<usize>,
    pub tau: f64,
    pub policy: SamplingPolicy,
    pub spatial: PoolMode,
    pub temporal: PoolMode,
    pub view: ViewMode,
    pub train: TrainSettings,
    pub seed: u64,
    pub out: PathBuf,
    /// Model file; defaults to `model.tnsr` in the output directory.
    pub model: Option<PathBuf>,
    /// Prediction to evaluate; defaults to `prediction.imap` in the output
    /// directory.
    pub prediction: Option<PathBuf>,
    pub classes: Option<usize>,
    pub bpr_tolerance: f64,
    pub bpr_curve: Vec<f64>,
    pub oracle: bool,
    /// Reference frame whose labels are propagated for the oracle rows.
    pub oracle_reference: Option<usize>,
    pub sweep: SweepSettings,
}

const KEYS: &[&str] = &[
    "features",
    "superpixels",
    "flows",
    "labels",
    "target",
    "tau",
    "sampling.interval",
    "sampling.max_candidates",
    "sampling.sample_size",
    "sampling.direction",
    "sampling.max_distance",
    "spatial_mode",
    "temporal_mode",
    "view_mode",
    "train.epochs",
    "train.lr",
    "train.momentum",
    "train.weight_decay",
    "train.shuffle",
    "train.targets",
    "train.resume",
    "seed",
    "out",
    "model",
    "prediction",
    "classes",
    "bpr.tolerance",
    "bpr.curve",
    "oracle",
    "oracle.reference",
    "sweep.max_distances",
    "sweep.directions",
    "sweep.trials",
    "sweep.noise_std",
    "sweep.flow_noise",
    "sweep.train_scenes",
    "sweep.test_scenes",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_direction(key: &str, value: &str) -> Result<Direction> {
    match value {
        "both" => Ok(Direction::Both),
        "past" => Ok(Direction::PastOnly),
        _ => Err(Error::Config(format!("{key}: expected both or past, got '{value}'"))),
    }
}

pub fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Both => "both",
        Direction::PastOnly => "past",
    }
}

impl PipelineConfig {
    /// Reads a config file.
    pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_kv(&text)
    }

    /// Builds a config from key/value pairs; relative paths resolve against
    /// `base`.
    pub fn from_pairs(pairs: &[(String, String)], base: &Path) -> Result<Self> {
        let mut scene_pairs = Vec::new();
        let mut map = std::collections::BTreeMap::new();
        for (k, v) in pairs {
            if let Some(rest) = k.strip_prefix("scene.") {
                scene_pairs.push((rest.to_string(), v.clone()));
            } else if KEYS.contains(&k.as_str()) {
                map.insert(k.as_str(), v.as_str());
            } else {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        let path = |k: &str| map.get(k).map(|v| base.join(v));
        let seed: u64 = map.get("seed").map_or(Ok(0), |v| parse("seed", v))?;

        let files = ["features", "superpixels", "flows"].map(&path);
        let any_file = files.iter().any(Option::is_some) || map.contains_key("labels");
        let input = match (scene_pairs.is_empty(), any_file) {
            (false, true) => {
                return Err(Error::Config(
                    "give either scene.* keys or input files, not both".into(),
                ))
            }
            (false, false) => {
                if !scene_pairs.iter().any(|(k, _)| k == "seed") {
                    scene_pairs.push(("seed".into(), seed.to_string()));
                }
                Some(Input::Scene(SceneSpec::from_pairs(scene_pairs)?))
            }
            (true, true) => {
                let [features, superpixels, flows] = files;
                let need = |p: Option<PathBuf>, k: &str| {
                    p.ok_or_else(|| Error::Config(format!("input files need '{k}'")))
                };
                Some(Input::Files {
                    features: need(features, "features")?,
                    superpixels: need(superpixels, "superpixels")?,
                    flows: need(flows, "flows")?,
                    labels: path("labels"),
                })
            }
            (true, false) => None,
        };

        let get = |k: &str| map.get(k).copied();
        let target: Option<usize> = get("target").map(|v| parse("target", v)).transpose()?;
        let tau = get("tau").map_or(Ok(DEFAULT_TAU), |v| parse("tau", v))?;
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1), got {tau}")));
        }
        let d = SamplingPolicy::default();
        let policy = SamplingPolicy {
            interval: get("sampling.interval").map_or(Ok(d.interval), |v| parse("sampling.interval", v))?,
            max_candidates: get("sampling.max_candidates")
                .map_or(Ok(d.max_candidates), |v| parse("sampling.max_candidates", v))?,
            sample_size: get("sampling.sample_size")
                .map_or(Ok(d.sample_size), |v| parse("sampling.sample_size", v))?,
            direction: get("sampling.direction")
                .map_or(Ok(d.direction), |v| parse_direction("sampling.direction", v))?,
            max_distance: match get("sampling.max_distance") {
                None | Some("none") => None,
                Some(v) => Some(parse("sampling.max_distance", v)?),
            },
            seed,
        };
        policy.validate()?;

        let train = TrainSettings {
            epochs: get("train.epochs").map_or(Ok(100), |v| parse("train.epochs", v))?,
            lr: get("train.lr").map_or(Ok(1e-2), |v| parse("train.lr", v))?,
            momentum: get("train.momentum").map_or(Ok(0.9), |v| parse("train.momentum", v))?,
            weight_decay: get("train.weight_decay").map_or(Ok(5e-4), |v| parse("train.weight_decay", v))?,
            shuffle: get("train.shuffle").map_or(Ok(true), |v| parse_bool("train.shuffle", v))?,
            targets: match get("train.targets") {
                Some(v) => parse_list("train.targets", v)?,
                None => target.into_iter().collect(),
            },
            resume: get("train.resume").map_or(Ok(false), |v| parse_bool("train.resume", v))?,
        };

        let sweep = SweepSettings {
            max_distances: get("sweep.max_distances")
                .map_or(Ok(vec![2, 4, 6, 8, 10]), |v| parse_list("sweep.max_distances", v))?,
            directions: match get("sweep.directions") {
                Some(v) => v
                    .split(',')
                    .map(|s| parse_direction("sweep.directions", s.trim()))
                    .collect::<Result<_>>()?,
                None => vec![Direction::Both, Direction::PastOnly],
            },
            trials: get("sweep.trials").map_or(Ok(3), |v| parse("sweep.trials", v))?,
            noise_std: get("sweep.noise_std").map_or(Ok(3.0), |v| parse("sweep.noise_std", v))?,
            flow_noise: get("sweep.flow_noise").map_or(Ok(0.0), |v| parse("sweep.flow_noise", v))?,
            train_scenes: get("sweep.train_scenes").map_or(Ok(4), |v| parse("sweep.train_scenes", v))?,
            test_scenes: get("sweep.test_scenes").map_or(Ok(4), |v| parse("sweep.test_scenes", v))?,
        };

        Ok(Self {
            input,
            target,
            tau,
            policy,
            spatial: get("spatial_mode").map_or(Ok(PoolMode::Avg), str::parse)?,
            temporal: get("temporal_mode").map_or(Ok(PoolMode::Avg), str::parse)?,
            view: get("view_mode").map_or(Ok(ViewMode::Multi), str::parse)?,
            train,
            seed,
            out: path("out").unwrap_or_else(|| base.join("out")),
            model: path("model"),
            prediction: path("prediction"),
            classes: get("classes").map(|v| parse("classes", v)).transpose()?,
            bpr_tolerance: get("bpr.tolerance").map_or(Ok(DEFAULT_BPR_TOLERANCE), |v| parse("bpr.tolerance", v))?,
            bpr_curve: get("bpr.curve").map_or(Ok(vec![0.0, 1.0, 2.0, 3.0, 4.0]), |v| parse_list("bpr.curve", v))?,
            oracle: get("oracle").map_or(Ok(false), |v| parse_bool("oracle", v))?,
            oracle_reference: get("oracle.reference").map(|v| parse("oracle.reference", v)).transpose()?,
            sweep,
        })
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.tnsr"))
    }

    pub fn prediction_path(&self) -> PathBuf {
        self.prediction
            .clone()
            .unwrap_or_else(|| self.out.join("prediction.imap"))
    }
}
