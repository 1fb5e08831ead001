//! Synthetic sequences with exact superpixels, flow, labels and region
//! correspondences.
//!
//! Objects are axis-aligned rectangles translating with integer velocity, so
//! warping by the generated flow is exact. Later objects are painted over
//! earlier ones. Each object is split into `splits` vertical strips, every
//! strip being its own superpixel; the background is one more superpixel.
//! Region indices are shuffled per frame with a fixed permutation so that a
//! matcher cannot rely on indices agreeing across frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::parse_kv;
use crate::error::{Error, Result};
use crate::grid::{
    FeatureStack, FlowDirection, FlowField, FlowSet, LabelMap, Sequence, SuperpixelStack,
};
use crate::rng::SeedStream;

/// Permutation seed for per-frame region indices. Independent of the scene
/// seed so that superpixels do not change with the feature noise.
const PERMUTATION_SEED: u64 = 0x5_eed0_f7e6_10a5;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub row: i64,
    pub col: i64,
    pub height: usize,
    pub width: usize,
    /// Per-frame displacement `(d_row, d_col)`.
    pub velocity: (i64, i64),
    pub class: u32,
    pub splits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub background_class: u32,
    pub objects: Vec<ObjectSpec>,
    /// Per-class mean feature vector; `classes` rows of `channels` values.
    pub class_means: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Unit-vector class means: class `k` has 1.0 in channel `k mod C`.
    pub fn default_means(classes: usize, channels: usize) -> Vec<Vec<f64>> {
        (0..classes)
            .map(|k| (0..channels).map(|c| f64::from(u8::from(c == k % channels))).collect())
            .collect()
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("frames, height, width and channels must be positive".into());
        }
        if self.classes == 0 || self.background_class as usize >= self.classes {
            return bad(format!(
                "background class {} must be below classes = {}",
                self.background_class, self.classes
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if self.class_means.len() != self.classes
            || self.class_means.iter().any(|m| m.len() != self.channels)
        {
            return bad(format!(
                "class means must be {} vectors of length {}",
                self.classes, self.channels
            ));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("class means must be finite".into());
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.height == 0 || o.width == 0 {
                return bad(format!("object {k} has an empty extent"));
            }
            if o.splits == 0 || o.splits > o.width {
                return bad(format!(
                    "object {k}: splits must be in [1, width = {}], got {}",
                    o.width, o.splits
                ));
            }
            if o.class as usize >= self.classes {
                return bad(format!("object {k}: class {} out of range", o.class));
            }
            for i in 0..self.frames {
                let (r, c) = o.origin(i);
                if r < 0
                    || c < 0
                    || r + o.height as i64 > self.height as i64
                    || c + o.width as i64 > self.width as i64
                {
                    return Err(Error::ObjectLeavesGrid { object: k, frame: i });
                }
            }
        }
        Ok(())
    }

    /// Number of superpixel slots: background plus every strip.
    pub fn num_regions(&self) -> usize {
        1 + self.objects.iter().map(|o| o.splits).sum::<usize>()
    }

    /// Reads the flat `key = value` form. Recognized keys: `frames`,
    /// `height`, `width`, `channels`, `classes`, `background_class`,
    /// `noise_std`, `seed`, `object.<k> = row,col,height,width,vrow,vcol,class,splits`
    /// and `mean.<class> = v0,v1,...`. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_kv(text)?)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut scalars: BTreeMap<String, String> = BTreeMap::new();
        let mut objects: BTreeMap<usize, ObjectSpec> = BTreeMap::new();
        let mut means: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (key, value) in pairs {
            if let Some(k) = key.strip_prefix("object.") {
                let idx = parse_num::<usize>(&key, k)?;
                objects.insert(idx, parse_object(&key, &value)?);
            } else if let Some(k) = key.strip_prefix("mean.") {
                let idx = parse_num::<usize>(&key, k)?;
                let v = value
                    .split(',')
                    .map(|s| parse_num::<f64>(&key, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                means.insert(idx, v);
            } else if matches!(
                key.as_str(),
                "frames" | "height" | "width" | "channels" | "classes" | "background_class"
                    | "noise_std" | "seed"
            ) {
                scalars.insert(key, value);
            } else {
                return Err(Error::InvalidSpec(format!("unknown key '{key}'")));
            }
        }
        let get = |k: &str| -> Result<&String> {
            scalars
                .get(k)
                .ok_or_else(|| Error::InvalidSpec(format!("missing key '{k}'")))
        };
        let frames = parse_num("frames", get("frames")?)?;
        let height = parse_num("height", get("height")?)?;
        let width = parse_num("width", get("width")?)?;
        let channels = match scalars.get("channels") {
            Some(v) => parse_num("channels", v)?,
            None => 3,
        };
        let classes = match scalars.get("classes") {
            Some(v) => parse_num("classes", v)?,
            None => {
                1 + objects.values().map(|o| o.class as usize).max().unwrap_or(0)
            }
        };
        let background_class = match scalars.get("background_class") {
            Some(v) => parse_num("background_class", v)?,
            None => 0,
        };
        let noise_std = match scalars.get("noise_std") {
            Some(v) => parse_num("noise_std", v)?,
            None => 0.0,
        };
        let seed = match scalars.get("seed") {
            Some(v) => parse_num("seed", v)?,
            None => 0,
        };
        if objects.keys().copied().ne(0..objects.len()) {
            return Err(Error::InvalidSpec("object keys must be object.0, object.1, ...".into()));
        }
        let mut class_means = Self::default_means(classes, channels);
        for (k, m) in means {
            if k >= classes {
                return Err(Error::InvalidSpec(format!("mean.{k}: class out of range")));
            }
            class_means[k] = m;
        }
        let spec = SceneSpec {
            frames,
            height,
            width,
            channels,
            classes,
            background_class,
            objects: objects.into_values().collect(),
            class_means,
            noise_std,
            seed,
        };
        spec.check()?;
        Ok(spec)
    }

    /// The flat `key = value` form read by [`SceneSpec::parse`], with an
    /// optional key prefix.
    pub fn to_config(&self, prefix: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{prefix}frames = {}", self.frames);
        let _ = writeln!(out, "{prefix}height = {}", self.height);
        let _ = writeln!(out, "{prefix}width = {}", self.width);
        let _ = writeln!(out, "{prefix}channels = {}", self.channels);
        let _ = writeln!(out, "{prefix}classes = {}", self.classes);
        let _ = writeln!(out, "{prefix}background_class = {}", self.background_class);
        let _ = writeln!(out, "{prefix}noise_std = {}", self.noise_std);
        let _ = writeln!(out, "{prefix}seed = {}", self.seed);
        for (k, o) in self.objects.iter().enumerate() {
            let _ = writeln!(
                out,
                "{prefix}object.{k} = {},{},{},{},{},{},{},{}",
                o.row, o.col, o.height, o.width, o.velocity.0, o.velocity.1, o.class, o.splits
            );
        }
        for (k, m) in self.class_means.iter().enumerate() {
            let values: Vec<String> = m.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{prefix}mean.{k} = {}", values.join(","));
        }
        out
    }
}

impl ObjectSpec {
    fn origin(&self, frame: usize) -> (i64, i64) {
        let t = frame as i64;
        (self.row + t * self.velocity.0, self.col + t * self.velocity.1)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidSpec(format!("{key}: cannot parse '{value}'")))
}

fn parse_object(key: &str, value: &str) -> Result<ObjectSpec> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 8 {
        return Err(Error::InvalidSpec(format!(
            "{key}: expected row,col,height,width,vrow,vcol,class,splits"
        )));
    }
    Ok(ObjectSpec {
        row: parse_num(key, parts[0])?,
        col: parse_num(key, parts[1])?,
        height: parse_num(key, parts[2])?,
        width: parse_num(key, parts[3])?,
        velocity: (parse_num(key, parts[4])?, parse_num(key, parts[5])?),
        class: parse_num(key, parts[6])?,
        splits: parse_num(key, parts[7])?,
    })
}

/// Generator ground truth: for every frame, the local region index of each
/// scene region (background first, then object strips), or `None` when the
/// region is not visible in that frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Truth {
    pub local_index: Vec<Vec<Option<u32>>>,
}

/// One row of the truth table: `src_region` in `frame` is `target_region`
/// in the target frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TruthMatch {
    pub frame: usize,
    pub src_region: u32,
    pub target_region: u32,
}

impl Truth {
    /// All correspondences of scene regions visible both in `frame` and in
    /// `target`, for every `frame != target`, sorted.
    pub fn matches(&self, target: usize) -> Vec<TruthMatch> {
        let mut out = Vec::new();
        for (frame, ids) in self.local_index.iter().enumerate() {
            if frame == target {
                continue;
            }
            for (k, id) in ids.iter().enumerate() {
                if let (Some(src), Some(tgt)) = (*id, self.local_index[target][k]) {
                    out.push(TruthMatch {
                        frame,
                        src_region: src,
                        target_region: tgt,
                    });
                }
            }
        }
        out.sort();
        out
    }

    /// The truth table as CSV `frame,src_region,target_region`.
    pub fn to_csv(&self, target: usize) -> String {
        let mut out = String::from("frame,src_region,target_region\n");
        for m in self.matches(target) {
            let _ = writeln!(out, "{},{},{}", m.frame, m.src_region, m.target_region);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub sequence: Sequence,
    pub truth: Truth,
}

/// Renders a scene.
pub fn generate(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.check()?;
    let (n, h, w) = (spec.frames, spec.height, spec.width);
    let plane = h * w;
    let regions = spec.num_regions();
    let offsets: Vec<usize> = spec
        .objects
        .iter()
        .scan(1usize, |acc, o| {
            let start = *acc;
            *acc += o.splits;
            Some(start)
        })
        .collect();

    // owner[i][p]: topmost object covering pixel p in frame i
    let mut owner = vec![vec![None::<usize>; plane]; n];
    // scene region per pixel before per-frame permutation
    let mut scene_region = vec![vec![0usize; plane]; n];
    for (i, (own, reg)) in owner.iter_mut().zip(&mut scene_region).enumerate() {
        for (k, o) in spec.objects.iter().enumerate() {
            let (r0, c0) = o.origin(i);
            for dr in 0..o.height {
                for dc in 0..o.width {
                    let p = (r0 as usize + dr) * w + c0 as usize + dc;
                    own[p] = Some(k);
                    reg[p] = offsets[k] + dc * o.splits / o.width;
                }
            }
        }
    }

    let mut labels = Vec::with_capacity(n * plane);
    let mut truth = vec![vec![None; regions]; n];
    let perm_stream = SeedStream::new(PERMUTATION_SEED);
    for i in 0..n {
        let mut perm: Vec<u32> = (0..regions as u32).collect();
        perm.shuffle(&mut perm_stream.child("region-permutation", i as u64).rng("shuffle"));
        for &r in &scene_region[i] {
            labels.push(perm[r]);
            truth[i][r] = Some(perm[r]);
        }
    }
    let superpixels = SuperpixelStack::new(n, h, w, labels, regions)?;

    let class_at = |i: usize, p: usize| -> u32 {
        owner[i][p].map_or(spec.background_class, |k| spec.objects[k].class)
    };
    let mut rng = SeedStream::new(spec.seed).rng("features");
    let mut data = Vec::with_capacity(n * spec.channels * plane);
    for i in 0..n {
        for c in 0..spec.channels {
            for p in 0..plane {
                let mean = spec.class_means[class_at(i, p) as usize][c];
                let noise: f64 = if spec.noise_std > 0.0 {
                    spec.noise_std * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push(mean + noise);
            }
        }
    }
    let features = FeatureStack::new(n, spec.channels, h, w, data)?;

    let flow_for = |i: usize, sign: i64, direction| -> FlowField {
        let data = owner[i]
            .iter()
            .flat_map(|o| match o {
                Some(k) => {
                    let v = spec.objects[*k].velocity;
                    [(sign * v.0) as f64, (sign * v.1) as f64]
                }
                None => [0.0, 0.0],
            })
            .collect();
        FlowField::new(h, w, direction, data).expect("generated flow has the grid shape")
    };
    let flows = FlowSet {
        forward: (0..n - 1).map(|k| flow_for(k, 1, FlowDirection::Forward)).collect(),
        backward: (0..n - 1).map(|k| flow_for(k + 1, -1, FlowDirection::Backward)).collect(),
    };

    let label_maps = (0..n)
        .map(|i| LabelMap::new(h, w, (0..plane).map(|p| class_at(i, p)).collect()))
        .collect::<Result<Vec<_>>>()?;

    Ok(SceneBundle {
        spec: spec.clone(),
        sequence: Sequence::new(features, superpixels, flows, label_maps)?,
        truth: Truth {
            local_index: truth,
        },
    })
}

/// Adds iid Gaussian noise of standard deviation `noise_std` to every flow
/// component in both directions.
pub fn corrupt_flow(bundle: &SceneBundle, noise_std: f64, seed: u64) -> SceneBundle {
    let mut out = bundle.clone();
    if noise_std <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, noise_std).expect("noise_std is finite and positive");
    let mut rng = SeedStream::new(seed).rng("flow-noise");
    let flows = &mut out.sequence.flows;
    for field in flows.forward.iter_mut().chain(flows.backward.iter_mut()) {
        for v in field.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    out
}

/// Parameters of the banded benchmark scene: one object per horizontal band,
/// moving horizontally, so objects never overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedScene {
    pub frames: usize,
    pub bands: usize,
    pub band_height: usize,
    pub width: usize,
    pub object_width: usize,
    pub splits: usize,
    pub max_speed: i64,
    pub classes: usize,
    pub channels: usize,
    pub noise_std: f64,
}

impl Default for BandedScene {
    fn default() -> Self {
        Self {
            frames: 21,
            bands: 4,
            band_height: 8,
            width: 40,
            object_width: 8,
            splits: 2,
            max_speed: 1,
            classes: 4,
            channels: 4,
            noise_std: 0.0,
        }
    }
}

impl BandedScene {
    /// A random instance; object placement, speed and class come from `seed`.
    pub fn spec(&self, seed: u64) -> SceneSpec {
        let mut rng = SeedStream::new(seed).rng("banded-layout");
        let travel = |v: i64| v * (self.frames as i64 - 1);
        let objects = (0..self.bands)
            .map(|b| {
                let speed = rng.random_range(-self.max_speed..=self.max_speed);
                let lo = (-travel(speed)).max(0);
                let hi = self.width as i64 - self.object_width as i64 - travel(speed).max(0);
                ObjectSpec {
                    row: (b * self.band_height + 1) as i64,
                    col: rng.random_range(lo..=hi.max(lo)),
                    height: self.band_height - 2,
                    width: self.object_width,
                    velocity: (0, speed),
                    class: rng.random_range(1..self.classes as u32),
                    splits: self.splits,
                }
            })
            .collect();
        SceneSpec {
            frames: self.frames,
            height: self.bands * self.band_height,
            width: self.width,
            channels: self.channels,
            classes: self.classes,
            background_class: 0,
            objects,
            class_means: SceneSpec::default_means(self.classes, self.channels),
            noise_std: self.noise_std,
            seed,
        }
    }
}
