//! Dense grid types shared by every stage of the pipeline.
//!
//! Coordinates are `(row, col)` and every buffer is row-major. Feature stacks
//! are frame-major: `data[((i * C + c) * H + x) * W + y]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Region index reserved for pixels of a canonical stack that matched no
/// target region. Such pixels belong to no pooling region.
pub const NO_MATCH: u32 = u32::MAX;

/// Label value for unannotated pixels.
pub const IGNORE_LABEL: u32 = u32::MAX;

/// Per-frame, per-channel dense features `(N, C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature dimensions must be positive, got ({frames}, {channels}, {height}, {width})"
            )));
        }
        let expected = frames * channels * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer holds {} values, shape needs {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let plane = height * width;
            return Err(Error::NonFinite {
                frame: pos / (channels * plane),
                channel: (pos / plane) % channels,
                row: (pos % plane) / width,
                col: pos % width,
                value: data[pos],
            });
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * channels * height * width);
        for i in 0..frames {
            for c in 0..channels {
                for x in 0..height {
                    for y in 0..width {
                        data.push(f(i, c, x, y));
                    }
                }
            }
        }
        Self::new(frames, channels, height, width, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, frame: usize, channel: usize, row: usize, col: usize) -> usize {
        ((frame * self.channels + channel) * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, frame: usize, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(frame, channel, row, col)]
    }

    /// The `(C, H, W)` block of one frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let len = self.channels * self.height * self.width;
        &self.data[frame * len..(frame + 1) * len]
    }

    /// A new stack holding the listed frames, in list order.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * self.frame(0).len());
        for &i in frames {
            if i >= self.frames {
                return Err(Error::FrameOutOfRange {
                    frame: i,
                    frames: self.frames,
                });
            }
            data.extend_from_slice(self.frame(i));
        }
        Self::new(frames.len(), self.channels, self.height, self.width, data)
    }
}

/// Per-frame region index maps `(N, H, W)` with eagerly derived pixel sets.
///
/// A raw stack holds per-frame-local indices in `[0, P)`. A canonical stack
/// (produced by region matching) shares indices with its target frame and
/// may mark unmatched pixels of non-target frames with [`NO_MATCH`].
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelStack {
    frames: usize,
    height: usize,
    width: usize,
    num_regions: usize,
    labels: Vec<u32>,
    // [frame][region] -> row-major flat pixel indices
    regions: Vec<Vec<Vec<u32>>>,
    canonical_target: Option<usize>,
}

impl SuperpixelStack {
    /// Builds a raw stack; every index must lie in `[0, num_regions)`.
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        labels: Vec<u32>,
        num_regions: usize,
    ) -> Result<Self> {
        Self::build(frames, height, width, labels, num_regions, None)
    }

    /// Builds a raw stack with `P` one past the largest index in use.
    pub fn from_labels(frames: usize, height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        let num_regions = labels
            .iter()
            .copied()
            .filter(|&l| l != NO_MATCH)
            .max()
            .map_or(0, |m| m as usize + 1);
        Self::new(frames, height, width, labels, num_regions.max(1))
    }

    /// Builds a canonical stack anchored at stack position `target`. Pixels
    /// outside the target frame may carry [`NO_MATCH`].
    pub fn canonical(
        frames: usize,
        height: usize,
        width: usize,
        labels: Vec<u32>,
        num_regions: usize,
        target: usize,
    ) -> Result<Self> {
        if target >= frames {
            return Err(Error::FrameOutOfRange {
                frame: target,
                frames,
            });
        }
        Self::build(frames, height, width, labels, num_regions, Some(target))
    }

    fn build(
        frames: usize,
        height: usize,
        width: usize,
        labels: Vec<u32>,
        num_regions: usize,
        canonical_target: Option<usize>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "superpixel dimensions must be positive, got ({frames}, {height}, {width})"
            )));
        }
        let plane = height * width;
        if labels.len() != frames * plane {
            return Err(Error::ShapeMismatch(format!(
                "superpixel buffer holds {} values, shape needs {}",
                labels.len(),
                frames * plane
            )));
        }
        let mut regions = vec![vec![Vec::new(); num_regions]; frames];
        for (pos, &index) in labels.iter().enumerate() {
            let frame = pos / plane;
            let pixel = pos % plane;
            let sentinel_ok = index == NO_MATCH && canonical_target.is_some_and(|t| t != frame);
            if sentinel_ok {
                continue;
            }
            if index as usize >= num_regions {
                return Err(Error::RegionIndexOutOfRange {
                    frame,
                    row: pixel / width,
                    col: pixel % width,
                    index,
                    limit: num_regions,
                });
            }
            regions[frame][index as usize].push(pixel as u32);
        }
        Ok(Self {
            frames,
            height,
            width,
            num_regions,
            labels,
            regions,
            canonical_target,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `P`, the number of region slots per frame.
    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Stack position of the target frame, for canonical stacks.
    pub fn canonical_target(&self) -> Option<usize> {
        self.canonical_target
    }

    pub fn frame_labels(&self, frame: usize) -> &[u32] {
        let plane = self.height * self.width;
        &self.labels[frame * plane..(frame + 1) * plane]
    }

    /// Row-major flat pixel indices of `Ω_ij`; empty when the region is absent.
    pub fn region(&self, frame: usize, region: usize) -> &[u32] {
        &self.regions[frame][region]
    }

    pub fn is_present(&self, frame: usize, region: usize) -> bool {
        !self.regions[frame][region].is_empty()
    }

    /// Region indices with a non-empty pixel set in `frame`, ascending.
    pub fn used_regions(&self, frame: usize) -> impl Iterator<Item = usize> + '_ {
        self.regions[frame]
            .iter()
            .enumerate()
            .filter(|(_, px)| !px.is_empty())
            .map(|(j, _)| j)
    }

    /// A raw stack holding the listed frames, in list order.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        let mut labels = Vec::with_capacity(frames.len() * self.height * self.width);
        for &i in frames {
            if i >= self.frames {
                return Err(Error::FrameOutOfRange {
                    frame: i,
                    frames: self.frames,
                });
            }
            labels.extend_from_slice(self.frame_labels(i));
        }
        Self::new(frames.len(), self.height, self.width, labels, self.num_regions)
    }
}

/// Pixel sets of every used region of one frame, as `(row, col)` lists.
pub fn region_pixel_sets(
    superpixels: &SuperpixelStack,
    frame: usize,
) -> Result<BTreeMap<u32, Vec<(usize, usize)>>> {
    if frame >= superpixels.frames {
        return Err(Error::FrameOutOfRange {
            frame,
            frames: superpixels.frames,
        });
    }
    let w = superpixels.width;
    Ok(superpixels
        .used_regions(frame)
        .map(|j| {
            let pixels = superpixels
                .region(frame, j)
                .iter()
                .map(|&p| (p as usize / w, p as usize % w))
                .collect();
            (j as u32, pixels)
        })
        .collect())
}

/// Compacts each frame's indices to `0..n_i` in first-appearance order.
///
/// Returns the relabeled stack and, per frame, the old-to-new index map.
/// Sentinel pixels of canonical stacks keep [`NO_MATCH`].
pub fn relabel_contiguous(
    superpixels: &SuperpixelStack,
) -> (SuperpixelStack, Vec<BTreeMap<u32, u32>>) {
    let plane = superpixels.height * superpixels.width;
    let mut labels = Vec::with_capacity(superpixels.labels.len());
    let mut maps = Vec::with_capacity(superpixels.frames);
    let mut num_regions = 1;
    for frame in 0..superpixels.frames {
        let mut map = BTreeMap::new();
        for &old in &superpixels.labels[frame * plane..(frame + 1) * plane] {
            if old == NO_MATCH {
                labels.push(NO_MATCH);
                continue;
            }
            let next = map.len() as u32;
            labels.push(*map.entry(old).or_insert(next));
        }
        num_regions = num_regions.max(map.len());
        maps.push(map);
    }
    let relabeled = SuperpixelStack::build(
        superpixels.frames,
        superpixels.height,
        superpixels.width,
        labels,
        num_regions,
        superpixels.canonical_target,
    )
    .expect("compaction keeps indices within the new region count");
    (relabeled, maps)
}

/// Checks that features and superpixels describe the same `(N, H, W)` grid.
///
/// Per-type invariants (finite features, in-range indices) are enforced at
/// construction; they are re-checked here so that a stack assembled from
/// ingested files is validated in one place.
pub fn validate_stack(features: &FeatureStack, superpixels: &SuperpixelStack) -> Result<()> {
    let f = features.shape();
    let s = [superpixels.frames, superpixels.height, superpixels.width];
    if f[0] != s[0] || f[2] != s[1] || f[3] != s[2] {
        return Err(Error::ShapeMismatch(format!(
            "features have (N, H, W) = ({}, {}, {}), superpixels have ({}, {}, {})",
            f[0], f[2], f[3], s[0], s[1], s[2]
        )));
    }
    if let Some(pos) = features.data.iter().position(|v| !v.is_finite()) {
        let plane = f[2] * f[3];
        return Err(Error::NonFinite {
            frame: pos / (f[1] * plane),
            channel: (pos / plane) % f[1],
            row: (pos % plane) / f[3],
            col: pos % f[3],
            value: features.data[pos],
        });
    }
    let plane = superpixels.height * superpixels.width;
    for (pos, &index) in superpixels.labels.iter().enumerate() {
        let frame = pos / plane;
        let sentinel_ok =
            index == NO_MATCH && superpixels.canonical_target.is_some_and(|t| t != frame);
        if !sentinel_ok && index as usize >= superpixels.num_regions {
            return Err(Error::RegionIndexOutOfRange {
                frame,
                row: (pos % plane) / superpixels.width,
                col: pos % superpixels.width,
                index,
                limit: superpixels.num_regions,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowDirection {
    /// Frame `k` to frame `k + 1`.
    Forward,
    /// Frame `k + 1` to frame `k`.
    Backward,
}

impl FlowDirection {
    pub fn name(self) -> &'static str {
        match self {
            FlowDirection::Forward => "forward",
            FlowDirection::Backward => "backward",
        }
    }
}

/// Per-pixel displacement `(d_row, d_col)` between two consecutive frames,
/// stored `(H, W, 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    direction: FlowDirection,
    data: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, direction: FlowDirection, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::ShapeMismatch(format!(
                "flow buffer holds {} values, ({height}, {width}, 2) needs {}",
                data.len(),
                height * width * 2
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                frame: 0,
                channel: pos % 2,
                row: pos / 2 / width,
                col: (pos / 2) % width,
                value: data[pos],
            });
        }
        Ok(Self {
            height,
            width,
            direction,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, direction: FlowDirection) -> Self {
        Self {
            height,
            width,
            direction,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn uniform(height: usize, width: usize, direction: FlowDirection, d: (f64, f64)) -> Self {
        let data = (0..height * width).flat_map(|_| [d.0, d.1]).collect();
        Self {
            height,
            width,
            direction,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn direction(&self) -> FlowDirection {
        self.direction
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> (f64, f64) {
        let k = (row * self.width + col) * 2;
        (self.data[k], self.data[k + 1])
    }
}

/// Forward and backward flow for every consecutive pair of a sequence:
/// `forward[k]` maps frame `k` to `k + 1`, `backward[k]` maps `k + 1` to `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSet {
    pub forward: Vec<FlowField>,
    pub backward: Vec<FlowField>,
}

impl FlowSet {
    /// Zero flow for a sequence of `frames` frames.
    pub fn identity(frames: usize, height: usize, width: usize) -> Self {
        let steps = frames.saturating_sub(1);
        Self {
            forward: vec![FlowField::zeros(height, width, FlowDirection::Forward); steps],
            backward: vec![FlowField::zeros(height, width, FlowDirection::Backward); steps],
        }
    }

    /// Number of consecutive pairs covered in the forward direction.
    pub fn steps(&self) -> usize {
        self.forward.len()
    }
}

/// Per-pixel class indices `(H, W)`; [`IGNORE_LABEL`] marks unannotated pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "label buffer holds {} values, ({height}, {width}) needs {}",
                labels.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Checks every value is a class in `[0, classes)` or the ignore value.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l != IGNORE_LABEL && l as usize >= classes)
        {
            Some(pos) => Err(Error::InvalidLabel {
                row: pos / self.width,
                col: pos % self.width,
                label: self.labels[pos],
                classes,
            }),
            None => Ok(()),
        }
    }
}

/// One video: features, superpixels, flow, and per-frame annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub features: FeatureStack,
    pub superpixels: SuperpixelStack,
    pub flows: FlowSet,
    pub labels: Vec<LabelMap>,
}

impl Sequence {
    pub fn new(
        features: FeatureStack,
        superpixels: SuperpixelStack,
        flows: FlowSet,
        labels: Vec<LabelMap>,
    ) -> Result<Self> {
        validate_stack(&features, &superpixels)?;
        let (n, h, w) = (features.frames(), features.height(), features.width());
        if flows.forward.len() != n - 1 || flows.backward.len() != n - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{n} frames need {} flow fields per direction, got {} forward and {} backward",
                n - 1,
                flows.forward.len(),
                flows.backward.len()
            )));
        }
        let flow_ok = flows
            .forward
            .iter()
            .chain(&flows.backward)
            .all(|f| f.height == h && f.width == w);
        if !flow_ok {
            return Err(Error::ShapeMismatch(format!(
                "flow fields must be {h}x{w}"
            )));
        }
        if !labels.is_empty() && labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} frames but {} label maps",
                labels.len()
            )));
        }
        if labels.iter().any(|l| l.height != h || l.width != w) {
            return Err(Error::ShapeMismatch(format!("label maps must be {h}x{w}")));
        }
        Ok(Self {
            features,
            superpixels,
            flows,
            labels,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.frames()
    }
}
