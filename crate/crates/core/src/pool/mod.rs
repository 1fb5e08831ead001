//! Parameter-free data-driven pooling layers.
//!
//! * spatial pooling reduces each superpixel of each frame to one value per
//!   channel, `(N, C, H, W) -> (N, C, P)`;
//! * temporal pooling fuses a region across the frames where it is present,
//!   `(N, C, P) -> (C, P)`;
//! * region-to-pixel broadcasts region values back onto the target frame's
//!   superpixels, `(C, P) -> (C, H, W)`.
//!
//! Backward passes are written out directly: average pooling scatters
//! `grad / |Ω|` (spatial) or `grad / K` (temporal), max pooling routes the
//! whole gradient to the recorded argmax, and region-to-pixel sums pixel
//! gradients per region. All reductions run in a fixed order (row-major
//! pixels, ascending frames) with f64 accumulators.

mod head;

use std::str::FromStr;

pub use head::{HeadCache, Std2pHead};

use crate::error::{Error, Result};
use crate::grid::{validate_stack, FeatureStack, LabelMap, SuperpixelStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Avg,
    Max,
}

impl PoolMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolMode::Avg => "avg",
            PoolMode::Max => "max",
        }
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(PoolMode::Avg),
            "max" => Ok(PoolMode::Max),
            other => Err(Error::Config(format!("pool mode must be avg or max, got '{other}'"))),
        }
    }
}

/// Spatially pooled features `(N, C, P)` with the forward state needed by
/// the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatureStack {
    frames: usize,
    channels: usize,
    regions: usize,
    mode: PoolMode,
    data: Vec<f64>,
    /// `(N, P)`: `Ω_ij` non-empty.
    present: Vec<bool>,
    /// `(N, C, P)` flat pixel index of the maximum; empty in avg mode.
    argmax: Vec<u32>,
}

impl RegionFeatureStack {
    /// Builds a stack directly, e.g. as temporal-pool input in tests.
    /// Values of absent entries are ignored and stored as zero.
    pub fn from_parts(
        frames: usize,
        channels: usize,
        regions: usize,
        data: Vec<f64>,
        present: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != frames * channels * regions || present.len() != frames * regions {
            return Err(Error::ShapeMismatch(format!(
                "region stack ({frames}, {channels}, {regions}) got {} values and {} mask entries",
                data.len(),
                present.len()
            )));
        }
        let mut data = data;
        for i in 0..frames {
            for c in 0..channels {
                for j in 0..regions {
                    if !present[i * regions + j] {
                        data[(i * channels + c) * regions + j] = 0.0;
                    }
                }
            }
        }
        Ok(Self {
            frames,
            channels,
            regions,
            mode: PoolMode::Avg,
            data,
            present,
            argmax: Vec::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, frame: usize, channel: usize, region: usize) -> usize {
        (frame * self.channels + channel) * self.regions + region
    }

    pub fn get(&self, frame: usize, channel: usize, region: usize) -> f64 {
        self.data[self.index(frame, channel, region)]
    }

    pub fn is_present(&self, frame: usize, region: usize) -> bool {
        self.present[frame * self.regions + region]
    }

    /// Max mode only: `(row, col)` of the pixel that produced the value.
    pub fn argmax(&self, frame: usize, channel: usize, region: usize, width: usize) -> Option<(usize, usize)> {
        if self.mode != PoolMode::Max || !self.is_present(frame, region) {
            return None;
        }
        let p = self.argmax[self.index(frame, channel, region)] as usize;
        Some((p / width, p % width))
    }
}

/// Temporally pooled region features `(C, P)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatureMap {
    channels: usize,
    regions: usize,
    mode: PoolMode,
    data: Vec<f64>,
    /// Matched-frame count per region; 0 when the region is present nowhere.
    k: Vec<usize>,
    /// `(C, P)` frame that produced the maximum; empty in avg mode.
    arg_frame: Vec<u32>,
}

impl RegionFeatureMap {
    /// Builds a map whose regions are all present with `K = 1`.
    pub fn from_values(channels: usize, regions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * regions {
            return Err(Error::ShapeMismatch(format!(
                "region map ({channels}, {regions}) got {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            regions,
            mode: PoolMode::Avg,
            data,
            k: vec![1; regions],
            arg_frame: Vec::new(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn k(&self, region: usize) -> usize {
        self.k[region]
    }

    /// Pooled value of a region; errors when the region had no present frame.
    pub fn value(&self, channel: usize, region: usize) -> Result<f64> {
        if self.k[region] == 0 {
            return Err(Error::NoPresentFrame { region });
        }
        Ok(self.data[channel * self.regions + region])
    }

    /// Max mode only: stack position of the frame holding the maximum.
    pub fn arg_frame(&self, channel: usize, region: usize) -> Option<usize> {
        if self.mode != PoolMode::Max || self.k[region] == 0 {
            return None;
        }
        Some(self.arg_frame[channel * self.regions + region] as usize)
    }
}

/// Dense per-pixel scores `(C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseScoreMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DenseScoreMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "score map ({channels}, {height}, {width}) got {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// Per-pixel argmax over channels, ties to the lowest channel.
    pub fn argmax_labels(&self) -> LabelMap {
        let plane = self.height * self.width;
        let labels = (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.data[c * plane + p] > self.data[best * plane + p] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        LabelMap::new(self.height, self.width, labels).expect("argmax has the grid shape")
    }
}

/// Pools each superpixel `Ω_ij` of each frame to one value per channel.
///
/// Avg: `O(i,c,j) = (1/|Ω_ij|) Σ_{(x,y)∈Ω_ij} I(i,c,x,y)`. Max: the largest
/// value in `Ω_ij`, ties to the lowest row-major pixel. Regions absent from
/// a frame are masked.
pub fn spatial_pool_fwd(
    input: &FeatureStack,
    superpixels: &SuperpixelStack,
    mode: PoolMode,
) -> Result<RegionFeatureStack> {
    validate_stack(input, superpixels)?;
    let [n, ch, _, _] = input.shape();
    let p = superpixels.num_regions();
    let mut data = vec![0.0; n * ch * p];
    let mut present = vec![false; n * p];
    let mut argmax = match mode {
        PoolMode::Avg => Vec::new(),
        PoolMode::Max => vec![0u32; n * ch * p],
    };
    let plane = input.height() * input.width();
    for i in 0..n {
        let frame = input.frame(i);
        for j in 0..p {
            let pixels = superpixels.region(i, j);
            if pixels.is_empty() {
                continue;
            }
            present[i * p + j] = true;
            for c in 0..ch {
                let values = &frame[c * plane..(c + 1) * plane];
                let out = (i * ch + c) * p + j;
                match mode {
                    PoolMode::Avg => {
                        let sum: f64 = pixels.iter().map(|&q| values[q as usize]).sum();
                        data[out] = sum / pixels.len() as f64;
                    }
                    PoolMode::Max => {
                        let mut best = pixels[0];
                        for &q in &pixels[1..] {
                            if values[q as usize] > values[best as usize] {
                                best = q;
                            }
                        }
                        data[out] = values[best as usize];
                        argmax[out] = best;
                    }
                }
            }
        }
    }
    Ok(RegionFeatureStack {
        frames: n,
        channels: ch,
        regions: p,
        mode,
        data,
        present,
        argmax,
    })
}

/// Gradient of [`spatial_pool_fwd`] with respect to its input, `(N, C, H, W)`.
///
/// Avg: every pixel of `Ω_ij` receives `grad(i,c,j) / |Ω_ij|`. Max: the
/// recorded argmax pixel receives `grad(i,c,j)`. Pixels outside every pooled
/// region receive zero.
pub fn spatial_pool_bwd(
    grad_out: &[f64],
    superpixels: &SuperpixelStack,
    forward: &RegionFeatureStack,
) -> Result<Vec<f64>> {
    let (n, ch, p) = (forward.frames, forward.channels, forward.regions);
    if grad_out.len() != n * ch * p
        || superpixels.frames() != n
        || superpixels.num_regions() != p
    {
        return Err(Error::ShapeMismatch(format!(
            "spatial backward expects ({n}, {ch}, {p}) gradients over matching superpixels, got {} values",
            grad_out.len()
        )));
    }
    let plane = superpixels.height() * superpixels.width();
    let mut grad_in = vec![0.0; n * ch * plane];
    for i in 0..n {
        for c in 0..ch {
            let base = (i * ch + c) * plane;
            for j in 0..p {
                if !forward.is_present(i, j) {
                    continue;
                }
                let g = grad_out[(i * ch + c) * p + j];
                match forward.mode {
                    PoolMode::Avg => {
                        let pixels = superpixels.region(i, j);
                        let share = g / pixels.len() as f64;
                        for &q in pixels {
                            grad_in[base + q as usize] += share;
                        }
                    }
                    PoolMode::Max => {
                        let q = forward.argmax[(i * ch + c) * p + j] as usize;
                        grad_in[base + q] += g;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Fuses each region across the frames where it is present.
///
/// Avg: `O(c,j) = (1/K_j) Σ_{i: Ω_ij ≠ ∅} I(i,c,j)`. Max: the largest value
/// over present frames, ties to the lowest frame. A region present nowhere
/// gets `K_j = 0` and no value.
pub fn temporal_pool_fwd(input: &RegionFeatureStack, mode: PoolMode) -> Result<RegionFeatureMap> {
    let (n, ch, p) = (input.frames, input.channels, input.regions);
    let k: Vec<usize> = (0..p)
        .map(|j| (0..n).filter(|&i| input.is_present(i, j)).count())
        .collect();
    let mut data = vec![0.0; ch * p];
    let mut arg_frame = match mode {
        PoolMode::Avg => Vec::new(),
        PoolMode::Max => vec![0u32; ch * p],
    };
    for c in 0..ch {
        for (j, &kj) in k.iter().enumerate() {
            if kj == 0 {
                continue;
            }
            let mut frames = (0..n).filter(|&i| input.is_present(i, j));
            let out = c * p + j;
            match mode {
                PoolMode::Avg => {
                    let sum: f64 = frames.map(|i| input.get(i, c, j)).sum();
                    data[out] = sum / kj as f64;
                }
                PoolMode::Max => {
                    let first = frames.next().expect("k > 0");
                    let mut best = first;
                    for i in frames {
                        if input.get(i, c, j) > input.get(best, c, j) {
                            best = i;
                        }
                    }
                    data[out] = input.get(best, c, j);
                    arg_frame[out] = best as u32;
                }
            }
        }
    }
    Ok(RegionFeatureMap {
        channels: ch,
        regions: p,
        mode,
        data,
        k,
        arg_frame,
    })
}

/// Gradient of [`temporal_pool_fwd`] with respect to its input, `(N, C, P)`.
///
/// Avg: every present `(i, c, j)` receives `grad(c,j) / K_j`. Max: the
/// recorded frame receives `grad(c,j)`. Absent entries receive zero.
pub fn temporal_pool_bwd(
    grad_out: &[f64],
    input: &RegionFeatureStack,
    forward: &RegionFeatureMap,
) -> Result<Vec<f64>> {
    let (n, ch, p) = (input.frames, input.channels, input.regions);
    if grad_out.len() != ch * p || forward.channels != ch || forward.regions != p {
        return Err(Error::ShapeMismatch(format!(
            "temporal backward expects ({ch}, {p}) gradients, got {}",
            grad_out.len()
        )));
    }
    let mut grad_in = vec![0.0; n * ch * p];
    for c in 0..ch {
        for j in 0..p {
            let k = forward.k[j];
            if k == 0 {
                continue;
            }
            let g = grad_out[c * p + j];
            match forward.mode {
                PoolMode::Avg => {
                    let share = g / k as f64;
                    for i in (0..n).filter(|&i| input.is_present(i, j)) {
                        grad_in[input.index(i, c, j)] = share;
                    }
                }
                PoolMode::Max => {
                    let i = forward.arg_frame[c * p + j] as usize;
                    grad_in[input.index(i, c, j)] = g;
                }
            }
        }
    }
    Ok(grad_in)
}

/// Broadcasts region values onto the pixels of stack frame `frame`:
/// `O(c,x,y) = I(c, S(x,y))`.
pub fn region_to_pixel_fwd(
    input: &RegionFeatureMap,
    superpixels: &SuperpixelStack,
    frame: usize,
) -> Result<DenseScoreMap> {
    if frame >= superpixels.frames() {
        return Err(Error::FrameOutOfRange {
            frame,
            frames: superpixels.frames(),
        });
    }
    if superpixels.num_regions() != input.regions {
        return Err(Error::ShapeMismatch(format!(
            "{} pooled regions for superpixels with {} slots",
            input.regions,
            superpixels.num_regions()
        )));
    }
    let (h, w) = (superpixels.height(), superpixels.width());
    let labels = superpixels.frame_labels(frame);
    for (q, &j) in labels.iter().enumerate() {
        if j as usize >= input.regions || input.k[j as usize] == 0 {
            return Err(Error::MissingRegionValue {
                row: q / w,
                col: q % w,
                region: j as usize,
            });
        }
    }
    let p = input.regions;
    let mut data = Vec::with_capacity(input.channels * h * w);
    for c in 0..input.channels {
        data.extend(labels.iter().map(|&j| input.data[c * p + j as usize]));
    }
    DenseScoreMap::new(input.channels, h, w, data)
}

/// Gradient of [`region_to_pixel_fwd`], `(C, P)`:
/// `∂L/∂I(c,j) = Σ_{S(x,y)=j} ∂L/∂O(c,x,y)`, summed in row-major order.
pub fn region_to_pixel_bwd(
    grad_out: &[f64],
    superpixels: &SuperpixelStack,
    frame: usize,
) -> Result<Vec<f64>> {
    let plane = superpixels.height() * superpixels.width();
    if frame >= superpixels.frames() {
        return Err(Error::FrameOutOfRange {
            frame,
            frames: superpixels.frames(),
        });
    }
    if plane == 0 || !grad_out.len().is_multiple_of(plane) {
        return Err(Error::ShapeMismatch(format!(
            "dense gradient of {} values is not a multiple of the {plane}-pixel frame",
            grad_out.len()
        )));
    }
    let ch = grad_out.len() / plane;
    let p = superpixels.num_regions();
    let labels = superpixels.frame_labels(frame);
    let mut grad_in = vec![0.0; ch * p];
    for c in 0..ch {
        for (q, &j) in labels.iter().enumerate() {
            if (j as usize) < p {
                grad_in[c * p + j as usize] += grad_out[c * plane + q];
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central differences of a scalar function; independent of every
    /// backward pass in this module.
    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|k| {
                let orig = x[k];
                x[k] = orig + h;
                let up = f(&x);
                x[k] = orig - h;
                let down = f(&x);
                x[k] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn two_by_two() -> (FeatureStack, SuperpixelStack) {
        let f = FeatureStack::new(1, 1, 2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let s = SuperpixelStack::from_labels(1, 2, 2, vec![0, 0, 1, 1]).unwrap();
        (f, s)
    }

    /// Naive per-pixel loop, scanning every pixel for each region.
    fn naive_avg(f: &FeatureStack, s: &SuperpixelStack) -> Vec<f64> {
        let [n, ch, h, w] = f.shape();
        let p = s.num_regions();
        let mut out = vec![0.0; n * ch * p];
        for i in 0..n {
            for c in 0..ch {
                for j in 0..p {
                    let (mut sum, mut count) = (0.0, 0);
                    for x in 0..h {
                        for y in 0..w {
                            if s.frame_labels(i)[x * w + y] == j as u32 {
                                sum += f.get(i, c, x, y);
                                count += 1;
                            }
                        }
                    }
                    if count > 0 {
                        out[(i * ch + c) * p + j] = sum / count as f64;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn spatial_avg_and_max_on_two_by_two() {
        let (f, s) = two_by_two();
        let avg = spatial_pool_fwd(&f, &s, PoolMode::Avg).unwrap();
        assert_eq!(avg.data(), naive_avg(&f, &s).as_slice());
        assert_eq!(avg.data(), &[2.0, 6.0]);

        let max = spatial_pool_fwd(&f, &s, PoolMode::Max).unwrap();
        assert_eq!(max.data(), &[3.0, 7.0]);
        assert_eq!(max.argmax(0, 0, 0, 2), Some((0, 1)));
        assert_eq!(max.argmax(0, 0, 1, 2), Some((1, 1)));
    }

    #[test]
    fn constant_input_is_preserved_by_both_modes() {
        let f = FeatureStack::from_fn(2, 2, 3, 3, |_, _, _, _| 4.25).unwrap();
        let labels: Vec<u32> = (0..18).map(|k| (k * 7 % 4) as u32).collect();
        let s = SuperpixelStack::from_labels(2, 3, 3, labels).unwrap();
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let out = spatial_pool_fwd(&f, &s, mode).unwrap();
            for i in 0..2 {
                for j in 0..4 {
                    if out.is_present(i, j) {
                        assert_eq!(out.get(i, 0, j), 4.25);
                        assert_eq!(out.get(i, 1, j), 4.25);
                    }
                }
            }
            let t = temporal_pool_fwd(&out, mode).unwrap();
            assert!(t.data().iter().all(|&v| v == 4.25));
        }
    }

    #[test]
    fn max_ties_take_the_first_pixel() {
        let f = FeatureStack::new(1, 1, 1, 3, vec![2.0, 2.0, 1.0]).unwrap();
        let s = SuperpixelStack::from_labels(1, 1, 3, vec![0, 0, 0]).unwrap();
        let out = spatial_pool_fwd(&f, &s, PoolMode::Max).unwrap();
        assert_eq!(out.argmax(0, 0, 0, 3), Some((0, 0)));
    }

    #[test]
    fn spatial_backward_direct_cases() {
        let f = FeatureStack::from_fn(1, 1, 2, 3, |_, _, x, y| (x * 3 + y) as f64).unwrap();
        let s = SuperpixelStack::from_labels(1, 2, 3, vec![0, 0, 1, 0, 0, 1]).unwrap();
        let avg = spatial_pool_fwd(&f, &s, PoolMode::Avg).unwrap();
        let g = spatial_pool_bwd(&[1.0, 0.0], &s, &avg).unwrap();
        assert_eq!(g, vec![0.25, 0.25, 0.0, 0.25, 0.25, 0.0]);

        let max = spatial_pool_fwd(&f, &s, PoolMode::Max).unwrap();
        let g = spatial_pool_bwd(&[1.0, 0.0], &s, &max).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

        assert!(matches!(
            spatial_pool_bwd(&[1.0], &s, &avg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn temporal_direct_cases() {
        // region 0 present in frames 0 and 2 (values 2, 4); region 1 only in frame 1
        let data = vec![2.0, 0.0, 9.0, 5.0, 4.0, 0.0];
        let present = vec![true, false, false, true, true, false];
        let input = RegionFeatureStack::from_parts(3, 1, 2, data, present).unwrap();
        let avg = temporal_pool_fwd(&input, PoolMode::Avg).unwrap();
        assert_eq!(avg.value(0, 0).unwrap(), 3.0);
        assert_eq!(avg.k(0), 2);
        assert_eq!(avg.value(0, 1).unwrap(), 5.0);
        assert_eq!(avg.k(1), 1);

        let max = temporal_pool_fwd(&input, PoolMode::Max).unwrap();
        assert_eq!(max.value(0, 0).unwrap(), 4.0);
        assert_eq!(max.arg_frame(0, 0), Some(2));

        let g = temporal_pool_bwd(&[1.0, 1.0], &input, &avg).unwrap();
        assert_eq!(g, vec![0.5, 0.0, 0.0, 1.0, 0.5, 0.0]);
        let g = temporal_pool_bwd(&[1.0, 1.0], &input, &max).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn temporal_avg_splits_gradient_over_k_frames() {
        let input = RegionFeatureStack::from_parts(4, 1, 1, vec![1.0; 4], vec![true; 4]).unwrap();
        let out = temporal_pool_fwd(&input, PoolMode::Avg).unwrap();
        assert_eq!(temporal_pool_bwd(&[1.0], &input, &out).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn region_absent_everywhere_has_no_value() {
        let input = RegionFeatureStack::from_parts(1, 1, 2, vec![1.0, 0.0], vec![true, false]).unwrap();
        let out = temporal_pool_fwd(&input, PoolMode::Avg).unwrap();
        assert!(matches!(out.value(0, 1), Err(Error::NoPresentFrame { region: 1 })));
        let s = SuperpixelStack::new(1, 1, 2, vec![0, 1], 2).unwrap();
        assert!(matches!(
            region_to_pixel_fwd(&out, &s, 0),
            Err(Error::MissingRegionValue { row: 0, col: 1, region: 1 })
        ));
    }

    #[test]
    fn region_to_pixel_cases() {
        let s = SuperpixelStack::from_labels(1, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let input = RegionFeatureMap::from_values(1, 2, vec![1.5, -2.0]).unwrap();
        let out = region_to_pixel_fwd(&input, &s, 0).unwrap();
        assert_eq!(out.data(), &[1.5, 1.5, -2.0, -2.0]);

        let single = SuperpixelStack::from_labels(1, 2, 3, vec![0; 6]).unwrap();
        let one = RegionFeatureMap::from_values(2, 1, vec![0.5, 7.0]).unwrap();
        let out = region_to_pixel_fwd(&one, &single, 0).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0]);

        assert_eq!(region_to_pixel_bwd(&[1.0; 6], &single, 0).unwrap(), vec![6.0]);
        assert_eq!(region_to_pixel_bwd(&[0.0; 6], &single, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn pooling_then_broadcast_is_idempotent_on_region_constant_maps() {
        let s = SuperpixelStack::from_labels(1, 3, 3, vec![0, 0, 1, 2, 1, 1, 2, 2, 0]).unwrap();
        let values = [0.5, -1.0, 3.0];
        let f = FeatureStack::from_fn(1, 1, 3, 3, |_, _, x, y| values[s.frame_labels(0)[x * 3 + y] as usize])
            .unwrap();
        let pooled = spatial_pool_fwd(&f, &s, PoolMode::Avg).unwrap();
        let fused = temporal_pool_fwd(&pooled, PoolMode::Avg).unwrap();
        let dense = region_to_pixel_fwd(&fused, &s, 0).unwrap();
        assert_eq!(dense.data(), f.data());
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (FeatureStack, SuperpixelStack) {
        let n = rng.random_range(1..=4);
        let ch = rng.random_range(1..=5);
        let h = rng.random_range(2..=8);
        let w = rng.random_range(2..=8);
        let p = rng.random_range(1..=6u32);
        let f = FeatureStack::from_fn(n, ch, h, w, |_, _, _, _| rng.random_range(-2.0..2.0)).unwrap();
        let labels = (0..n * h * w).map(|_| rng.random_range(0..p)).collect();
        (f, SuperpixelStack::new(n, h, w, labels, p as usize).unwrap())
    }

    #[test]
    fn spatial_max_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (f, s) = random_instance(&mut rng);
            let fwd = spatial_pool_fwd(&f, &s, PoolMode::Max).unwrap();
            let g: Vec<f64> = (0..fwd.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let analytic = spatial_pool_bwd(&g, &s, &fwd).unwrap();
            let [n, ch, h, w] = f.shape();
            let numeric = numeric_grad(
                |x| {
                    let f = FeatureStack::new(n, ch, h, w, x.to_vec()).unwrap();
                    dot(spatial_pool_fwd(&f, &s, PoolMode::Max).unwrap().data(), &g)
                },
                f.data(),
                1e-5,
            );
            assert!(max_rel_err(&analytic, &numeric) < 1e-6);
        }
    }

    #[test]
    fn max_output_ignores_small_changes_off_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, s) = random_instance(&mut rng);
        let fwd = spatial_pool_fwd(&f, &s, PoolMode::Max).unwrap();
        let [n, ch, h, w] = f.shape();
        let mut data = f.data().to_vec();
        for i in 0..n {
            for c in 0..ch {
                for j in s.used_regions(i).collect::<Vec<_>>() {
                    let arg = fwd.argmax(i, c, j, w).unwrap();
                    let best = fwd.get(i, c, j);
                    for &q in s.region(i, j) {
                        let (x, y) = (q as usize / w, q as usize % w);
                        if (x, y) != arg {
                            let k = f.index(i, c, x, y);
                            let gap = best - data[k];
                            data[k] += gap * 0.5;
                        }
                    }
                }
            }
        }
        let perturbed = FeatureStack::new(n, ch, h, w, data).unwrap();
        let again = spatial_pool_fwd(&perturbed, &s, PoolMode::Max).unwrap();
        assert_eq!(again.data(), fwd.data());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn avg_layers_are_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, s) = random_instance(&mut rng);
            let [n, ch, h, w] = x.shape();
            let y = FeatureStack::from_fn(n, ch, h, w, |_, _, _, _| rng.random_range(-2.0..2.0)).unwrap();
            let mix = FeatureStack::new(
                n, ch, h, w,
                x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
            ).unwrap();
            let fx = spatial_pool_fwd(&x, &s, PoolMode::Avg).unwrap();
            let fy = spatial_pool_fwd(&y, &s, PoolMode::Avg).unwrap();
            let fm = spatial_pool_fwd(&mix, &s, PoolMode::Avg).unwrap();
            for k in 0..fm.data().len() {
                let expect = alpha * fx.data()[k] + beta * fy.data()[k];
                prop_assert!((fm.data()[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
            let tx = temporal_pool_fwd(&fx, PoolMode::Avg).unwrap();
            let ty = temporal_pool_fwd(&fy, PoolMode::Avg).unwrap();
            let tm = temporal_pool_fwd(&fm, PoolMode::Avg).unwrap();
            for k in 0..tm.data().len() {
                let expect = alpha * tx.data()[k] + beta * ty.data()[k];
                prop_assert!((tm.data()[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }

        #[test]
        fn absent_entries_get_zero_gradient(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, s) = random_instance(&mut rng);
            for mode in [PoolMode::Avg, PoolMode::Max] {
                let fwd = spatial_pool_fwd(&x, &s, mode).unwrap();
                let t = temporal_pool_fwd(&fwd, mode).unwrap();
                let g: Vec<f64> = (0..t.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let gi = temporal_pool_bwd(&g, &fwd, &t).unwrap();
                for i in 0..fwd.frames() {
                    for j in 0..fwd.regions() {
                        if !fwd.is_present(i, j) {
                            for c in 0..fwd.channels() {
                                prop_assert_eq!(gi[fwd.index(i, c, j)], 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
}
