use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::warp::{compose_flow, warp_region};
use crate::error::{Error, Result};
use crate::grid::{FlowSet, SuperpixelStack, NO_MATCH};

/// Bidirectional overlap of a region pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchScore {
    /// IoU of the warped source region with the target region.
    pub iou_forward: f64,
    /// IoU of the warped target region with the source region.
    pub iou_backward: f64,
}

impl MatchScore {
    pub const SELF: MatchScore = MatchScore {
        iou_forward: 1.0,
        iou_backward: 1.0,
    };

    pub fn score(&self) -> f64 {
        self.iou_forward.min(self.iou_backward)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMatch {
    pub target_region: u32,
    pub source_region: u32,
    pub score: MatchScore,
}

/// Intersection counts of every warped region of `from_frame` against the
/// regions of `onto_frame`, turned into IoUs keyed by (from, onto) region.
fn directed_ious(
    superpixels: &SuperpixelStack,
    flows: &FlowSet,
    from_frame: usize,
    onto_frame: usize,
) -> Result<BTreeMap<(u32, u32), f64>> {
    let disp = compose_flow(flows, from_frame, onto_frame)?;
    let onto = superpixels.frame_labels(onto_frame);
    let mut out = BTreeMap::new();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in superpixels.used_regions(from_frame) {
        let warped = warp_region(superpixels.region(from_frame, r), &disp);
        counts.clear();
        for &p in &warped {
            let j = onto[p as usize];
            if j != NO_MATCH {
                *counts.entry(j).or_default() += 1;
            }
        }
        for (&j, &inter) in &counts {
            let other = superpixels.region(onto_frame, j as usize).len();
            let iou = inter as f64 / (warped.len() + other - inter) as f64;
            out.insert((r as u32, j), iou);
        }
    }
    Ok(out)
}

/// Matches every region of target frame `target` against the regions of
/// frame `other`.
///
/// A pair is accepted when `min(IoU→, IoU←) > tau`; each target region keeps
/// only its best-scoring source region, ties going to the lowest source
/// index. Results are sorted by target region.
pub fn match_frame_pair(
    target: usize,
    other: usize,
    superpixels: &SuperpixelStack,
    flows: &FlowSet,
    tau: f64,
) -> Result<Vec<PairMatch>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1), got {tau}")));
    }
    for f in [target, other] {
        if f >= superpixels.frames() {
            return Err(Error::FrameOutOfRange {
                frame: f,
                frames: superpixels.frames(),
            });
        }
    }
    if target == other {
        return Err(Error::FrameMismatch(
            "cannot match a frame against itself".into(),
        ));
    }
    // keyed (source, target)
    let forward = directed_ious(superpixels, flows, other, target)?;
    // keyed (target, source)
    let backward = directed_ious(superpixels, flows, target, other)?;

    let mut best: BTreeMap<u32, PairMatch> = BTreeMap::new();
    for (&(src, tgt), &iou_forward) in &forward {
        let Some(&iou_backward) = backward.get(&(tgt, src)) else {
            continue;
        };
        let score = MatchScore {
            iou_forward,
            iou_backward,
        };
        if score.score() <= tau {
            continue;
        }
        let candidate = PairMatch {
            target_region: tgt,
            source_region: src,
            score,
        };
        // sources arrive in ascending order, so strict > keeps the lowest on ties
        best.entry(tgt)
            .and_modify(|m| {
                if score.score() > m.score.score() {
                    *m = candidate;
                }
            })
            .or_insert(candidate);
    }
    Ok(best.into_values().collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableEntry {
    pub frame: usize,
    pub source_region: u32,
    pub score: MatchScore,
}

/// Matches of every target region across the sampled frames.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceTable {
    /// Video frame index of the target.
    pub target: usize,
    pub tau: f64,
    /// Per used target region, entries sorted by frame; the target frame's
    /// self-match is always present.
    pub regions: BTreeMap<u32, Vec<TableEntry>>,
}

impl CorrespondenceTable {
    /// Matched-frame count `K_j`, counting the target frame.
    pub fn k(&self, region: u32) -> usize {
        self.regions.get(&region).map_or(0, Vec::len)
    }

    /// Matches other than the target self-matches, as
    /// `(frame, source_region, target_region)`.
    pub fn matches(&self) -> impl Iterator<Item = (usize, u32, u32)> + '_ {
        self.regions.iter().flat_map(move |(&j, entries)| {
            entries
                .iter()
                .filter(move |e| e.frame != self.target)
                .map(move |e| (e.frame, e.source_region, j))
        })
    }

    pub fn num_rows(&self) -> usize {
        self.regions.values().map(Vec::len).sum()
    }

    /// CSV `target_region,frame,source_region,iou_fwd,iou_bwd` sorted by
    /// `(target_region, frame)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_region,frame,source_region,iou_fwd,iou_bwd\n");
        for (j, entries) in &self.regions {
            for e in entries {
                let _ = writeln!(
                    out,
                    "{j},{},{},{},{}",
                    e.frame, e.source_region, e.score.iou_forward, e.score.iou_backward
                );
            }
        }
        out
    }
}

/// Output of [`build_table`].
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub table: CorrespondenceTable,
    /// Video frame indices of the canonical stack's frames, ascending.
    pub frames: Vec<usize>,
    /// Sampled frames relabeled onto target region indices; unmatched
    /// pixels of non-target frames carry [`NO_MATCH`].
    pub canonical: SuperpixelStack,
}

impl Correspondence {
    /// Position of the target frame within `frames`.
    pub fn target_position(&self) -> usize {
        self.canonical
            .canonical_target()
            .expect("build_table always yields a canonical stack")
    }
}

/// Matches every sampled frame against the target and relabels the sampled
/// frames onto the target's region indices.
///
/// When one source region is the best match of several target regions, it
/// is assigned to the highest-scoring one (lowest index on ties) and the
/// other entries are dropped, so `K_j` always equals the number of frames in
/// which region `j` is present in the canonical stack.
pub fn build_table(
    target: usize,
    sampled: &[usize],
    superpixels: &SuperpixelStack,
    flows: &FlowSet,
    tau: f64,
) -> Result<Correspondence> {
    let mut frames = sampled.to_vec();
    frames.sort_unstable();
    frames.dedup();
    if !frames.contains(&target) {
        return Err(Error::FrameMismatch(format!(
            "target frame {target} is not among the sampled frames"
        )));
    }
    if let Some(&f) = frames.iter().find(|&&f| f >= superpixels.frames()) {
        return Err(Error::FrameOutOfRange {
            frame: f,
            frames: superpixels.frames(),
        });
    }
    let per_frame: Vec<Vec<PairMatch>> = frames
        .par_iter()
        .map(|&u| {
            if u == target {
                Ok(Vec::new())
            } else {
                match_frame_pair(target, u, superpixels, flows, tau)
            }
        })
        .collect::<Result<_>>()?;

    let plane = superpixels.height() * superpixels.width();
    let mut regions: BTreeMap<u32, Vec<TableEntry>> = superpixels
        .used_regions(target)
        .map(|j| {
            (
                j as u32,
                vec![TableEntry {
                    frame: target,
                    source_region: j as u32,
                    score: MatchScore::SELF,
                }],
            )
        })
        .collect();
    let mut labels = Vec::with_capacity(frames.len() * plane);
    for (&u, matches) in frames.iter().zip(&per_frame) {
        if u == target {
            labels.extend_from_slice(superpixels.frame_labels(target));
            continue;
        }
        // source region -> winning match
        let mut owner: BTreeMap<u32, PairMatch> = BTreeMap::new();
        for m in matches {
            owner
                .entry(m.source_region)
                .and_modify(|cur| {
                    if m.score.score() > cur.score.score() {
                        *cur = *m;
                    }
                })
                .or_insert(*m);
        }
        for m in owner.values() {
            regions
                .get_mut(&m.target_region)
                .ok_or_else(|| Error::Internal("match to an unused target region".into()))?
                .push(TableEntry {
                    frame: u,
                    source_region: m.source_region,
                    score: m.score,
                });
        }
        labels.extend(superpixels.frame_labels(u).iter().map(|l| {
            owner
                .get(l)
                .map_or(NO_MATCH, |m| m.target_region)
        }));
    }
    for entries in regions.values_mut() {
        entries.sort_by_key(|e| e.frame);
    }
    let target_position = frames.iter().position(|&f| f == target).unwrap();
    let canonical = SuperpixelStack::canonical(
        frames.len(),
        superpixels.height(),
        superpixels.width(),
        labels,
        superpixels.num_regions(),
        target_position,
    )?;
    Ok(Correspondence {
        table: CorrespondenceTable {
            target,
            tau,
            regions,
        },
        frames,
        canonical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspond::warp::iou;
    use crate::grid::FlowSet;
    use crate::synth::{corrupt_flow, generate, BandedScene};
    use proptest::prelude::*;

    #[test]
    fn identity_flow_self_matches_with_full_score() {
        let frame = [0u32, 0, 1, 1, 2, 2, 2, 3, 3];
        let labels: Vec<u32> = frame.iter().chain(&frame).chain(&frame).copied().collect();
        let sp = SuperpixelStack::from_labels(3, 3, 3, labels).unwrap();
        let flows = FlowSet::identity(3, 3, 3);
        let m = match_frame_pair(0, 2, &sp, &flows, 0.4).unwrap();
        assert_eq!(m.len(), 4);
        for (j, pm) in m.iter().enumerate() {
            assert_eq!(pm.target_region, j as u32);
            assert_eq!(pm.source_region, j as u32);
            assert_eq!(pm.score.score(), 1.0);
        }
        let c = build_table(1, &[0, 1, 2], &sp, &flows, 0.4).unwrap();
        assert!((0..4).all(|j| c.table.k(j) == 3));
        assert_eq!(c.canonical.labels(), sp.labels());
    }

    /// 6x6, zero flow. Target region 0 is the 4x4 top-left block. In the
    /// other frame, source region 1 covers 10 of its pixels (IoU 10/16 =
    /// 0.625), source region 2 covers the remaining 6 plus two more (IoU
    /// 6/18 < 0.4). Source 3 is a 3x4 block overlapping the target block in
    /// 8 pixels with its own 4 extra pixels (IoU 8/20 = 0.4, not > 0.4).
    #[test]
    fn best_of_several_candidates_is_kept() {
        // Target frame: region 0 = rows 0..4 x cols 0..4 (16 px), region 1 = rest.
        let mut t = [1u32; 36];
        for x in 0..4 {
            for y in 0..4 {
                t[x * 6 + y] = 0;
            }
        }
        // Other frame: region 1 = rows 0..3 of the block minus the last two
        // pixels of row 2 (10 px); region 2 = those 2 px + row 3 (4 px) + 2
        // outside (8 px); region 0 = everything else.
        let mut u = vec![0u32; 36];
        for x in 0..3 {
            for y in 0..4 {
                u[x * 6 + y] = 1;
            }
        }
        u[2 * 6 + 2] = 2;
        u[2 * 6 + 3] = 2;
        for y in 0..4 {
            u[3 * 6 + y] = 2;
        }
        u[4 * 6] = 2;
        u[4 * 6 + 1] = 2;
        let labels: Vec<u32> = t.iter().chain(&u).copied().collect();
        let sp = SuperpixelStack::from_labels(2, 6, 6, labels).unwrap();
        let flows = FlowSet::identity(2, 6, 6);

        let region = |f: usize, j: usize| sp.region(f, j).to_vec();
        assert_eq!(iou(&region(1, 1), &region(0, 0)), 10.0 / 16.0);
        assert_eq!(iou(&region(1, 2), &region(0, 0)), 6.0 / 18.0);

        let m = match_frame_pair(0, 1, &sp, &flows, 0.4).unwrap();
        let for_block: Vec<_> = m.iter().filter(|p| p.target_region == 0).collect();
        assert_eq!(for_block.len(), 1);
        assert_eq!(for_block[0].source_region, 1);
        assert_eq!(for_block[0].score.score(), 0.625);
    }

    /// Zero flow, so both IoU directions agree. Target region 0 has 7
    /// pixels; two disjoint sources lie inside it with 3 and 4 pixels, giving
    /// IoU 3/7 and 4/7. Both pass tau = 0.4; only the 4/7 source is kept.
    /// (Two disjoint sources cannot both reach IoU 0.5 against one region.)
    #[test]
    fn two_accepted_candidates_keep_the_higher_score() {
        let w = 6;
        let mut t = [1u32; 36];
        t[..7].fill(0);
        let mut u = vec![0u32; 36];
        u[..3].fill(2);
        u[3..7].fill(1);
        let labels: Vec<u32> = t.iter().chain(&u).copied().collect();
        let sp = SuperpixelStack::from_labels(2, 6, w, labels).unwrap();
        let flows = FlowSet::identity(2, 6, w);
        assert_eq!(iou(sp.region(1, 2), sp.region(0, 0)), 3.0 / 7.0);
        assert_eq!(iou(sp.region(1, 1), sp.region(0, 0)), 4.0 / 7.0);

        let m = match_frame_pair(0, 1, &sp, &flows, 0.4).unwrap();
        let block: Vec<_> = m.iter().filter(|p| p.target_region == 0).collect();
        assert_eq!(block.len(), 1);
        assert_eq!(block[0].source_region, 1);
        assert_eq!(block[0].score.score(), 4.0 / 7.0);
    }

    #[test]
    fn ties_go_to_the_lowest_source_index() {
        // 6-px target region, two 3-px sources inside it: both IoU 0.5.
        let mut t = [1u32; 16];
        t[..6].fill(0);
        let mut u = vec![0u32; 16];
        u[..3].fill(2);
        u[3..6].fill(1);
        let labels: Vec<u32> = t.iter().chain(&u).copied().collect();
        let sp = SuperpixelStack::from_labels(2, 4, 4, labels).unwrap();
        let m = match_frame_pair(0, 1, &sp, &FlowSet::identity(2, 4, 4), 0.4).unwrap();
        let block = m.iter().find(|p| p.target_region == 0).unwrap();
        assert_eq!(block.source_region, 1);
    }

    #[test]
    fn exact_flow_recovers_generator_truth() {
        let scene = BandedScene::default();
        for seed in 0..5 {
            let b = generate(&scene.spec(seed)).unwrap();
            let seq = &b.sequence;
            let target = 10;
            let frames: Vec<usize> = (0..seq.frames()).step_by(2).collect();
            let c = build_table(target, &frames, &seq.superpixels, &seq.flows, 0.4).unwrap();
            let mut found: Vec<_> = c.table.matches().collect();
            found.sort();
            let mut truth: Vec<_> = b
                .truth
                .matches(target)
                .into_iter()
                .filter(|m| frames.contains(&m.frame))
                .map(|m| (m.frame, m.src_region, m.target_region))
                .collect();
            truth.sort();
            assert_eq!(found, truth, "seed {seed}");
            for j in seq.superpixels.used_regions(target) {
                assert_eq!(c.table.k(j as u32), frames.len());
            }
        }
    }

    #[test]
    fn single_frame_is_its_own_table() {
        let b = generate(&BandedScene::default().spec(1)).unwrap();
        let sp = &b.sequence.superpixels;
        let c = build_table(3, &[3], sp, &b.sequence.flows, 0.4).unwrap();
        assert!(c.table.regions.keys().all(|&j| c.table.k(j) == 1));
        assert_eq!(c.canonical.labels(), sp.frame_labels(3));
        assert_eq!(c.target_position(), 0);
    }

    #[test]
    fn heavy_flow_noise_leaves_a_valid_table() {
        let b = generate(&BandedScene::default().spec(2)).unwrap();
        let noisy = corrupt_flow(&b, 20.0, 5);
        let frames: Vec<usize> = (0..21).step_by(2).collect();
        let seq = &noisy.sequence;
        let c = build_table(10, &frames, &seq.superpixels, &seq.flows, 0.4).unwrap();
        let ks: Vec<usize> = c.table.regions.keys().map(|&j| c.table.k(j)).collect();
        let ones = ks.iter().filter(|&&k| k == 1).count();
        assert!(ones * 2 > ks.len(), "K values {ks:?}");
        for entries in c.table.regions.values() {
            assert!(entries.iter().all(|e| e.score.score() > 0.4));
        }
    }

    #[test]
    fn canonical_regions_overlap_their_target_region() {
        let b = generate(&BandedScene::default().spec(4)).unwrap();
        let noisy = corrupt_flow(&b, 0.7, 1);
        let seq = &noisy.sequence;
        let frames: Vec<usize> = (0..21).step_by(3).collect();
        let target = 9;
        let c = build_table(target, &frames, &seq.superpixels, &seq.flows, 0.4).unwrap();
        let tpos = c.target_position();
        for (pos, &frame) in c.frames.iter().enumerate() {
            if frame == target {
                continue;
            }
            let disp = compose_flow(&seq.flows, frame, target).unwrap();
            for j in c.canonical.used_regions(pos) {
                let warped = warp_region(c.canonical.region(pos, j), &disp);
                assert!(iou(&warped, c.canonical.region(tpos, j)) > 0.4);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn raising_tau_never_adds_matches(seed in 0u64..1000, noise in 0.0f64..2.0, lo in 0.0f64..0.9, bump in 0.0f64..0.09) {
            let b = corrupt_flow(&generate(&BandedScene::default().spec(seed)).unwrap(), noise, seed);
            let seq = &b.sequence;
            let frames = [2, 6, 10, 14];
            let hi = lo + bump;
            let a = build_table(10, &frames, &seq.superpixels, &seq.flows, lo).unwrap();
            let z = build_table(10, &frames, &seq.superpixels, &seq.flows, hi).unwrap();
            prop_assert!(z.table.num_rows() <= a.table.num_rows());
        }
    }
}
