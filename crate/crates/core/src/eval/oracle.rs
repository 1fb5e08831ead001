use crate::correspond::CorrespondenceTable;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, SuperpixelStack, IGNORE_LABEL};

fn check_shape(superpixels: &SuperpixelStack, frame: usize, gt: &LabelMap) -> Result<()> {
    if frame >= superpixels.frames() {
        return Err(Error::FrameOutOfRange {
            frame,
            frames: superpixels.frames(),
        });
    }
    if gt.height() != superpixels.height() || gt.width() != superpixels.width() {
        return Err(Error::ShapeMismatch(format!(
            "labels are {}x{}, superpixels are {}x{}",
            gt.height(),
            gt.width(),
            superpixels.height(),
            superpixels.width()
        )));
    }
    Ok(())
}

/// Modal ground-truth class of one pixel set; ties go to the lowest class,
/// and a set with only ignored pixels stays ignored.
fn majority(pixels: &[u32], gt: &LabelMap) -> u32 {
    let mut votes: Vec<usize> = Vec::new();
    for &q in pixels {
        let l = gt.labels()[q as usize];
        if l != IGNORE_LABEL {
            if votes.len() <= l as usize {
                votes.resize(l as usize + 1, 0);
            }
            votes[l as usize] += 1;
        }
    }
    let mut best = IGNORE_LABEL;
    let mut best_votes = 0;
    for (class, &n) in votes.iter().enumerate() {
        if n > best_votes {
            best = class as u32;
            best_votes = n;
        }
    }
    best
}

/// Labels every superpixel of `frame` with the majority ground-truth class
/// of its pixels.
pub fn oracle_label(superpixels: &SuperpixelStack, frame: usize, gt: &LabelMap) -> Result<LabelMap> {
    check_shape(superpixels, frame, gt)?;
    let mut out = vec![IGNORE_LABEL; gt.labels().len()];
    for j in superpixels.used_regions(frame) {
        let pixels = superpixels.region(frame, j);
        let label = majority(pixels, gt);
        for &q in pixels {
            out[q as usize] = label;
        }
    }
    LabelMap::new(gt.height(), gt.width(), out)
}

/// Transfers ground truth from a reference frame to the table's target
/// frame along region correspondences.
///
/// A target region matched in `source_frame` takes the majority class of
/// its matched source region; other regions stay ignored. Also returns the
/// fraction of target pixels that received a label.
pub fn oracle_propagate(
    table: &CorrespondenceTable,
    superpixels: &SuperpixelStack,
    source_frame: usize,
    source_gt: &LabelMap,
) -> Result<(LabelMap, f64)> {
    check_shape(superpixels, source_frame, source_gt)?;
    let target = table.target;
    if target >= superpixels.frames() {
        return Err(Error::FrameMismatch(format!(
            "table target {target} is outside a {}-frame sequence",
            superpixels.frames()
        )));
    }
    if let Some(&j) = table
        .regions
        .keys()
        .find(|&&j| j as usize >= superpixels.num_regions() || !superpixels.is_present(target, j as usize))
    {
        return Err(Error::FrameMismatch(format!(
            "table region {j} does not exist in frame {target}"
        )));
    }
    let mut out = vec![IGNORE_LABEL; source_gt.labels().len()];
    for (&j, entries) in &table.regions {
        let Some(entry) = entries.iter().find(|e| e.frame == source_frame) else {
            continue;
        };
        let source = superpixels.region(source_frame, entry.source_region as usize);
        let label = majority(source, source_gt);
        for &q in superpixels.region(target, j as usize) {
            out[q as usize] = label;
        }
    }
    let covered = out.iter().filter(|&&l| l != IGNORE_LABEL).count();
    let coverage = covered as f64 / out.len() as f64;
    Ok((LabelMap::new(source_gt.height(), source_gt.width(), out)?, coverage))
}
