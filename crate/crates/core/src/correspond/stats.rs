use std::fmt::Write as _;

use super::matching::CorrespondenceTable;
use crate::grid::SuperpixelStack;

/// Powers of two up to 1024, then 2000; the last bucket is open-ended.
pub fn default_size_edges() -> Vec<usize> {
    let mut edges: Vec<usize> = (0..=10).map(|k| 1 << k).collect();
    edges.push(2000);
    edges
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeBucket {
    /// Inclusive lower bound on region size in pixels.
    pub lo: usize,
    /// Exclusive upper bound; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub regions: usize,
    pub fraction: f64,
    pub mean_matches: f64,
}

/// Region-size histogram of target regions and the mean matched-frame count
/// `K` per size bucket. Only non-empty buckets are reported.
///
/// Each table is read against `superpixels`, the raw stack whose frame
/// `table.target` holds the target regions.
pub fn correspondence_stats(
    tables: &[CorrespondenceTable],
    superpixels: &SuperpixelStack,
    edges: &[usize],
) -> Vec<SizeBucket> {
    let bucket_of = |size: usize| edges.iter().rposition(|&e| size >= e);
    let mut counts = vec![0usize; edges.len()];
    let mut k_sums = vec![0usize; edges.len()];
    let mut total = 0usize;
    for table in tables {
        for (&j, entries) in &table.regions {
            let size = superpixels.region(table.target, j as usize).len();
            if let Some(b) = bucket_of(size) {
                counts[b] += 1;
                k_sums[b] += entries.len();
                total += 1;
            }
        }
    }
    (0..edges.len())
        .filter(|&b| counts[b] > 0)
        .map(|b| SizeBucket {
            lo: edges[b],
            hi: edges.get(b + 1).copied(),
            regions: counts[b],
            fraction: counts[b] as f64 / total as f64,
            mean_matches: k_sums[b] as f64 / counts[b] as f64,
        })
        .collect()
}

/// CSV `size_lo,size_hi,regions,fraction,mean_matches`; an open upper bound
/// is written as `inf`.
pub fn stats_csv(buckets: &[SizeBucket]) -> String {
    let mut out = String::from("size_lo,size_hi,regions,fraction,mean_matches\n");
    for b in buckets {
        let hi = b.hi.map_or_else(|| "inf".to_string(), |h| h.to_string());
        let _ = writeln!(
            out,
            "{},{hi},{},{},{}",
            b.lo, b.regions, b.fraction, b.mean_matches
        );
    }
    out
}
