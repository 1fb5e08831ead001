//! Region correspondences across video frames.
//!
//! Two regions match when the overlap of each with the other, warped by
//! optical flow, clears a threshold in both directions. Matches are then
//! used to relabel the sampled frames onto the target frame's region
//! indices, which is the input the pooling layers expect.

mod matching;
mod sampling;
mod stats;
mod warp;

pub use matching::{
    build_table, match_frame_pair, Correspondence, CorrespondenceTable, MatchScore, PairMatch,
    TableEntry,
};
pub use sampling::{candidate_frames, sample_frames, Direction, SamplingPolicy};
pub use stats::{correspondence_stats, default_size_edges, stats_csv, SizeBucket};
pub use warp::{compose_flow, iou, warp_region, Displacement};

/// Correspondence threshold used throughout unless configured otherwise.
pub const DEFAULT_TAU: f64 = 0.4;
