//! Segmentation quality measures and the comparison baselines.

mod bench;
mod boundary;
mod metrics;
mod oracle;
mod pixel;

pub use bench::{Benchmark, Variant};
pub use boundary::{boundary_pr, bpr_curve_csv, BoundaryMap, BoundaryScore};
pub use metrics::{metrics, ConfusionMatrix, Metrics};
pub use oracle::{oracle_label, oracle_propagate};
pub use pixel::pixel_correspondence_baseline;

/// Boundary matching tolerance in pixels.
pub const DEFAULT_BPR_TOLERANCE: f64 = 2.0;
