//! Payload parsing, timestamp interpolation, ground-truth merging and frame
//! assembly.

pub mod dataset;
pub mod frames;
pub mod interp;
pub mod merge;
pub mod parse;

use std::collections::BTreeMap;

pub use dataset::{read_dataset, write_dataset};
pub use frames::{generate_frames, Frame, FrameDataset, FrameStats};
pub use interp::{interpolate_timestamps, InterpolatedSeries};
pub use merge::{merge_with_ground_truth, MergedItem, MergedSeries};
pub use parse::{parse_payload_log, BufferBatch};

use crate::error::Result;
use crate::grid::{GridSpec, GroundTruthSample, NodeId};
use crate::par::Exec;

/// Interpolates and merges every node (independently, results in id order),
/// then assembles frames.
pub fn synchronize(
    grid: &GridSpec,
    batches: &BTreeMap<NodeId, Vec<BufferBatch>>,
    gt: &[GroundTruthSample],
    rtt: f64,
    exec: Exec,
) -> Result<(FrameDataset, FrameStats)> {
    let nodes: Vec<(&NodeId, &Vec<BufferBatch>)> = batches.iter().collect();
    let merged = exec.map(&nodes, |(id, b)| {
        let series = interpolate_timestamps(**id, b, rtt)?;
        merge_with_ground_truth(&series, gt)
    });
    let merged: Vec<MergedSeries> = merged.into_iter().collect::<Result<_>>()?;
    generate_frames(grid, merged)
}
