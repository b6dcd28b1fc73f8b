use super::interp::InterpolatedSeries;
use crate::error::{Error, Result};
use crate::grid::{GroundTruthSample, Measurement, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedItem {
    pub measurement: Measurement,
    /// meters
    pub label: [f64; 2],
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedSeries {
    pub node: NodeId,
    pub items: Vec<MergedItem>,
}

/// Index of the element of the sorted slice `times` closest to `t`; ties go
/// to the earlier element.
pub fn nearest_index<T>(sorted: &[T], t: f64, key: impl Fn(&T) -> f64) -> usize {
    debug_assert!(!sorted.is_empty());
    let hi = sorted.partition_point(|x| key(x) < t);
    if hi == 0 {
        return 0;
    }
    if hi == sorted.len() {
        return sorted.len() - 1;
    }
    let lo = hi - 1;
    if (t - key(&sorted[lo])).abs() <= (key(&sorted[hi]) - t).abs() {
        lo
    } else {
        hi
    }
}

/// Labels every interpolated sample with the planar position (meters) of the
/// ground-truth sample nearest in time.
pub fn merge_with_ground_truth(series: &InterpolatedSeries, gt: &[GroundTruthSample]) -> Result<MergedSeries> {
    if gt.is_empty() {
        return Err(Error::Merge("ground truth is empty".into()));
    }
    if let Some(w) = gt.windows(2).find(|w| !(w[1].t > w[0].t)) {
        return Err(Error::Merge(format!(
            "ground truth not strictly increasing ({} then {})",
            w[0].t, w[1].t
        )));
    }
    let items = series
        .items
        .iter()
        .map(|(m, t)| {
            let j = nearest_index(gt, *t, |g| g.t);
            MergedItem {
                measurement: *m,
                label: gt[j].xy_meters(),
                t: *t,
            }
        })
        .collect();
    Ok(MergedSeries {
        node: series.node,
        items,
    })
}
