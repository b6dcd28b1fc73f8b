use super::merge::{nearest_index, MergedSeries};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, NodeId, FEATURES_PER_NODE};

/// One floor-wide snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// mean of the matched sample times
    pub t: f64,
    /// mean of the matched labels, meters
    pub label: [f64; 2],
    /// node-major feature vector (strip asc, node asc, then per-node channels)
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub grid: GridSpec,
    pub frames: Vec<Frame>,
}

impl FrameDataset {
    pub fn labels(&self) -> Vec<[f64; 2]> {
        self.frames.iter().map(|f| f.label).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }
}

/// Frame generation statistics, for logging and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStats {
    pub reference: NodeId,
    /// length of the shortest node series
    pub reference_len: usize,
    pub trimmed: usize,
}

/// Assembles frames around the node with the fewest samples. For each of its
/// samples, every node contributes the sample nearest in time (earlier on
/// ties); the frame label and time are plain means over all nodes. Reference
/// samples outside the common time range of all nodes are dropped.
pub fn generate_frames<I>(grid: &GridSpec, all_nodes: I) -> Result<(FrameDataset, FrameStats)>
where
    I: IntoIterator<Item = MergedSeries>,
{
    let p = grid.node_count();
    let mut slots: Vec<Option<MergedSeries>> = vec![None; p];
    for s in all_nodes {
        grid.check(s.node)?;
        let i = grid.index(s.node);
        if slots[i].is_some() {
            return Err(Error::Input(format!("node {} supplied twice", s.node)));
        }
        slots[i] = Some(s);
    }
    let missing: Vec<NodeId> = grid
        .nodes()
        .zip(&slots)
        .filter(|(_, s)| s.as_ref().map_or(true, |s| s.items.is_empty()))
        .map(|(id, _)| id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let series: Vec<MergedSeries> = slots.into_iter().map(|s| s.expect("checked above")).collect();
    for s in &series {
        if let Some(w) = s.items.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Ordering(format!("node {}: times {} then {}", s.node, w[0].t, w[1].t)));
        }
    }

    // strict `<` keeps the smallest id among equal lengths (grid order is id order)
    let mut reference = 0;
    for (i, s) in series.iter().enumerate() {
        if s.items.len() < series[reference].items.len() {
            reference = i;
        }
    }
    let lo = series.iter().map(|s| s.items[0].t).fold(f64::NEG_INFINITY, f64::max);
    let hi = series.iter().map(|s| s.items[s.items.len() - 1].t).fold(f64::INFINITY, f64::min);

    let ref_items = &series[reference].items;
    let mut frames = Vec::with_capacity(ref_items.len());
    let width = p * FEATURES_PER_NODE;
    for item in ref_items {
        let t_ref = item.t;
        if t_ref < lo || t_ref > hi {
            continue;
        }
        let mut features = Vec::with_capacity(width);
        let (mut sx, mut sy, mut st) = (0.0, 0.0, 0.0);
        for s in &series {
            let m = &s.items[nearest_index(&s.items, t_ref, |x| x.t)];
            features.extend_from_slice(&m.measurement.to_array());
            sx += m.label[0];
            sy += m.label[1];
            st += m.t;
        }
        let n = p as f64;
        frames.push(Frame {
            t: st / n,
            label: [sx / n, sy / n],
            features,
        });
    }
    let stats = FrameStats {
        reference: grid.node_at(reference),
        reference_len: ref_items.len(),
        trimmed: ref_items.len() - frames.len(),
    };
    Ok((FrameDataset { grid: *grid, frames }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Measurement;
    use crate::ingest::merge::MergedItem;

    fn series(grid: &GridSpec, id: NodeId, ts: &[f64]) -> MergedSeries {
        let base = grid.index(id) as f64;
        MergedSeries {
            node: id,
            items: ts
                .iter()
                .map(|&t| MergedItem {
                    measurement: Measurement {
                        rssi: base + t,
                        ..Default::default()
                    },
                    label: [t, 2.0 * t],
                    t,
                })
                .collect(),
        }
    }

    #[test]
    fn reference_is_shortest_series() {
        let g = GridSpec::unit_spaced(3, 1).unwrap();
        let a = series(&g, NodeId::new(1, 1), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let b = series(&g, NodeId::new(2, 1), &[0.0, 0.6, 1.2, 1.8, 2.4, 3.0, 4.0]);
        let c = series(&g, NodeId::new(3, 1), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]);
        let (ds, stats) = generate_frames(&g, vec![c, a, b]).unwrap();
        assert_eq!(stats.reference, NodeId::new(1, 1));
        assert_eq!(stats.reference_len, 5);
        assert_eq!(ds.frames.len(), 5);
        assert!(ds.frames.iter().all(|f| f.features.len() == 3 * FEATURES_PER_NODE));
    }

    #[test]
    fn identical_timestamps_keep_label() {
        let g = GridSpec::unit_spaced(2, 2).unwrap();
        let ts = [0.5, 1.0, 1.5];
        let all: Vec<_> = g.nodes().map(|id| series(&g, id, &ts)).collect();
        let (ds, stats) = generate_frames(&g, all).unwrap();
        assert_eq!(stats.trimmed, 0);
        for (f, t) in ds.frames.iter().zip(ts) {
            assert_eq!(f.label, [t, 2.0 * t]);
            assert_eq!(f.t, t);
        }
    }

    #[test]
    fn leading_and_trailing_trimmed() {
        let g = GridSpec::unit_spaced(2, 1).unwrap();
        let a = series(&g, NodeId::new(1, 1), &[0.0, 1.0, 2.0, 3.0]);
        let b = series(&g, NodeId::new(2, 1), &[0.9, 1.4, 1.9, 2.4, 2.9]);
        let (ds, stats) = generate_frames(&g, vec![a, b]).unwrap();
        assert_eq!(stats.trimmed, 2);
        assert_eq!(ds.frames.len(), 2);
    }

    #[test]
    fn missing_nodes_listed() {
        let g = GridSpec::unit_spaced(2, 2).unwrap();
        let a = series(&g, NodeId::new(1, 1), &[0.0]);
        let b = series(&g, NodeId::new(2, 2), &[]);
        match generate_frames(&g, vec![a, b]) {
            Err(Error::IncompleteGrid(ids)) => {
                assert_eq!(ids, vec![NodeId::new(1, 2), NodeId::new(2, 1), NodeId::new(2, 2)])
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
