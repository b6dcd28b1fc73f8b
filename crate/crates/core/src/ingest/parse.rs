use std::collections::BTreeMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Measurement, NodeId, FEATURES_PER_NODE};
use crate::sim::log::PayloadLine;

/// One flushed node buffer: samples in capture order and the poll time.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferBatch {
    pub node: NodeId,
    pub t: f64,
    pub samples: Vec<Measurement>,
}

/// Parses `/imu_reader/<strip>/<node>` into a node id (not range-checked).
pub fn parse_topic(topic: &str) -> Option<NodeId> {
    let rest = topic.strip_prefix("/imu_reader/")?;
    let (s, n) = rest.split_once('/')?;
    Some(NodeId::new(s.parse().ok()?, n.parse().ok()?))
}

/// Reads a payload log into per-node batch lists sorted by poll time.
/// Payloads without samples are dropped.
pub fn parse_payload_log<R: BufRead>(reader: R, grid: &GridSpec) -> Result<BTreeMap<NodeId, Vec<BufferBatch>>> {
    let mut out: BTreeMap<NodeId, Vec<BufferBatch>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PayloadLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let node = parse_topic(&rec.topic).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("bad topic {:?}", rec.topic),
        })?;
        if !grid.contains(node) {
            return Err(Error::Range {
                line: lineno,
                msg: format!("node {node} outside {}x{} grid", grid.n_strips, grid.nodes_per_strip),
            });
        }
        if !rec.t.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: "non-finite poll time".into(),
            });
        }
        let mut samples = Vec::with_capacity(rec.samples.len());
        for s in &rec.samples {
            let m = Measurement::from_slice(s).ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("sample has {} values, expected {FEATURES_PER_NODE}", s.len()),
            })?;
            samples.push(m);
        }
        if samples.is_empty() {
            continue;
        }
        out.entry(node).or_default().push(BufferBatch { node, t: rec.t, samples });
    }
    for batches in out.values_mut() {
        batches.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    Ok(out)
}
