use super::parse::BufferBatch;
use crate::error::{Error, Result};
use crate::grid::{Measurement, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedSeries {
    pub node: NodeId,
    pub items: Vec<(Measurement, f64)>,
    /// Batches without samples; their poll time still bounds the next batch.
    pub skipped_empty: usize,
}

/// Spreads each batch's samples evenly over the interval since the previous
/// poll. Sample `j` (1-based) of batch `i` lands at `t[i-1] + j * dt` with
/// `dt = (t[i] - t[i-1]) / len`, so the last one sits exactly on the poll
/// time. The first batch is assumed to cover one `rtt` before its poll.
pub fn interpolate_timestamps(node: NodeId, batches: &[BufferBatch], rtt: f64) -> Result<InterpolatedSeries> {
    if !(rtt > 0.0) {
        return Err(Error::Config("rtt must be positive".into()));
    }
    for w in batches.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::Ordering(format!(
                "node {node}: batch times {} then {} are not strictly increasing",
                w[0].t, w[1].t
            )));
        }
    }
    let total: usize = batches.iter().map(|b| b.samples.len()).sum();
    let mut items = Vec::with_capacity(total);
    let mut skipped_empty = 0;
    let mut prev = match batches.first() {
        Some(b) => b.t - rtt,
        None => 0.0,
    };
    for b in batches {
        let len = b.samples.len();
        if len == 0 {
            skipped_empty += 1;
            prev = b.t;
            continue;
        }
        let dt = (b.t - prev) / len as f64;
        for (j, m) in b.samples.iter().enumerate() {
            let t = if j + 1 == len { b.t } else { prev + (j + 1) as f64 * dt };
            items.push((*m, t));
        }
        prev = b.t;
    }
    if skipped_empty > 0 {
        log::warn!("node {node}: skipped {skipped_empty} empty batches");
    }
    Ok(InterpolatedSeries {
        node,
        items,
        skipped_empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn batch(t: f64, n: usize) -> BufferBatch {
        BufferBatch {
            node: NodeId::new(1, 1),
            t,
            samples: vec![Measurement::default(); n],
        }
    }

    fn times(s: &InterpolatedSeries) -> Vec<f64> {
        s.items.iter().map(|x| x.1).collect()
    }

    #[test]
    fn equidistant_steps() {
        let s = interpolate_timestamps(NodeId::new(1, 1), &[batch(4.0, 8), batch(8.0, 10)], 4.0).unwrap();
        let t = times(&s);
        assert_eq!(t.len(), 18);
        for (k, v) in t[..8].iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.5 * (k + 1) as f64, epsilon = 1e-12);
        }
        for (k, v) in t[8..].iter().enumerate() {
            assert_abs_diff_eq!(*v, 4.0 + 0.4 * (k + 1) as f64, epsilon = 1e-12);
        }
        assert_eq!(t[7], 4.0);
        assert_eq!(t[17], 8.0);
    }

    #[test]
    fn single_sample_lands_on_poll() {
        let s = interpolate_timestamps(NodeId::new(1, 1), &[batch(3.0, 2), batch(7.3, 1)], 4.0).unwrap();
        assert_eq!(times(&s).last(), Some(&7.3));
    }

    #[test]
    fn empty_batches_skipped_but_bound_next() {
        let s = interpolate_timestamps(NodeId::new(1, 1), &[batch(4.0, 2), batch(8.0, 0), batch(10.0, 2)], 4.0).unwrap();
        assert_eq!(s.skipped_empty, 1);
        assert_eq!(times(&s), vec![2.0, 4.0, 9.0, 10.0]);
    }

    #[test]
    fn rejects_unordered() {
        let r = interpolate_timestamps(NodeId::new(1, 1), &[batch(4.0, 2), batch(4.0, 2)], 4.0);
        assert!(matches!(r, Err(Error::Ordering(_))));
    }

    proptest! {
        #[test]
        fn counts_anchor_and_monotone(
            gaps in proptest::collection::vec(0.01f64..8.0, 1..30),
            sizes in proptest::collection::vec(1usize..25, 30),
            t0 in 0.0f64..100.0,
        ) {
            let mut t = t0;
            let mut batches = Vec::new();
            for (k, g) in gaps.iter().enumerate() {
                t += g;
                batches.push(batch(t, sizes[k]));
            }
            let s = interpolate_timestamps(NodeId::new(1, 1), &batches, 4.0).unwrap();
            let total: usize = batches.iter().map(|b| b.samples.len()).sum();
            prop_assert_eq!(s.items.len(), total);
            let ts = times(&s);
            prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
            let mut end = 0;
            for b in &batches {
                end += b.samples.len();
                prop_assert_eq!(ts[end - 1], b.t);
            }
        }
    }
}
