//! CART regression tree on 2-D labels.
//!
//! Growth works on "instances" (bootstrap draws). For every feature the tree
//! keeps the instances sorted by that feature; each node owns the same
//! contiguous range in all of these arrays, and a split stably partitions the
//! range, so no node ever re-sorts.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: [f64; 2],
        count: usize,
    },
}

/// Nodes stored flat; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                TreeNode::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = ([f64; 2], usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            TreeNode::Leaf { value, count } => Some((value, count)),
            _ => None,
        })
    }
}

/// Feature-major copy of the training matrix plus each feature's global
/// sort order; shared by all trees of a fit.
pub(crate) struct Columns {
    pub n: usize,
    pub d: usize,
    pub cols: Vec<f64>,
    pub order: Vec<u32>,
}

impl Columns {
    pub fn new(rows: &[Vec<f64>], d: usize) -> Self {
        let n = rows.len();
        let mut cols = vec![0.0; n * d];
        for (i, r) in rows.iter().enumerate() {
            for (f, &v) in r.iter().enumerate() {
                cols[f * n + i] = v;
            }
        }
        let mut order = Vec::with_capacity(n * d);
        let mut idx: Vec<u32> = Vec::with_capacity(n);
        for f in 0..d {
            let col = &cols[f * n..(f + 1) * n];
            idx.clear();
            idx.extend(0..n as u32);
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            order.extend_from_slice(&idx);
        }
        Self {
            n,
            d,
            cols,
            order,
        }
    }

    #[inline]
    fn value(&self, f: usize, sample: u32) -> f64 {
        self.cols[f * self.n + sample as usize]
    }
}

pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: usize,
}

struct Builder<'a> {
    data: &'a Columns,
    p: &'a GrowParams,
    /// instance -> sample
    sample_of: Vec<u32>,
    /// label of each instance
    inst_label: Vec<[f64; 2]>,
    /// per feature, instances sorted by value; `d * m` entries
    sorted: Vec<u32>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<TreeNode>,
    rng: ChaCha8Rng,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
    /// number of instances going left
    n_left: usize,
}

impl Builder<'_> {
    fn m(&self) -> usize {
        self.sample_of.len()
    }

    fn label(&self, inst: u32) -> [f64; 2] {
        self.inst_label[inst as usize]
    }

    fn leaf(&self, insts: &[u32]) -> TreeNode {
        let mut s = [0.0; 2];
        for &inst in insts {
            let y = self.label(inst);
            s[0] += y[0];
            s[1] += y[1];
        }
        let n = insts.len() as f64;
        TreeNode::Leaf {
            value: [s[0] / n, s[1] / n],
            count: insts.len(),
        }
    }

    /// Label sum of a splittable node, `None` if it is too small or pure.
    fn splittable(&self, insts: &[u32]) -> Option<[f64; 2]> {
        if insts.len() < 2 * self.p.min_leaf.max(1) {
            return None;
        }
        let first = self.label(insts[0]);
        let mut total = [0.0; 2];
        let mut constant = true;
        for &inst in insts {
            let y = self.label(inst);
            constant &= y == first;
            total[0] += y[0];
            total[1] += y[1];
        }
        (!constant).then_some(total)
    }

    fn candidates(&mut self) -> Vec<usize> {
        let d = self.data.d;
        let k = self.p.features_per_split.clamp(1, d);
        let mut feats = sample(&mut self.rng, d, k).into_vec();
        feats.sort_unstable();
        feats
    }

    fn accept(best: Option<BestSplit>, total: [f64; 2], n: usize) -> Option<BestSplit> {
        let parent = (total[0] * total[0] + total[1] * total[1]) / n as f64;
        best.filter(|b| b.score - parent > 1e-12 * parent.abs().max(1e-300))
    }

    fn find_split(&mut self, lo: usize, hi: usize) -> Option<BestSplit> {
        let total = self.splittable(&self.sorted[lo..hi])?;
        let n = hi - lo;
        let min_leaf = self.p.min_leaf.max(1);
        let m = self.m();
        let mut best: Option<BestSplit> = None;
        for f in self.candidates() {
            let range = &self.sorted[f * m + lo..f * m + hi];
            let mut left = [0.0; 2];
            for i in 0..n - 1 {
                let inst = range[i];
                let y = self.label(inst);
                left[0] += y[0];
                left[1] += y[1];
                let nl = i + 1;
                if nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let v = self.data.value(f, self.sample_of[inst as usize]);
                let next = self.data.value(f, self.sample_of[range[i + 1] as usize]);
                if v == next {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                // SSE reduction up to the constant parent term
                let score = (left[0] * left[0] + left[1] * left[1]) / nl as f64
                    + (right[0] * right[0] + right[1] * right[1]) / (n - nl) as f64;
                if best.as_ref().map_or(true, |b| score > b.score) {
                    let mut threshold = 0.5 * (v + next);
                    // midpoint can round up to `next` for adjacent floats
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        score,
                        feature: f,
                        threshold,
                        n_left: nl,
                    });
                }
            }
        }
        Self::accept(best, total, n)
    }

    fn partition(&mut self, lo: usize, hi: usize, split: &BestSplit) {
        let m = self.m();
        let f = split.feature;
        for &inst in &self.sorted[f * m + lo..f * m + hi] {
            let v = self.data.value(f, self.sample_of[inst as usize]);
            self.goes_left[inst as usize] = v <= split.threshold;
        }
        let n = hi - lo;
        let goes_left = &self.goes_left;
        let scratch = &mut self.scratch[..n];
        for g in 0..self.data.d {
            let range = &mut self.sorted[g * m + lo..g * m + hi];
            // branch-free stable partition: both writes happen, one cursor advances
            let (mut w, mut r) = (0, 0);
            for i in 0..n {
                let inst = range[i];
                let left = goes_left[inst as usize];
                range[w] = inst;
                scratch[r] = inst;
                w += left as usize;
                r += !left as usize;
            }
            debug_assert_eq!(w, split.n_left);
            range[w..].copy_from_slice(&scratch[..r]);
        }
    }

    fn can_split(&self, depth: usize) -> bool {
        self.p.max_depth.map_or(true, |md| depth < md)
    }

    fn grow(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: [0.0; 2],
            count: 0,
        });
        let split = if self.can_split(depth) { self.find_split(lo, hi) } else { None };
        match split {
            // any feature's range holds the node's instances
            None => self.nodes[id] = self.leaf(&self.sorted[lo..hi]),
            Some(s) => {
                self.partition(lo, hi, &s);
                let mid = lo + s.n_left;
                let left = self.grow(lo, mid, depth + 1);
                let right = self.grow(mid, hi, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Grows one tree on the samples listed in `draws` (with repetition).
pub(crate) fn grow_tree(data: &Columns, labels: &[[f64; 2]], draws: &[u32], p: &GrowParams, seed: u64) -> Tree {
    let m = draws.len();
    // instances grouped by sample so each feature order expands in one pass
    let mut count = vec![0u32; data.n];
    for &s in draws {
        count[s as usize] += 1;
    }
    let mut start = vec![0u32; data.n + 1];
    for s in 0..data.n {
        start[s + 1] = start[s] + count[s];
    }
    let mut sample_of = vec![0u32; m];
    for s in 0..data.n {
        for k in start[s]..start[s + 1] {
            sample_of[k as usize] = s as u32;
        }
    }
    let mut sorted = Vec::with_capacity(data.d * m);
    for f in 0..data.d {
        for &s in &data.order[f * data.n..(f + 1) * data.n] {
            sorted.extend(start[s as usize]..start[s as usize + 1]);
        }
    }
    let inst_label = sample_of.iter().map(|&s| labels[s as usize]).collect();
    let mut b = Builder {
        data,
        p,
        sample_of,
        inst_label,
        sorted,
        goes_left: vec![false; m],
        scratch: vec![0; m],
        nodes: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    b.grow(0, m, 0);
    Tree { nodes: b.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sse(labels: &[[f64; 2]]) -> f64 {
        let n = labels.len() as f64;
        (0..2)
            .map(|a| {
                let m = labels.iter().map(|l| l[a]).sum::<f64>() / n;
                labels.iter().map(|l| (l[a] - m).powi(2)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn stump_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let d = 3;
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..d).map(|_| (rng.gen_range(0..8) as f64) * 0.5).collect())
                .collect();
            let labels: Vec<[f64; 2]> = (0..20).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
            // brute force: every feature and every midpoint between distinct values
            let mut best = (f64::INFINITY, 0, 0.0);
            for f in 0..d {
                let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                for w in vals.windows(2) {
                    let t = 0.5 * (w[0] + w[1]);
                    let (l, r): (Vec<_>, Vec<_>) = (0..20).partition(|&i| rows[i][f] <= t);
                    let cost = sse(&l.iter().map(|&i| labels[i]).collect::<Vec<_>>())
                        + sse(&r.iter().map(|&i| labels[i]).collect::<Vec<_>>());
                    if cost < best.0 - 1e-12 {
                        best = (cost, f, t);
                    }
                }
            }
            let data = Columns::new(&rows, d);
            let draws: Vec<u32> = (0..20).collect();
            let p = GrowParams {
                max_depth: Some(1),
                min_leaf: 1,
                features_per_split: d,
            };
            let tree = grow_tree(&data, &labels, &draws, &p, trial);
            match tree.nodes[0] {
                TreeNode::Split { feature, threshold, .. } => {
                    assert_eq!((feature, threshold), (best.1, best.2), "trial {trial}");
                }
                _ => panic!("expected a split"),
            }
        }
    }

    #[test]
    fn leaves_respect_min_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let labels: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] * 3.0, r[1] - r[0]]).collect();
        let data = Columns::new(&rows, 2);
        let draws: Vec<u32> = (0..200).map(|_| rng.gen_range(0..200)).collect();
        let p = GrowParams {
            max_depth: None,
            min_leaf: 5,
            features_per_split: 1,
        };
        let tree = grow_tree(&data, &labels, &draws, &p, 3);
        assert!(tree.leaves().all(|(_, c)| c >= 5));
        assert_eq!(tree.leaves().map(|(_, c)| c).sum::<usize>(), 200);
    }
}
