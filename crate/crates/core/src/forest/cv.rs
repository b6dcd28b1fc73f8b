use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tree::Columns;
use super::{check_training, fit_prepared, predict_prefix, ForestParams};
use crate::error::{Error, Result};
use crate::eval::euclid;
use crate::par::Exec;

pub const FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub params: ForestParams,
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Half-open frame index ranges of the held-out blocks.
    pub folds: Vec<(usize, usize)>,
    pub entries: Vec<CvEntry>,
    pub chosen: ForestParams,
}

/// `{50, 100, 200}` trees by depth `{8, 16, unlimited}` around `base`.
pub fn default_grid(base: &ForestParams) -> Vec<ForestParams> {
    grid(base, &[50, 100, 200], &[Some(8), Some(16), None])
}

pub fn grid(base: &ForestParams, trees: &[usize], depths: &[Option<usize>]) -> Vec<ForestParams> {
    let mut out = Vec::new();
    for &n_trees in trees {
        for &max_depth in depths {
            out.push(ForestParams {
                n_trees,
                max_depth,
                ..base.clone()
            });
        }
    }
    out
}

/// Contiguous blocks in frame order; sizes differ by at most one.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

/// K-fold grid search. Forests that differ only in `n_trees` share their
/// leading trees (tree `i` is seeded `seed + i`), so each group is grown
/// once at its largest size and smaller sizes are scored on the prefix.
pub fn cross_validate(
    features: &[Vec<f64>],
    labels: &[[f64; 2]],
    grid: &[ForestParams],
    exec: Exec,
) -> Result<CvReport> {
    if features.len() < FOLDS {
        return Err(Error::CrossValidation(format!(
            "{} samples, need at least {FOLDS}",
            features.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::CrossValidation("empty parameter grid".into()));
    }
    for p in grid {
        p.validate()?;
    }
    check_training(features, labels)?;
    let n = features.len();
    let folds = fold_bounds(n, FOLDS);

    // parameter sets that differ only in n_trees share one group
    let key = |p: &ForestParams| serde_json::to_string(&ForestParams { n_trees: 0, ..p.clone() }).expect("params serialize");
    let mut groups: BTreeMap<String, (ForestParams, BTreeSet<usize>)> = BTreeMap::new();
    for p in grid {
        groups.entry(key(p)).or_insert_with(|| (p.clone(), BTreeSet::new())).1.insert(p.n_trees);
    }

    let mut errors: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for &(lo, hi) in &folds {
        let train_rows: Vec<Vec<f64>> = features[..lo].iter().chain(&features[hi..]).cloned().collect();
        let train_labels: Vec<[f64; 2]> = labels[..lo].iter().chain(&labels[hi..]).copied().collect();
        let data = Columns::new(&train_rows, train_rows[0].len());
        for (k, (p, sizes)) in &groups {
            let params = ForestParams {
                n_trees: *sizes.last().expect("non-empty group"),
                ..p.clone()
            };
            let trees = fit_prepared(&data, &train_labels, &params, exec);
            for &size in sizes {
                let held: Vec<f64> = exec.map_range(hi - lo, |i| {
                    euclid(predict_prefix(&trees, size, &features[lo + i]), labels[lo + i])
                });
                let err = held.iter().sum::<f64>() / held.len() as f64;
                errors.entry((k.clone(), size)).or_default().push(err);
            }
        }
    }

    let mut entries = Vec::with_capacity(grid.len());
    for q in grid {
        let fold_errors = errors[&(key(q), q.n_trees)].clone();
        let mean_error = fold_errors.iter().sum::<f64>() / fold_errors.len() as f64;
        entries.push(CvEntry {
            params: q.clone(),
            fold_errors,
            mean_error,
        });
    }
    let best = entries
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_error.total_cmp(&b.1.mean_error).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok(CvReport {
        folds,
        chosen: entries[best].params.clone(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let labels = rows.iter().map(|r| [4.0 * r[0], 2.0 * r[1]]).collect();
        (rows, labels)
    }

    #[test]
    fn folds_partition_samples() {
        for n in [10, 37, 1000] {
            let f = fold_bounds(n, FOLDS);
            assert_eq!(f.len(), FOLDS);
            assert_eq!(f[0].0, 0);
            assert_eq!(f[FOLDS - 1].1, n);
            for w in f.windows(2) {
                assert_eq!(w[0].1, w[1].0);
                assert!(w[0].1 > w[0].0);
            }
        }
    }

    #[test]
    fn grid_search_reports_every_combination() {
        let (rows, labels) = data(60);
        let base = ForestParams::default();
        let g = grid(&base, &[2, 4, 8], &[Some(2), Some(4), None]);
        assert_eq!(default_grid(&base).len(), 9);
        let r = cross_validate(&rows, &labels, &g, Exec::Sequential).unwrap();
        assert_eq!(r.entries.len(), 9);
        assert!(r.entries.iter().all(|e| e.fold_errors.len() == FOLDS));
        let min = r.entries.iter().map(|e| e.mean_error).fold(f64::INFINITY, f64::min);
        let chosen = r.entries.iter().find(|e| e.params == r.chosen).unwrap();
        assert_eq!(chosen.mean_error, min);
        assert_eq!(r, cross_validate(&rows, &labels, &g, Exec::Parallel).unwrap());
    }

    #[test]
    fn prefix_scores_equal_direct_fits() {
        let (rows, labels) = data(40);
        let base = ForestParams {
            max_depth: Some(3),
            seed: 2,
            ..Default::default()
        };
        let both = cross_validate(&rows, &labels, &grid(&base, &[3, 6], &[Some(3)]), Exec::Sequential).unwrap();
        let only3 = cross_validate(&rows, &labels, &grid(&base, &[3], &[Some(3)]), Exec::Sequential).unwrap();
        assert_eq!(both.entries[0].fold_errors, only3.entries[0].fold_errors);
    }

    #[test]
    fn too_few_samples() {
        let (rows, labels) = data(9);
        assert!(matches!(
            cross_validate(&rows, &labels, &default_grid(&ForestParams::default()), Exec::Sequential),
            Err(Error::CrossValidation(_))
        ));
    }
}
