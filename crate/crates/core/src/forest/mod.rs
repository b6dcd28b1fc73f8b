//! Bagged CART regression forest predicting `(x, y)` per frame.

mod cv;
mod tree;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, default_grid, fold_bounds, grid as param_grid, CvEntry, CvReport, FOLDS};
pub use tree::{Tree, TreeNode};
use tree::{grow_tree, Columns, GrowParams};

use crate::error::{Error, Result};
use crate::fsio::{read_json, write_json};
use crate::par::Exec;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hit `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means a third of the features, rounded up.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config("features_per_split must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        Ok(())
    }

    pub fn split_features(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub n_features: usize,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

fn check_training(features: &[Vec<f64>], labels: &[[f64; 2]]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::Fit("no training samples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Fit(format!("{} feature rows but {} labels", features.len(), labels.len())));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Fit("zero-width features".into()));
    }
    if let Some(i) = features.iter().position(|r| r.len() != d) {
        return Err(Error::Fit(format!("row {i} has {} features, expected {d}", features[i].len())));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) || labels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite training values".into()));
    }
    Ok(d)
}

pub(crate) fn fit_prepared(
    data: &Columns,
    labels: &[[f64; 2]],
    params: &ForestParams,
    exec: Exec,
) -> Vec<Tree> {
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features_per_split: params.split_features(data.d),
    };
    let n = data.n;
    exec.map_range(params.n_trees, |i| {
        let seed = params.seed.wrapping_add(i as u64);
        let draws: Vec<u32> = if params.bootstrap {
            // separate stream for the resample so split sampling is unaffected by n
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
        } else {
            (0..n as u32).collect()
        };
        grow_tree(data, labels, &draws, &grow, seed)
    })
}

pub fn fit_forest(features: &[Vec<f64>], labels: &[[f64; 2]], params: &ForestParams, exec: Exec) -> Result<Forest> {
    params.validate()?;
    let d = check_training(features, labels)?;
    let data = Columns::new(features, d);
    Ok(Forest {
        format_version: FORMAT_VERSION,
        n_features: d,
        params: params.clone(),
        trees: fit_prepared(&data, labels, params, exec),
    })
}

/// Mean of the first `k` trees' predictions, summed in tree order.
pub(crate) fn predict_prefix(trees: &[Tree], k: usize, x: &[f64]) -> [f64; 2] {
    let mut s = [0.0; 2];
    for t in &trees[..k] {
        let p = t.predict(x);
        s[0] += p[0];
        s[1] += p[1];
    }
    [s[0] / k as f64, s[1] / k as f64]
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.n_features {
            return Err(Error::Schema(format!(
                "{} features, forest was trained on {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(predict_prefix(&self.trees, self.trees.len(), x))
    }

    pub fn predict_all(&self, rows: &[Vec<f64>], exec: Exec) -> Result<Vec<[f64; 2]>> {
        exec.map(rows, |r| self.predict(r)).into_iter().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Forest = read_json(path)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "{}: forest format {} unsupported",
                path.display(),
                f.format_version
            )));
        }
        Ok(f)
    }
}

pub fn predict_forest(forest: &Forest, features: &[f64]) -> Result<[f64; 2]> {
    forest.predict(features)
}
