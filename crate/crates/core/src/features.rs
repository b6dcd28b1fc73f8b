//! Feature preparation for both estimators.
//!
//! Forest path: [`select_channels`] → [`MinMaxParams`] (per feature column) →
//! [`aggregate_neighborhood`]. Network path: [`select_channels`] →
//! [`ZNormParams`] (per channel, pooled over all nodes) → [`to_grid_tensor`].
//! Parameters are fit on training frames only and applied unchanged to test
//! frames; scaled test values are not clipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, FEATURES_PER_NODE};
use crate::ingest::Frame;
use crate::nn::Tensor;

/// Per-node channels kept for localization: magnetometer xyz and RSSI.
pub const SELECTED: [usize; 4] = [6, 7, 8, 9];
pub const CHANNELS: usize = SELECTED.len();

/// Drops accelerometer and gyroscope channels. Fails unless the frame carries
/// the full ten features per node, so a second application is an error.
pub fn select_channels(frame: &Frame, grid: &GridSpec) -> Result<Frame> {
    let p = grid.node_count();
    if frame.features.len() != p * FEATURES_PER_NODE {
        return Err(Error::Schema(format!(
            "expected {} features for channel selection, got {}",
            p * FEATURES_PER_NODE,
            frame.features.len()
        )));
    }
    let mut features = Vec::with_capacity(p * CHANNELS);
    for node in frame.features.chunks_exact(FEATURES_PER_NODE) {
        features.extend(SELECTED.iter().map(|&k| node[k]));
    }
    Ok(Frame {
        t: frame.t,
        label: frame.label,
        features,
    })
}

pub fn select_all(frames: &[Frame], grid: &GridSpec) -> Result<Vec<Frame>> {
    frames.iter().map(|f| select_channels(f, grid)).collect()
}

fn check_width(frames: &[Frame], width: usize) -> Result<()> {
    match frames.iter().find(|f| f.features.len() != width) {
        Some(f) => Err(Error::Schema(format!("frame has {} features, expected {width}", f.features.len()))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxParams {
    pub fn fit(train: &[Frame]) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::Input("min-max scaling needs at least one frame".into()))?;
        let width = first.features.len();
        check_width(train, width)?;
        let mut mins = vec![f64::INFINITY; width];
        let mut maxs = vec![f64::NEG_INFINITY; width];
        for f in train {
            for (j, &v) in f.features.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    /// `(x - min) / (max - min)`; constant columns map to 0.
    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        check_width(std::slice::from_ref(frame), self.mins.len())?;
        let features = frame
            .features
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(&x, (&lo, &hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
            .collect();
        Ok(Frame {
            t: frame.t,
            label: frame.label,
            features,
        })
    }
}

pub fn fit_minmax(train: &[Frame]) -> Result<MinMaxParams> {
    MinMaxParams::fit(train)
}

pub fn apply_minmax(params: &MinMaxParams, frame: &Frame) -> Result<Frame> {
    params.apply(frame)
}

/// Replaces each node's features by itself plus the unweighted sum over its
/// grid neighbors.
pub fn aggregate_neighborhood(frame: &Frame, grid: &GridSpec) -> Result<Frame> {
    aggregate_with(frame, grid, &grid.neighbor_table())
}

pub(crate) fn aggregate_with(frame: &Frame, grid: &GridSpec, table: &[Vec<usize>]) -> Result<Frame> {
    let p = grid.node_count();
    if frame.features.is_empty() || frame.features.len() % p != 0 {
        return Err(Error::Schema(format!("{} features do not split over {p} nodes", frame.features.len())));
    }
    let c = frame.features.len() / p;
    let mut out = frame.features.clone();
    for (i, nbs) in table.iter().enumerate() {
        for &j in nbs {
            for k in 0..c {
                out[i * c + k] += frame.features[j * c + k];
            }
        }
    }
    Ok(Frame {
        t: frame.t,
        label: frame.label,
        features: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZNormParams {
    pub means: Vec<f64>,
    /// population standard deviations
    pub sds: Vec<f64>,
}

impl ZNormParams {
    /// Per-channel statistics pooled over nodes and frames.
    pub fn fit(train: &[Frame], grid: &GridSpec) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::Input("z-normalization needs at least two frames".into()));
        }
        let p = grid.node_count();
        let width = train[0].features.len();
        if width % p != 0 {
            return Err(Error::Schema(format!("{width} features do not split over {p} nodes")));
        }
        check_width(train, width)?;
        let c = width / p;
        let n = (train.len() * p) as f64;
        let mut means = vec![0.0; c];
        for f in train {
            for node in f.features.chunks_exact(c) {
                for k in 0..c {
                    means[k] += node[k];
                }
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for f in train {
            for node in f.features.chunks_exact(c) {
                for k in 0..c {
                    let d = node[k] - means[k];
                    var[k] += d * d;
                }
            }
        }
        let sds = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { means, sds })
    }

    /// `(x - mean) / sd` per channel; zero-variance channels map to 0.
    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        let c = self.means.len();
        if c == 0 || frame.features.len() % c != 0 {
            return Err(Error::Schema(format!("{} features do not split into {c} channels", frame.features.len())));
        }
        let mut features = frame.features.clone();
        for node in features.chunks_exact_mut(c) {
            for k in 0..c {
                node[k] = if self.sds[k] > 0.0 { (node[k] - self.means[k]) / self.sds[k] } else { 0.0 };
            }
        }
        Ok(Frame {
            t: frame.t,
            label: frame.label,
            features,
        })
    }
}

pub fn fit_znorm(train: &[Frame], grid: &GridSpec) -> Result<ZNormParams> {
    ZNormParams::fit(train, grid)
}

pub fn apply_znorm(params: &ZNormParams, frame: &Frame) -> Result<Frame> {
    params.apply(frame)
}

/// Packs a 4-channel frame into `[n_strips, nodes_per_strip, 4]`.
pub fn to_grid_tensor(frame: &Frame, grid: &GridSpec) -> Result<Tensor> {
    let want = grid.node_count() * CHANNELS;
    if frame.features.len() != want {
        return Err(Error::Shape {
            layer: "grid tensor".into(),
            msg: format!("frame has {} features, expected {want}", frame.features.len()),
        });
    }
    // node-major layout already matches row-major [strip][node][channel]
    Tensor::from_vec(vec![grid.n_strips, grid.nodes_per_strip, CHANNELS], frame.features.clone())
}

pub fn from_grid_tensor(tensor: &Tensor, grid: &GridSpec, t: f64, label: [f64; 2]) -> Result<Frame> {
    if tensor.shape() != [grid.n_strips, grid.nodes_per_strip, CHANNELS] {
        return Err(Error::Shape {
            layer: "grid tensor".into(),
            msg: format!("shape {:?} does not match grid", tensor.shape()),
        });
    }
    Ok(Frame {
        t,
        label,
        features: tensor.data().to_vec(),
    })
}

/// Sidecar file holding both scalers, stored next to the model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSidecar {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ScalingSidecar {
    pub fn new(minmax: &MinMaxParams, znorm: &ZNormParams) -> Self {
        Self {
            mins: minmax.mins.clone(),
            maxs: minmax.maxs.clone(),
            means: znorm.means.clone(),
            sds: znorm.sds.clone(),
        }
    }

    pub fn minmax(&self) -> MinMaxParams {
        MinMaxParams {
            mins: self.mins.clone(),
            maxs: self.maxs.clone(),
        }
    }

    pub fn znorm(&self) -> ZNormParams {
        ZNormParams {
            means: self.means.clone(),
            sds: self.sds.clone(),
        }
    }
}

/// Forest inputs: selected channels, min-max scaled, neighborhood summed.
pub fn forest_features(frames: &[Frame], grid: &GridSpec, params: &MinMaxParams) -> Result<Vec<Vec<f64>>> {
    let table = grid.neighbor_table();
    frames
        .iter()
        .map(|f| {
            let scaled = params.apply(f)?;
            Ok(aggregate_with(&scaled, grid, &table)?.features)
        })
        .collect()
}

/// Network inputs: selected channels, z-normalized, packed as grid tensors.
pub fn network_inputs(frames: &[Frame], grid: &GridSpec, params: &ZNormParams) -> Result<Vec<Tensor>> {
    frames.iter().map(|f| to_grid_tensor(&params.apply(f)?, grid)).collect()
}
