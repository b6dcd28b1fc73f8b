//! A trained network together with its label scaling, persisted as a flat
//! little-endian `f64` weight file plus a JSON manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadOutput, Network, NetworkSpec, ParamShape, Tensor};
use crate::error::{Error, Result};
use crate::fsio::{read_json, sha256_file, write_atomic, write_json};
use crate::par::Exec;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "model.json";
const FORMAT_VERSION: u32 = 1;

/// Per-axis standardization of the position labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
}

impl Default for LabelScaler {
    fn default() -> Self {
        Self {
            mean: [0.0; 2],
            sd: [1.0; 2],
        }
    }
}

impl LabelScaler {
    pub fn fit(labels: &[[f64; 2]]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("no labels to scale".into()));
        }
        let n = labels.len() as f64;
        let mut s = Self::default();
        for a in 0..2 {
            let mean = labels.iter().map(|l| l[a]).sum::<f64>() / n;
            let var = labels.iter().map(|l| (l[a] - mean).powi(2)).sum::<f64>() / n;
            s.mean[a] = mean;
            s.sd[a] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(s)
    }

    pub fn normalize(&self, y: [f64; 2]) -> [f64; 2] {
        [(y[0] - self.mean[0]) / self.sd[0], (y[1] - self.mean[1]) / self.sd[1]]
    }
}

/// Head output mapped back to metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub skew: [f64; 2],
}

impl Prediction {
    pub fn from_head(h: &HeadOutput, s: &LabelScaler) -> Self {
        let (mu, sigma) = (h.mu(), h.sigma());
        Self {
            mu: [mu[0] * s.sd[0] + s.mean[0], mu[1] * s.sd[1] + s.mean[1]],
            sigma: [sigma[0] * s.sd[0], sigma[1] * s.sd[1]],
            skew: h.skew(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    layers: NetworkSpec,
    input_shape: [usize; 3],
    param_shapes: Vec<ParamShape>,
    n_params: usize,
    seed: u64,
    label_scaler: LabelScaler,
    /// Sidecar holding the input feature scaling, relative to the model dir.
    normalization: String,
    weights_file: String,
    weights_sha256: String,
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    pub network: Network,
    pub params: Vec<f64>,
    pub labels: LabelScaler,
    pub seed: u64,
}

impl CnnModel {
    pub fn predict(&self, inputs: &[Tensor], exec: Exec) -> Result<Vec<Prediction>> {
        exec.map(inputs, |x| {
            self.network
                .forward(&self.params, x)
                .map(|h| Prediction::from_head(&h, &self.labels))
        })
        .into_iter()
        .collect()
    }

    /// Writes `weights.bin` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path, normalization: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let wpath = dir.join(WEIGHTS_FILE);
        write_atomic(&wpath, |w| {
            for v in &self.params {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            layers: self.network.spec().clone(),
            input_shape: self.network.input_shape(),
            param_shapes: self.network.param_shapes(),
            n_params: self.network.n_params(),
            seed: self.seed,
            label_scaler: self.labels,
            normalization: normalization.to_string(),
            weights_file: WEIGHTS_FILE.into(),
            weights_sha256: sha256_file(&wpath)?,
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let m: Manifest = read_json(&mpath)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "{}: model format {} unsupported",
                mpath.display(),
                m.format_version
            )));
        }
        let network = Network::new(m.layers, m.input_shape)?;
        let wpath = dir.join(&m.weights_file);
        let bytes = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        if bytes.len() != 8 * network.n_params() || m.n_params != network.n_params() {
            return Err(Error::Schema(format!(
                "{}: {} bytes for {} parameters",
                wpath.display(),
                bytes.len(),
                network.n_params()
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            network,
            params,
            labels: m.label_scaler,
            seed: m.seed,
        })
    }
}
