use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Network, Tensor};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, max epochs and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
}

/// Epoch 0 holds the losses of the initial weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn initial_train_nll(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.train_nll)
    }

    pub fn final_train_nll(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_nll)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_nll,val_nll\n");
        for e in &self.epochs {
            let val = e.val_nll.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_nll, val);
        }
        write_atomic(path, |w| w.write_all(out.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub inputs: &'a [Tensor],
    pub labels: &'a [[f64; 2]],
}

impl<'a> Split<'a> {
    pub fn new(inputs: &'a [Tensor], labels: &'a [[f64; 2]]) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Input(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean per-sample loss over a split.
pub fn mean_loss(net: &Network, params: &[f64], data: Split<'_>, exec: Exec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("empty split".into()));
    }
    let losses = exec.map_range(data.len(), |i| net.loss(params, &data.inputs[i], data.labels[i]));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

/// Summed loss and gradient over `batch`, accumulated in batch order so the
/// result does not depend on the execution strategy.
pub fn batch_gradient(
    net: &Network,
    params: &[f64],
    data: Split<'_>,
    batch: &[usize],
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let n = net.n_params();
    let one = |i: usize| -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; n];
        let l = net.loss_and_grad(params, &data.inputs[i], data.labels[i], &mut g)?;
        Ok((l, g))
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut add = |(l, g): (f64, Vec<f64>)| {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    };
    if exec.is_parallel() {
        for r in exec.map(batch, |&i| one(i)) {
            add(r?);
        }
    } else {
        for &i in batch {
            add(one(i)?);
        }
    }
    Ok((loss, grad))
}

/// Minibatch training with Adam and early stopping on validation NLL.
/// Returns the best-validation weights (the final ones without validation).
pub fn train(
    net: &Network,
    mut params: Vec<f64>,
    train_set: Split<'_>,
    val_set: Split<'_>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(Vec<f64>, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    if params.len() != net.n_params() {
        return Err(Error::Shape {
            layer: "parameters".into(),
            msg: format!("{} values, network needs {}", params.len(), net.n_params()),
        });
    }
    let validate = |p: &[f64]| -> Result<Option<f64>> {
        if val_set.is_empty() {
            Ok(None)
        } else {
            mean_loss(net, p, val_set, exec).map(Some)
        }
    };
    let mut history = History::default();
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_nll: mean_loss(net, &params, train_set, exec)?,
        val_nll: validate(&params)?,
    });
    let mut best = (history.epochs[0].val_nll.unwrap_or(f64::INFINITY), params.clone(), 0);
    let mut since_best = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grad) = batch_gradient(net, &params, train_set, batch, exec)?;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    layer_norms: net.layer_norms(&params),
                });
            }
            epoch_loss += loss;
            adam.step(&mut params, &grad);
        }
        let val_nll = validate(&params)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_nll: epoch_loss / train_set.len() as f64,
            val_nll,
        });
        log::debug!("epoch {epoch}: train {:.5} val {val_nll:?}", epoch_loss / train_set.len() as f64);
        if let Some(v) = val_nll {
            if v < best.0 {
                best = (v, params.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if val_set.is_empty() {
        history.best_epoch = history.epochs.len() - 1;
        Ok((params, history))
    } else {
        history.best_epoch = best.2;
        Ok((best.1, history))
    }
}
