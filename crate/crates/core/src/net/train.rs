use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{adam_step, AdamConfig, Network, Scalar, Tensor};

/// One training example: input tensor and target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub input: Tensor<T>,
    pub target: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience_early: usize,
    /// Epochs without validation improvement before the learning rate drops.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr0: 1e-3,
            max_epochs: 250,
            patience_early: 25,
            plateau_patience: 10,
            plateau_factor: 0.5,
            min_lr: 1e-5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if self.patience_early == 0 || self.plateau_patience == 0 {
            return bad("patience values must be >= 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must be in (0, 1)");
        }
        if !(self.lr0 >= 0.0 && self.min_lr >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Samples per gradient accumulation chunk; chunks are reduced in order.
const CHUNK: usize = 8;

fn sample_loss_grad<T: Scalar>(net: &Network<T>, s: &Sample<T>, scale: f64, grads: &mut [Vec<T>]) -> Result<f64> {
    let (pred, traces) = net.forward_traced(&s.input)?;
    if pred.len() != s.target.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} targets", pred.len()),
            got: format!("{}", s.target.len()),
        });
    }
    let mut sse = 0.0;
    let g: Vec<T> = pred
        .data
        .iter()
        .zip(&s.target)
        .map(|(&p, &t)| {
            let d = p - t;
            sse += d.as_f64() * d.as_f64();
            T::from_f64(2.0 * scale) * d
        })
        .collect();
    net.backward_with(&traces, &Tensor::new(pred.shape.clone(), g)?, grads)?;
    Ok(sse)
}

/// Mean squared error of `net` over `data`.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &[Sample<T>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sse: Vec<(f64, usize)> = data
        .par_iter()
        .map(|s| {
            let p = net.predict(&s.input)?;
            let e = p.data.iter().zip(&s.target).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>();
            Ok((e, s.target.len()))
        })
        .collect::<Result<_>>()?;
    let (total, count) = sse.iter().fold((0.0, 0), |(t, c), (e, n)| (t + e, c + n));
    Ok(total / count.max(1) as f64)
}

/// Mini-batch Adam training with learning-rate decay on validation
/// plateaus, early stopping, and restoration of the best-validation
/// parameters.
pub fn train<T: Scalar>(net: &mut Network<T>, train: &[Sample<T>], val: &[Sample<T>], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = cfg.lr0;
    let mut step: u64 = 0;
    let mut best = (0usize, f64::INFINITY, net.snapshot());
    let mut since_best = 0usize;
    let mut since_plateau = 0usize;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_sse = 0.0;
        let mut train_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let out_dim = train[batch[0]].target.len().max(1);
            let scale = 1.0 / (batch.len() * out_dim) as f64;
            let partial: Vec<(f64, Vec<Vec<T>>)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grads = net.zero_grads();
                    let mut sse = 0.0;
                    for &i in chunk {
                        sse += sample_loss_grad(net, &train[i], scale, &mut grads)?;
                    }
                    Ok((sse, grads))
                })
                .collect::<Result<_>>()?;
            let mut iter = partial.into_iter();
            let (mut sse, mut grads) = iter.next().expect("non-empty batch");
            for (s, g) in iter {
                sse += s;
                for (acc, part) in grads.iter_mut().zip(&g) {
                    for (a, &p) in acc.iter_mut().zip(part) {
                        *a = *a + p;
                    }
                }
            }
            step += 1;
            adam_step(net, &grads, lr, &cfg.adam, step)?;
            train_sse += sse;
            train_count += batch.len() * out_dim;
        }
        let val_loss = evaluate(net, val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: train_sse / train_count as f64,
            val_loss,
            lr,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, net.snapshot());
            since_best = 0;
            since_plateau = 0;
        } else {
            since_best += 1;
            since_plateau += 1;
            if since_best >= cfg.patience_early {
                stopped_early = true;
                break;
            }
            if since_plateau >= cfg.plateau_patience {
                if lr > cfg.min_lr {
                    lr = (lr * cfg.plateau_factor).max(cfg.min_lr);
                }
                since_plateau = 0;
            }
        }
    }
    net.restore(&best.2);
    net.clear_cache();
    Ok(TrainHistory {
        epochs,
        best_epoch: best.0,
        best_val_loss: best.1,
        stopped_early,
    })
}
