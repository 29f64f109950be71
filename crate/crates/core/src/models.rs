//! ANN_ToA and ANN_FP: two-branch 1D CNNs for ToA regression and direct
//! fingerprint positioning.
//!
//! Both share one topology. Branch A is a single conv block, branch B four
//! stacked conv blocks; their outputs are summed and passed through a head
//! conv block and a single fully connected layer. A conv block is a
//! same-padded kernel-5 convolution followed by ReLU.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{CirWindow, Position2D, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::net::{self, Checkpoint, Conv1d, Dense, Layer, Network, Sample, Scalar, Tensor, TrainConfig, TrainHistory};

pub const KERNEL: usize = 5;
pub const BRANCH_B_DEPTH: usize = 4;
pub const ANN_TOA_FILTERS: usize = 16;
pub const ANN_FP_FILTERS: usize = 32;

fn conv_block<T: Scalar>(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Layer<T>>> {
    Ok(vec![Layer::Conv1d(Conv1d::new(in_ch, out_ch, KERNEL, rng)?), Layer::Relu])
}

/// Builds the shared two-branch topology. The fully connected head starts at
/// zero so an untrained model predicts the (de-standardized) target mean.
pub fn build_two_branch<T: Scalar>(in_ch: usize, filters: usize, outputs: usize, seed: u64) -> Result<Network<T>> {
    if in_ch == 0 || filters == 0 || outputs == 0 {
        return Err(Error::InvalidParams("channel, filter and output counts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branch_a = conv_block(in_ch, filters, &mut rng)?;
    let mut branch_b = conv_block(in_ch, filters, &mut rng)?;
    for _ in 1..BRANCH_B_DEPTH {
        branch_b.extend(conv_block(filters, filters, &mut rng)?);
    }
    let mut layers = vec![Layer::ParallelSum(branch_a, branch_b)];
    layers.extend(conv_block(filters, filters, &mut rng)?);
    layers.push(Layer::Flatten);
    layers.push(Layer::FullyConnected(Dense::zeros(filters * WINDOW_LEN, outputs)));
    Network::new(layers, vec![in_ch, WINDOW_LEN])
}

pub fn build_ann_toa<T: Scalar>(seed: u64) -> Network<T> {
    build_two_branch(1, ANN_TOA_FILTERS, 1, seed).expect("fixed shapes")
}

pub fn build_ann_fp<T: Scalar>(anchors: usize, seed: u64) -> Result<Network<T>> {
    build_two_branch(anchors, ANN_FP_FILTERS, 2, seed)
}

/// Per-output affine target standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation per column; a zero deviation
    /// is replaced by 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect()
    }
}

fn window_tensor(windows: &[&CirWindow]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(windows.len() * WINDOW_LEN);
    for w in windows {
        if w.values.len() != WINDOW_LEN {
            return Err(Error::ShapeMismatch {
                expected: format!("{WINDOW_LEN} window samples"),
                got: format!("{}", w.values.len()),
            });
        }
        data.extend(w.values.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![windows.len(), WINDOW_LEN], data)
}

fn make_samples(inputs: Vec<Tensor<f32>>, targets: &[Vec<f64>], scaler: &TargetScaler) -> Vec<Sample<f32>> {
    inputs
        .into_iter()
        .zip(targets)
        .map(|(input, t)| Sample {
            input,
            target: scaler.transform(t).into_iter().map(|v| v as f32).collect(),
        })
        .collect()
}

fn meta_f64s(ck: &Checkpoint, key: &str) -> Result<Vec<f64>> {
    ck.metadata
        .get(key)
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| Error::SchemaMismatch {
            file: "checkpoint".into(),
            detail: format!("missing metadata field {key}"),
        })
}

fn check_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    match ck.metadata.get("kind").and_then(|v| v.as_str()) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::SchemaMismatch {
            file: "checkpoint".into(),
            detail: format!("expected model kind {kind}, found {other:?}"),
        }),
    }
}

/// ANN_ToA with its target scaler. Predictions are window-relative sample
/// offsets.
#[derive(Debug, Clone)]
pub struct ToaModel {
    pub net: Network<f32>,
    pub scaler: TargetScaler,
}

impl ToaModel {
    pub fn untrained(seed: u64, scaler: TargetScaler) -> Self {
        Self {
            net: build_ann_toa(seed),
            scaler,
        }
    }

    /// Trains a fresh network on `(window, window-relative label)` pairs.
    pub fn fit(train: &[(&CirWindow, f64)], val: &[(&CirWindow, f64)], cfg: &TrainConfig, seed: u64) -> Result<(Self, TrainHistory)> {
        let labels: Vec<Vec<f64>> = train.iter().map(|(_, l)| vec![*l]).collect();
        let scaler = TargetScaler::fit(&labels)?;
        Self::fit_with_scaler(train, val, cfg, seed, scaler)
    }

    pub fn fit_with_scaler(
        train: &[(&CirWindow, f64)],
        val: &[(&CirWindow, f64)],
        cfg: &TrainConfig,
        seed: u64,
        scaler: TargetScaler,
    ) -> Result<(Self, TrainHistory)> {
        let mut model = Self::untrained(seed, scaler);
        let to_samples = |set: &[(&CirWindow, f64)]| -> Result<Vec<Sample<f32>>> {
            let inputs = set
                .iter()
                .map(|(w, _)| Tensor::new(vec![1, WINDOW_LEN], window_tensor(&[w])?.data))
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<Vec<f64>> = set.iter().map(|(_, l)| vec![*l]).collect();
            Ok(make_samples(inputs, &targets, &model.scaler))
        };
        let (tr, va) = (to_samples(train)?, to_samples(val)?);
        let hist = net::train(&mut model.net, &tr, &va, cfg)?;
        Ok((model, hist))
    }

    pub fn estimate_toa(&self, window: &CirWindow) -> Result<f64> {
        let x = Tensor::new(vec![1, WINDOW_LEN], window_tensor(&[window])?.data)?;
        let y = self.net.predict(&x)?;
        Ok(self.scaler.inverse(&[y.data[0] as f64])[0])
    }

    pub fn estimate_batch(&self, windows: &[&CirWindow]) -> Result<Vec<f64>> {
        windows.par_iter().map(|w| self.estimate_toa(w)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_network(&self.net);
        ck.metadata.insert("kind".into(), "ann_toa".into());
        ck.metadata.insert("target_mean".into(), serde_json::json!(self.scaler.mean));
        ck.metadata.insert("target_std".into(), serde_json::json!(self.scaler.std));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        check_kind(ck, "ann_toa")?;
        Ok(Self {
            net: ck.to_network()?,
            scaler: TargetScaler {
                mean: meta_f64s(ck, "target_mean")?,
                std: meta_f64s(ck, "target_std")?,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifacts(path.to_path_buf()));
        }
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Per-anchor windows of one measurement in fixed anchor order, labeled with
/// the tag position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSet {
    pub env_id: String,
    pub tag_id: u32,
    pub rep_id: u32,
    pub anchor_ids: Vec<u32>,
    /// One window per anchor; a missing anchor CIR is an all-zero window.
    pub windows: Vec<CirWindow>,
    pub position: Position2D,
}

impl FingerprintSet {
    fn input(&self) -> Result<Tensor<f32>> {
        let refs: Vec<&CirWindow> = self.windows.iter().collect();
        window_tensor(&refs)
    }
}

/// ANN_FP with its coordinate scaler and the anchor order it was trained on.
#[derive(Debug, Clone)]
pub struct FpModel {
    pub net: Network<f32>,
    pub scaler: TargetScaler,
    pub anchor_ids: Vec<u32>,
}

impl FpModel {
    pub fn untrained(anchor_ids: Vec<u32>, seed: u64, scaler: TargetScaler) -> Result<Self> {
        Ok(Self {
            net: build_ann_fp(anchor_ids.len(), seed)?,
            scaler,
            anchor_ids,
        })
    }

    fn check_set(&self, fp: &FingerprintSet) -> Result<()> {
        if fp.windows.len() != self.anchor_ids.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} anchor windows", self.anchor_ids.len()),
                got: format!("{}", fp.windows.len()),
            });
        }
        if fp.anchor_ids != self.anchor_ids {
            return Err(Error::AnchorOrderMismatch {
                expected: self.anchor_ids.clone(),
                got: fp.anchor_ids.clone(),
            });
        }
        Ok(())
    }

    pub fn fit(train: &[&FingerprintSet], val: &[&FingerprintSet], cfg: &TrainConfig, seed: u64) -> Result<(Self, TrainHistory)> {
        let targets: Vec<Vec<f64>> = train.iter().map(|f| vec![f.position.x, f.position.y]).collect();
        let scaler = TargetScaler::fit(&targets)?;
        Self::fit_with_scaler(train, val, cfg, seed, scaler)
    }

    pub fn fit_with_scaler(
        train: &[&FingerprintSet],
        val: &[&FingerprintSet],
        cfg: &TrainConfig,
        seed: u64,
        scaler: TargetScaler,
    ) -> Result<(Self, TrainHistory)> {
        let first = train.first().ok_or(Error::EmptyDataset)?;
        let mut model = Self::untrained(first.anchor_ids.clone(), seed, scaler)?;
        let to_samples = |set: &[&FingerprintSet]| -> Result<Vec<Sample<f32>>> {
            let mut inputs = Vec::with_capacity(set.len());
            for f in set {
                model.check_set(f)?;
                inputs.push(f.input()?);
            }
            let targets: Vec<Vec<f64>> = set.iter().map(|f| vec![f.position.x, f.position.y]).collect();
            Ok(make_samples(inputs, &targets, &model.scaler))
        };
        let (tr, va) = (to_samples(train)?, to_samples(val)?);
        let hist = net::train(&mut model.net, &tr, &va, cfg)?;
        Ok((model, hist))
    }

    pub fn estimate_position(&self, fp: &FingerprintSet) -> Result<Position2D> {
        self.check_set(fp)?;
        let y = self.net.predict(&fp.input()?)?;
        let p = self.scaler.inverse(&[y.data[0] as f64, y.data[1] as f64]);
        Ok(Position2D::new(p[0], p[1]))
    }

    pub fn estimate_batch(&self, sets: &[&FingerprintSet]) -> Result<Vec<Position2D>> {
        sets.par_iter().map(|f| self.estimate_position(f)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_network(&self.net);
        ck.metadata.insert("kind".into(), "ann_fp".into());
        ck.metadata.insert("target_mean".into(), serde_json::json!(self.scaler.mean));
        ck.metadata.insert("target_std".into(), serde_json::json!(self.scaler.std));
        ck.metadata.insert("anchor_ids".into(), serde_json::json!(self.anchor_ids));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        check_kind(ck, "ann_fp")?;
        let anchor_ids: Vec<u32> = ck
            .metadata
            .get("anchor_ids")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| Error::SchemaMismatch {
                file: "checkpoint".into(),
                detail: "missing metadata field anchor_ids".into(),
            })?;
        let net: Network<f32> = ck.to_network()?;
        if net.input_shape.first() != Some(&anchor_ids.len()) {
            return Err(Error::SchemaMismatch {
                file: "checkpoint".into(),
                detail: "anchor count does not match network input channels".into(),
            });
        }
        Ok(Self {
            net,
            scaler: TargetScaler {
                mean: meta_f64s(ck, "target_mean")?,
                std: meta_f64s(ck, "target_std")?,
            },
            anchor_ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifacts(path.to_path_buf()));
        }
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
