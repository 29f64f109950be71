use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Conv1d, Dense, Layer, Network, Scalar};

pub const CHECKPOINT_FORMAT: &str = "uwbpos-net";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized form of one layer. Weights are stored as `f64`, which holds
/// `f32` values exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDump {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Flatten,
    ParallelSum {
        a: Vec<LayerDump>,
        b: Vec<LayerDump>,
    },
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected} {what} values"),
            got: format!("{got}"),
        });
    }
    Ok(())
}

impl LayerDump {
    pub fn from_layer<T: Scalar>(layer: &Layer<T>) -> Self {
        match layer {
            Layer::Conv1d(c) => LayerDump::Conv1d {
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                kernel: c.kernel,
                weight: to_f64(&c.weight),
                bias: to_f64(&c.bias),
            },
            Layer::Relu => LayerDump::Relu,
            Layer::FullyConnected(d) => LayerDump::FullyConnected {
                in_dim: d.in_dim,
                out_dim: d.out_dim,
                weight: to_f64(&d.weight),
                bias: to_f64(&d.bias),
            },
            Layer::Flatten => LayerDump::Flatten,
            Layer::ParallelSum(a, b) => LayerDump::ParallelSum {
                a: a.iter().map(LayerDump::from_layer).collect(),
                b: b.iter().map(LayerDump::from_layer).collect(),
            },
        }
    }

    pub fn to_layer<T: Scalar>(&self) -> Result<Layer<T>> {
        Ok(match self {
            LayerDump::Conv1d {
                in_ch,
                out_ch,
                kernel,
                weight,
                bias,
            } => {
                check_len("conv1d weight", weight.len(), in_ch * out_ch * kernel)?;
                check_len("conv1d bias", bias.len(), *out_ch)?;
                if kernel % 2 == 0 {
                    return Err(Error::InvalidParams(format!("conv1d kernel {kernel} must be odd")));
                }
                Layer::Conv1d(Conv1d {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    weight: from_f64(weight),
                    bias: from_f64(bias),
                })
            }
            LayerDump::Relu => Layer::Relu,
            LayerDump::FullyConnected {
                in_dim,
                out_dim,
                weight,
                bias,
            } => {
                check_len("dense weight", weight.len(), in_dim * out_dim)?;
                check_len("dense bias", bias.len(), *out_dim)?;
                Layer::FullyConnected(Dense {
                    in_dim: *in_dim,
                    out_dim: *out_dim,
                    weight: from_f64(weight),
                    bias: from_f64(bias),
                })
            }
            LayerDump::Flatten => Layer::Flatten,
            LayerDump::ParallelSum { a, b } => Layer::ParallelSum(
                a.iter().map(LayerDump::to_layer).collect::<Result<_>>()?,
                b.iter().map(LayerDump::to_layer).collect::<Result<_>>()?,
            ),
        })
    }
}

/// Self-describing network checkpoint with free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerDump>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input_shape: net.input_shape.clone(),
            layers: net.layers.iter().map(LayerDump::from_layer).collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::SchemaMismatch {
                file: "checkpoint".into(),
                detail: format!(
                    "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                    self.format, self.version
                ),
            });
        }
        let layers = self.layers.iter().map(LayerDump::to_layer).collect::<Result<_>>()?;
        Network::new(layers, self.input_shape.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
