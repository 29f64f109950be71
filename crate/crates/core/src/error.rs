use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("all CIR samples in the window are zero")]
    AllZeroCir,
    #[error("record has no ranging error label")]
    MissingLabel,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("path delay {delay_ns} ns is outside the {span_ns} ns CIR span")]
    DelayOutOfRange { delay_ns: f64, span_ns: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no peak found")]
    NoPeakFound,
    #[error("no leading edge found")]
    NoEdgeFound,
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
    #[error("tuning grid is empty")]
    EmptyGrid,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("anchor order mismatch: model expects {expected:?}, got {got:?}")]
    AnchorOrderMismatch { expected: Vec<u32>, got: Vec<u32> },
    #[error("at least 3 anchors required, got {0}")]
    TooFewAnchors(usize),
    #[error("degenerate anchor geometry (condition number {0:e})")]
    DegenerateGeometry(f64),
    #[error("singular Gauss-Newton update at iteration {0}")]
    SingularUpdate(usize),
    #[error("schema mismatch in {file}: {detail}")]
    SchemaMismatch { file: String, detail: String },
    #[error("no samples")]
    EmptySamples,
    #[error("missing artifact: {0}")]
    MissingArtifacts(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AllZeroCir => "AllZeroCir",
            Error::MissingLabel => "MissingLabel",
            Error::InvalidRecord(_) => "InvalidRecord",
            Error::DelayOutOfRange { .. } => "DelayOutOfRange",
            Error::InvalidScenario(_) => "InvalidScenario",
            Error::NoPeakFound => "NoPeakFound",
            Error::NoEdgeFound => "NoEdgeFound",
            Error::InvalidParams(_) => "InvalidParams",
            Error::EmptyGrid => "EmptyGrid",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NoForwardCache => "NoForwardCache",
            Error::EmptyDataset => "EmptyDataset",
            Error::AnchorOrderMismatch { .. } => "AnchorOrderMismatch",
            Error::TooFewAnchors(_) => "TooFewAnchors",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::SingularUpdate(_) => "SingularUpdate",
            Error::SchemaMismatch { .. } => "SchemaMismatch",
            Error::EmptySamples => "EmptySamples",
            Error::MissingArtifacts(_) => "MissingArtifacts",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
