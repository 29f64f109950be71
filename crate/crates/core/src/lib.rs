//! UWB indoor positioning toolkit.
//!
//! Compares time-of-arrival based positioning (conventional Peak / LDE
//! detectors or a small convolutional ToA regressor, followed by
//! multilateration) against direct CIR fingerprinting with a convolutional
//! network that maps the per-anchor CIRs of one measurement to a 2D position.
//!
//! Module map:
//!
//! - [`cir`]: domain types, physical constants, CIR windowing and ToA labels
//! - [`sim`]: synthetic multipath CIR generator with LOS/NLOS links
//! - [`toa`]: Peak and leading-edge detectors plus grid tuning
//! - [`net`]: tensors, layers, MSE, Adam and the training loop
//! - [`models`]: the ToA and fingerprinting network builders and wrappers
//! - [`locate`]: linear least squares and Gauss-Newton multilateration
//! - [`dataio`]: canonical record files, dataset adapter, dataset assembly, splits
//! - [`eval`]: percentiles, CDFs, evaluation reports and table output
//! - [`pipeline`]: run configuration and the file-based stages behind the CLI

pub mod cir;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod locate;
pub mod models;
pub mod net;
pub mod pipeline;
pub mod sim;
pub mod toa;

pub use cir::{CirRecord, CirWindow, PhysConstants, Position2D};
pub use error::{Error, Result};
