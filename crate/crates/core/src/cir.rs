//! Core domain types, physical constants and CIR preprocessing.
//!
//! ToA values are fractional CIR sample indices everywhere in the crate.
//! Conversions to centimetres go through [`toa_to_range`] and
//! [`PhysConstants`] only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples kept before the reported first path.
pub const PRE_SAMPLES: usize = 10;
/// Samples kept from the reported first path onwards (first path included).
pub const POST_SAMPLES: usize = 152;
/// Length of every preprocessed window.
pub const WINDOW_LEN: usize = PRE_SAMPLES + POST_SAMPLES;
/// Raw CIR length of the DW1000 accumulator dumps in the public dataset.
pub const DEFAULT_N_RAW: usize = 1016;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysConstants {
    /// Speed of light in cm/ns.
    pub c: f64,
    /// CIR time resolution in ns per sample.
    pub delta_t: f64,
}

impl Default for PhysConstants {
    fn default() -> Self {
        Self {
            c: 29.979_245_8,
            delta_t: 1.0,
        }
    }
}

impl PhysConstants {
    pub fn new(c: f64, delta_t: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::Config(format!(
                "physical constants must be positive, got c={c}, delta_t={delta_t}"
            )));
        }
        Ok(Self { c, delta_t })
    }

    /// Range in cm covered by one CIR sample.
    pub fn cm_per_sample(&self) -> f64 {
        self.c * self.delta_t
    }
}

/// 2D position in cm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
}

impl Position2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Position2D {
    type Output = Position2D;
    fn add(self, rhs: Position2D) -> Position2D {
        Position2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Position2D {
    type Output = Position2D;
    fn sub(self, rhs: Position2D) -> Position2D {
        Position2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// One measured or simulated CIR with its link metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirRecord {
    pub env_id: String,
    pub anchor_id: u32,
    pub tag_id: u32,
    /// Repetition index of the measurement at this tag point.
    pub rep_id: u32,
    pub anchor_pos: Position2D,
    pub tag_pos: Position2D,
    /// CIR magnitude, non-negative.
    pub samples: Vec<f64>,
    /// First path index reported by the device.
    pub first_path_idx: usize,
    /// Device ToA estimate as a fractional sample index.
    pub toa_dwm: f64,
    /// Device ranging error in cm, present on labeled data.
    pub range_err_cm: Option<f64>,
}

impl CirRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        if n == 0 {
            return Err(Error::InvalidRecord("empty CIR".into()));
        }
        if let Some(bad) = self.samples.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidRecord(format!("CIR sample {bad} is not a finite non-negative value")));
        }
        if self.first_path_idx >= n {
            return Err(Error::InvalidRecord(format!(
                "first_path_idx {} outside CIR of length {n}",
                self.first_path_idx
            )));
        }
        if !(self.toa_dwm >= 0.0 && self.toa_dwm < n as f64) {
            return Err(Error::InvalidRecord(format!("toa_dwm {} outside [0, {n})", self.toa_dwm)));
        }
        if !(self.anchor_pos.is_finite() && self.tag_pos.is_finite()) {
            return Err(Error::InvalidRecord("non-finite position".into()));
        }
        Ok(())
    }

    /// Geometric anchor-tag distance in cm.
    pub fn true_distance(&self) -> f64 {
        self.anchor_pos.distance(&self.tag_pos)
    }
}

/// Max-normalized CIR excerpt around the reported first path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirWindow {
    pub values: Vec<f64>,
    /// Raw index of the first in-bounds element, clamped at 0.
    pub window_start: usize,
    /// Leading zero-pad samples inserted when the window starts before raw index 0.
    pub lead_pad: usize,
    /// Maximum of the raw window before normalization.
    pub norm_factor: f64,
}

impl CirWindow {
    /// Raw (possibly negative) index that element 0 corresponds to.
    pub fn origin(&self) -> i64 {
        self.window_start as i64 - self.lead_pad as i64
    }

    /// Converts a window-relative sample index into an absolute raw index.
    pub fn to_absolute(&self, rel: f64) -> f64 {
        rel + self.origin() as f64
    }

    /// Converts an absolute raw index into a window-relative index.
    pub fn to_relative(&self, abs: f64) -> f64 {
        abs - self.origin() as f64
    }

    /// An all-zero window, used for missing anchors in fingerprint sets.
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; WINDOW_LEN],
            window_start: 0,
            lead_pad: 0,
            norm_factor: 1.0,
        }
    }
}

/// Cuts the 162-sample window starting 10 samples before the reported first
/// path and divides it by its own maximum.
pub fn preprocess(record: &CirRecord) -> Result<CirWindow> {
    let n = record.samples.len();
    if n == 0 {
        return Err(Error::InvalidRecord("empty CIR".into()));
    }
    if record.first_path_idx >= n {
        return Err(Error::InvalidRecord(format!(
            "first_path_idx {} outside CIR of length {n}",
            record.first_path_idx
        )));
    }
    let origin = record.first_path_idx as i64 - PRE_SAMPLES as i64;
    let mut values = vec![0.0; WINDOW_LEN];
    for (k, v) in values.iter_mut().enumerate() {
        let idx = origin + k as i64;
        if idx >= 0 && (idx as usize) < n {
            *v = record.samples[idx as usize];
        }
    }
    let norm_factor = values.iter().cloned().fold(0.0_f64, f64::max);
    if norm_factor <= 0.0 {
        return Err(Error::AllZeroCir);
    }
    values.iter_mut().for_each(|v| *v /= norm_factor);
    Ok(CirWindow {
        values,
        window_start: origin.max(0) as usize,
        lead_pad: (-origin).max(0) as usize,
        norm_factor,
    })
}

/// Ground-truth ToA label: the device ToA corrected by the ranging error
/// converted into samples.
pub fn toa_label(record: &CirRecord, k: &PhysConstants) -> Result<f64> {
    let err = record.range_err_cm.ok_or(Error::MissingLabel)?;
    Ok(record.toa_dwm - err / k.cm_per_sample())
}

/// Range in cm corresponding to a ToA in samples.
pub fn toa_to_range(toa: f64, k: &PhysConstants) -> f64 {
    toa * k.cm_per_sample()
}

/// ToA in samples corresponding to a range in cm.
pub fn range_to_toa(range_cm: f64, k: &PhysConstants) -> f64 {
    range_cm / k.cm_per_sample()
}
