//! Conventional ToA estimators: first-peak detection and leading-edge
//! detection (LDE), both with a noise threshold relative to the CIR maximum,
//! plus exhaustive grid tuning against labeled windows.
//!
//! All estimators return window-relative integer sample indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{CirWindow, PRE_SAMPLES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// Noise threshold factor: the threshold is `beta * max(cir)`.
    pub beta: f64,
}

impl PeakParams {
    pub fn new(beta: f64) -> Result<Self> {
        let p = Self { beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParams(format!("beta {} not in (0, 1]", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdeParams {
    pub beta: f64,
    /// Leading-edge detection factor.
    pub lede_factor: f64,
    /// Moving average length, odd.
    pub w_avg: usize,
    /// Length of the short moving maximum ending at the current sample.
    pub w_small: usize,
    /// Length of the long moving maximum over the preceding samples.
    pub w_large: usize,
}

impl LdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParams(format!("beta {} not in (0, 1]", self.beta)));
        }
        if !(self.lede_factor > 0.0 && self.lede_factor.is_finite()) {
            return Err(Error::InvalidParams(format!("lede_factor {} must be positive", self.lede_factor)));
        }
        if self.w_avg == 0 || self.w_avg % 2 == 0 {
            return Err(Error::InvalidParams(format!("w_avg {} must be odd", self.w_avg)));
        }
        if self.w_small == 0 || self.w_large <= self.w_small {
            return Err(Error::InvalidParams(format!(
                "need 1 <= w_small < w_large, got {} and {}",
                self.w_small, self.w_large
            )));
        }
        Ok(())
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// First local maximum at or above `beta * max(values)`.
pub fn peak_index(values: &[f64], beta: f64) -> Result<usize> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoPeakFound);
    }
    let threshold = beta * max_of(values);
    let n = values.len();
    (0..n)
        .find(|&i| {
            let v = values[i];
            v >= threshold && (i == 0 || v >= values[i - 1]) && (i + 1 == n || v >= values[i + 1])
        })
        .ok_or(Error::NoPeakFound)
}

pub fn peak_toa(window: &CirWindow, p: &PeakParams) -> Result<f64> {
    p.validate()?;
    peak_index(&window.values, p.beta).map(|i| i as f64)
}

/// Filter outputs of the LDE for one signal and one set of window lengths.
///
/// `smoothed` is the centered moving average, `short_max[n]` the maximum of
/// `smoothed[n + 1 - w_small ..= n]` and `long_max[n]` the maximum of
/// `smoothed[n - w_large ..= n - 1]`. Indices outside the signal read as zero.
#[derive(Debug, Clone)]
pub struct LdeFilterBank {
    pub smoothed: Vec<f64>,
    pub short_max: Vec<f64>,
    pub long_max: Vec<f64>,
    pub max_smoothed: f64,
}

/// Maximum of `y[lo..hi]` where out-of-range indices contribute zero.
fn padded_max(y: &[f64], lo: isize, hi: isize) -> f64 {
    let n = y.len() as isize;
    let (a, b) = (lo.clamp(0, n), hi.clamp(0, n));
    let inner = if a < b { max_of(&y[a as usize..b as usize]) } else { f64::NEG_INFINITY };
    if lo < a || hi > b || a >= b {
        inner.max(0.0)
    } else {
        inner
    }
}

impl LdeFilterBank {
    pub fn new(values: &[f64], w_avg: usize, w_small: usize, w_large: usize) -> Self {
        let n = values.len() as isize;
        let half = (w_avg / 2) as isize;
        let smoothed: Vec<f64> = (0..n)
            .map(|i| {
                let lo = (i - half).max(0) as usize;
                let hi = (i + half).min(n - 1) as usize;
                values[lo..=hi].iter().sum::<f64>() / w_avg as f64
            })
            .collect();
        let short_max = (0..n).map(|i| padded_max(&smoothed, i + 1 - w_small as isize, i + 1)).collect();
        let long_max = (0..n).map(|i| padded_max(&smoothed, i - w_large as isize, i)).collect();
        let max_smoothed = max_of(&smoothed);
        Self {
            smoothed,
            short_max,
            long_max,
            max_smoothed,
        }
    }

    /// First index whose short maximum clears the noise threshold and
    /// exceeds the long maximum by `factor`.
    pub fn detect(&self, beta: f64, factor: f64) -> Result<usize> {
        let threshold = beta * self.max_smoothed;
        self.short_max
            .iter()
            .zip(&self.long_max)
            .position(|(&s, &l)| s >= threshold && s > factor * l)
            .ok_or(Error::NoEdgeFound)
    }
}

pub fn lde_index(values: &[f64], p: &LdeParams) -> Result<usize> {
    p.validate()?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoEdgeFound);
    }
    LdeFilterBank::new(values, p.w_avg, p.w_small, p.w_large).detect(p.beta, p.lede_factor)
}

pub fn lde_toa(window: &CirWindow, p: &LdeParams) -> Result<f64> {
    lde_index(&window.values, p).map(|i| i as f64)
}

/// A tuned conventional estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conventional {
    Peak(PeakParams),
    Lde(LdeParams),
}

impl Conventional {
    pub fn name(&self) -> &'static str {
        match self {
            Conventional::Peak(_) => "Peak",
            Conventional::Lde(_) => "LDE",
        }
    }

    pub fn estimate(&self, window: &CirWindow) -> Result<f64> {
        match self {
            Conventional::Peak(p) => peak_toa(window, p),
            Conventional::Lde(p) => lde_toa(window, p),
        }
    }

    /// Estimate that falls back to the device-reported first path (window
    /// offset 10) when the detector finds nothing.
    pub fn estimate_or_first_path(&self, window: &CirWindow) -> f64 {
        self.estimate(window).unwrap_or(PRE_SAMPLES as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Peak,
    Lde,
}

/// Candidate values per parameter. LDE points with `w_small >= w_large` are
/// skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneGrid {
    pub beta: Vec<f64>,
    pub lede_factor: Vec<f64>,
    pub w_avg: Vec<usize>,
    pub w_small: Vec<usize>,
    pub w_large: Vec<usize>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            beta: (1..=12).map(|i| i as f64 / 20.0).collect(),
            lede_factor: vec![1.2, 1.5, 2.0, 3.0],
            w_avg: vec![1, 3, 5],
            w_small: vec![2, 4, 8],
            w_large: vec![8, 16, 32],
        }
    }
}

impl TuneGrid {
    pub fn peak_only(beta: Vec<f64>) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    /// Grid points in evaluation order: beta outermost, then factor, w_avg,
    /// w_small, w_large.
    pub fn points(&self, kind: EstimatorKind) -> Vec<Conventional> {
        match kind {
            EstimatorKind::Peak => self.beta.iter().map(|&beta| Conventional::Peak(PeakParams { beta })).collect(),
            EstimatorKind::Lde => {
                let mut out = Vec::new();
                for &beta in &self.beta {
                    for &lede_factor in &self.lede_factor {
                        for &w_avg in &self.w_avg {
                            for &w_small in &self.w_small {
                                for &w_large in &self.w_large {
                                    let p = LdeParams {
                                        beta,
                                        lede_factor,
                                        w_avg,
                                        w_small,
                                        w_large,
                                    };
                                    if p.validate().is_ok() {
                                        out.push(Conventional::Lde(p));
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Conventional,
    pub mae: f64,
    /// Mean absolute error of every grid point, in grid order.
    pub grid_mae: Vec<f64>,
}

fn mae_of(estimates: impl Iterator<Item = f64>, labels: &[f64]) -> f64 {
    let total: f64 = estimates.zip(labels).map(|(e, l)| (e - l).abs()).sum();
    total / labels.len() as f64
}

/// Exhaustive search for the grid point with the lowest mean absolute ToA
/// error over `windows`. Ties go to the earliest grid point.
pub fn tune(kind: EstimatorKind, grid: &TuneGrid, windows: &[CirWindow], labels: &[f64]) -> Result<TuneResult> {
    if windows.is_empty() || windows.len() != labels.len() {
        return Err(Error::EmptyDataset);
    }
    let points = grid.points(kind);
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let grid_mae: Vec<f64> = match kind {
        EstimatorKind::Peak => points
            .par_iter()
            .map(|p| mae_of(windows.iter().map(|w| p.estimate_or_first_path(w)), labels))
            .collect(),
        EstimatorKind::Lde => {
            // Filter outputs depend only on the window lengths; they are
            // computed once per length triple and shared across beta and factor.
            let params: Vec<LdeParams> = points
                .iter()
                .map(|p| match p {
                    Conventional::Lde(p) => *p,
                    Conventional::Peak(_) => unreachable!(),
                })
                .collect();
            let mut lengths: Vec<(usize, usize, usize)> = params.iter().map(|p| (p.w_avg, p.w_small, p.w_large)).collect();
            lengths.sort_unstable();
            lengths.dedup();
            let mut mae = vec![0.0; params.len()];
            for &(a, s, l) in &lengths {
                let banks: Vec<LdeFilterBank> = windows.par_iter().map(|w| LdeFilterBank::new(&w.values, a, s, l)).collect();
                let members: Vec<usize> = (0..params.len()).filter(|&i| (params[i].w_avg, params[i].w_small, params[i].w_large) == (a, s, l)).collect();
                let values: Vec<f64> = members
                    .par_iter()
                    .map(|&i| {
                        let p = &params[i];
                        mae_of(
                            banks.iter().map(|b| b.detect(p.beta, p.lede_factor).map(|i| i as f64).unwrap_or(PRE_SAMPLES as f64)),
                            labels,
                        )
                    })
                    .collect();
                for (i, v) in members.into_iter().zip(values) {
                    mae[i] = v;
                }
            }
            mae
        }
    };
    let (best_idx, best_mae) = grid_mae
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bm), (i, &m)| if m < bm { (i, m) } else { (bi, bm) });
    Ok(TuneResult {
        best: points[best_idx],
        mae: best_mae,
        grid_mae,
    })
}
