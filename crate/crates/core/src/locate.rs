//! 2D multilateration from anchor ranges.
//!
//! All positions and ranges are in cm.

use serde::{Deserialize, Serialize};

use crate::cir::{toa_to_range, PhysConstants, Position2D};
use crate::error::{Error, Result};

/// Condition-number limit for the 2x2 normal matrices.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeObservation {
    pub anchor_pos: Position2D,
    pub range_cm: f64,
}

impl RangeObservation {
    pub fn new(anchor_pos: Position2D, range_cm: f64) -> Self {
        Self { anchor_pos, range_cm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_cm: f64,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol_cm: 1e-6,
            damping: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol_cm > 0.0) || !(self.damping >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "solver config needs max_iters >= 1, tol_cm > 0, damping >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Result of the iterative solver. `converged` is false when the iteration
/// cap was hit first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterativeFix {
    pub position: Position2D,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

/// How the iterative solver is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Linear least squares only.
    Algo1,
    /// Gauss-Newton started from the linear least-squares estimate.
    Algo2Algo1Init,
    /// Gauss-Newton started at the anchor with the smallest range.
    Algo2ClosestInit,
}

impl Solver {
    pub const ALL: [Solver; 3] = [Solver::Algo1, Solver::Algo2Algo1Init, Solver::Algo2ClosestInit];

    pub fn name(&self) -> &'static str {
        match self {
            Solver::Algo1 => "algo1",
            Solver::Algo2Algo1Init => "algo2_algo1_init",
            Solver::Algo2ClosestInit => "algo2_closest_init",
        }
    }
}

/// Position estimate plus diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub position: Position2D,
    pub iterations: usize,
    pub converged: bool,
    /// Set when Algo1 failed and the anchor centroid was used as the start.
    pub centroid_fallback: bool,
}

/// Solves the symmetric system `[[a11, a12], [a12, a22]] x = b` and returns
/// the solution with the matrix condition number.
fn solve_sym2(a11: f64, a12: f64, a22: f64, b1: f64, b2: f64) -> (Option<(f64, f64)>, f64) {
    let half_tr = 0.5 * (a11 + a22);
    let disc = (0.5 * (a11 - a22)).hypot(a12);
    let lmax = half_tr + disc;
    let det = a11 * a22 - a12 * a12;
    let lmin = if lmax > 0.0 { det / lmax } else { 0.0 };
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return (None, cond);
    }
    let x = (a22 * b1 - a12 * b2) / det;
    let y = (a11 * b2 - a12 * b1) / det;
    (Some((x, y)), cond)
}

fn check_obs(obs: &[RangeObservation]) -> Result<()> {
    if obs.len() < 3 {
        return Err(Error::TooFewAnchors(obs.len()));
    }
    for o in obs {
        if !o.anchor_pos.is_finite() || !o.range_cm.is_finite() || o.range_cm < 0.0 {
            return Err(Error::InvalidParams(format!("bad range observation {o:?}")));
        }
    }
    Ok(())
}

/// Non-iterative linear least squares. The first observation's circle is
/// subtracted from the others; coordinates are taken relative to that anchor
/// to keep the system well scaled.
pub fn algo1_lls(obs: &[RangeObservation]) -> Result<Position2D> {
    check_obs(obs)?;
    let a0 = obs[0].anchor_pos;
    let r0 = obs[0].range_cm;
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for o in &obs[1..] {
        let d = o.anchor_pos - a0;
        let (ax, ay) = (2.0 * d.x, 2.0 * d.y);
        let b = d.x * d.x + d.y * d.y - o.range_cm * o.range_cm + r0 * r0;
        s11 += ax * ax;
        s12 += ax * ay;
        s22 += ay * ay;
        t1 += ax * b;
        t2 += ay * b;
    }
    match solve_sym2(s11, s12, s22, t1, t2) {
        (Some((x, y)), _) => Ok(Position2D::new(x + a0.x, y + a0.y)),
        (None, cond) => Err(Error::DegenerateGeometry(cond)),
    }
}

fn residual_norm(obs: &[RangeObservation], p: Position2D) -> f64 {
    obs.iter()
        .map(|o| (p.distance(&o.anchor_pos) - o.range_cm).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Gauss-Newton on `r_i = |p - a_i| - range_i`.
///
/// A row whose anchor coincides with the iterate has no defined direction;
/// it is left out of that step when its range is positive, and the update is
/// singular when its range is zero.
pub fn algo2_iterative(obs: &[RangeObservation], init: Position2D, cfg: &SolverConfig) -> Result<IterativeFix> {
    check_obs(obs)?;
    cfg.validate()?;
    if !init.is_finite() {
        return Err(Error::InvalidParams(format!("non-finite initial position {init:?}")));
    }
    let mut p = init;
    for iter in 1..=cfg.max_iters {
        let (mut s11, mut s12, mut s22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for o in obs {
            let dx = p.x - o.anchor_pos.x;
            let dy = p.y - o.anchor_pos.y;
            let d = dx.hypot(dy);
            if d == 0.0 {
                if o.range_cm == 0.0 {
                    return Err(Error::SingularUpdate(iter));
                }
                continue;
            }
            let (ux, uy) = (dx / d, dy / d);
            let r = d - o.range_cm;
            s11 += ux * ux;
            s12 += ux * uy;
            s22 += uy * uy;
            g1 += ux * r;
            g2 += uy * r;
        }
        let (step, _) = solve_sym2(s11 + cfg.damping, s12, s22 + cfg.damping, -g1, -g2);
        let (sx, sy) = step.ok_or(Error::SingularUpdate(iter))?;
        p = Position2D::new(p.x + sx, p.y + sy);
        if sx.hypot(sy) < cfg.tol_cm {
            return Ok(IterativeFix {
                position: p,
                iterations: iter,
                converged: true,
                residual_norm: residual_norm(obs, p),
            });
        }
    }
    Ok(IterativeFix {
        position: p,
        iterations: cfg.max_iters,
        converged: false,
        residual_norm: residual_norm(obs, p),
    })
}

/// Anchor with the smallest range; ties go to the earliest observation.
pub fn closest_anchor(obs: &[RangeObservation]) -> Result<Position2D> {
    obs.iter()
        .fold(None::<&RangeObservation>, |best, o| match best {
            Some(b) if b.range_cm <= o.range_cm => Some(b),
            _ => Some(o),
        })
        .map(|o| o.anchor_pos)
        .ok_or(Error::TooFewAnchors(0))
}

pub fn centroid(obs: &[RangeObservation]) -> Position2D {
    let n = obs.len().max(1) as f64;
    let (sx, sy) = obs.iter().fold((0.0, 0.0), |(x, y), o| (x + o.anchor_pos.x, y + o.anchor_pos.y));
    Position2D::new(sx / n, sy / n)
}

/// Runs one solver variant. Algo2 with Algo1 init falls back to the anchor
/// centroid when Algo1 fails.
pub fn solve(obs: &[RangeObservation], solver: Solver, cfg: &SolverConfig) -> Result<Fix> {
    match solver {
        Solver::Algo1 => Ok(Fix {
            position: algo1_lls(obs)?,
            iterations: 0,
            converged: true,
            centroid_fallback: false,
        }),
        Solver::Algo2Algo1Init => {
            let (init, fallback) = match algo1_lls(obs) {
                Ok(p) => (p, false),
                Err(Error::DegenerateGeometry(_)) => (centroid(obs), true),
                Err(e) => return Err(e),
            };
            let r = algo2_iterative(obs, init, cfg)?;
            Ok(Fix {
                position: r.position,
                iterations: r.iterations,
                converged: r.converged,
                centroid_fallback: fallback,
            })
        }
        Solver::Algo2ClosestInit => {
            let r = algo2_iterative(obs, closest_anchor(obs)?, cfg)?;
            Ok(Fix {
                position: r.position,
                iterations: r.iterations,
                converged: r.converged,
                centroid_fallback: false,
            })
        }
    }
}

/// Builds observations from absolute ToAs in samples.
pub fn observations_from_toas(toas: &[f64], anchors: &[Position2D], k: &PhysConstants) -> Result<Vec<RangeObservation>> {
    if toas.len() != anchors.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} ToAs", anchors.len()),
            got: format!("{}", toas.len()),
        });
    }
    Ok(toas
        .iter()
        .zip(anchors)
        .map(|(&t, &a)| RangeObservation::new(a, toa_to_range(t, k).max(0.0)))
        .collect())
}

/// Algo2 started from Algo1 on ranges derived from absolute ToAs.
pub fn position_from_toas(toas: &[f64], anchors: &[Position2D], k: &PhysConstants, cfg: &SolverConfig) -> Result<Fix> {
    solve(&observations_from_toas(toas, anchors, k)?, Solver::Algo2Algo1Init, cfg)
}

/// 2-norm positioning error in cm.
pub fn positioning_error(est: &Position2D, truth: &Position2D) -> f64 {
    est.distance(truth)
}
