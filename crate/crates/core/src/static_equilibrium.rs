//! One-shot zero-profit prices.
//!
//! For a belief `pi` over the grid, the competitive ask is the fixed point of
//!
//! ```text
//! g(s, pi) = E[X | X + eps >= s] = sum_i x_i pi_i Phi(s - x_i) / sum_i pi_i Phi(s - x_i)
//! ```
//!
//! and the bid the fixed point of `h(s, pi) = E[X | X + eps <= s]` (with `Psi`
//! in place of `Phi`). Under the noise condition both maps are contractions on
//! `[x_min, x_max]` with modulus `K`, so Picard iteration converges
//! geometrically from any start.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::state::{Belief, StateGrid};

/// Default stopping tolerance for the fixed-point iteration.
pub const DEFAULT_TOL: f64 = 1e-12;

const ITERATION_MARGIN: usize = 100;
const FORCED_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Ask,
    Bid,
}

fn check_price(s: f64, grid: &StateGrid) -> Result<()> {
    if !grid.contains(s) {
        return Err(Error::InvalidParameter(format!(
            "price {s} outside [{}, {}]",
            grid.min(),
            grid.max()
        )));
    }
    Ok(())
}

/// Weighted mean of the grid under `pi_i * w(x_i)`. Returns `None` when the
/// total weight vanishes.
#[inline]
fn tilted_mean(probs: &[f64], xs: &[f64], weight: impl Fn(f64) -> f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, x) in probs.iter().zip(xs) {
        let w = p * weight(*x);
        num += x * w;
        den += w;
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

pub(crate) fn g_slice(s: f64, probs: &[f64], xs: &[f64], noise: &NoiseModel) -> Result<f64> {
    tilted_mean(probs, xs, |x| noise.survival(s - x)).ok_or(Error::ZeroBuyProbability { ask: s })
}

pub(crate) fn h_slice(s: f64, probs: &[f64], xs: &[f64], noise: &NoiseModel) -> Result<f64> {
    tilted_mean(probs, xs, |x| noise.cdf(s - x)).ok_or(Error::ZeroSellProbability { bid: s })
}

/// `g(s, pi) = E[X | X + eps >= s]` for `s` in `[x_min, x_max]`.
pub fn eval_g(s: f64, pi: &Belief, grid: &StateGrid, noise: &NoiseModel) -> Result<f64> {
    pi.check_len(grid.len())?;
    check_price(s, grid)?;
    g_slice(s, pi.probs(), grid.values(), noise)
}

/// `h(s, pi) = E[X | X + eps <= s]` for `s` in `[x_min, x_max]`.
pub fn eval_h(s: f64, pi: &Belief, grid: &StateGrid, noise: &NoiseModel) -> Result<f64> {
    pi.check_len(grid.len())?;
    check_price(s, grid)?;
    h_slice(s, pi.probs(), grid.values(), noise)
}

/// A converged fixed point together with iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub price: f64,
    pub iterations: usize,
    /// Size of the final Picard step, `|s_k - s_(k-1)|`.
    pub last_step: f64,
}

/// Picard solver for the static ask `G(pi)` and bid `H(pi)`.
#[derive(Debug, Clone)]
pub struct StaticSolver {
    grid: StateGrid,
    noise: NoiseModel,
    tol: f64,
    k: Option<f64>,
    max_iterations: usize,
}

impl StaticSolver {
    /// Builds a solver after checking the contraction condition.
    pub fn new(grid: StateGrid, noise: NoiseModel, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        let report = noise.check_gm_condition(grid.range())?;
        if !report.passes {
            return Err(Error::ConditionFailed { k: report.k });
        }
        let max_iterations = iteration_cap(report.k, tol, grid.range());
        Ok(Self {
            grid,
            noise,
            tol,
            k: Some(report.k),
            max_iterations,
        })
    }

    /// Builds a solver without requiring the condition. Needed for families
    /// with atoms; uniqueness is then not guaranteed and the iteration may
    /// fail to settle.
    pub fn forced(grid: StateGrid, noise: NoiseModel, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        noise.validate()?;
        let k = noise
            .check_gm_condition(grid.range())
            .ok()
            .filter(|r| r.passes)
            .map(|r| r.k);
        let max_iterations = match k {
            Some(k) => iteration_cap(k, tol, grid.range()),
            None => FORCED_MAX_ITERATIONS,
        };
        Ok(Self {
            grid,
            noise,
            tol,
            k,
            max_iterations,
        })
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Contraction modulus, when the condition holds.
    pub fn k(&self) -> Option<f64> {
        self.k
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    /// `G(pi)`, starting from the prior mean.
    pub fn ask(&self, pi: &Belief) -> Result<FixedPoint> {
        pi.check_len(self.grid.len())?;
        self.solve(Side::Ask, pi.probs(), None)
    }

    /// `H(pi)`, starting from the prior mean.
    pub fn bid(&self, pi: &Belief) -> Result<FixedPoint> {
        pi.check_len(self.grid.len())?;
        self.solve(Side::Bid, pi.probs(), None)
    }

    /// Fixed point for either side, warm-started at `start` when given.
    pub fn solve_side(&self, side: Side, pi: &Belief, start: Option<f64>) -> Result<FixedPoint> {
        pi.check_len(self.grid.len())?;
        self.solve(side, pi.probs(), start)
    }

    /// Works on raw (possibly slightly off-simplex) probability slices, as
    /// produced by intermediate Runge-Kutta stages.
    pub(crate) fn solve(&self, side: Side, probs: &[f64], start: Option<f64>) -> Result<FixedPoint> {
        let xs = self.grid.values();
        let lo = self.grid.min();
        let hi = self.grid.max();
        let mut s = match start {
            Some(s) if s.is_finite() => s.clamp(lo, hi),
            _ => {
                let total: f64 = probs.iter().sum();
                (crate::state::dot(xs, probs) / total).clamp(lo, hi)
            }
        };
        let mut iterations = 0;
        loop {
            let next = match side {
                Side::Ask => g_slice(s, probs, xs, &self.noise)?,
                Side::Bid => h_slice(s, probs, xs, &self.noise)?,
            }
            .clamp(lo, hi);
            iterations += 1;
            let step = libm::fabs(next - s);
            s = next;
            if step <= self.tol {
                return Ok(FixedPoint {
                    price: s,
                    iterations,
                    last_step: step,
                });
            }
            if iterations >= self.max_iterations {
                return Err(Error::NoConvergence {
                    iterations,
                    last_step: step,
                });
            }
        }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")))
    }
}

/// `ceil(log(tol / C) / log(K))` plus a safety margin.
fn iteration_cap(k: f64, tol: f64, c: f64) -> usize {
    if k <= 0.0 || tol >= c {
        return ITERATION_MARGIN;
    }
    let needed = libm::ceil(libm::log(tol / c) / libm::log(k));
    needed as usize + ITERATION_MARGIN
}

/// `G(pi)`: the unique static ask.
pub fn solve_ask(pi: &Belief, grid: &StateGrid, noise: &NoiseModel, tol: f64) -> Result<FixedPoint> {
    StaticSolver::new(grid.clone(), *noise, tol)?.ask(pi)
}

/// `H(pi)`: the unique static bid.
pub fn solve_bid(pi: &Belief, grid: &StateGrid, noise: &NoiseModel, tol: f64) -> Result<FixedPoint> {
    StaticSolver::new(grid.clone(), *noise, tol)?.bid(pi)
}

/// Lists all fixed points of `g` (or `h`) on `[x_min, x_max]` by scanning
/// `s - g(s)` on `points` equispaced nodes and bisecting each sign change.
///
/// Sign changes whose bisected residual stays large are jumps of a
/// discontinuous `g` (atoms in the noise), not roots, and are dropped.
pub fn scan_fixed_points(
    side: Side,
    pi: &Belief,
    grid: &StateGrid,
    noise: &NoiseModel,
    points: usize,
) -> Result<Vec<f64>> {
    const ZERO_TOL: f64 = 1e-12;
    const ACCEPT_TOL: f64 = 1e-8;
    const DEDUP_TOL: f64 = 1e-9;

    pi.check_len(grid.len())?;
    if points < 2 {
        return Err(Error::InvalidParameter("scan needs at least 2 points".into()));
    }
    let f = |s: f64| -> Result<f64> {
        let v = match side {
            Side::Ask => g_slice(s, pi.probs(), grid.values(), noise)?,
            Side::Bid => h_slice(s, pi.probs(), grid.values(), noise)?,
        };
        Ok(s - v)
    };
    let lo = grid.min();
    let width = grid.range();
    let node = |i: usize| {
        if i + 1 == points {
            grid.max()
        } else {
            lo + width * i as f64 / (points - 1) as f64
        }
    };

    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.iter().all(|q| libm::fabs(q - r) > DEDUP_TOL) {
            roots.push(r);
        }
    };

    let mut prev_s = node(0);
    let mut prev_f = f(prev_s)?;
    if libm::fabs(prev_f) <= ZERO_TOL {
        push(prev_s, &mut roots);
    }
    for i in 1..points {
        let s = node(i);
        let fs = f(s)?;
        if libm::fabs(fs) <= ZERO_TOL {
            push(s, &mut roots);
        } else if libm::fabs(prev_f) > ZERO_TOL && (prev_f < 0.0) != (fs < 0.0) {
            let (mut a, mut b, mut fa) = (prev_s, s, prev_f);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let fm = f(m)?;
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            let m = 0.5 * (a + b);
            if libm::fabs(f(m)?) <= ACCEPT_TOL {
                push(m, &mut roots);
            }
        }
        prev_s = s;
        prev_f = fs;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    Ok(roots)
}

/// Lipschitz and contraction constants used in the uniqueness argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionConstants {
    /// Contraction modulus of `g` in the price.
    pub k: f64,
    /// Lipschitz constant of `g` in the belief (L1 norm): `2 max|x_i| / Phi(C)^2`.
    pub l: f64,
    /// Maximum noise density on `[-C, C]`.
    pub m: f64,
    /// `12 L n lambda M`.
    pub k1: f64,
    /// Horizon with `K + t K1 < 1`, namely `(1 - K) / (2 K1)`.
    pub t_star: f64,
}

pub fn contraction_constants(
    grid: &StateGrid,
    noise: &NoiseModel,
    lambda: f64,
) -> Result<ContractionConstants> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "arrival rate must be >= 0, got {lambda}"
        )));
    }
    let report = noise.check_gm_condition(grid.range())?;
    if !report.passes {
        return Err(Error::ConditionFailed { k: report.k });
    }
    let l = 2.0 * grid.abs_max() / (report.phi_at_c * report.phi_at_c);
    let k1 = 12.0 * l * grid.len() as f64 * lambda * report.m;
    let t_star = if k1 > 0.0 {
        (1.0 - report.k) / (2.0 * k1)
    } else {
        f64::INFINITY
    };
    Ok(ContractionConstants {
        k: report.k,
        l,
        m: report.m,
        k1,
        t_star,
    })
}
