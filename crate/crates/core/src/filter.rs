//! The market maker's belief dynamics.
//!
//! At a buy at ask `a` the belief jumps by Bayes' rule with likelihood
//! `Phi(a - x_i)`; at a sell at bid `b` with `Psi(b - x_i)`. Between trades the
//! belief follows the ODE
//!
//! ```text
//! d pi_i / dt = -lambda pi_i (a_i - sum_j pi_j a_j) + sum_j pi_j q(j, i),
//! a_i = Psi(b - x_i) + Phi(a - x_i)
//! ```
//!
//! which combines the forward Kolmogorov flow of the chain with the evidence
//! carried by the absence of trades. In the equilibrium the quotes inside the
//! drift are themselves the fixed points `G(pi_t)`, `H(pi_t)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::market_sim::Quote;
use crate::noise::NoiseModel;
use crate::state::{dot, Belief, StateGrid};
use crate::static_equilibrium::{Side, StaticSolver};

const GENERATOR_ROW_TOL: f64 = 1e-12;

/// Transition-rate matrix of the true-value chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    n: usize,
    // row-major
    rates: Vec<f64>,
}

impl GeneratorMatrix {
    /// Full matrix including the diagonal. Rows must sum to zero.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut rates = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGenerator(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for (j, &r) in row.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::InvalidGenerator(format!("q({i},{j}) is not finite")));
                }
                if i != j && r < 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "off-diagonal q({i},{j}) = {r} is negative"
                    )));
                }
                sum += r;
                scale = libm::fmax(scale, libm::fabs(r));
            }
            if libm::fabs(sum) > GENERATOR_ROW_TOL * scale {
                return Err(Error::InvalidGenerator(format!(
                    "row {i} sums to {sum}, expected 0"
                )));
            }
            rates.extend_from_slice(row);
        }
        Ok(Self { n, rates })
    }

    /// Builds the matrix from off-diagonal rates; diagonal entries of the input
    /// are ignored and replaced by minus the row sum.
    pub fn from_off_diagonal(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut rows = rows;
        let n = rows.len();
        for (i, row) in rows.iter_mut().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGenerator(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            row[i] = 0.0;
            let off: f64 = row.iter().sum();
            row[i] = -off;
        }
        Self::new(rows)
    }

    pub fn zero(n: usize) -> Self {
        Self {
            n,
            rates: vec![0.0; n * n],
        }
    }

    /// Two-state chain leaving state 0 at rate `alpha` and state 1 at rate `beta`.
    pub fn two_state(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(vec![vec![-alpha, alpha], vec![beta, -beta]])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.n + j]
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rate(i, i)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.rates.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// `out_i = sum_j pi_j q(j, i)`.
    pub fn forward(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &pj) in pi.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let row = &self.rates[j * self.n..(j + 1) * self.n];
            for (o, r) in out.iter_mut().zip(row) {
                *o += pj * r;
            }
        }
    }
}

/// Belief plus the equilibrium quotes at that belief.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub belief: Belief,
    pub time: f64,
    /// `G(belief)`.
    pub ask_cache: f64,
    /// `H(belief)`.
    pub bid_cache: f64,
}

impl FilterState {
    pub fn new(belief: Belief, time: f64, solver: &StaticSolver) -> Result<Self> {
        let ask = solver.ask(&belief)?.price;
        let bid = solver.bid(&belief)?.price;
        Ok(Self {
            belief,
            time,
            ask_cache: ask,
            bid_cache: bid,
        })
    }

    /// Replaces the belief and refreshes both caches, warm-started from the
    /// previous quotes.
    pub fn refresh(&mut self, belief: Belief, solver: &StaticSolver) -> Result<()> {
        self.ask_cache = solver
            .solve_side(Side::Ask, &belief, Some(self.ask_cache))?
            .price;
        self.bid_cache = solver
            .solve_side(Side::Bid, &belief, Some(self.bid_cache))?
            .price;
        self.belief = belief;
        Ok(())
    }

    pub fn equilibrium_quote(&self) -> Quote {
        Quote {
            ask: self.ask_cache,
            bid: self.bid_cache,
        }
    }
}

/// Deviation of the quoted prices from the equilibrium fixed points.
///
/// The zero rule quotes `(G, H)`. Non-zero shifts are used to build
/// mispriced negative controls; shifted quotes are clamped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuoteRule {
    /// Added to the ask.
    pub ask_shift: f64,
    /// Subtracted from the bid.
    pub bid_shift: f64,
}

impl QuoteRule {
    pub fn equilibrium() -> Self {
        Self::default()
    }

    pub fn is_equilibrium(&self) -> bool {
        self.ask_shift == 0.0 && self.bid_shift == 0.0
    }

    pub fn apply(&self, ask: f64, bid: f64, grid: &StateGrid) -> Quote {
        if self.is_equilibrium() {
            return Quote { ask, bid };
        }
        Quote {
            ask: (ask + self.ask_shift).clamp(grid.min(), grid.max()),
            bid: (bid - self.bid_shift).clamp(grid.min(), grid.max()),
        }
    }
}

fn bayes_update(pi: &Belief, likelihood: impl Fn(f64) -> f64, grid: &StateGrid) -> Option<Belief> {
    let weighted: Vec<f64> = pi
        .probs()
        .iter()
        .zip(grid.values())
        .map(|(p, x)| p * likelihood(*x))
        .collect();
    let total: f64 = weighted.iter().sum();
    if total > 0.0 {
        Belief::new(weighted).ok()
    } else {
        None
    }
}

/// Posterior after a buy at `ask`: `pi_i Phi(ask - x_i) / sum_j pi_j Phi(ask - x_j)`.
pub fn buy_jump(pi: &Belief, ask: f64, grid: &StateGrid, noise: &NoiseModel) -> Result<Belief> {
    pi.check_len(grid.len())?;
    bayes_update(pi, |x| noise.survival(ask - x), grid).ok_or(Error::ZeroBuyProbability { ask })
}

/// Posterior after a sell at `bid`, with `Psi(bid - x_i)` as likelihood.
pub fn sell_jump(pi: &Belief, bid: f64, grid: &StateGrid, noise: &NoiseModel) -> Result<Belief> {
    pi.check_len(grid.len())?;
    bayes_update(pi, |x| noise.cdf(bid - x), grid).ok_or(Error::ZeroSellProbability { bid })
}

#[allow(clippy::too_many_arguments)]
fn drift_slice(
    probs: &[f64],
    quote: Quote,
    lambda: f64,
    q: &GeneratorMatrix,
    grid: &StateGrid,
    noise: &NoiseModel,
    trade_rate: &mut [f64],
    out: &mut [f64],
) {
    for (a, x) in trade_rate.iter_mut().zip(grid.values()) {
        *a = noise.cdf(quote.bid - x) + noise.survival(quote.ask - x);
    }
    let avg = dot(probs, trade_rate);
    q.forward(probs, out);
    for ((o, p), a) in out.iter_mut().zip(probs).zip(trade_rate.iter()) {
        *o -= lambda * p * (a - avg);
    }
}

/// Time derivative of the belief between trades for fixed quotes.
pub fn drift(
    pi: &Belief,
    quote: Quote,
    lambda: f64,
    q: &GeneratorMatrix,
    grid: &StateGrid,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    let n = grid.len();
    pi.check_len(n)?;
    if q.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.dim(),
        });
    }
    let mut trade_rate = vec![0.0; n];
    let mut out = vec![0.0; n];
    drift_slice(pi.probs(), quote, lambda, q, grid, noise, &mut trade_rate, &mut out);
    Ok(out)
}

/// Round-off diagnostics collected while integrating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationStats {
    pub steps: usize,
    /// Smallest belief component seen before clamping.
    pub min_component: f64,
    /// Largest `|sum pi - 1|` seen before renormalizing.
    pub max_sum_error: f64,
}

impl Default for IntegrationStats {
    fn default() -> Self {
        Self {
            steps: 0,
            min_component: f64::INFINITY,
            max_sum_error: 0.0,
        }
    }
}

impl IntegrationStats {
    pub fn merge(&mut self, other: &IntegrationStats) {
        self.steps += other.steps;
        self.min_component = libm::fmin(self.min_component, other.min_component);
        self.max_sum_error = libm::fmax(self.max_sum_error, other.max_sum_error);
    }
}

/// Everything the between-trade flow depends on.
#[derive(Debug, Clone, Copy)]
pub struct FilterDynamics<'a> {
    pub solver: &'a StaticSolver,
    pub q: &'a GeneratorMatrix,
    pub lambda: f64,
    pub quote_rule: QuoteRule,
}

impl<'a> FilterDynamics<'a> {
    pub fn new(solver: &'a StaticSolver, q: &'a GeneratorMatrix, lambda: f64) -> Result<Self> {
        if q.dim() != solver.grid().len() {
            return Err(Error::DimensionMismatch {
                expected: solver.grid().len(),
                got: q.dim(),
            });
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be >= 0, got {lambda}"
            )));
        }
        Ok(Self {
            solver,
            q,
            lambda,
            quote_rule: QuoteRule::equilibrium(),
        })
    }

    pub fn with_quote_rule(mut self, rule: QuoteRule) -> Self {
        self.quote_rule = rule;
        self
    }

    /// The quote posted when the belief is `state.belief`.
    pub fn quote(&self, state: &FilterState) -> Quote {
        self.quote_rule
            .apply(state.ask_cache, state.bid_cache, self.solver.grid())
    }

    /// Advances `state` by `dt` with fixed-step classical RK4.
    ///
    /// `G` and `H` are re-solved at every stage, warm-started from the last
    /// solution. After each step negative components are clamped to zero and
    /// the belief renormalized; the caches hold the fixed points at the
    /// terminal belief.
    pub fn integrate(
        &self,
        state: &FilterState,
        dt: f64,
        step: f64,
    ) -> Result<(FilterState, IntegrationStats)> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("ODE step must be > 0, got {step}")));
        }
        let mut stats = IntegrationStats::default();
        if dt == 0.0 {
            return Ok((state.clone(), stats));
        }

        let grid = self.solver.grid();
        let noise = self.solver.noise();
        let n = grid.len();
        state.belief.check_len(n)?;

        let mut y = state.belief.probs().to_vec();
        let mut warm = (state.ask_cache, state.bid_cache);
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut stage = vec![0.0; n];
        let mut scratch = vec![0.0; n];

        let eval = |probs: &[f64], warm: &mut (f64, f64), out: &mut [f64], scratch: &mut [f64]| -> Result<()> {
            let ask = self.solver.solve(Side::Ask, probs, Some(warm.0))?.price;
            let bid = self.solver.solve(Side::Bid, probs, Some(warm.1))?.price;
            *warm = (ask, bid);
            let quote = self.quote_rule.apply(ask, bid, grid);
            drift_slice(probs, quote, self.lambda, self.q, grid, noise, scratch, out);
            Ok(())
        };

        let mut remaining = dt;
        while remaining > 0.0 {
            let mut h = libm::fmin(step, remaining);
            if remaining - h <= 1e-12 * step {
                h = remaining;
            }

            eval(&y, &mut warm, &mut k[0], &mut scratch)?;
            for i in 0..n {
                stage[i] = y[i] + 0.5 * h * k[0][i];
            }
            eval(&stage, &mut warm, &mut k[1], &mut scratch)?;
            for i in 0..n {
                stage[i] = y[i] + 0.5 * h * k[1][i];
            }
            eval(&stage, &mut warm, &mut k[2], &mut scratch)?;
            for i in 0..n {
                stage[i] = y[i] + h * k[2][i];
            }
            eval(&stage, &mut warm, &mut k[3], &mut scratch)?;
            for i in 0..n {
                y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }

            let sum: f64 = y.iter().sum();
            stats.max_sum_error = libm::fmax(stats.max_sum_error, libm::fabs(sum - 1.0));
            for v in y.iter_mut() {
                stats.min_component = libm::fmin(stats.min_component, *v);
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let sum: f64 = y.iter().sum();
            for v in y.iter_mut() {
                *v /= sum;
            }
            stats.steps += 1;
            remaining -= h;
        }

        let mut next = FilterState {
            belief: state.belief.clone(),
            time: state.time + dt,
            ask_cache: warm.0,
            bid_cache: warm.1,
        };
        next.refresh(Belief::new(y)?, self.solver)?;
        Ok((next, stats))
    }
}

/// Convenience wrapper around [`FilterDynamics::integrate`] with equilibrium quotes.
pub fn integrate_between_events(
    state: &FilterState,
    dt: f64,
    lambda: f64,
    q: &GeneratorMatrix,
    solver: &StaticSolver,
    step: f64,
) -> Result<FilterState> {
    FilterDynamics::new(solver, q, lambda)?
        .integrate(state, dt, step)
        .map(|(s, _)| s)
}
