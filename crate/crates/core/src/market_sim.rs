//! Exact sampling of the model primitives and the event-driven pricing engine.
//!
//! The engine builds the equilibrium quote path pathwise: between customer
//! arrivals the belief follows the no-trade ODE with live quotes
//! `(G(pi_t), H(pi_t))`; at an arrival the posted quote is the fixed point at
//! the belief just before the arrival, the customer trades against it, and the
//! belief jumps by Bayes' rule if a trade is observed. The true value is read
//! only to decide trades and book profits.

use alloc::format;
use alloc::vec::Vec;

use rand::distributions::Open01;
use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::{buy_jump, sell_jump, FilterDynamics, FilterState, GeneratorMatrix, IntegrationStats};
use crate::noise::NoiseModel;
use crate::rng::PathStreams;
use crate::state::{Belief, StateGrid};
use crate::static_equilibrium::{StaticSolver, DEFAULT_TOL};

pub use crate::filter::QuoteRule;

/// The full problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub grid: StateGrid,
    pub q: GeneratorMatrix,
    /// Customer arrival rate.
    pub lambda: f64,
    pub noise: NoiseModel,
    /// Law of the initial true value, which is also the market maker's prior.
    pub initial_belief: Belief,
}

impl MarketModel {
    pub fn new(
        grid: StateGrid,
        q: GeneratorMatrix,
        lambda: f64,
        noise: NoiseModel,
        initial_belief: Belief,
    ) -> Result<Self> {
        let n = grid.len();
        if q.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.dim(),
            });
        }
        initial_belief.check_len(n)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be finite and >= 0, got {lambda}"
            )));
        }
        noise.validate()?;
        Ok(Self {
            grid,
            q,
            lambda,
            noise,
            initial_belief,
        })
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }
}

/// A posted (ask, bid) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub ask: f64,
    pub bid: f64,
}

impl Quote {
    /// `x_min <= bid <= ask <= x_max`.
    pub fn is_bracketed(&self, grid: &StateGrid) -> bool {
        grid.min() <= self.bid && self.bid <= self.ask && self.ask <= grid.max()
    }

    pub fn spread(&self) -> f64 {
        self.ask - self.bid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TradeOutcome {
    Buy,
    Sell,
    NoTrade,
}

impl TradeOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            TradeOutcome::Buy => "buy",
            TradeOutcome::Sell => "sell",
            TradeOutcome::NoTrade => "none",
        }
    }
}

/// One customer arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub true_state: usize,
    pub true_value: f64,
    pub epsilon: f64,
    pub valuation: f64,
    /// Quote in force at the arrival, computed from `belief_before`.
    pub quote: Quote,
    pub outcome: TradeOutcome,
    pub belief_before: Belief,
    pub belief_after: Belief,
    /// `ask - x` on a buy, `bid - x` on a sell, zero otherwise.
    pub profit: f64,
}

/// Right-continuous piecewise-constant path of the chain's state index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueValuePath {
    /// `(time, state)` pairs; the first entry is at time 0.
    pub jumps: Vec<(f64, usize)>,
}

impl TrueValuePath {
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jumps.partition_point(|(s, _)| *s <= t);
        self.jumps[idx.saturating_sub(1)].1
    }

    pub fn initial_state(&self) -> usize {
        self.jumps[0].1
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub seed: u64,
    pub horizon: f64,
    pub true_value_path: TrueValuePath,
    pub events: Vec<EventRecord>,
    /// Sum over buys of `ask - X`.
    pub buy_profit_sum: f64,
    /// Sum over sells of `bid - X`.
    pub sell_profit_sum: f64,
    pub n_buys: usize,
    pub n_sells: usize,
    /// Arrivals where `ask == bid` and the valuation hit the quote exactly.
    pub degenerate_ties: usize,
    pub terminal_belief: Belief,
    pub integration: IntegrationStats,
}

impl PathRecord {
    pub fn trades(&self) -> impl Iterator<Item = &EventRecord> {
        self.events
            .iter()
            .filter(|e| e.outcome != TradeOutcome::NoTrade)
    }
}

/// Gillespie sampling of the true-value chain on `[0, horizon]`.
pub fn sample_ctmc_path<R: Rng + ?Sized>(
    q: &GeneratorMatrix,
    initial: &Belief,
    horizon: f64,
    rng: &mut R,
) -> Result<TrueValuePath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    initial.check_len(q.dim())?;
    let mut state = sample_categorical(initial.probs(), rng);
    let mut t = 0.0;
    let mut jumps = alloc::vec![(0.0, state)];
    loop {
        let rate = q.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        t += exponential(rate, rng);
        if t > horizon {
            break;
        }
        let u: f64 = rng.gen::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = state;
        // If rounding leaves `u` above the accumulated total, `next` ends on
        // the last reachable state.
        for j in (0..q.dim()).filter(|&j| j != state && q.rate(state, j) > 0.0) {
            acc += q.rate(state, j);
            next = j;
            if u < acc {
                break;
            }
        }
        state = next;
        jumps.push((t, state));
    }
    Ok(TrueValuePath { jumps })
}

/// Homogeneous Poisson arrival times on `(0, horizon]`.
pub fn sample_arrivals<R: Rng + ?Sized>(lambda: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "arrival rate must be >= 0, got {lambda}"
        )));
    }
    let mut times = Vec::new();
    if lambda == 0.0 {
        return Ok(times);
    }
    let mut t = 0.0;
    loop {
        t += exponential(lambda, rng);
        if t > horizon {
            return Ok(times);
        }
        times.push(t);
    }
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -libm::log(u) / rate
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Buy if the valuation reaches the ask, sell if it reaches the bid.
///
/// The ask is checked first, so a valuation equal to a collapsed quote
/// (`ask == bid`) buys.
pub fn decide_trade(valuation: f64, quote: Quote) -> TradeOutcome {
    if valuation >= quote.ask {
        TradeOutcome::Buy
    } else if valuation <= quote.bid {
        TradeOutcome::Sell
    } else {
        TradeOutcome::NoTrade
    }
}

/// Rate of buys when the true value is `x`: `lambda Phi(ask - x)`.
pub fn buy_intensity(quote: Quote, x: f64, lambda: f64, noise: &NoiseModel) -> f64 {
    lambda * noise.survival(quote.ask - x)
}

/// Rate of sells when the true value is `x`: `lambda Psi(bid - x)`.
pub fn sell_intensity(quote: Quote, x: f64, lambda: f64, noise: &NoiseModel) -> f64 {
    lambda * noise.cdf(quote.bid - x)
}

/// Numerical settings of the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub ode_step: f64,
    pub fp_tol: f64,
    pub quote_rule: QuoteRule,
    /// Skip the noise condition check (required for families with atoms).
    pub force: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ode_step: 0.01,
            fp_tol: DEFAULT_TOL,
            quote_rule: QuoteRule::equilibrium(),
            force: false,
        }
    }
}

/// A belief sample produced by [`GmpsEngine::replay`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSample {
    pub time: f64,
    pub belief: Belief,
    pub quote: Quote,
}

/// The pricing engine for one model.
#[derive(Debug, Clone)]
pub struct GmpsEngine {
    model: MarketModel,
    config: SimConfig,
    solver: StaticSolver,
}

impl GmpsEngine {
    pub fn new(model: MarketModel, config: SimConfig) -> Result<Self> {
        if !(config.ode_step > 0.0 && config.ode_step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ode_step must be > 0, got {}",
                config.ode_step
            )));
        }
        let solver = if config.force {
            StaticSolver::forced(model.grid.clone(), model.noise, config.fp_tol)?
        } else {
            StaticSolver::new(model.grid.clone(), model.noise, config.fp_tol)?
        };
        Ok(Self {
            model,
            config,
            solver,
        })
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn solver(&self) -> &StaticSolver {
        &self.solver
    }

    fn dynamics(&self) -> Result<FilterDynamics<'_>> {
        Ok(FilterDynamics::new(&self.solver, &self.model.q, self.model.lambda)?
            .with_quote_rule(self.config.quote_rule))
    }

    /// Simulates one path on `[0, horizon]` from the model's prior.
    pub fn simulate(&self, horizon: f64, seed: u64) -> Result<PathRecord> {
        self.simulate_from(horizon, seed, &self.model.initial_belief)
    }

    /// Simulates with the true value drawn from the model's initial law but
    /// the market maker starting from `prior`. With `prior` equal to the
    /// model's initial belief this is [`GmpsEngine::simulate`].
    pub fn simulate_from(&self, horizon: f64, seed: u64, prior: &Belief) -> Result<PathRecord> {
        let model = &self.model;
        let grid = &model.grid;
        prior.check_len(grid.len())?;
        let mut streams = PathStreams::new(seed);
        let path = sample_ctmc_path(&model.q, &model.initial_belief, horizon, &mut streams.true_value)?;
        let arrivals = sample_arrivals(model.lambda, horizon, &mut streams.arrivals)?;
        let dynamics = self.dynamics()?;

        let mut state = FilterState::new(prior.clone(), 0.0, &self.solver)?;
        let mut stats = IntegrationStats::default();
        let mut events = Vec::with_capacity(arrivals.len());
        let (mut buy_sum, mut sell_sum, mut n_buys, mut n_sells, mut ties) = (0.0, 0.0, 0, 0, 0);

        for &tau in &arrivals {
            let (next, st) = dynamics.integrate(&state, tau - state.time, self.config.ode_step)?;
            stats.merge(&st);
            state = next;
            state.time = tau;

            let quote = dynamics.quote(&state);
            let true_state = path.state_at(tau);
            let x = grid.values()[true_state];
            let eps = model.noise.sample(&mut streams.noise);
            let valuation = x + eps;
            let outcome = decide_trade(valuation, quote);
            if quote.ask == quote.bid && valuation == quote.ask {
                ties += 1;
            }
            let before = state.belief.clone();
            let profit = match outcome {
                TradeOutcome::Buy => {
                    state.refresh(buy_jump(&before, quote.ask, grid, &model.noise)?, &self.solver)?;
                    n_buys += 1;
                    buy_sum += quote.ask - x;
                    quote.ask - x
                }
                TradeOutcome::Sell => {
                    state.refresh(sell_jump(&before, quote.bid, grid, &model.noise)?, &self.solver)?;
                    n_sells += 1;
                    sell_sum += quote.bid - x;
                    quote.bid - x
                }
                TradeOutcome::NoTrade => 0.0,
            };
            events.push(EventRecord {
                time: tau,
                true_state,
                true_value: x,
                epsilon: eps,
                valuation,
                quote,
                outcome,
                belief_before: before,
                belief_after: state.belief.clone(),
                profit,
            });
        }
        let (terminal, st) = dynamics.integrate(&state, horizon - state.time, self.config.ode_step)?;
        stats.merge(&st);

        Ok(PathRecord {
            seed,
            horizon,
            true_value_path: path,
            events,
            buy_profit_sum: buy_sum,
            sell_profit_sum: sell_sum,
            n_buys,
            n_sells,
            degenerate_ties: ties,
            terminal_belief: terminal.belief,
            integration: stats,
        })
    }

    /// Re-runs the deterministic filter flow through the logged trades and
    /// reports the belief (after any trade at that instant) and the quote at
    /// each of the sorted `sample_times`.
    pub fn replay(&self, events: &[EventRecord], sample_times: &[f64]) -> Result<Vec<BeliefSample>> {
        self.replay_from(&self.model.initial_belief, events, sample_times)
    }

    pub fn replay_from(
        &self,
        prior: &Belief,
        events: &[EventRecord],
        sample_times: &[f64],
    ) -> Result<Vec<BeliefSample>> {
        if sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("sample times must be sorted".into()));
        }
        let grid = &self.model.grid;
        let dynamics = self.dynamics()?;
        let mut state = FilterState::new(prior.clone(), 0.0, &self.solver)?;
        let mut trades = events
            .iter()
            .filter(|e| e.outcome != TradeOutcome::NoTrade)
            .peekable();
        let mut out = Vec::with_capacity(sample_times.len());
        let step = self.config.ode_step;

        for &s in sample_times {
            while let Some(e) = trades.next_if(|e| e.time <= s) {
                let (next, _) = dynamics.integrate(&state, e.time - state.time, step)?;
                state = next;
                state.time = e.time;
                let quote = dynamics.quote(&state);
                let post = match e.outcome {
                    TradeOutcome::Buy => buy_jump(&state.belief, quote.ask, grid, &self.model.noise)?,
                    _ => sell_jump(&state.belief, quote.bid, grid, &self.model.noise)?,
                };
                state.refresh(post, &self.solver)?;
            }
            let (next, _) = dynamics.integrate(&state, s - state.time, step)?;
            state = next;
            state.time = s;
            out.push(BeliefSample {
                time: s,
                belief: state.belief.clone(),
                quote: dynamics.quote(&state),
            });
        }
        Ok(out)
    }
}

/// One-shot convenience wrapper: builds the engine and simulates a path.
pub fn simulate_gmps_path(
    model: &MarketModel,
    horizon: f64,
    config: SimConfig,
    seed: u64,
) -> Result<PathRecord> {
    GmpsEngine::new(model.clone(), config)?.simulate(horizon, seed)
}
