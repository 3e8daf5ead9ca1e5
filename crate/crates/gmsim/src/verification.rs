//! Independent oracles and statistical checks for simulated output.
//!
//! Nothing in here touches the engine's drift or its Runge-Kutta integrator:
//! the oracle filter is a separate split-step discretization, and the tests
//! only read logged events.

use gmsim_core::market_sim::{
    decide_trade, sample_arrivals, BeliefSample, EventRecord, GmpsEngine, MarketModel,
    PathRecord, Quote, QuoteRule, TradeOutcome,
};
use gmsim_core::rng::{path_seed, PathStreams};
use gmsim_core::static_equilibrium::{contraction_constants, Side, StaticSolver};
use gmsim_core::{Belief, NoiseModel};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

/// Significance level of the chi-square tests.
pub const CHI2_ALPHA: f64 = 0.01;
/// Acceptance threshold for profit z-scores.
pub const Z_THRESHOLD: f64 = 3.0;
/// Minimum `lambda * T * p` for a meaningful intensity test.
pub const MIN_EXPECTED_TRADES: f64 = 20.0;

const TIME_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum VerificationError {
    #[error("time grids do not line up: {0}")]
    GridMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid oracle settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Core(#[from] gmsim_core::Error),
}

pub type Result<T> = std::result::Result<T, VerificationError>;

/// Beliefs sampled at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPath {
    pub times: Vec<f64>,
    pub beliefs: Vec<Belief>,
}

impl From<Vec<BeliefSample>> for BeliefPath {
    fn from(samples: Vec<BeliefSample>) -> Self {
        let (times, beliefs) = samples.into_iter().map(|s| (s.time, s.belief)).unzip();
        Self { times, beliefs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFilterConfig {
    pub step: f64,
    pub matrix_exp_terms: usize,
}

impl Default for OracleFilterConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            matrix_exp_terms: 12,
        }
    }
}

/// Where the oracle takes its quotes from between trades.
#[derive(Debug, Clone, Copy)]
pub enum QuoteProcess<'a> {
    /// Equilibrium quotes `(G, H)` evaluated at the oracle's own belief at
    /// the start of each step, passed through `rule`.
    Equilibrium(&'a StaticSolver, QuoteRule),
    /// Exogenous piecewise-constant quotes: `(t_k, quote_k)` holds on
    /// `[t_k, t_(k+1))`. The first entry must be at time 0.
    Piecewise(&'a [(f64, Quote)]),
}

fn dense_matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// `exp(q dt)` by its Taylor series truncated after `terms` powers.
fn transition_matrix(model: &MarketModel, dt: f64, terms: usize) -> Vec<f64> {
    let n = model.n_states();
    let a: Vec<f64> = (0..n * n).map(|k| model.q.rate(k / n, k % n) * dt).collect();
    let mut out = vec![0.0; n * n];
    let mut power = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        power[i * n + i] = 1.0;
    }
    for k in 1..=terms {
        power = dense_matmul(&power, &a, n);
        for v in power.iter_mut() {
            *v /= k as f64;
        }
        for (o, p) in out.iter_mut().zip(&power) {
            *o += p;
        }
    }
    out
}

fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= s;
    }
}

struct Oracle<'a> {
    model: &'a MarketModel,
    quotes: QuoteProcess<'a>,
    cfg: OracleFilterConfig,
    full_step: Vec<f64>,
    warm: (f64, f64),
    quote_idx: usize,
}

impl Oracle<'_> {
    fn quote_at(&mut self, t: f64, pi: &[f64]) -> Result<Quote> {
        match self.quotes {
            QuoteProcess::Equilibrium(solver, rule) => {
                let belief = Belief::new(pi.to_vec())?;
                let ask = solver.solve_side(Side::Ask, &belief, Some(self.warm.0))?.price;
                let bid = solver.solve_side(Side::Bid, &belief, Some(self.warm.1))?.price;
                self.warm = (ask, bid);
                Ok(rule.apply(ask, bid, solver.grid()))
            }
            QuoteProcess::Piecewise(path) => {
                while self.quote_idx + 1 < path.len() && path[self.quote_idx + 1].0 <= t {
                    self.quote_idx += 1;
                }
                Ok(path[self.quote_idx].1)
            }
        }
    }

    /// One split step: chain transition, then the no-trade likelihood.
    fn step(&mut self, pi: &mut Vec<f64>, t: f64, dt: f64) -> Result<()> {
        let n = pi.len();
        let quote = self.quote_at(t, pi)?;
        let owned;
        let p: &[f64] = if (dt - self.cfg.step).abs() <= TIME_TOL {
            &self.full_step
        } else {
            owned = transition_matrix(self.model, dt, self.cfg.matrix_exp_terms);
            &owned
        };
        let mut next = vec![0.0; n];
        for (i, &pi_i) in pi.iter().enumerate() {
            for j in 0..n {
                next[j] += pi_i * p[i * n + j];
            }
        }
        let noise = &self.model.noise;
        for (v, x) in next.iter_mut().zip(self.model.grid.values()) {
            let rate = noise.survival(quote.ask - x) + noise.cdf(quote.bid - x);
            *v = v.max(0.0) * (-self.model.lambda * rate * dt).exp();
        }
        normalize(&mut next);
        *pi = next;
        Ok(())
    }

    /// Advances from `t` to `target` on the global grid `k * h`, splitting
    /// the cell that contains `target`.
    fn advance(&mut self, pi: &mut Vec<f64>, t: &mut f64, target: f64) -> Result<()> {
        let h = self.cfg.step;
        while target - *t > TIME_TOL {
            let cell = ((*t + TIME_TOL) / h).floor() + 1.0;
            let next = (cell * h).min(target);
            let dt = next - *t;
            self.step(pi, *t, dt)?;
            *t = if (next - cell * h).abs() <= TIME_TOL { cell * h } else { next };
        }
        Ok(())
    }
}

/// Split-step exact-Bayes filter.
///
/// Per step of length `h`: the belief is pushed through `exp(q h)` (truncated
/// series), multiplied by the no-trade likelihood
/// `exp(-lambda [Phi(ask - x_i) + Psi(bid - x_i)] h)` and renormalized. At
/// every logged trade the exact Bayes jump is applied with the logged price.
/// Beliefs are reported at `sample_times` (after any trade at that instant).
pub fn oracle_filter(
    model: &MarketModel,
    quotes: QuoteProcess<'_>,
    events: &[EventRecord],
    sample_times: &[f64],
    cfg: OracleFilterConfig,
) -> Result<BeliefPath> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(VerificationError::InvalidSettings(format!("step must be > 0, got {}", cfg.step)));
    }
    if cfg.matrix_exp_terms < 8 {
        return Err(VerificationError::InvalidSettings(format!(
            "matrix_exp_terms must be >= 8, got {}",
            cfg.matrix_exp_terms
        )));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.first().is_some_and(|t| *t < 0.0) {
        return Err(VerificationError::GridMismatch("sample times must be sorted and >= 0".into()));
    }
    if events.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(VerificationError::GridMismatch("events must be sorted in time".into()));
    }
    if let QuoteProcess::Piecewise(path) = quotes {
        if path.first().map(|p| p.0) != Some(0.0) || path.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(VerificationError::GridMismatch(
                "piecewise quotes must start at 0 and be sorted".into(),
            ));
        }
    }

    let prior = &model.initial_belief;
    let warm = match quotes {
        QuoteProcess::Equilibrium(solver, _) => (solver.ask(prior)?.price, solver.bid(prior)?.price),
        QuoteProcess::Piecewise(_) => (0.0, 0.0),
    };
    let mut oracle = Oracle {
        model,
        quotes,
        cfg,
        full_step: transition_matrix(model, cfg.step, cfg.matrix_exp_terms),
        warm,
        quote_idx: 0,
    };
    let mut pi = prior.probs().to_vec();
    let mut t = 0.0;
    let mut trades = events
        .iter()
        .filter(|e| e.outcome != TradeOutcome::NoTrade)
        .peekable();
    let mut out = BeliefPath {
        times: Vec::with_capacity(sample_times.len()),
        beliefs: Vec::with_capacity(sample_times.len()),
    };
    let grid = model.grid.values();
    let noise = &model.noise;

    for &s in sample_times {
        while let Some(e) = trades.next_if(|e| e.time <= s) {
            oracle.advance(&mut pi, &mut t, e.time)?;
            for (p, x) in pi.iter_mut().zip(grid) {
                *p *= match e.outcome {
                    TradeOutcome::Buy => noise.survival(e.quote.ask - x),
                    _ => noise.cdf(e.quote.bid - x),
                };
            }
            if pi.iter().sum::<f64>() <= 0.0 {
                return Err(VerificationError::Core(gmsim_core::Error::ZeroBuyProbability {
                    ask: e.quote.ask,
                }));
            }
            normalize(&mut pi);
        }
        oracle.advance(&mut pi, &mut t, s)?;
        out.times.push(s);
        out.beliefs.push(Belief::new(pi.clone())?);
    }
    Ok(out)
}

/// Max over the common time grid of `sum_i |pi_i - pi_hat_i|`.
pub fn compare_filters(engine: &BeliefPath, oracle: &BeliefPath) -> Result<f64> {
    if engine.times.len() != oracle.times.len() {
        return Err(VerificationError::GridMismatch(format!(
            "{} vs {} samples",
            engine.times.len(),
            oracle.times.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for (k, ((ta, a), (tb, b))) in engine
        .times
        .iter()
        .zip(&engine.beliefs)
        .zip(oracle.times.iter().zip(&oracle.beliefs))
        .enumerate()
    {
        if (ta - tb).abs() > TIME_TOL * ta.abs().max(1.0) {
            return Err(VerificationError::GridMismatch(format!("sample {k}: t = {ta} vs {tb}")));
        }
        if a.len() != b.len() {
            return Err(VerificationError::GridMismatch(format!(
                "sample {k}: {} vs {} states",
                a.len(),
                b.len()
            )));
        }
        worst = worst.max(a.l1_distance(b));
    }
    Ok(worst)
}

/// Per-path profit totals for one side each.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathProfit {
    pub buy_sum: f64,
    pub n_buys: usize,
    pub sell_sum: f64,
    pub n_sells: usize,
}

/// Bounded stopping times at which profits are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoppingRule {
    /// The horizon itself.
    Horizon,
    /// The first `k` trades, or the horizon if fewer occur.
    FirstTrades(usize),
}

impl PathProfit {
    pub fn from_path(path: &PathRecord, rule: StoppingRule) -> Self {
        let limit = match rule {
            StoppingRule::Horizon => usize::MAX,
            StoppingRule::FirstTrades(k) => k,
        };
        let mut p = PathProfit::default();
        for e in path.trades().take(limit) {
            match e.outcome {
                TradeOutcome::Buy => {
                    p.buy_sum += e.profit;
                    p.n_buys += 1;
                }
                TradeOutcome::Sell => {
                    p.sell_sum += e.profit;
                    p.n_sells += 1;
                }
                TradeOutcome::NoTrade => {}
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroProfitReport {
    pub n_paths: usize,
    pub n_buys: usize,
    pub n_sells: usize,
    /// Mean of `ask - X` over buys.
    pub buy_mean: f64,
    pub buy_se: f64,
    /// Mean of `bid - X` over sells.
    pub sell_mean: f64,
    pub sell_se: f64,
    pub z_buy: f64,
    pub z_sell: f64,
    pub pass: bool,
}

/// Ratio-estimator mean and its path-clustered standard error.
fn clustered(sums: impl Iterator<Item = (f64, usize)> + Clone, n_paths: usize) -> (f64, f64, usize) {
    let total: f64 = sums.clone().map(|(s, _)| s).sum();
    let count: usize = sums.clone().map(|(_, n)| n).sum();
    let mean = total / count as f64;
    let ss: f64 = sums.map(|(s, n)| (s - mean * n as f64).powi(2)).sum();
    let p = n_paths as f64;
    let se = (p / (p - 1.0) * ss).sqrt() / count as f64;
    (mean, se, count)
}

fn z_score(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    }
}

/// Pools per-trade profits over paths and tests each side's mean against 0.
///
/// Trades on the same path are not independent, so the standard error is
/// clustered by path: with per-path sums `S_p` over `n_p` trades and pooled
/// mean `m`, `se^2 = P / (P - 1) * sum_p (S_p - m n_p)^2 / (sum_p n_p)^2`.
pub fn zero_profit_from_totals(paths: &[PathProfit]) -> Result<ZeroProfitReport> {
    if paths.len() < 2 {
        return Err(VerificationError::InsufficientData(format!(
            "need at least 2 paths, got {}",
            paths.len()
        )));
    }
    let n_buys: usize = paths.iter().map(|p| p.n_buys).sum();
    let n_sells: usize = paths.iter().map(|p| p.n_sells).sum();
    if n_buys == 0 || n_sells == 0 {
        return Err(VerificationError::InsufficientData(format!(
            "{n_buys} buys and {n_sells} sells; need trades on both sides"
        )));
    }
    let (buy_mean, buy_se, _) = clustered(paths.iter().map(|p| (p.buy_sum, p.n_buys)), paths.len());
    let (sell_mean, sell_se, _) = clustered(paths.iter().map(|p| (p.sell_sum, p.n_sells)), paths.len());
    let z_buy = z_score(buy_mean, buy_se);
    let z_sell = z_score(sell_mean, sell_se);
    Ok(ZeroProfitReport {
        n_paths: paths.len(),
        n_buys,
        n_sells,
        buy_mean,
        buy_se,
        sell_mean,
        sell_se,
        z_buy,
        z_sell,
        pass: z_buy.abs() <= Z_THRESHOLD && z_sell.abs() <= Z_THRESHOLD,
    })
}

pub fn zero_profit_test(paths: &[PathRecord]) -> Result<ZeroProfitReport> {
    zero_profit_test_stopped(paths, StoppingRule::Horizon)
}

pub fn zero_profit_test_stopped(paths: &[PathRecord], rule: StoppingRule) -> Result<ZeroProfitReport> {
    let totals: Vec<PathProfit> = paths.iter().map(|p| PathProfit::from_path(p, rule)).collect();
    zero_profit_from_totals(&totals)
}

/// Chi-square goodness of fit of observed counts against a Poisson law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonFit {
    /// Poisson mean `lambda * p * T`.
    pub expected_mean: f64,
    pub sample_mean: f64,
    pub bins: usize,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub pass: bool,
}

/// Bins `0..` so that every bin has expected count >= 5; the last bin is
/// the upper tail.
pub fn poisson_chi_square(counts: &[u64], mean: f64) -> Result<PoissonFit> {
    const MIN_EXPECTED: f64 = 5.0;
    let n = counts.len() as f64;
    if counts.is_empty() || mean.is_nan() || mean <= 0.0 {
        return Err(VerificationError::InsufficientData(
            "need trials and a positive Poisson mean".into(),
        ));
    }
    let poisson = Poisson::new(mean).map_err(|e| VerificationError::InvalidSettings(e.to_string()))?;
    // Bin upper edges (inclusive); the last bin is open.
    let mut edges: Vec<u64> = Vec::new();
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        acc += n * poisson.pmf(k);
        let tail = n * poisson.sf(k);
        if acc >= MIN_EXPECTED {
            if tail < MIN_EXPECTED {
                break;
            }
            edges.push(k);
            acc = 0.0;
        }
        k += 1;
    }
    if edges.is_empty() {
        return Err(VerificationError::InsufficientData(
            "too few trials for two bins with expected count >= 5".into(),
        ));
    }
    let bins = edges.len() + 1;
    let mut observed = vec![0.0; bins];
    for &c in counts {
        let b = edges.partition_point(|&e| e < c);
        observed[b] += 1.0;
    }
    let mut chi2 = 0.0;
    let mut lower_cdf = 0.0;
    for (b, obs) in observed.iter().enumerate() {
        let upper_cdf = if b < edges.len() { poisson.cdf(edges[b]) } else { 1.0 };
        let expected = n * (upper_cdf - lower_cdf);
        chi2 += (obs - expected).powi(2) / expected;
        lower_cdf = upper_cdf;
    }
    let df = bins - 1;
    let p_value = ChiSquared::new(df as f64)
        .map_err(|e| VerificationError::InvalidSettings(e.to_string()))?
        .sf(chi2);
    Ok(PoissonFit {
        expected_mean: mean,
        sample_mean: counts.iter().sum::<u64>() as f64 / n,
        bins,
        chi2,
        df,
        p_value,
        pass: p_value >= CHI2_ALPHA,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityReport {
    pub quote_ask: f64,
    pub quote_bid: f64,
    pub x: f64,
    pub horizon: f64,
    pub n_trials: usize,
    /// `lambda Phi(ask - x)`.
    pub buy_rate: f64,
    /// `lambda Psi(bid - x)`.
    pub sell_rate: f64,
    /// `None` when the expected count is too small to test.
    pub buys: Option<PoissonFit>,
    pub sells: Option<PoissonFit>,
    pub pass: bool,
}

/// Customers trade against a frozen quote while the true value is frozen at
/// `x`. Buy and sell counts over `[0, horizon]` must be Poisson with means
/// `lambda Phi(ask - x) T` and `lambda Psi(bid - x) T`.
///
/// A side whose expected count is below [`MIN_EXPECTED_TRADES`] is skipped;
/// if both are, the result is `InsufficientData`.
pub fn intensity_test(
    noise: &NoiseModel,
    lambda: f64,
    quote: Quote,
    x: f64,
    horizon: f64,
    n_trials: usize,
    seed: u64,
) -> Result<IntensityReport> {
    let buy_rate = lambda * noise.survival(quote.ask - x);
    let sell_rate = lambda * noise.cdf(quote.bid - x);
    let buy_powered = buy_rate * horizon >= MIN_EXPECTED_TRADES;
    let sell_powered = sell_rate * horizon >= MIN_EXPECTED_TRADES;
    if !buy_powered && !sell_powered {
        return Err(VerificationError::InsufficientData(format!(
            "expected trade counts {:.3} (buys) and {:.3} (sells) are below {MIN_EXPECTED_TRADES}",
            buy_rate * horizon,
            sell_rate * horizon
        )));
    }
    let mut buys = Vec::with_capacity(n_trials);
    let mut sells = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let mut streams = PathStreams::new(path_seed(seed, trial as u64));
        let arrivals = sample_arrivals(lambda, horizon, &mut streams.arrivals)?;
        let (mut b, mut s) = (0u64, 0u64);
        for _ in &arrivals {
            match decide_trade(x + noise.sample(&mut streams.noise), quote) {
                TradeOutcome::Buy => b += 1,
                TradeOutcome::Sell => s += 1,
                TradeOutcome::NoTrade => {}
            }
        }
        buys.push(b);
        sells.push(s);
    }
    let buys = if buy_powered {
        Some(poisson_chi_square(&buys, buy_rate * horizon)?)
    } else {
        None
    };
    let sells = if sell_powered {
        Some(poisson_chi_square(&sells, sell_rate * horizon)?)
    } else {
        None
    };
    let pass = buys.as_ref().is_none_or(|f| f.pass) && sells.as_ref().is_none_or(|f| f.pass);
    Ok(IntensityReport {
        quote_ask: quote.ask,
        quote_bid: quote.bid,
        x,
        horizon,
        n_trials,
        buy_rate,
        sell_rate,
        buys,
        sells,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub k: f64,
    pub l: f64,
    pub m: f64,
    pub k1: f64,
    pub t_star: f64,
    /// Weight moved onto the top state in the perturbed prior.
    pub perturbation: f64,
    /// `|dG| + |dH|` at time 0.
    pub initial_gap: f64,
    /// `(arrival time, |dG| + |dH|)` for the two runs, while their arrival
    /// sequences coincide.
    pub gaps: Vec<(f64, f64)>,
    /// Quote gap at the horizon.
    pub terminal_gap: f64,
}

/// Contraction constants plus a common-random-numbers illustration: the
/// engine is run from the model prior and from
/// `(1 - eta) pi_0 + eta e_n` with the same seed, and the quote gap is
/// tracked along the path.
pub fn uniqueness_diagnostic(
    engine: &GmpsEngine,
    horizon: f64,
    seed: u64,
    eta: f64,
) -> Result<UniquenessReport> {
    let model = engine.model();
    let c = contraction_constants(&model.grid, &model.noise, model.lambda)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(VerificationError::InvalidSettings(format!("perturbation must lie in [0, 1], got {eta}")));
    }
    let n = model.n_states();
    let prior = &model.initial_belief;
    let shifted: Vec<f64> = prior
        .probs()
        .iter()
        .enumerate()
        .map(|(i, p)| (1.0 - eta) * p + if i + 1 == n { eta } else { 0.0 })
        .collect();
    let shifted = Belief::new(shifted)?;

    let solver = engine.solver();
    let gap = |a: &Belief, b: &Belief| -> Result<f64> {
        Ok((solver.ask(a)?.price - solver.ask(b)?.price).abs()
            + (solver.bid(a)?.price - solver.bid(b)?.price).abs())
    };
    let base = engine.simulate_from(horizon, seed, prior)?;
    let pert = engine.simulate_from(horizon, seed, &shifted)?;
    let gaps = base
        .events
        .iter()
        .zip(&pert.events)
        .take_while(|(a, b)| a.time == b.time)
        .map(|(a, b)| {
            (
                a.time,
                (a.quote.ask - b.quote.ask).abs() + (a.quote.bid - b.quote.bid).abs(),
            )
        })
        .collect();
    Ok(UniquenessReport {
        k: c.k,
        l: c.l,
        m: c.m,
        k1: c.k1,
        t_star: c.t_star,
        perturbation: eta,
        initial_gap: gap(prior, &shifted)?,
        gaps,
        terminal_gap: gap(&base.terminal_belief, &pert.terminal_belief)?,
    })
}

/// Largest deviation of the trade price from the post-trade posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub n_buys: usize,
    pub n_sells: usize,
    pub max_buy_error: f64,
    pub max_sell_error: f64,
    pub tol: f64,
    pub pass: bool,
}

/// At every buy the ask equals the mean of the post-jump belief; dually for
/// sells.
pub fn quote_consistency(model: &MarketModel, paths: &[PathRecord], tol: f64) -> ConsistencyReport {
    let mut r = ConsistencyReport {
        n_buys: 0,
        n_sells: 0,
        max_buy_error: 0.0,
        max_sell_error: 0.0,
        tol,
        pass: true,
    };
    for e in paths.iter().flat_map(|p| p.trades()) {
        let mean = e.belief_after.mean(&model.grid);
        match e.outcome {
            TradeOutcome::Buy => {
                r.n_buys += 1;
                r.max_buy_error = r.max_buy_error.max((e.quote.ask - mean).abs());
            }
            TradeOutcome::Sell => {
                r.n_sells += 1;
                r.max_sell_error = r.max_sell_error.max((e.quote.bid - mean).abs());
            }
            TradeOutcome::NoTrade => {}
        }
    }
    r.pass = r.max_buy_error <= tol && r.max_sell_error <= tol;
    r
}

/// Simplex and ordering checks on every logged belief.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub beliefs_checked: usize,
    /// Largest `|sum pi - 1|` over logged beliefs and integrator steps.
    pub max_sum_error: f64,
    /// Smallest component seen, including integrator steps before clamping.
    pub min_component: f64,
    /// Rows where `bid <= mean <= ask` fails.
    pub ordering_violations: usize,
    pub pass: bool,
}

pub const SUM_TOL: f64 = 1e-9;
pub const NEGATIVITY_TOL: f64 = 1e-12;
/// Slack on `bid <= mean <= ask`, for the fixed-point tolerance.
pub const ORDER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct ConservationAccumulator {
    beliefs_checked: usize,
    max_sum_error: f64,
    min_component: f64,
    ordering_violations: usize,
}

impl ConservationAccumulator {
    pub fn new() -> Self {
        Self {
            min_component: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn belief(&mut self, b: &Belief) {
        self.beliefs_checked += 1;
        let sum: f64 = b.probs().iter().sum();
        self.max_sum_error = self.max_sum_error.max((sum - 1.0).abs());
        for &p in b.probs() {
            self.min_component = self.min_component.min(p);
        }
    }

    pub fn ordering(&mut self, bid: f64, mean: f64, ask: f64) {
        if !(bid <= mean + ORDER_TOL && mean <= ask + ORDER_TOL) {
            self.ordering_violations += 1;
        }
    }

    pub fn path(&mut self, model: &MarketModel, path: &PathRecord) {
        self.max_sum_error = self.max_sum_error.max(path.integration.max_sum_error);
        self.min_component = self.min_component.min(path.integration.min_component);
        for e in &path.events {
            self.belief(&e.belief_before);
            self.belief(&e.belief_after);
            self.ordering(e.quote.bid, e.belief_before.mean(&model.grid), e.quote.ask);
        }
        self.belief(&path.terminal_belief);
    }

    pub fn report(&self) -> ConservationReport {
        ConservationReport {
            beliefs_checked: self.beliefs_checked,
            max_sum_error: self.max_sum_error,
            min_component: self.min_component,
            ordering_violations: self.ordering_violations,
            pass: self.max_sum_error <= SUM_TOL
                && self.min_component >= -NEGATIVITY_TOL
                && self.ordering_violations == 0,
        }
    }
}

pub fn conservation(model: &MarketModel, paths: &[PathRecord]) -> ConservationReport {
    let mut acc = ConservationAccumulator::new();
    for p in paths {
        acc.path(model, p);
    }
    acc.report()
}
