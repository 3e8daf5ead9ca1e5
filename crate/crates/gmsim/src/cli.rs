//! Subcommands and their exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gmsim_core::market_sim::{GmpsEngine, MarketModel, PathRecord, Quote, QuoteRule};
use gmsim_core::noise::ConditionReport;
use gmsim_core::static_equilibrium::{contraction_constants, scan_fixed_points, Side, StaticSolver};
use gmsim_core::{Belief, ContractionConstants};
use serde::Serialize;

use crate::batch::simulate_batch;
use crate::config::{ConfigError, ScenarioConfig};
use crate::io;
use crate::verification::{
    self, compare_filters, intensity_test, oracle_filter, quote_consistency, uniqueness_diagnostic,
    zero_profit_test, zero_profit_test_stopped, BeliefPath, ConservationAccumulator,
    OracleFilterConfig, QuoteProcess, StoppingRule, VerificationError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Trades counted by the first-trades zero-profit variant.
const FIRST_TRADES: usize = 5;
const PLOT_POINTS: usize = 1001;
const ORACLE_SAMPLE_SPACING: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(name = "gmsim", version, about = "Continuous-time Glosten-Milgrom market-making simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the number of simulated paths.
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Skip the noise condition; needed for noise with atoms.
    #[arg(long, global = true)]
    pub force: bool,
    /// Adds DELTA (in price units) to every posted ask.
    #[arg(long, global = true, value_name = "DELTA", allow_negative_numbers = true)]
    pub perturb_ask: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Checks the existence/uniqueness condition and prints the constants.
    Check,
    /// Solves the one-shot ask and bid.
    SolveStatic {
        /// Comma-separated belief overriding `initial_belief`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        belief: Option<Vec<f64>>,
        /// Also lists every root of `s - g(s)` and `s - h(s)` found on a scan.
        #[arg(long)]
        roots: bool,
        #[arg(long, default_value_t = 2001)]
        scan_points: usize,
    },
    /// Simulates paths and writes events.jsonl, summary.csv and plot.csv.
    Simulate,
    /// Runs the verification suite.
    Verify,
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(gmsim_core::Error),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Precondition(_) | AppError::Output { .. } => EXIT_CONFIG,
            AppError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<gmsim_core::Error> for AppError {
    fn from(e: gmsim_core::Error) -> Self {
        use gmsim_core::Error as E;
        match e {
            E::ConditionFailed { .. } | E::NotDifferentiable(_) => AppError::Precondition(format!(
                "{e}; pass --force to run anyway"
            )),
            E::InvalidGrid(_)
            | E::InvalidBelief(_)
            | E::InvalidGenerator(_)
            | E::InvalidParameter(_)
            | E::DimensionMismatch { .. } => AppError::Precondition(e.to_string()),
            other => AppError::Numerical(other),
        }
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Scenario plus command-line overrides.
pub struct Run {
    pub config: ScenarioConfig,
    pub model: MarketModel,
    pub seed: u64,
    pub n_paths: usize,
    pub force: bool,
    pub perturb_ask: f64,
}

impl Run {
    pub fn from_cli(cli: &Cli) -> Result<Self, AppError> {
        let path = cli.config.as_ref().ok_or_else(|| {
            AppError::Config(ConfigError::Invalid {
                field: "--config".into(),
                message: "a scenario file is required".into(),
            })
        })?;
        let config = ScenarioConfig::load(path)?;
        Self::new(config, cli.seed, cli.paths, cli.force, cli.perturb_ask)
    }

    pub fn new(
        config: ScenarioConfig,
        seed: Option<u64>,
        paths: Option<usize>,
        force: bool,
        perturb_ask: Option<f64>,
    ) -> Result<Self, AppError> {
        let model = config.model()?;
        let n_paths = paths.unwrap_or(config.n_paths);
        if n_paths == 0 {
            return Err(ConfigError::Invalid {
                field: "--paths".into(),
                message: "must be at least 1".into(),
            }
            .into());
        }
        let perturb_ask = perturb_ask.unwrap_or(0.0);
        if !perturb_ask.is_finite() {
            return Err(ConfigError::Invalid {
                field: "--perturb-ask".into(),
                message: "must be finite".into(),
            }
            .into());
        }
        Ok(Self {
            seed: seed.unwrap_or(config.seed),
            n_paths,
            force,
            perturb_ask,
            config,
            model,
        })
    }

    pub fn engine(&self) -> Result<GmpsEngine, AppError> {
        let mut sim = self.config.sim_config(self.force);
        sim.quote_rule = QuoteRule {
            ask_shift: self.perturb_ask,
            bid_shift: 0.0,
        };
        Ok(GmpsEngine::new(self.model.clone(), sim)?)
    }

    fn solver(&self) -> Result<StaticSolver, AppError> {
        let grid = self.model.grid.clone();
        let tol = self.config.fp_tol;
        Ok(if self.force {
            StaticSolver::forced(grid, self.model.noise, tol)?
        } else {
            StaticSolver::new(grid, self.model.noise, tol)?
        })
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, AppError> {
    let r = Run::from_cli(cli)?;
    let io_err = |e: std::io::Error| AppError::Output {
        path: "stdout".into(),
        message: e.to_string(),
    };
    match &cli.command {
        Command::Check => cmd_check(&r, out).map_err(io_err),
        Command::SolveStatic {
            belief,
            roots,
            scan_points,
        } => cmd_solve_static(&r, belief.clone(), *roots, *scan_points, out),
        Command::Simulate => cmd_simulate(&r, &cli.out, out),
        Command::Verify => cmd_verify(&r, &cli.out, out),
    }
}

/// What `check` reports.
pub struct CheckReport {
    pub condition: Result<ConditionReport, gmsim_core::Error>,
    pub constants: Option<ContractionConstants>,
}

impl CheckReport {
    pub fn passes(&self) -> bool {
        matches!(&self.condition, Ok(c) if c.passes)
    }
}

pub fn check_report(model: &MarketModel) -> CheckReport {
    let condition = model.noise.check_gm_condition(model.grid.range());
    let constants = contraction_constants(&model.grid, &model.noise, model.lambda).ok();
    CheckReport { condition, constants }
}

pub fn cmd_check(r: &Run, out: &mut dyn Write) -> std::io::Result<i32> {
    let report = check_report(&r.model);
    let c = r.model.grid.range();
    writeln!(out, "noise      {}", r.model.noise.name())?;
    writeln!(out, "C          {c}")?;
    match &report.condition {
        Err(e) => {
            writeln!(out, "condition  not applicable: {e}")?;
            writeln!(out, "result     FAIL")?;
            return Ok(EXIT_VERIFICATION);
        }
        Ok(cond) => {
            match cond.k_analytic {
                Some(ka) => writeln!(out, "K          {} (grid {}, analytic {ka})", cond.k, cond.k_grid)?,
                None => writeln!(out, "K          {} (grid, {} points)", cond.k, cond.grid_points)?,
            }
            writeln!(out, "M          {}", cond.m)?;
            writeln!(out, "Phi(C)     {}", cond.phi_at_c)?;
            writeln!(out, "Phi(0)     {}", cond.phi_at_zero)?;
            match &report.constants {
                Some(k) => {
                    writeln!(out, "L          {}", k.l)?;
                    writeln!(out, "K1         {}", k.k1)?;
                    writeln!(out, "t*         {}", k.t_star)?;
                }
                None => writeln!(out, "L, K1, t*  n/a (condition fails)")?,
            }
            writeln!(
                out,
                "buy bound  Phi(C) >= (1 - K) Phi(0) = {}: {}",
                cond.buy_prob_lower_bound,
                if cond.buy_bound_holds() { "holds" } else { "violated" }
            )?;
        }
    }
    let pass = report.passes();
    writeln!(out, "result     {}", if pass { "PASS" } else { "FAIL" })?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFICATION })
}

fn digits(tol: f64) -> usize {
    ((-tol.log10()).ceil().max(1.0) as usize).min(17)
}

pub fn cmd_solve_static(
    r: &Run,
    belief: Option<Vec<f64>>,
    roots: bool,
    scan_points: usize,
    out: &mut dyn Write,
) -> Result<i32, AppError> {
    let pi = match belief {
        Some(b) => {
            if b.len() != r.model.n_states() {
                return Err(ConfigError::Invalid {
                    field: "--belief".into(),
                    message: format!("has {} entries, expected {}", b.len(), r.model.n_states()),
                }
                .into());
            }
            Belief::from_probabilities(b).map_err(|e| {
                AppError::Config(ConfigError::Invalid {
                    field: "--belief".into(),
                    message: e.to_string(),
                })
            })?
        }
        None => r.model.initial_belief.clone(),
    };
    let p = digits(r.config.fp_tol);
    let w = |e: std::io::Error| output_err(Path::new("stdout"), e);
    if roots {
        for (side, name) in [(Side::Ask, "ask"), (Side::Bid, "bid")] {
            let found = scan_fixed_points(side, &pi, &r.model.grid, &r.model.noise, scan_points)?;
            let list: Vec<String> = found.iter().map(|x| format!("{x:.p$}")).collect();
            writeln!(out, "{name} roots ({} on {scan_points} points): {}", found.len(), list.join(", "))
                .map_err(w)?;
        }
    }
    let solver = r.solver()?;
    let ask = solver.ask(&pi)?;
    let bid = solver.bid(&pi)?;
    writeln!(out, "ask     {:.p$}  ({} iterations)", ask.price, ask.iterations).map_err(w)?;
    writeln!(out, "bid     {:.p$}  ({} iterations)", bid.price, bid.iterations).map_err(w)?;
    writeln!(out, "spread  {:.p$}", ask.price - bid.price).map_err(w)?;
    writeln!(out, "mean    {:.p$}", pi.mean(&r.model.grid)).map_err(w)?;
    Ok(EXIT_OK)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, AppError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| output_err(&path, e))
}

pub fn cmd_simulate(r: &Run, dir: &Path, out: &mut dyn Write) -> Result<i32, AppError> {
    let engine = r.engine()?;
    let horizon = r.config.horizon;
    let paths = simulate_batch(&engine, horizon, r.seed, r.n_paths)?;
    fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;

    io::write_events(create(dir, "events.jsonl")?, &paths)
        .map_err(|e| output_err(&dir.join("events.jsonl"), e))?;
    let rows: Vec<_> = paths
        .iter()
        .enumerate()
        .map(|(k, p)| io::summary_row(&engine, k, p))
        .collect();
    io::write_summary(create(dir, "summary.csv")?, &rows)
        .map_err(|e| output_err(&dir.join("summary.csv"), e))?;
    let plot = io::plot_rows(&engine, &paths[0], PLOT_POINTS)?;
    io::write_plot(create(dir, "plot.csv")?, &plot).map_err(|e| output_err(&dir.join("plot.csv"), e))?;

    let buys: usize = paths.iter().map(|p| p.n_buys).sum();
    let sells: usize = paths.iter().map(|p| p.n_sells).sum();
    let arrivals: usize = paths.iter().map(|p| p.events.len()).sum();
    writeln!(
        out,
        "{} paths, {arrivals} arrivals, {buys} buys, {sells} sells; wrote {}",
        paths.len(),
        dir.display()
    )
    .map_err(|e| output_err(Path::new("stdout"), e))?;
    Ok(EXIT_OK)
}

/// Outcome of one verification check.
#[derive(Debug, Clone, Serialize)]
pub struct Check<T> {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    InsufficientData,
    Error,
}

impl<T> Check<T> {
    fn from_result(r: Result<T, VerificationError>, pass: impl Fn(&T) -> bool) -> Self {
        match r {
            Ok(d) => Check {
                status: if pass(&d) { Status::Pass } else { Status::Fail },
                detail: Some(d),
                message: None,
            },
            Err(VerificationError::InsufficientData(m)) => Check {
                status: Status::InsufficientData,
                detail: None,
                message: Some(m),
            },
            Err(e) => Check {
                status: Status::Error,
                detail: None,
                message: Some(e.to_string()),
            },
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub paths: usize,
    pub step: f64,
    pub max_l1: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub n_paths: usize,
    pub perturb_ask: f64,
    pub zero_profit: Check<verification::ZeroProfitReport>,
    pub zero_profit_first_trades: Check<verification::ZeroProfitReport>,
    pub quote_consistency: Check<verification::ConsistencyReport>,
    pub conservation: Check<verification::ConservationReport>,
    pub filter_oracle: Check<OracleComparison>,
    pub intensity: Check<Vec<verification::IntensityReport>>,
    /// Informational; not part of the verdict.
    pub uniqueness: Check<verification::UniquenessReport>,
    pub pass: bool,
}

/// Engine and oracle beliefs on a common grid for one logged path.
pub fn engine_vs_oracle(
    engine: &GmpsEngine,
    path: &PathRecord,
    cfg: OracleFilterConfig,
    spacing: f64,
) -> Result<(BeliefPath, BeliefPath), VerificationError> {
    let n = (path.horizon / spacing).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=n).map(|k| path.horizon * k as f64 / n as f64).collect();
    let engine_path = BeliefPath::from(engine.replay(&path.events, &times)?);
    let quotes = QuoteProcess::Equilibrium(engine.solver(), engine.config().quote_rule);
    let oracle_path = oracle_filter(engine.model(), quotes, &path.events, &times, cfg)?;
    Ok((engine_path, oracle_path))
}

/// The frozen (quote, state) pairs used by the intensity check: the
/// symmetric point `ask = bid = x_1`, a quote straddling `x_1` by half the
/// range, and the equilibrium quote at the prior.
pub fn intensity_pairs(model: &MarketModel, solver: &StaticSolver) -> Result<Vec<(Quote, f64)>, VerificationError> {
    let x = model.grid.min();
    let half = 0.5 * model.grid.range();
    let eq = Quote {
        ask: solver.ask(&model.initial_belief)?.price,
        bid: solver.bid(&model.initial_belief)?.price,
    };
    Ok(vec![
        (Quote { ask: x, bid: x }, x),
        (Quote { ask: x + half, bid: x - half }, x),
        (eq, x),
    ])
}

pub fn verify_report(r: &Run) -> Result<VerifyReport, AppError> {
    let settings = r.config.verify_settings();
    let engine = r.engine()?;
    let model = engine.model();
    let horizon = r.config.horizon;
    let paths = simulate_batch(&engine, horizon, r.seed, r.n_paths)?;

    let zero_profit = Check::from_result(zero_profit_test(&paths), |z| z.pass);
    let zero_profit_first_trades = Check::from_result(
        zero_profit_test_stopped(&paths, StoppingRule::FirstTrades(FIRST_TRADES)),
        |z| z.pass,
    );

    let consistency = quote_consistency(model, &paths, settings.consistency_tol);
    let quote_consistency = if consistency.n_buys + consistency.n_sells == 0 {
        Check::from_result(
            Err(VerificationError::InsufficientData("no trades".into())),
            |_: &verification::ConsistencyReport| false,
        )
    } else {
        Check::from_result(Ok(consistency), |c| c.pass)
    };

    let mut acc = ConservationAccumulator::new();
    for p in &paths {
        acc.path(model, p);
    }
    let plot = io::plot_rows(&engine, &paths[0], PLOT_POINTS)?;
    for row in &plot {
        acc.ordering(row.bid, row.mean, row.ask);
    }
    let conservation = Check::from_result(Ok(acc.report()), |c| c.pass);

    let oracle_cfg = OracleFilterConfig {
        step: settings.oracle_step,
        matrix_exp_terms: settings.matrix_exp_terms,
    };
    let oracle_paths = settings.oracle_paths.min(paths.len());
    let comparison = (|| {
        let mut worst: f64 = 0.0;
        for p in &paths[..oracle_paths] {
            let (a, b) = engine_vs_oracle(&engine, p, oracle_cfg, ORACLE_SAMPLE_SPACING)?;
            worst = worst.max(compare_filters(&a, &b)?);
        }
        Ok(OracleComparison {
            paths: oracle_paths,
            step: settings.oracle_step,
            max_l1: worst,
            tol: settings.oracle_tol,
        })
    })();
    let filter_oracle = Check::from_result(comparison, |c| c.max_l1 <= c.tol);

    let intensity = (|| {
        let pairs = intensity_pairs(model, engine.solver())?;
        let mut reports = Vec::with_capacity(pairs.len());
        for (k, (quote, x)) in pairs.into_iter().enumerate() {
            let nb = model.noise.survival(quote.ask - x);
            let ns = model.noise.cdf(quote.bid - x);
            let strongest = model.lambda * nb.max(ns);
            let t = if strongest > 0.0 {
                horizon.max(2.0 * verification::MIN_EXPECTED_TRADES / strongest)
            } else {
                horizon
            };
            let seed = r.seed.wrapping_add(0x1000_0000 * (k as u64 + 1));
            reports.push(intensity_test(
                &model.noise,
                model.lambda,
                quote,
                x,
                t,
                settings.intensity_trials,
                seed,
            )?);
        }
        Ok(reports)
    })();
    let intensity = Check::from_result(intensity, |v: &Vec<verification::IntensityReport>| {
        v.iter().all(|r| r.pass)
    });

    let uniqueness = Check::from_result(
        uniqueness_diagnostic(&engine, horizon, r.seed, settings.perturbation),
        |_| true,
    );

    let pass = zero_profit.passed()
        && zero_profit_first_trades.passed()
        && quote_consistency.passed()
        && conservation.passed()
        && filter_oracle.passed()
        && intensity.passed();
    Ok(VerifyReport {
        seed: r.seed,
        n_paths: paths.len(),
        perturb_ask: r.perturb_ask,
        zero_profit,
        zero_profit_first_trades,
        quote_consistency,
        conservation,
        filter_oracle,
        intensity,
        uniqueness,
        pass,
    })
}

fn status_label<T>(c: &Check<T>) -> &'static str {
    match c.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::InsufficientData => "INSUFFICIENT DATA",
        Status::Error => "ERROR",
    }
}

fn line<T>(out: &mut dyn Write, name: &str, c: &Check<T>, detail: impl Fn(&T) -> String) -> std::io::Result<()> {
    let text = match (&c.detail, &c.message) {
        (Some(d), _) => detail(d),
        (None, Some(m)) => m.clone(),
        (None, None) => String::new(),
    };
    writeln!(out, "{name:<26}{:<19}{text}", status_label(c))
}

pub fn print_verify_summary(report: &VerifyReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{} paths, seed {}, ask perturbation {}",
        report.n_paths, report.seed, report.perturb_ask
    )?;
    let z = |z: &verification::ZeroProfitReport| {
        format!(
            "z_buy {:+.2} ({} buys), z_sell {:+.2} ({} sells)",
            z.z_buy, z.n_buys, z.z_sell, z.n_sells
        )
    };
    line(out, "zero profit (horizon)", &report.zero_profit, z)?;
    line(out, "zero profit (first trades)", &report.zero_profit_first_trades, z)?;
    line(out, "quote consistency", &report.quote_consistency, |c| {
        format!("max error {:.2e} / {:.2e}", c.max_buy_error, c.max_sell_error)
    })?;
    line(out, "conservation", &report.conservation, |c| {
        format!(
            "max |sum-1| {:.2e}, min component {:.2e}, {} ordering violations",
            c.max_sum_error, c.min_component, c.ordering_violations
        )
    })?;
    line(out, "filter oracle", &report.filter_oracle, |c| {
        format!("max L1 {:.2e} (h = {}, {} paths)", c.max_l1, c.step, c.paths)
    })?;
    line(out, "intensity", &report.intensity, |v| {
        let ps: Vec<String> = v
            .iter()
            .flat_map(|r| [&r.buys, &r.sells])
            .flatten()
            .map(|f| format!("{:.3}", f.p_value))
            .collect();
        format!("p-values {}", ps.join(" "))
    })?;
    line(out, "uniqueness (diagnostic)", &report.uniqueness, |u| {
        format!(
            "K {:.4}, K1 {:.4}, t* {:.4e}, quote gap {:.2e} -> {:.2e}",
            u.k, u.k1, u.t_star, u.initial_gap, u.terminal_gap
        )
    })?;
    writeln!(out, "{:<26}{}", "overall", if report.pass { "PASS" } else { "FAIL" })
}

pub fn cmd_verify(r: &Run, dir: &Path, out: &mut dyn Write) -> Result<i32, AppError> {
    let report = verify_report(r)?;
    fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    let path = dir.join("verify.json");
    let mut f = create(dir, "verify.json")?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| output_err(&path, e))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| output_err(&path, e))?;
    print_verify_summary(&report, out).map_err(|e| output_err(Path::new("stdout"), e))?;
    Ok(if report.pass { EXIT_OK } else { EXIT_VERIFICATION })
}
