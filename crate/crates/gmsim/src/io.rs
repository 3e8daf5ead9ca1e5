//! Output files: JSONL event log, CSV path summary and CSV plot data.

use std::io::Write;

use gmsim_core::market_sim::{GmpsEngine, PathRecord};
use serde::{Serialize, Serializer};

fn finite_or_label<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("+inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

/// One line of the event log.
#[derive(Debug, Serialize)]
pub struct EventLine<'a> {
    pub path: usize,
    pub t: f64,
    pub x: f64,
    /// Noise traders draw `+-inf`, written as strings.
    #[serde(serialize_with = "finite_or_label")]
    pub eps: f64,
    pub ask: f64,
    pub bid: f64,
    pub outcome: &'static str,
    pub belief_before: &'a [f64],
    pub belief_after: &'a [f64],
    pub profit: f64,
}

pub fn write_events<W: Write>(mut w: W, paths: &[PathRecord]) -> std::io::Result<()> {
    for (k, path) in paths.iter().enumerate() {
        for e in &path.events {
            let line = EventLine {
                path: k,
                t: e.time,
                x: e.true_value,
                eps: e.epsilon,
                ask: e.quote.ask,
                bid: e.quote.bid,
                outcome: e.outcome.as_str(),
                belief_before: e.belief_before.probs(),
                belief_after: e.belief_after.probs(),
                profit: e.profit,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub path: usize,
    pub seed: u64,
    pub n_arrivals: usize,
    pub n_buys: usize,
    pub n_sells: usize,
    pub buy_profit_sum: f64,
    pub sell_profit_sum: f64,
    pub terminal_mean: f64,
    pub terminal_true_value: f64,
    pub min_component: f64,
    pub max_sum_error: f64,
}

pub fn summary_row(engine: &GmpsEngine, index: usize, path: &PathRecord) -> SummaryRow {
    let grid = &engine.model().grid;
    let last = path.true_value_path.state_at(path.horizon);
    SummaryRow {
        path: index,
        seed: path.seed,
        n_arrivals: path.events.len(),
        n_buys: path.n_buys,
        n_sells: path.n_sells,
        buy_profit_sum: path.buy_profit_sum,
        sell_profit_sum: path.sell_profit_sum,
        terminal_mean: path.terminal_belief.mean(grid),
        terminal_true_value: grid.values()[last],
        min_component: if path.integration.steps == 0 { 0.0 } else { path.integration.min_component },
        max_sum_error: path.integration.max_sum_error,
    }
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct PlotRow {
    pub t: f64,
    pub ask: f64,
    pub bid: f64,
    pub mean: f64,
    pub true_value: f64,
}

/// Quotes, posterior mean and true value on `points` equispaced times, plus
/// one row just before and at each trade so the jumps are visible.
pub fn plot_rows(engine: &GmpsEngine, path: &PathRecord, points: usize) -> gmsim_core::Result<Vec<PlotRow>> {
    let grid = &engine.model().grid;
    let horizon = path.horizon;
    let mut times: Vec<f64> = (0..points.max(2))
        .map(|k| horizon * k as f64 / (points.max(2) - 1) as f64)
        .collect();
    for e in path.trades() {
        let before = e.time - 1e-9;
        if before > 0.0 {
            times.push(before);
        }
        times.push(e.time);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let samples = engine.replay(&path.events, &times)?;
    Ok(samples
        .into_iter()
        .map(|s| PlotRow {
            t: s.time,
            ask: s.quote.ask,
            bid: s.quote.bid,
            mean: s.belief.mean(grid),
            true_value: grid.values()[path.true_value_path.state_at(s.time)],
        })
        .collect())
}

pub fn write_plot<W: Write>(w: W, rows: &[PlotRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
