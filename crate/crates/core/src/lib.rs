//! Numerical core for continuous-time Glosten-Milgrom market making.
//!
//! A market maker quotes an ask and a bid for an asset whose true value is an
//! unobserved finite-state Markov chain. Customers arrive at Poisson times and
//! trade when their noisy valuation crosses a quote. Competitive quotes are
//! the conditional expectations of the true value given a buy (resp. sell),
//! so the quote process is a fixed point of the market maker's own filter.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO:
//!
//! * [`noise`]: valuation-noise families and the existence/uniqueness check.
//! * [`static_equilibrium`]: the one-shot price functions and their fixed points.
//! * [`filter`]: Bayes jumps at trades and the no-trade drift between them.
//! * [`market_sim`]: exact sampling of the primitives and the event-driven
//!   pricing engine.
//! * [`rng`]: seeded, independent random streams.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod filter;
pub mod market_sim;
pub mod noise;
pub mod rng;
pub mod state;
pub mod static_equilibrium;

pub use error::{Error, Result};
pub use filter::{FilterState, GeneratorMatrix};
pub use market_sim::{
    EventRecord, MarketModel, PathRecord, Quote, QuoteRule, SimConfig, TradeOutcome,
    TrueValuePath,
};
pub use noise::{ConditionReport, NoiseModel};
pub use state::{Belief, StateGrid};
pub use static_equilibrium::{ContractionConstants, FixedPoint, StaticSolver};
