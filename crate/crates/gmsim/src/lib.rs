//! Scenario files, output formats, Monte Carlo batches, verification and the
//! `gmsim` command line, on top of `gmsim-core`.

pub mod batch;
pub mod cli;
pub mod config;
pub mod io;
pub mod verification;
