//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! states = [0.0, 1.0]
//! generator = [[0.0, 0.5], [0.5, 0.0]]
//! lambda = 5.0
//! initial_belief = [0.5, 0.5]
//! horizon = 10.0
//! seed = 7
//! n_paths = 100
//!
//! [noise]
//! family = "logistic"
//! scale = 2.0
//! ```
//!
//! Generator rows with a zero diagonal have the diagonal derived from the
//! off-diagonal rates; a non-zero diagonal must make the row sum to zero.

use std::fs;
use std::path::Path;

use gmsim_core::market_sim::SimConfig;
use gmsim_core::static_equilibrium::DEFAULT_TOL;
use gmsim_core::{Belief, GeneratorMatrix, MarketModel, NoiseModel, StateGrid};
use serde::{Deserialize, Serialize};

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Logistic { scale: f64 },
    Gaussian { sigma: f64 },
    Laplace { scale: f64 },
    TwoPoint { value: f64, prob: f64 },
    NoiseTraderMix { buy_prob: f64 },
}

impl NoiseConfig {
    pub fn to_model(&self) -> Result<NoiseModel, ConfigError> {
        let m = match *self {
            NoiseConfig::Logistic { scale } => NoiseModel::logistic(scale),
            NoiseConfig::Gaussian { sigma } => NoiseModel::gaussian(sigma),
            NoiseConfig::Laplace { scale } => NoiseModel::laplace(scale),
            NoiseConfig::TwoPoint { value, prob } => NoiseModel::two_point(value, prob),
            NoiseConfig::NoiseTraderMix { buy_prob } => NoiseModel::noise_trader_mix(buy_prob),
        };
        m.map_err(|e| invalid("noise", e.to_string()))
    }
}

/// Settings for the `verify` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Oracle filter time step.
    pub oracle_step: f64,
    pub matrix_exp_terms: usize,
    /// Paths compared against the oracle filter.
    pub oracle_paths: usize,
    /// Maximum accepted L1 distance between engine and oracle beliefs.
    pub oracle_tol: f64,
    pub intensity_trials: usize,
    /// Tolerance of the quote-consistency identity.
    pub consistency_tol: f64,
    /// Size of the prior perturbation in the uniqueness diagnostic.
    pub perturbation: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            oracle_step: 1e-3,
            matrix_exp_terms: 12,
            oracle_paths: 3,
            oracle_tol: 0.01,
            intensity_trials: 2000,
            consistency_tol: 1e-8,
            perturbation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub states: Vec<f64>,
    pub generator: Vec<Vec<f64>>,
    pub lambda: f64,
    pub noise: NoiseConfig,
    pub initial_belief: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ode_step")]
    pub ode_step: f64,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

fn default_ode_step() -> f64 {
    0.01
}

fn default_fp_tol() -> f64 {
    DEFAULT_TOL
}

fn default_n_paths() -> usize {
    1
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn verify_settings(&self) -> VerifyConfig {
        self.verify.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model()?;
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("horizon", self.horizon)?;
        positive("ode_step", self.ode_step)?;
        positive("fp_tol", self.fp_tol)?;
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if let Some(v) = &self.verify {
            positive("verify.oracle_step", v.oracle_step)?;
            positive("verify.oracle_tol", v.oracle_tol)?;
            positive("verify.consistency_tol", v.consistency_tol)?;
            if v.matrix_exp_terms < 8 {
                return Err(invalid("verify.matrix_exp_terms", "must be at least 8"));
            }
            if !(v.perturbation > 0.0 && v.perturbation < 1.0) {
                return Err(invalid("verify.perturbation", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn generator_matrix(&self) -> Result<GeneratorMatrix, ConfigError> {
        let n = self.states.len();
        if self.generator.len() != n {
            return Err(invalid(
                "generator",
                format!("has {} rows, expected {n} (one per state)", self.generator.len()),
            ));
        }
        let mut rows = self.generator.clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if row.len() != n {
                return Err(invalid(
                    format!("generator[{i}]"),
                    format!("has {} entries, expected {n}", row.len()),
                ));
            }
            for (j, &r) in row.iter().enumerate() {
                if !r.is_finite() || (i != j && r < 0.0) {
                    return Err(invalid(
                        format!("generator[{i}][{j}]"),
                        format!("off-diagonal rates must be finite and >= 0, got {r}"),
                    ));
                }
            }
            let off: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r).sum();
            if row[i] != 0.0 && (row[i] + off).abs() > ROW_SUM_TOL * off.max(1.0) {
                return Err(invalid(
                    format!("generator[{i}]"),
                    format!("row sums to {}, expected 0 (or give a zero diagonal)", row[i] + off),
                ));
            }
            row[i] = -off;
        }
        GeneratorMatrix::new(rows).map_err(|e| invalid("generator", e.to_string()))
    }

    pub fn model(&self) -> Result<MarketModel, ConfigError> {
        let grid = StateGrid::new(self.states.clone()).map_err(|e| invalid("states", e.to_string()))?;
        let q = self.generator_matrix()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        let noise = self.noise.to_model()?;
        if self.initial_belief.len() != grid.len() {
            return Err(invalid(
                "initial_belief",
                format!("has {} entries, expected {}", self.initial_belief.len(), grid.len()),
            ));
        }
        let belief = Belief::from_probabilities(self.initial_belief.clone())
            .map_err(|e| invalid("initial_belief", e.to_string()))?;
        MarketModel::new(grid, q, self.lambda, noise, belief).map_err(|e| invalid("scenario", e.to_string()))
    }

    pub fn sim_config(&self, force: bool) -> SimConfig {
        SimConfig {
            ode_step: self.ode_step,
            fp_tol: self.fp_tol,
            force,
            ..SimConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
states = [0.0, 1.0]
generator = [[0.0, 0.5], [0.25, 0.0]]
lambda = 5.0
initial_belief = [0.5, 0.5]
horizon = 10.0
seed = 3

[noise]
family = "logistic"
scale = 2.0
"#;

    #[test]
    fn defaults_and_derived_diagonal() {
        let cfg = ScenarioConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.ode_step, 0.01);
        assert_eq!(cfg.n_paths, 1);
        let m = cfg.model().unwrap();
        assert_eq!(m.q.rate(0, 0), -0.5);
        assert_eq!(m.q.rate(1, 1), -0.25);
    }

    #[test]
    fn supplied_diagonal_must_balance() {
        let bad = BASE.replace("[[0.0, 0.5], [0.25, 0.0]]", "[[-0.4, 0.5], [0.25, 0.0]]");
        let err = ScenarioConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.starts_with("generator[0]"), "{err}");
        let good = BASE.replace("[[0.0, 0.5], [0.25, 0.0]]", "[[-0.5, 0.5], [0.25, -0.25]]");
        assert!(ScenarioConfig::from_toml(&good).is_ok());
    }

    #[test]
    fn errors_name_the_field() {
        let err = ScenarioConfig::from_toml(&BASE.replace("[0.5, 0.5]", "[0.5, 0.6]"))
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("initial_belief"), "{err}");
        let err = ScenarioConfig::from_toml(&BASE.replace("scale = 2.0", "scale = -1.0"))
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("noise"), "{err}");
        let err = ScenarioConfig::from_toml(&BASE.replace("horizon = 10.0", "horizon = 0.0"))
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("horizon"), "{err}");
        let err = ScenarioConfig::from_toml(&BASE.replace("lambda = 5.0\n", ""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("lambda"), "{err}");
    }
}
