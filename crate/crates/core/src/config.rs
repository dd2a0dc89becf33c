//! Procedure configuration and its TOML/JSON document format.
//!
//! ```toml
//! procedure = "ei_addis_graph"
//! alpha = 0.2
//! tau = 0.8
//! lambda = 0.16
//!
//! [gamma]
//! kind = "log_q"   # or "q_series", or "explicit" with `terms = [...]`
//! s = 1.5
//!
//! [weights]
//! form = "lagged_gamma"   # or "explicit" with `g = [[...], ...]` and optional `h`
//! ```
//!
//! `tau` and `lambda` take either a number or `{ values = [...], then = x }`,
//! a per-step schedule followed by a constant.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Mode, BUDGET_TOLERANCE};
use crate::gamma::GammaSpec;
use crate::graph::WeightsSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(
        "lambda_bound violated at step {step}: lambda={lambda} < tau*alpha={bound} \
         (exhaustive procedures need lambda >= tau*alpha)"
    )]
    LambdaBound { step: usize, lambda: f64, bound: f64 },
    #[error("unknown procedure '{0}'")]
    UnknownProcedure(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    /// Machine-readable name of the violated constraint, where there is one.
    pub fn constraint(&self) -> Option<&'static str> {
        match self {
            ConfigError::LambdaBound { .. } => Some("lambda_bound"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    AlphaSpending,
    AddisSpending,
    AddisGraph,
    EAddisSpending,
    EAddisGraph,
    EiAddisGraph,
    /// Exhaustive algorithm at `τᵢ = 1`, `λᵢ = αᵢ = α⁽ⁱ⁾`.
    Remark,
}

impl Procedure {
    /// The six procedures compared in simulations and dataset runs.
    pub const SIX: [Procedure; 6] = [
        Procedure::AlphaSpending,
        Procedure::AddisSpending,
        Procedure::AddisGraph,
        Procedure::EAddisSpending,
        Procedure::EAddisGraph,
        Procedure::EiAddisGraph,
    ];

    pub fn mode(&self) -> Mode {
        match self {
            Procedure::AlphaSpending | Procedure::AddisSpending | Procedure::AddisGraph => Mode::Plain,
            Procedure::EAddisSpending
            | Procedure::EAddisGraph
            | Procedure::EiAddisGraph
            | Procedure::Remark => Mode::Exhaustive,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Procedure::AlphaSpending => "alpha_spending",
            Procedure::AddisSpending => "addis_spending",
            Procedure::AddisGraph => "addis_graph",
            Procedure::EAddisSpending => "e_addis_spending",
            Procedure::EAddisGraph => "e_addis_graph",
            Procedure::EiAddisGraph => "ei_addis_graph",
            Procedure::Remark => "remark",
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(self, Procedure::AddisGraph | Procedure::EAddisGraph | Procedure::EiAddisGraph)
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = Procedure::SIX.iter().chain(std::iter::once(&Procedure::Remark));
        all.copied()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| ConfigError::UnknownProcedure(s.to_string()))
    }
}

/// A per-step parameter: constant, or a schedule indexed by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepRule {
    Constant(f64),
    Schedule { values: Vec<f64>, then: f64 },
}

impl StepRule {
    /// Value at 1-based step `i`.
    pub fn at(&self, i: usize) -> f64 {
        match self {
            StepRule::Constant(v) => *v,
            StepRule::Schedule { values, then } => values.get(i - 1).copied().unwrap_or(*then),
        }
    }

    /// Number of distinct steps to inspect before the rule becomes constant.
    fn horizon(&self) -> usize {
        match self {
            StepRule::Constant(_) => 1,
            StepRule::Schedule { values, .. } => values.len() + 1,
        }
    }
}

impl From<f64> for StepRule {
    fn from(v: f64) -> Self {
        StepRule::Constant(v)
    }
}

fn default_tau() -> StepRule {
    StepRule::Constant(0.8)
}

fn default_lambda() -> StepRule {
    StepRule::Constant(0.16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub procedure: Procedure,
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: StepRule,
    #[serde(default = "default_lambda")]
    pub lambda: StepRule,
    #[serde(default)]
    pub gamma: GammaSpec,
    #[serde(default)]
    pub weights: WeightsSpec,
}

impl PolicyConfig {
    /// Simulation defaults: `τ = 0.8`, `λ = 0.16`, q-series γ, lagged-γ weights.
    pub fn new(procedure: Procedure, alpha: f64) -> Self {
        Self {
            procedure,
            alpha,
            tau: default_tau(),
            lambda: default_lambda(),
            gamma: GammaSpec::QSeries,
            weights: WeightsSpec::LaggedGamma,
        }
    }

    pub fn with_tau_lambda(mut self, tau: f64, lambda: f64) -> Self {
        self.tau = StepRule::Constant(tau);
        self.lambda = StepRule::Constant(lambda);
        self
    }

    pub fn with_gamma(mut self, gamma: GammaSpec) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn mode(&self) -> Mode {
        self.procedure.mode()
    }

    /// Checks ranges and, for exhaustive procedures, `λᵢ ≥ τᵢα`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if matches!(self.procedure, Procedure::AlphaSpending | Procedure::Remark) {
            return Ok(());
        }
        let horizon = self.tau.horizon().max(self.lambda.horizon());
        for i in 1..=horizon {
            let (tau, lambda) = (self.tau.at(i), self.lambda.at(i));
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(ConfigError::Invalid(format!("tau {tau} at step {i} outside (0, 1]")));
            }
            if !(lambda >= 0.0 && lambda < tau) {
                return Err(ConfigError::Invalid(format!(
                    "lambda {lambda} at step {i} outside [0, tau={tau})"
                )));
            }
            if self.mode() == Mode::Exhaustive {
                let bound = tau * self.alpha;
                if lambda < bound - BUDGET_TOLERANCE {
                    return Err(ConfigError::LambdaBound { step: i, lambda, bound });
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses JSON when the document starts with `{`, TOML otherwise.
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if s.trim_start().starts_with('{') {
            Self::from_json_str(s)
        } else {
            Self::from_toml_str(s)
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_and_json() {
        let toml_doc = r#"
            procedure = "ei_addis_graph"
            alpha = 0.05
            tau = 0.8
            lambda = 0.16
            [gamma]
            kind = "log_q"
            s = 1.5
            [weights]
            form = "lagged_gamma"
        "#;
        let cfg = PolicyConfig::parse(toml_doc).unwrap();
        assert_eq!(cfg.procedure, Procedure::EiAddisGraph);
        assert_eq!(cfg.gamma, GammaSpec::LogQ { s: 1.5 });
        cfg.validate().unwrap();

        let json_doc = r#"{"procedure":"addis_spending","alpha":0.2,
            "tau":{"values":[0.9,0.7],"then":0.8},"gamma":{"kind":"q_series"}}"#;
        let cfg = PolicyConfig::parse(json_doc).unwrap();
        assert_eq!(cfg.tau.at(2), 0.7);
        assert_eq!(cfg.tau.at(9), 0.8);
        assert_eq!(cfg.lambda.at(1), 0.16);
        assert_eq!(cfg.weights, WeightsSpec::LaggedGamma);
    }

    #[test]
    fn exhaustive_lambda_bound_checked() {
        let cfg = PolicyConfig::new(Procedure::EAddisSpending, 0.2).with_tau_lambda(0.8, 0.10);
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.constraint(), Some("lambda_bound"));
        // On the boundary is fine.
        PolicyConfig::new(Procedure::EAddisSpending, 0.2).validate().unwrap();
        // Plain procedures have no such bound.
        PolicyConfig::new(Procedure::AddisSpending, 0.2).with_tau_lambda(0.8, 0.10).validate().unwrap();
    }

    #[test]
    fn schedule_bound_checked_per_step() {
        let mut cfg = PolicyConfig::new(Procedure::EAddisGraph, 0.2);
        cfg.lambda = StepRule::Schedule { values: vec![0.2, 0.1], then: 0.2 };
        assert!(matches!(cfg.validate(), Err(ConfigError::LambdaBound { step: 2, .. })));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PolicyConfig::new(Procedure::AddisGraph, 1.2).validate().is_err());
        assert!(PolicyConfig::new(Procedure::AddisGraph, 0.2).with_tau_lambda(0.5, 0.6).validate().is_err());
        assert!(PolicyConfig::parse("procedure = \"nope\"\nalpha = 0.1").is_err());
        assert!("bogus".parse::<Procedure>().is_err());
        assert_eq!("remark".parse::<Procedure>().unwrap(), Procedure::Remark);
    }
}
