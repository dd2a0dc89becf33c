//! Gaussian testing setup and experiment grids.
//!
//! Each hypothesis `Hᵢ: μᵢ ≤ 0` is false with probability `π_A`. Its
//! statistic is `Zᵢ = Xᵢ + μ_A` when false and `Zᵢ = Xᵢ + μ_N` when true,
//! `Xᵢ ~ N(0, 1)`, and the one-sided p-value is `Pᵢ = Φ(−Zᵢ)`. Nulls are
//! uniform at `μ_N = 0` and conservative for `μ_N < 0`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PolicyConfig, Procedure};
use crate::gamma::GammaSpec;
use crate::montecarlo::{
    paired_power_gap, simulate, write_mc_rows, GapEstimate, McEstimate, McRow, PValueSource, Trial,
    TrialOutcome,
};
use crate::policy::{LevelRule, Policy};

/// Upper-tail p-value `Φ(−z)`, computed as `erfc(z/√2)/2` so small tails keep
/// full relative precision.
pub fn upper_tail_p(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `Φ(x)`
pub fn normal_cdf(x: f64) -> f64 {
    upper_tail_p(-x)
}

/// `Φ⁻¹(q)` for `q ∈ (0, 1)`: an `erfc⁻¹` start polished by one Newton step.
pub fn normal_quantile(q: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * q);
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density > 0.0 {
        x - (normal_cdf(x) - q) / density
    } else {
        x
    }
}

#[derive(Debug, Clone, Error)]
pub enum SimulationError {
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("unknown figure {0}; expected 3, 4 or 5")]
    UnknownFigure(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSetup {
    pub n: usize,
    pub pi_a: f64,
    pub mu_a: f64,
    pub mu_n: f64,
}

impl GaussianSetup {
    pub fn new(n: usize, pi_a: f64, mu_a: f64, mu_n: f64) -> Result<Self, SimulationError> {
        let s = Self { n, pi_a, mu_a, mu_n };
        s.validate()?;
        Ok(s)
    }

    /// All hypotheses true, uniform p-values.
    pub fn global_null(n: usize) -> Self {
        Self { n, pi_a: 0.0, mu_a: 0.0, mu_n: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n == 0 {
            return Err(SimulationError::Setup("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_a) {
            return Err(SimulationError::Setup(format!("pi_A {} outside [0, 1]", self.pi_a)));
        }
        if !(self.mu_n <= 0.0) {
            return Err(SimulationError::Setup(format!(
                "mu_N {} must be <= 0 so labeled nulls are true",
                self.mu_n
            )));
        }
        if !self.mu_a.is_finite() {
            return Err(SimulationError::Setup("mu_A must be finite".into()));
        }
        Ok(())
    }
}

/// Draws one sequence of p-values and truth labels.
pub fn generate_trial<R: Rng + ?Sized>(setup: &GaussianSetup, rng: &mut R) -> Trial {
    let mut p_values = Vec::with_capacity(setup.n);
    let mut is_false = Vec::with_capacity(setup.n);
    for _ in 0..setup.n {
        let alt = rng.random::<f64>() < setup.pi_a;
        let x: f64 = rng.sample(StandardNormal);
        let z = x + if alt { setup.mu_a } else { setup.mu_n };
        p_values.push(upper_tail_p(z));
        is_false.push(alt);
    }
    Trial { p_values, is_false }
}

impl PValueSource for GaussianSetup {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Trial {
        generate_trial(self, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub n: usize,
    pub pi_a: Vec<f64>,
    pub mu_a: Vec<f64>,
    pub mu_n: Vec<f64>,
    pub procedures: Vec<PolicyConfig>,
    pub trials: usize,
    pub seed: u64,
}

/// `π_A ∈ {0.1, …, 0.9}`.
pub fn pi_a_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

impl ExperimentGrid {
    /// Grids behind the power/FWER figures: 3 (q-series, n = 1000, μ_A = 4),
    /// 4 (log-q with s = 2, otherwise as 3) and 5 (q-series, n = 10, μ_A = 2).
    pub fn figure(figure: u8, trials: usize, seed: u64) -> Result<Self, SimulationError> {
        let (n, mu_a, gamma) = match figure {
            3 => (1000, 4.0, GammaSpec::QSeries),
            4 => (1000, 4.0, GammaSpec::LogQ { s: 2.0 }),
            5 => (10, 2.0, GammaSpec::QSeries),
            other => return Err(SimulationError::UnknownFigure(other)),
        };
        let procedures = [Procedure::AlphaSpending, Procedure::AddisGraph, Procedure::EiAddisGraph]
            .into_iter()
            .map(|p| PolicyConfig::new(p, 0.2).with_gamma(gamma.clone()))
            .collect();
        Ok(Self {
            n,
            pi_a: pi_a_grid(),
            mu_a: vec![mu_a],
            mu_n: vec![0.0, -2.0],
            procedures,
            trials,
            seed,
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimulationError> {
        let grid: Self = toml::from_str(s).map_err(|e| SimulationError::Setup(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.trials == 0 {
            return Err(SimulationError::Setup("trials must be at least 1".into()));
        }
        if self.procedures.is_empty() || self.pi_a.is_empty() || self.mu_a.is_empty() || self.mu_n.is_empty() {
            return Err(SimulationError::Setup("grid has an empty axis".into()));
        }
        self.setups().iter().try_for_each(GaussianSetup::validate)
    }

    /// All `(π_A, μ_A, μ_N)` cells in row-major order.
    pub fn setups(&self) -> Vec<GaussianSetup> {
        let mut out = Vec::new();
        for &mu_n in &self.mu_n {
            for &mu_a in &self.mu_a {
                for &pi_a in &self.pi_a {
                    out.push(GaussianSetup { n: self.n, pi_a, mu_a, mu_n });
                }
            }
        }
        out
    }
}

/// Seed of grid cell `index`, mixed from the grid seed.
pub fn cell_seed(grid_seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer
    let mut z = grid_seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub setup: GaussianSetup,
    pub seed: u64,
    pub trials: usize,
    /// `(procedure label, alpha, estimate, per-trial outcomes)`.
    pub estimates: Vec<ProcedureResult>,
}

#[derive(Debug, Clone)]
pub struct ProcedureResult {
    pub procedure: String,
    pub alpha: f64,
    pub estimate: McEstimate,
    pub outcomes: Vec<TrialOutcome>,
}

impl CellResult {
    pub fn get(&self, procedure: &str) -> Option<&ProcedureResult> {
        self.estimates.iter().find(|r| r.procedure == procedure)
    }

    /// Paired power gap `power(a) − power(b)` on this cell's trials.
    pub fn power_gap(&self, a: &str, b: &str) -> Option<GapEstimate> {
        paired_power_gap(&self.get(a)?.outcomes, &self.get(b)?.outcomes)
    }
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub setup: GaussianSetup,
    pub procedure: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct GridResults {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

impl GridResults {
    pub fn rows(&self) -> Vec<McRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            for r in &cell.estimates {
                rows.push(McRow {
                    procedure: r.procedure.clone(),
                    n: cell.setup.n,
                    pi_a: cell.setup.pi_a,
                    mu_a: cell.setup.mu_a,
                    mu_n: cell.setup.mu_n,
                    alpha: r.alpha,
                    trials: cell.trials,
                    seed: cell.seed,
                    fwer: r.estimate.fwer_hat,
                    fwer_se: r.estimate.fwer_se,
                    power: r.estimate.power_hat,
                    power_se: r.estimate.power_se,
                });
            }
        }
        rows
    }
}

/// Runs every cell of the grid. All procedures in a cell share its trials.
/// Failing cells are recorded and skipped.
pub fn run_grid(grid: &ExperimentGrid) -> GridResults {
    let mut results = GridResults::default();
    let mut policies: Vec<Policy> = Vec::new();
    for cfg in &grid.procedures {
        match Policy::new(cfg.clone()) {
            Ok(p) => policies.push(p.with_horizon(grid.n)),
            Err(e) => {
                for setup in grid.setups() {
                    results.failures.push(CellFailure {
                        setup,
                        procedure: Some(cfg.procedure.name().to_string()),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    let rules: Vec<&dyn LevelRule> = policies.iter().map(|p| p as &dyn LevelRule).collect();
    for (index, setup) in grid.setups().into_iter().enumerate() {
        if let Err(e) = setup.validate() {
            results.failures.push(CellFailure { setup, procedure: None, message: e.to_string() });
            continue;
        }
        let seed = cell_seed(grid.seed, index);
        match simulate(&rules, &setup, grid.trials, seed) {
            Ok(by_rule) => {
                let estimates = policies
                    .iter()
                    .zip(by_rule)
                    .map(|(p, outcomes)| ProcedureResult {
                        procedure: p.label(),
                        alpha: p.config().alpha,
                        estimate: McEstimate::from_outcomes(&outcomes),
                        outcomes,
                    })
                    .collect();
                results.cells.push(CellResult { setup, seed, trials: grid.trials, estimates });
            }
            Err(e) => {
                results.failures.push(CellFailure { setup, procedure: None, message: e.to_string() })
            }
        }
    }
    results
}

/// Writes `<dir>/<name>.csv` in the Monte Carlo row schema and
/// `<dir>/<name>_long.csv` with one `(…, metric, value, se)` row per metric.
pub fn emit_curves(results: &GridResults, dir: &Path, name: &str) -> Result<Vec<PathBuf>, SimulationError> {
    let io = |path: &Path, e: &dyn std::fmt::Display| SimulationError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let rows = results.rows();

    let wide = dir.join(format!("{name}.csv"));
    let file = File::create(&wide).map_err(|e| io(&wide, &e))?;
    write_mc_rows(BufWriter::new(file), &rows).map_err(|e| io(&wide, &e))?;

    let long = dir.join(format!("{name}_long.csv"));
    let file = File::create(&long).map_err(|e| io(&long, &e))?;
    write_long(BufWriter::new(file), &rows).map_err(|e| io(&long, &e))?;
    Ok(vec![wide, long])
}

fn write_long<W: Write>(out: W, rows: &[McRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["procedure", "n", "pi_A", "mu_A", "mu_N", "alpha", "metric", "value", "se"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let key = [
            r.procedure.clone(),
            r.n.to_string(),
            r.pi_a.to_string(),
            r.mu_a.to_string(),
            r.mu_n.to_string(),
            r.alpha.to_string(),
        ];
        let mut rec = key.to_vec();
        rec.extend(["power".into(), opt(r.power), opt(r.power_se)]);
        w.write_record(&rec)?;
        let mut rec = key.to_vec();
        rec.extend(["fwer".into(), r.fwer.to_string(), r.fwer_se.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
