//! Level policies: the concrete procedures that choose `(τᵢ, λᵢ, αᵢ)` for the
//! engine from the run history.
//!
//! With `ãⱼ = αⱼ/(τⱼ−λⱼ)`, `Uⱼ = 1 − (Sⱼ−Cⱼ)` and `t(i) = 1 + Σ_{j<i}(Sⱼ−Cⱼ)`:
//!
//! | procedure          | `αᵢ`                                                              |
//! |--------------------|-------------------------------------------------------------------|
//! | Alpha-Spending     | `αγᵢ` at `τᵢ = 1, λᵢ = 0`                                         |
//! | ADDIS-Spending     | `(τᵢ−λᵢ)·αγ_{t(i)}`                                               |
//! | ADDIS-Graph        | `(τᵢ−λᵢ)(αγᵢ + Σ g_{j,i}Uⱼãⱼ)`                                    |
//! | E-ADDIS-Spending   | `(τᵢ−λᵢ)/(1−α⁽ⁱ⁾)·αγ_{t(i)}`                                      |
//! | E-ADDIS-Graph      | `(τᵢ−λᵢ)/(1−α⁽ⁱ⁾)·(αγᵢ + Σ g_{j,i}Uⱼãⱼ(1−α⁽ʲ⁾))`                  |
//! | EI-ADDIS-Graph     | `(τᵢ−λᵢ)(αγᵢ + Σ g_{j,i}Uⱼãⱼ + Σ h_{j,i}(Sⱼ−Cⱼ)ãⱼα⁽ʲ⁾)`             |
//! | Remark             | `α⁽ⁱ⁾` at `τᵢ = 1, λᵢ = α⁽ⁱ⁾`                                     |
//!
//! The last four run on the exhaustive engine. EI-ADDIS-Graph uses the
//! data-dependent exhaustive budget for `α⁽ʲ⁾` and the denominators
//! `τⱼ−λⱼ`.

use thiserror::Error;

use crate::config::{ConfigError, PolicyConfig, Procedure};
use crate::engine::{BudgetState, EngineError, Mode, StepOutcome, StepParams};
use crate::gamma::GammaSequence;
use crate::graph::{GraphWeights, WeightTable};

/// γ terms precomputed at construction; later steps are evaluated on demand.
const DEFAULT_HORIZON: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Step { step: usize, source: EngineError },
}

/// Anything that proposes the next step's parameters from the current state.
///
/// Implementations must read only the outcomes already in the state's
/// history, never future p-values.
pub trait LevelRule: Send + Sync {
    fn mode(&self) -> Mode;
    fn alpha(&self) -> f64;
    fn label(&self) -> String;
    fn params(&self, state: &BudgetState) -> StepParams;

    /// Runs the rule over a finite sequence through the checked engine.
    fn run(&self, p_values: &[f64]) -> Result<Trace, RunError> {
        let mut state = BudgetState::new(self.mode(), self.alpha())
            .map_err(|e| RunError::Config(ConfigError::Invalid(e.to_string())))?;
        let mut trace = Trace::with_capacity(p_values.len());
        for &p in p_values {
            let params = self.params(&state);
            let before = state.remaining();
            let o = state
                .apply(params, p)
                .map_err(|source| RunError::Step { step: state.step(), source })?;
            trace.push(&o, before);
        }
        trace.final_remaining = state.remaining();
        Ok(trace)
    }
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub params: Vec<StepParams>,
    /// `αᵢ` per step.
    pub levels: Vec<f64>,
    pub rejections: Vec<bool>,
    /// `α⁽ⁱ⁾` in force at each step.
    pub budgets: Vec<f64>,
    pub spent: Vec<bool>,
    pub final_remaining: f64,
}

impl Trace {
    fn with_capacity(n: usize) -> Self {
        Self {
            params: Vec::with_capacity(n),
            levels: Vec::with_capacity(n),
            rejections: Vec::with_capacity(n),
            budgets: Vec::with_capacity(n),
            spent: Vec::with_capacity(n),
            final_remaining: 0.0,
        }
    }

    fn push(&mut self, o: &StepOutcome, budget_before: f64) {
        self.params.push(o.params);
        self.levels.push(o.params.alpha_i);
        self.rejections.push(o.rejected);
        self.budgets.push(budget_before);
        self.spent.push(o.spent());
    }

    pub fn rejection_count(&self) -> usize {
        self.rejections.iter().filter(|r| **r).count()
    }
}

/// A validated configuration with its γ-sequence and weights resolved.
#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    gamma: GammaSequence,
    weights: GraphWeights,
    gamma_table: Vec<f64>,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let gamma = GammaSequence::from_spec(&config.gamma)?;
        let weights = GraphWeights::from_spec(&config.weights)?;
        let gamma_table = gamma.table(DEFAULT_HORIZON);
        Ok(Self { config, gamma, weights, gamma_table })
    }

    /// Precomputes γ up to `n` steps.
    pub fn with_horizon(mut self, n: usize) -> Self {
        if n + 1 > self.gamma_table.len() {
            self.gamma_table = self.gamma.table(n);
        }
        self
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn procedure(&self) -> Procedure {
        self.config.procedure
    }

    pub fn gamma(&self) -> &GammaSequence {
        &self.gamma
    }

    pub fn new_state(&self) -> BudgetState {
        BudgetState::new(self.config.mode(), self.config.alpha).expect("alpha validated")
    }

    pub fn tracker(&self) -> LevelTracker<'_> {
        LevelTracker {
            policy: self,
            steps: 0,
            spent: 0,
            carry_g: Vec::new(),
            carry_h: Vec::new(),
        }
    }

    /// Tracker already advanced over `state`'s history.
    pub fn tracker_for(&self, state: &BudgetState) -> LevelTracker<'_> {
        let mut t = self.tracker();
        for o in state.history() {
            t.observe(o);
        }
        t
    }

    fn gamma_at(&self, i: usize) -> f64 {
        match self.gamma_table.get(i) {
            Some(g) => *g,
            None => self.gamma.term(i),
        }
    }
}

impl LevelRule for Policy {
    fn mode(&self) -> Mode {
        self.config.mode()
    }

    fn alpha(&self) -> f64 {
        self.config.alpha
    }

    fn label(&self) -> String {
        self.config.procedure.name().to_string()
    }

    fn params(&self, state: &BudgetState) -> StepParams {
        self.tracker_for(state).next_params(state)
    }

    fn run(&self, p_values: &[f64]) -> Result<Trace, RunError> {
        let mut state = self.new_state();
        let mut tracker = self.tracker();
        let mut trace = Trace::with_capacity(p_values.len());
        for &p in p_values {
            let params = tracker.next_params(&state);
            let before = state.remaining();
            let o = state
                .apply(params, p)
                .map_err(|source| RunError::Step { step: state.step(), source })?;
            tracker.observe(&o);
            trace.push(&o, before);
        }
        trace.final_remaining = state.remaining();
        Ok(trace)
    }
}

/// Incremental level computation for one run.
///
/// Keeps the spend count for `t(i)` and, for graph procedures, the per-step
/// amounts each past hypothesis hands forward, so step `i` costs `O(i)`.
#[derive(Debug, Clone)]
pub struct LevelTracker<'a> {
    policy: &'a Policy,
    steps: usize,
    spent: usize,
    /// `Uⱼ·ãⱼ` (or `Uⱼ·ãⱼ(1−α⁽ʲ⁾)` for E-ADDIS-Graph), index `j-1`.
    carry_g: Vec<f64>,
    /// `(Sⱼ−Cⱼ)·ãⱼα⁽ʲ⁾`, EI-ADDIS-Graph only.
    carry_h: Vec<f64>,
}

impl LevelTracker<'_> {
    /// Parameters for step `state.step()`.
    pub fn next_params(&self, state: &BudgetState) -> StepParams {
        debug_assert_eq!(state.history().len(), self.steps, "tracker out of sync with state");
        let p = self.policy;
        let cfg = &p.config;
        let i = self.steps + 1;
        let alpha = cfg.alpha;
        let remaining = state.remaining();
        let (tau, lambda) = (cfg.tau.at(i), cfg.lambda.at(i));
        let width = tau - lambda;
        let level = match cfg.procedure {
            Procedure::AlphaSpending => return StepParams::new(1.0, 0.0, alpha * p.gamma_at(i)),
            Procedure::Remark => return state.remark_params(),
            Procedure::AddisSpending => width * alpha * p.gamma_at(self.spent + 1),
            Procedure::EAddisSpending => {
                width / (1.0 - remaining) * alpha * p.gamma_at(self.spent + 1)
            }
            Procedure::AddisGraph => width * (alpha * p.gamma_at(i) + self.inflow(i, false)),
            Procedure::EAddisGraph => {
                width / (1.0 - remaining) * (alpha * p.gamma_at(i) + self.inflow(i, false))
            }
            Procedure::EiAddisGraph => width * (alpha * p.gamma_at(i) + self.inflow(i, true)),
        };
        StepParams::new(tau, lambda, level)
    }

    /// Records the outcome of the step just applied.
    pub fn observe(&mut self, o: &StepOutcome) {
        self.steps += 1;
        if o.spent() {
            self.spent += 1;
        }
        let proc = self.policy.config.procedure;
        if proc.is_graph() {
            let scaled = o.params.scaled_level();
            let passed = match (o.spent(), proc) {
                (true, _) => 0.0,
                (false, Procedure::EAddisGraph) => scaled * (1.0 - o.budget_before),
                (false, _) => scaled,
            };
            self.carry_g.push(passed);
        }
        if proc == Procedure::EiAddisGraph {
            self.carry_h.push(if o.spent() { scaled_bonus(o) } else { 0.0 });
        }
    }

    /// `Σ_{j<i} g_{j,i}·carry_g[j] (+ Σ h_{j,i}·carry_h[j])`.
    fn inflow(&self, i: usize, with_h: bool) -> f64 {
        let p = self.policy;
        let n = i - 1;
        match (&p.weights.g, &p.weights.h, with_h) {
            (WeightTable::Lagged, _, false) if i < p.gamma_table.len() => {
                lagged_dot(&self.carry_g[..n], &p.gamma_table[1..i])
            }
            (WeightTable::Lagged, WeightTable::Lagged, true) if i < p.gamma_table.len() => self.carry_g[..n]
                .iter()
                .zip(&self.carry_h[..n])
                .zip(p.gamma_table[1..i].iter().rev())
                .map(|((g, h), w)| (g + h) * w)
                .sum(),
            _ => {
                let mut acc = 0.0;
                for j in 1..i {
                    acc += p.weights.g.weight(&p.gamma, j, i) * self.carry_g[j - 1];
                    if with_h {
                        acc += p.weights.h.weight(&p.gamma, j, i) * self.carry_h[j - 1];
                    }
                }
                acc
            }
        }
    }
}

fn scaled_bonus(o: &StepOutcome) -> f64 {
    o.params.scaled_level() * o.budget_before
}

/// `Σⱼ carry[j]·γ_{i−j}` where `lags = [γ₁, …, γ_{i−1}]`.
fn lagged_dot(carry: &[f64], lags: &[f64]) -> f64 {
    carry.iter().zip(lags.iter().rev()).map(|(c, g)| c * g).sum()
}

/// Runs the configured procedure over `p_values`.
pub fn run_procedure(cfg: &PolicyConfig, p_values: &[f64]) -> Result<Trace, RunError> {
    Policy::new(cfg.clone())?.with_horizon(p_values.len()).run(p_values)
}

/// Scaled ADDIS-Graph levels `α̃ᵢ = αᵢ/(τᵢ−λᵢ)` by forward propagation:
/// start from `α̃ᵢ = αγᵢ`, then for each `j` whose p-value was discarded or
/// a candidate, add `g_{j,i}·α̃ⱼ` to every later `α̃ᵢ`.
pub fn graph_recursion_levels(cfg: &PolicyConfig, p_values: &[f64]) -> Result<Vec<f64>, ConfigError> {
    if cfg.procedure != Procedure::AddisGraph {
        return Err(ConfigError::Invalid(format!(
            "graph recursion applies to addis_graph, not {}",
            cfg.procedure
        )));
    }
    cfg.validate()?;
    let gamma = GammaSequence::from_spec(&cfg.gamma)?;
    let weights = GraphWeights::from_spec(&cfg.weights)?;
    let n = p_values.len();
    let mut tilde: Vec<f64> = (1..=n).map(|i| cfg.alpha * gamma.term(i)).collect();
    for j in 1..=n {
        let p = p_values[j - 1];
        if p <= cfg.lambda.at(j) || p > cfg.tau.at(j) {
            let from = tilde[j - 1];
            for i in (j + 1)..=n {
                tilde[i - 1] += weights.g.weight(&gamma, j, i) * from;
            }
        }
    }
    Ok(tilde)
}

/// A [`LevelRule`] built from a closure, for oracles and ad-hoc procedures.
pub struct FnRule<F> {
    mode: Mode,
    alpha: f64,
    label: String,
    f: F,
}

impl<F> FnRule<F>
where
    F: Fn(&BudgetState) -> StepParams + Send + Sync,
{
    pub fn new(label: impl Into<String>, mode: Mode, alpha: f64, f: F) -> Self {
        Self { mode, alpha, label: label.into(), f }
    }
}

impl<F> LevelRule for FnRule<F>
where
    F: Fn(&BudgetState) -> StepParams + Send + Sync,
{
    fn mode(&self) -> Mode {
        self.mode
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn params(&self, state: &BudgetState) -> StepParams {
        (self.f)(state)
    }
}
