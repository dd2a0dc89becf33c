//! Budget state machines for the ADDIS algorithm and its exhaustive variant.
//!
//! A [`BudgetState`] tracks the remaining level `α⁽ⁱ⁾` that may still be spent
//! on hypotheses `i, i+1, …`. Each step takes a triple `(τᵢ, λᵢ, αᵢ)` chosen
//! by a policy, checks it against the admissibility inequalities of the
//! configured [`Mode`], applies the p-value and updates the budget:
//!
//! * `Pᵢ ≤ λᵢ` or `Pᵢ > τᵢ`: the budget carries over unchanged.
//! * `λᵢ < Pᵢ ≤ τᵢ`: the budget drops by `αᵢ/(τᵢ−λᵢ)` (plain) or
//!   `αᵢ(1−α⁽ⁱ⁾)/(τᵢ−λᵢ)` (exhaustive).
//!
//! The engine never chooses parameters; see [`crate::policy`] for that.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::json17;

/// Absolute slack allowed on every admissibility inequality.
pub const BUDGET_TOLERANCE: f64 = 1e-12;

/// Which budget update the engine applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Plain,
    Exhaustive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Plain => "plain",
            Mode::Exhaustive => "exhaustive",
        })
    }
}

/// Per-step discarding threshold, candidate threshold and significance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub tau: f64,
    pub lambda: f64,
    pub alpha_i: f64,
}

impl StepParams {
    pub fn new(tau: f64, lambda: f64, alpha_i: f64) -> Self {
        Self { tau, lambda, alpha_i }
    }

    /// `τᵢ − λᵢ`, the width of the spend region.
    pub fn width(&self) -> f64 {
        self.tau - self.lambda
    }

    /// `αᵢ/(τᵢ−λᵢ)`.
    pub fn scaled_level(&self) -> f64 {
        self.alpha_i / self.width()
    }

    fn check_ranges(&self) -> Result<(), Violation> {
        let Self { tau, lambda, alpha_i } = *self;
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Violation::new(Constraint::TauRange, tau, 1.0));
        }
        if !(lambda >= 0.0 && lambda < tau) {
            return Err(Violation::new(Constraint::LambdaRange, lambda, tau));
        }
        if !(alpha_i >= 0.0 && alpha_i < tau) {
            return Err(Violation::new(Constraint::AlphaRange, alpha_i, tau));
        }
        Ok(())
    }
}

/// Record of one applied step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub p: f64,
    /// `Sᵢ = 1{Pᵢ ≤ τᵢ}`
    pub selected: bool,
    /// `Cᵢ = 1{Pᵢ ≤ λᵢ}`
    pub candidate: bool,
    /// `Rᵢ = 1{Pᵢ ≤ αᵢ}`
    pub rejected: bool,
    pub params: StepParams,
    /// `α⁽ⁱ⁾`, the remaining level when this step ran.
    pub budget_before: f64,
}

impl StepOutcome {
    /// `Sᵢ − Cᵢ = 1`: the step consumed budget.
    pub fn spent(&self) -> bool {
        self.selected && !self.candidate
    }
}

/// The inequality a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `0 < τᵢ ≤ 1`
    TauRange,
    /// `0 ≤ λᵢ < τᵢ`
    LambdaRange,
    /// `0 ≤ αᵢ < τᵢ`
    AlphaRange,
    /// `α⁽ⁱ⁾ − αᵢ/(τᵢ−λᵢ) ≥ 0`
    PlainBudget,
    /// `α⁽ⁱ⁾ − αᵢ(1−α⁽ⁱ⁾)/(τᵢ−λᵢ) ≥ 0`
    ExhaustiveBudget,
    /// `λᵢ ≥ τᵢ·α⁽ⁱ⁾`
    LambdaBound,
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::TauRange => "tau_range",
            Constraint::LambdaRange => "lambda_range",
            Constraint::AlphaRange => "alpha_range",
            Constraint::PlainBudget => "plain_budget",
            Constraint::ExhaustiveBudget => "exhaustive_budget",
            Constraint::LambdaBound => "lambda_bound",
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Constraint::TauRange => "0 < tau <= 1",
            Constraint::LambdaRange => "0 <= lambda < tau",
            Constraint::AlphaRange => "0 <= alpha_i < tau",
            Constraint::PlainBudget => "remaining >= alpha_i/(tau-lambda)",
            Constraint::ExhaustiveBudget => "remaining >= alpha_i*(1-remaining)/(tau-lambda)",
            Constraint::LambdaBound => "lambda >= tau*remaining",
        }
    }
}

/// A failed admissibility check, carrying both sides of the inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub lhs: f64,
    pub rhs: f64,
}

impl Violation {
    fn new(constraint: Constraint, lhs: f64, rhs: f64) -> Self {
        Self { constraint, lhs, rhs }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated ({}): lhs={} rhs={}",
            self.constraint.name(),
            self.constraint.describe(),
            self.lhs,
            self.rhs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("step {step}: {violation}")]
    Inadmissible { step: usize, violation: Violation },
    #[error("p-value {0} outside [0, 1]")]
    PValueRange(f64),
    #[error("global alpha {0} outside (0, 1)")]
    AlphaRange(f64),
    #[error("operation requires {expected} mode but state is {actual}")]
    WrongMode { expected: Mode, actual: Mode },
    #[error("snapshot does not replay: {0}")]
    Snapshot(String),
}

/// Evolving state of one online testing run.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetState {
    mode: Mode,
    global_alpha: f64,
    remaining: f64,
    history: Vec<StepOutcome>,
}

impl BudgetState {
    pub fn new(mode: Mode, global_alpha: f64) -> Result<Self, EngineError> {
        if !(global_alpha > 0.0 && global_alpha < 1.0) {
            return Err(EngineError::AlphaRange(global_alpha));
        }
        Ok(Self { mode, global_alpha, remaining: global_alpha, history: Vec::new() })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn global_alpha(&self) -> f64 {
        self.global_alpha
    }

    /// `α⁽ⁱ⁾` for the next step.
    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    /// 1-based index of the next hypothesis.
    pub fn step(&self) -> usize {
        self.history.len() + 1
    }

    pub fn history(&self) -> &[StepOutcome] {
        &self.history
    }

    /// Checks `params` against the admissibility inequalities for the next step.
    pub fn validate(&self, params: &StepParams) -> Result<(), Violation> {
        params.check_ranges()?;
        let rem = self.remaining;
        match self.mode {
            Mode::Plain => {
                let spend = params.alpha_i / params.width();
                if rem - spend < -BUDGET_TOLERANCE {
                    return Err(Violation::new(Constraint::PlainBudget, rem, spend));
                }
            }
            Mode::Exhaustive => {
                let bound = params.tau * rem;
                if params.lambda < bound - BUDGET_TOLERANCE {
                    return Err(Violation::new(Constraint::LambdaBound, params.lambda, bound));
                }
                let spend = params.alpha_i * (1.0 - rem) / params.width();
                if rem - spend < -BUDGET_TOLERANCE {
                    return Err(Violation::new(Constraint::ExhaustiveBudget, rem, spend));
                }
            }
        }
        Ok(())
    }

    /// Validates and applies one step in whichever mode the state runs.
    /// On error the state is left untouched.
    pub fn apply(&mut self, params: StepParams, p: f64) -> Result<StepOutcome, EngineError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(EngineError::PValueRange(p));
        }
        self.validate(&params)
            .map_err(|violation| EngineError::Inadmissible { step: self.step(), violation })?;
        Ok(self.apply_unchecked(params, p))
    }

    /// ADDIS algorithm step. Fails unless the state is in plain mode.
    pub fn addis_step(&mut self, params: StepParams, p: f64) -> Result<StepOutcome, EngineError> {
        self.require(Mode::Plain)?;
        self.apply(params, p)
    }

    /// Exhaustive ADDIS algorithm step. Fails unless the state is in exhaustive mode.
    pub fn exhaustive_addis_step(
        &mut self,
        params: StepParams,
        p: f64,
    ) -> Result<StepOutcome, EngineError> {
        self.require(Mode::Exhaustive)?;
        self.apply(params, p)
    }

    /// Exhaustive step at `τᵢ = 1`, `λᵢ = αᵢ = α⁽ⁱ⁾`: a non-rejection spends
    /// the whole remaining level.
    pub fn remark_special_step(&mut self, p: f64) -> Result<StepOutcome, EngineError> {
        self.require(Mode::Exhaustive)?;
        let params = self.remark_params();
        self.apply(params, p)
    }

    /// Parameters used by [`Self::remark_special_step`] for the next step.
    pub fn remark_params(&self) -> StepParams {
        let level = self.remaining.max(0.0);
        StepParams::new(1.0, level, level)
    }

    /// Applies a step without any admissibility check.
    ///
    /// Meant for oracles that evaluate arbitrary level sequences, including
    /// ones outside the algorithm's constraints.
    pub fn apply_unchecked(&mut self, params: StepParams, p: f64) -> StepOutcome {
        let outcome = StepOutcome {
            p,
            selected: p <= params.tau,
            candidate: p <= params.lambda,
            rejected: p <= params.alpha_i,
            params,
            budget_before: self.remaining,
        };
        if outcome.spent() {
            self.remaining -= self.spend_amount(&params);
        }
        self.history.push(outcome);
        outcome
    }

    /// Budget consumed if the next step with `params` lands in the spend region.
    pub fn spend_amount(&self, params: &StepParams) -> f64 {
        match self.mode {
            Mode::Plain => params.alpha_i / params.width(),
            Mode::Exhaustive => params.alpha_i * (1.0 - self.remaining) / params.width(),
        }
    }

    /// `Σⱼ spendⱼ·(Sⱼ−Cⱼ)` recomputed from the history, independent of the
    /// running `remaining` value.
    pub fn ledger_spent(&self) -> f64 {
        self.history
            .iter()
            .filter(|o| o.spent())
            .map(|o| match self.mode {
                Mode::Plain => o.params.alpha_i / o.params.width(),
                Mode::Exhaustive => o.params.alpha_i * (1.0 - o.budget_before) / o.params.width(),
            })
            .sum()
    }

    /// Replays a history onto a fresh state with the same mode and alpha.
    pub fn replay(&self) -> Result<BudgetState, EngineError> {
        let mut fresh = BudgetState::new(self.mode, self.global_alpha)?;
        for o in &self.history {
            fresh.apply(o.params, o.p)?;
        }
        Ok(fresh)
    }

    pub fn to_snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            mode: self.mode,
            step: self.step(),
            remaining: self.remaining,
            global_alpha: self.global_alpha,
            history: self
                .history
                .iter()
                .map(|o| SnapshotStep {
                    p: o.p,
                    tau: o.params.tau,
                    lambda: o.params.lambda,
                    alpha_i: o.params.alpha_i,
                    s: o.selected,
                    c: o.candidate,
                    rejected: o.rejected,
                })
                .collect(),
        }
    }

    /// Rebuilds a state by replaying the snapshot history, then checks the
    /// recorded indicators, step and remaining budget against the replay.
    pub fn from_snapshot(snap: &StateSnapshot) -> Result<BudgetState, EngineError> {
        let mut state = BudgetState::new(snap.mode, snap.global_alpha)?;
        for (k, s) in snap.history.iter().enumerate() {
            let o = state.apply(StepParams::new(s.tau, s.lambda, s.alpha_i), s.p)?;
            if (o.selected, o.candidate, o.rejected) != (s.s, s.c, s.rejected) {
                return Err(EngineError::Snapshot(format!(
                    "indicators of step {} disagree with replay",
                    k + 1
                )));
            }
        }
        if state.step() != snap.step {
            return Err(EngineError::Snapshot(format!(
                "step {} but history implies {}",
                snap.step,
                state.step()
            )));
        }
        if state.remaining.to_bits() != snap.remaining.to_bits() {
            return Err(EngineError::Snapshot(format!(
                "remaining {} but replay gives {}",
                snap.remaining, state.remaining
            )));
        }
        Ok(state)
    }

    fn require(&self, expected: Mode) -> Result<(), EngineError> {
        if self.mode != expected {
            return Err(EngineError::WrongMode { expected, actual: self.mode });
        }
        Ok(())
    }
}

/// Flat JSON form of a [`BudgetState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub mode: Mode,
    pub step: usize,
    #[serde(with = "json17")]
    pub remaining: f64,
    #[serde(with = "json17")]
    pub global_alpha: f64,
    pub history: Vec<SnapshotStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStep {
    #[serde(with = "json17")]
    pub p: f64,
    #[serde(with = "json17")]
    pub tau: f64,
    #[serde(with = "json17")]
    pub lambda: f64,
    #[serde(with = "json17")]
    pub alpha_i: f64,
    pub s: bool,
    pub c: bool,
    pub rejected: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn state(mode: Mode, remaining: f64) -> BudgetState {
        let mut s = BudgetState::new(mode, 0.2).unwrap();
        s.remaining = remaining;
        s
    }

    #[test]
    fn validate_exhaustive_at_boundary() {
        let s = state(Mode::Exhaustive, 0.2);
        assert!(s.validate(&StepParams::new(0.8, 0.16, 0.0972683)).is_ok());
        // slack 0.2 - 0.0972683*0.8/0.64
        let slack = 0.2 - s.spend_amount(&StepParams::new(0.8, 0.16, 0.0972683));
        close(slack, 0.078414625, 1e-12);
    }

    #[test]
    fn zero_level_always_admissible() {
        for mode in [Mode::Plain, Mode::Exhaustive] {
            let s = state(mode, 0.0);
            assert!(s.validate(&StepParams::new(1.0, 0.5, 0.0)).is_ok());
        }
    }

    #[test]
    fn lambda_bound_violation_names_both_sides() {
        let s = state(Mode::Exhaustive, 0.2);
        let v = s.validate(&StepParams::new(0.8, 0.10, 0.01)).unwrap_err();
        assert_eq!(v.constraint, Constraint::LambdaBound);
        close(v.lhs, 0.10, 0.0);
        close(v.rhs, 0.16, 1e-15);
        assert!(v.to_string().contains("lambda_bound"));
    }

    #[test]
    fn range_violations() {
        let s = state(Mode::Plain, 0.2);
        let bad = [
            (StepParams::new(0.0, 0.0, 0.0), Constraint::TauRange),
            (StepParams::new(1.1, 0.0, 0.0), Constraint::TauRange),
            (StepParams::new(0.5, 0.5, 0.0), Constraint::LambdaRange),
            (StepParams::new(0.5, 0.1, 0.5), Constraint::AlphaRange),
            (StepParams::new(0.5, 0.1, f64::NAN), Constraint::AlphaRange),
        ];
        for (params, constraint) in bad {
            assert_eq!(s.validate(&params).unwrap_err().constraint, constraint);
        }
    }

    #[test]
    fn addis_step_branches() {
        let params = StepParams::new(0.8, 0.16, 0.077_814_669_037_315_41);
        let mut s = state(Mode::Plain, 0.2);
        let o = s.addis_step(params, 0.5).unwrap();
        assert!(!o.rejected && o.spent());
        close(s.remaining(), 0.078_414_579_629_194_67, 1e-15);

        let mut s = state(Mode::Plain, 0.2);
        let o = s.addis_step(params, 0.9).unwrap();
        assert!(!o.rejected && !o.selected);
        assert_eq!(s.remaining(), 0.2);

        let mut s = state(Mode::Plain, 0.2);
        let o = s.addis_step(params, 0.05).unwrap();
        assert!(o.rejected && o.candidate);
        assert_eq!(s.remaining(), 0.2);
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn exhaustive_step_branches() {
        let mut s = state(Mode::Exhaustive, 0.2);
        s.exhaustive_addis_step(StepParams::new(0.8, 0.16, 0.0972683), 0.5).unwrap();
        close(s.remaining(), 0.078414625, 1e-15);

        let mut s = state(Mode::Exhaustive, 0.2);
        s.exhaustive_addis_step(StepParams::new(1.0, 0.5, 0.1), 0.7).unwrap();
        close(s.remaining(), 0.04, 1e-15);

        let mut s = state(Mode::Exhaustive, 0.04);
        let o = s.exhaustive_addis_step(StepParams::new(1.0, 0.04, 0.04), 0.03).unwrap();
        assert!(o.rejected && o.candidate);
        assert_eq!(s.remaining(), 0.04);
    }

    #[test]
    fn remark_step() {
        let mut s = state(Mode::Exhaustive, 0.2);
        assert!(s.remark_special_step(0.15).unwrap().rejected);
        assert_eq!(s.remaining(), 0.2);

        let mut s = state(Mode::Exhaustive, 0.2);
        assert!(!s.remark_special_step(0.9).unwrap().rejected);
        close(s.remaining(), 0.0, 1e-16);

        let mut s = state(Mode::Exhaustive, 0.0);
        assert!(!s.remark_special_step(0.5).unwrap().rejected);
        assert_eq!(s.remaining(), 0.0);
    }

    #[test]
    fn ties_follow_inclusive_conventions() {
        let params = StepParams::new(0.8, 0.16, 0.05);
        let mut s = state(Mode::Plain, 0.2);
        let o = s.apply(params, 0.05).unwrap();
        assert!(o.rejected);
        let o = s.apply(params, 0.16).unwrap();
        assert!(o.candidate && !o.spent());
        let o = s.apply(params, 0.8).unwrap();
        assert!(o.selected && o.spent());

        let mut s = state(Mode::Plain, 0.2);
        assert!(s.apply(StepParams::new(1.0, 0.5, 0.0), 0.0).unwrap().rejected);
    }

    #[test]
    fn invalid_transition_leaves_state_unchanged() {
        let mut s = state(Mode::Plain, 0.2);
        let before = s.clone();
        let err = s.apply(StepParams::new(0.8, 0.16, 0.5), 0.3).unwrap_err();
        assert!(matches!(err, EngineError::Inadmissible { step: 1, .. }));
        assert!(matches!(s.apply(StepParams::new(0.8, 0.16, 0.01), 1.5), Err(EngineError::PValueRange(_))));
        assert!(matches!(s.apply(StepParams::new(0.8, 0.16, 0.01), f64::NAN), Err(EngineError::PValueRange(_))));
        assert_eq!(s, before);
    }

    #[test]
    fn mode_mismatch() {
        let mut s = state(Mode::Plain, 0.2);
        assert!(matches!(s.remark_special_step(0.1), Err(EngineError::WrongMode { .. })));
        assert!(matches!(
            s.exhaustive_addis_step(StepParams::new(1.0, 0.5, 0.0), 0.1),
            Err(EngineError::WrongMode { .. })
        ));
        assert!(BudgetState::new(Mode::Plain, 1.0).is_err());
        assert!(BudgetState::new(Mode::Plain, 0.0).is_err());
    }

    #[test]
    fn snapshot_json_round_trip() {
        let mut s = BudgetState::new(Mode::Exhaustive, 0.2).unwrap();
        s.apply(StepParams::new(0.8, 0.16, 0.097_268_336_296_644_26), 0.5).unwrap();
        s.apply(StepParams::new(0.8, 0.16, 0.01), 0.1).unwrap();
        let json = serde_json::to_string(&s.to_snapshot()).unwrap();
        assert!(json.contains("\"remaining\":0.07841457962919"), "{json}");
        let snap: StateSnapshot = serde_json::from_str(&json).unwrap();
        let back = BudgetState::from_snapshot(&snap).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn tampered_snapshot_is_rejected() {
        let mut s = BudgetState::new(Mode::Plain, 0.2).unwrap();
        s.apply(StepParams::new(0.8, 0.16, 0.05), 0.5).unwrap();
        let mut snap = s.to_snapshot();
        snap.remaining += 1e-12;
        assert!(matches!(BudgetState::from_snapshot(&snap), Err(EngineError::Snapshot(_))));
        let mut snap = s.to_snapshot();
        snap.history[0].rejected = true;
        assert!(BudgetState::from_snapshot(&snap).is_err());
    }
}
