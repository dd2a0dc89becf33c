//! Exact FWER under the global null for short runs.
//!
//! With independent uniform null p-values every level rule here is constant
//! on the intervals cut by `{0, αᵢ, λᵢ, τᵢ, 1}`: the next step's parameters
//! depend on `Pᵢ` only through `(Sᵢ, Cᵢ, Rᵢ)`. The oracle walks that interval
//! tree, adding `αᵢ` times the path probability at every node and recursing
//! into each non-rejecting interval with an interior representative.
//!
//! Steps are applied without admissibility checks, so the oracle also
//! evaluates level sequences that break the algorithms' constraints.

use thiserror::Error;

use crate::engine::BudgetState;
use crate::policy::LevelRule;

/// At most `4ⁿ` interval paths; `n = 12` is about 1.7e7.
pub const MAX_EXACT_STEPS: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(
        "exact enumeration over {n} steps refused: the interval tree has up to 4^{n} paths \
         (limit n <= {MAX_EXACT_STEPS}); use Monte Carlo instead"
    )]
    TooManySteps { n: usize },
    #[error(
        "rule is not piecewise constant at step {step}: probes {first} and {second} in \
         ({lo}, {hi}] lead to different next-step parameters"
    )]
    NotPiecewiseConstant { step: usize, lo: f64, hi: f64, first: f64, second: f64 },
    #[error("invalid alpha: {0}")]
    Alpha(String),
}

/// `P(V(n) > 0)` for `n` independent uniform null p-values.
pub fn exact_fwer_global_null(rule: &dyn LevelRule, n: usize) -> Result<f64, OracleError> {
    if n > MAX_EXACT_STEPS {
        return Err(OracleError::TooManySteps { n });
    }
    let state =
        BudgetState::new(rule.mode(), rule.alpha()).map_err(|e| OracleError::Alpha(e.to_string()))?;
    descend(rule, &state, n, 1.0)
}

fn descend(rule: &dyn LevelRule, state: &BudgetState, left: usize, mass: f64) -> Result<f64, OracleError> {
    if left == 0 {
        return Ok(0.0);
    }
    let params = rule.params(state);
    let level = params.alpha_i.clamp(0.0, 1.0);
    let mut total = mass * level;
    if left == 1 {
        return Ok(total);
    }
    let mut cuts: Vec<f64> = [level, params.lambda, params.tau, 1.0]
        .into_iter()
        .map(|c| c.clamp(level, 1.0))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = lo + (hi - lo) / 2.0;
        let third = lo + (hi - lo) / 3.0;
        let mut next = state.clone();
        next.apply_unchecked(params, mid);
        let mut alt = state.clone();
        alt.apply_unchecked(params, third);
        let (a, b) = (rule.params(&next), rule.params(&alt));
        let same = a.tau.to_bits() == b.tau.to_bits()
            && a.lambda.to_bits() == b.lambda.to_bits()
            && a.alpha_i.to_bits() == b.alpha_i.to_bits();
        if !same {
            return Err(OracleError::NotPiecewiseConstant {
                step: state.step(),
                lo,
                hi,
                first: mid,
                second: third,
            });
        }
        total += descend(rule, &next, left - 1, mass * (hi - lo))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Mode, StepParams};
    use crate::policy::FnRule;

    #[test]
    fn alpha_spending_product() {
        let rule = FnRule::new("flat", Mode::Plain, 0.2, |_s: &BudgetState| StepParams::new(1.0, 0.0, 0.1));
        let fwer = exact_fwer_global_null(&rule, 2).unwrap();
        assert!((fwer - 0.19).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_n() {
        let rule = FnRule::new("flat", Mode::Plain, 0.2, |_s: &BudgetState| StepParams::new(1.0, 0.0, 0.0));
        assert!(matches!(exact_fwer_global_null(&rule, 13), Err(OracleError::TooManySteps { n: 13 })));
        assert_eq!(exact_fwer_global_null(&rule, 0).unwrap(), 0.0);
    }

    #[test]
    fn detects_p_dependent_rules() {
        let rule = FnRule::new("peeking", Mode::Plain, 0.2, |s: &BudgetState| {
            let last = s.history().last().map(|o| o.p).unwrap_or(0.0);
            StepParams::new(1.0, 0.0, 0.01 * last)
        });
        let err = exact_fwer_global_null(&rule, 2).unwrap_err();
        assert!(matches!(err, OracleError::NotPiecewiseConstant { step: 1, .. }), "{err}");
    }
}
