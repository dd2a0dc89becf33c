use exaddis_core::gamma::gamma_q_series;
use exaddis_core::simulation::GaussianSetup;
use exaddis_core::{exact_fwer_global_null, mc_estimate, BudgetState, FnRule, Mode, Policy, PolicyConfig, Procedure, StepParams};

/// Step 1 at `τ = 1, λ = 0.5, α₁ = 0.1`, then `second` for step 2.
fn two_step<F>(mode: Mode, second: F) -> FnRule<impl Fn(&BudgetState) -> StepParams + Send + Sync>
where
    F: Fn(&BudgetState) -> StepParams + Send + Sync,
{
    FnRule::new("two_step", mode, 0.2, move |s: &BudgetState| {
        if s.history().is_empty() {
            StepParams::new(1.0, 0.5, 0.1)
        } else {
            second(s)
        }
    })
}

#[test]
fn exhaustive_construction_uses_the_whole_level() {
    let rule = two_step(Mode::Exhaustive, |s: &BudgetState| s.remark_params());
    let fwer = exact_fwer_global_null(&rule, 2).unwrap();
    assert!((fwer - 0.2).abs() <= 1e-12, "{fwer}");
    assert!((fwer - (0.1 + 0.4 * 0.2 + 0.5 * 0.04)).abs() <= 1e-15);
}

#[test]
fn plain_counterpart_leaves_level_unused() {
    let rule = two_step(Mode::Plain, |s: &BudgetState| StepParams::new(1.0, 0.0, s.remaining()));
    let fwer = exact_fwer_global_null(&rule, 2).unwrap();
    assert!((fwer - 0.18).abs() <= 1e-12, "{fwer}");
}

#[test]
fn raising_the_spend_branch_level_breaks_control() {
    let rule = two_step(Mode::Exhaustive, |s: &BudgetState| {
        let base = s.remark_params();
        if s.history()[0].spent() {
            StepParams::new(base.tau, base.lambda, base.alpha_i + 1e-3)
        } else {
            base
        }
    });
    let fwer = exact_fwer_global_null(&rule, 2).unwrap();
    assert!((fwer - 0.2 - 5e-4).abs() <= 1e-12, "{fwer}");
}

#[test]
fn remark_procedure_is_exact_at_every_horizon() {
    let policy = Policy::new(PolicyConfig::new(Procedure::Remark, 0.2)).unwrap();
    for n in 1..=6 {
        let fwer = exact_fwer_global_null(&policy, n).unwrap();
        assert!((fwer - 0.2).abs() <= 1e-12, "n={n}: {fwer}");
    }
}

#[test]
fn alpha_spending_matches_product_formula() {
    let policy = Policy::new(PolicyConfig::new(Procedure::AlphaSpending, 0.2)).unwrap();
    let n = 10;
    let want = 1.0 - (1..=n).map(|i| 1.0 - 0.2 * gamma_q_series(i)).product::<f64>();
    let got = exact_fwer_global_null(&policy, n).unwrap();
    assert!((got - want).abs() <= 1e-14, "{got} vs {want}");
}

#[test]
fn every_procedure_controls_fwer_exactly() {
    for proc in Procedure::SIX {
        let policy = Policy::new(PolicyConfig::new(proc, 0.2)).unwrap();
        let fwer = exact_fwer_global_null(&policy, 7).unwrap();
        assert!(fwer <= 0.2 + 1e-12, "{proc}: {fwer}");
        assert!(fwer > 0.0);
    }
}

#[test]
fn monte_carlo_agrees_with_oracle() {
    let n = 6;
    let setup = GaussianSetup::global_null(n);
    for proc in [Procedure::EAddisSpending, Procedure::EiAddisGraph, Procedure::AddisGraph] {
        let policy = Policy::new(PolicyConfig::new(proc, 0.2)).unwrap();
        let exact = exact_fwer_global_null(&policy, n).unwrap();
        let est = mc_estimate(&policy, &setup, 20_000, 99).unwrap();
        let z = (est.fwer_hat - exact) / est.fwer_se;
        assert!(z.abs() < 4.0, "{proc}: exact {exact}, mc {} ± {}", est.fwer_hat, est.fwer_se);
    }
}
