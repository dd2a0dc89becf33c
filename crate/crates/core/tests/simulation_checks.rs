use exaddis_core::gamma::gamma_q_series;
use exaddis_core::montecarlo::{trial_rng, MC_ROW_HEADER};
use exaddis_core::simulation::{emit_curves, normal_cdf, normal_quantile};
use exaddis_core::{
    generate_trial, mc_estimate, run_grid, ExperimentGrid, GaussianSetup, GridResults, Policy, PolicyConfig,
    Procedure,
};

fn null_p_values(mu_n: f64, count: usize, seed: u64) -> Vec<f64> {
    let setup = GaussianSetup::new(1000, 0.0, 4.0, mu_n).unwrap();
    (0..count / 1000)
        .flat_map(|t| generate_trial(&setup, &mut trial_rng(seed, t as u64)).p_values)
        .collect()
}

#[test]
fn uniform_nulls_pass_kolmogorov_smirnov() {
    let mut p = null_p_values(0.0, 100_000, 2024);
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(k, x)| (x - k as f64 / n).abs().max(((k + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max);
    // Asymptotic 99% critical value.
    let band = 1.627_6 / n.sqrt();
    assert!(d < band, "D = {d}, band {band}");
}

#[test]
fn conservative_nulls_rarely_fall_below_five_percent() {
    let want = normal_cdf(-normal_quantile(0.95) - 2.0);
    assert!((want - 1.337_72e-4).abs() < 1e-9);
    let p = null_p_values(-2.0, 1_000_000, 7);
    let hits = p.iter().filter(|x| **x <= 0.05).count() as f64;
    let n = p.len() as f64;
    let se = (want * (1.0 - want) / n).sqrt();
    assert!((hits / n - want).abs() < 4.0 * se, "{} vs {want}", hits / n);
}

#[test]
fn alpha_spending_global_null_fwer() {
    let n = 100;
    let exact = 1.0 - (1..=n).map(|i| 1.0 - 0.2 * gamma_q_series(i)).product::<f64>();
    assert!((exact - 0.187_354_662_778_456_03).abs() < 1e-14);
    let policy = Policy::new(PolicyConfig::new(Procedure::AlphaSpending, 0.2)).unwrap();
    let est = mc_estimate(&policy, &GaussianSetup::global_null(n), 20_000, 5).unwrap();
    assert!((est.fwer_hat - exact).abs() < 4.0 * est.fwer_se, "{} ± {}", est.fwer_hat, est.fwer_se);
    assert_eq!(est.power_hat, None);
}

#[test]
fn figure_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut grid = ExperimentGrid::figure(3, 3, 7).unwrap();
    grid.n = 20;
    let results = run_grid(&grid);
    assert!(results.failures.is_empty());
    let paths = emit_curves(&results, dir.path(), "fig3").unwrap();
    let text = std::fs::read_to_string(&paths[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), MC_ROW_HEADER.join(","));
    assert_eq!(lines.count(), 9 * 3 * 2);
    let long = std::fs::read_to_string(&paths[1]).unwrap();
    assert_eq!(long.lines().count(), 1 + 9 * 3 * 2 * 2);

    let single = ExperimentGrid { procedures: grid.procedures[..1].to_vec(), ..grid.clone() };
    let paths = emit_curves(&run_grid(&single), dir.path(), "single").unwrap();
    let text = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(text.lines().next().unwrap(), MC_ROW_HEADER.join(","));
    assert_eq!(text.lines().count(), 1 + 18);

    let paths = emit_curves(&GridResults::default(), dir.path(), "empty").unwrap();
    assert_eq!(std::fs::read_to_string(&paths[0]).unwrap().lines().count(), 1);
}

#[test]
fn grid_runs_are_reproducible() {
    let mut grid = ExperimentGrid::figure(5, 40, 11).unwrap();
    grid.pi_a = vec![0.5];
    let a = run_grid(&grid).rows();
    let b = run_grid(&grid).rows();
    assert_eq!(a, b);
    grid.seed = 12;
    assert_ne!(a, run_grid(&grid).rows());
}

#[test]
fn custom_grid_from_toml() {
    let grid = ExperimentGrid::from_toml_str(
        r#"
        n = 50
        pi_a = [0.3]
        mu_a = [2.0, 4.0]
        mu_n = [0.0]
        trials = 20
        seed = 1
        [[procedures]]
        procedure = "addis_spending"
        alpha = 0.1
        "#,
    )
    .unwrap();
    assert_eq!(grid.setups().len(), 2);
    let results = run_grid(&grid);
    assert_eq!(results.rows().len(), 2);
}
