//! Monte Carlo estimation of FWER and power.
//!
//! Trial `t` always draws from the ChaCha8 stream `t` of the run seed, so an
//! estimate does not depend on how many threads produced it. Per-trial
//! results are collected in trial order and reduced by pairwise summation.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::policy::{LevelRule, RunError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("trial {trial}, procedure {procedure}: {source}")]
    Run { trial: usize, procedure: String, source: RunError },
    #[error("at least one trial is required")]
    NoTrials,
}

/// One generated sequence with its truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub p_values: Vec<f64>,
    pub is_false: Vec<bool>,
}

/// A data-generating process for p-value sequences.
pub trait PValueSource: Sync {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Trial;
}

/// Independent RNG stream for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// What happened to one procedure in one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub null_rejected: bool,
    pub false_total: usize,
    pub false_rejected: usize,
}

impl TrialOutcome {
    /// Rejected share of the false hypotheses; `None` when there are none.
    pub fn power(&self) -> Option<f64> {
        (self.false_total > 0).then(|| self.false_rejected as f64 / self.false_total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub fwer_hat: f64,
    pub fwer_se: f64,
    /// Mean over trials with at least one false hypothesis.
    pub power_hat: Option<f64>,
    pub power_se: Option<f64>,
    pub trials: usize,
    /// Trials that entered the power average.
    pub power_trials: usize,
}

impl McEstimate {
    pub fn from_outcomes(outcomes: &[TrialOutcome]) -> Self {
        let trials = outcomes.len();
        let hits = outcomes.iter().filter(|o| o.null_rejected).count();
        let fwer_hat = hits as f64 / trials as f64;
        let fwer_se = (fwer_hat * (1.0 - fwer_hat) / trials as f64).sqrt();
        let powers: Vec<f64> = outcomes.iter().filter_map(TrialOutcome::power).collect();
        let (power_hat, power_se) = mean_and_se(&powers);
        Self { fwer_hat, fwer_se, power_hat, power_se, trials, power_trials: powers.len() }
    }
}

/// Paired difference of power between two procedures run on the same trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEstimate {
    pub mean: f64,
    pub se: f64,
    pub trials: usize,
}

/// Mean and standard error of `power(a) − power(b)` over trials where both
/// are defined.
pub fn paired_power_gap(a: &[TrialOutcome], b: &[TrialOutcome]) -> Option<GapEstimate> {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(x.power()? - y.power()?))
        .collect();
    let (mean, se) = mean_and_se(&diffs);
    Some(GapEstimate { mean: mean?, se: se?, trials: diffs.len() })
}

fn mean_and_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// Recursive pairwise summation; fixed shape for a given length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Runs every rule on the same generated trials.
///
/// Returns one outcome vector per rule, each in trial order.
pub fn simulate(
    rules: &[&dyn LevelRule],
    source: &dyn PValueSource,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<TrialOutcome>>, McError> {
    if trials == 0 {
        return Err(McError::NoTrials);
    }
    let per_trial: Vec<Vec<TrialOutcome>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial = source.generate(&mut trial_rng(seed, t as u64));
            rules
                .iter()
                .map(|rule| {
                    let trace = rule.run(&trial.p_values).map_err(|source| McError::Run {
                        trial: t,
                        procedure: rule.label(),
                        source,
                    })?;
                    Ok(score(&trace.rejections, &trial.is_false))
                })
                .collect::<Result<Vec<_>, McError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut by_rule = vec![Vec::with_capacity(trials); rules.len()];
    for row in per_trial {
        for (k, o) in row.into_iter().enumerate() {
            by_rule[k].push(o);
        }
    }
    Ok(by_rule)
}

/// Estimates FWER and power of one rule.
pub fn mc_estimate(
    rule: &dyn LevelRule,
    source: &dyn PValueSource,
    trials: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    let outcomes = simulate(&[rule], source, trials, seed)?;
    Ok(McEstimate::from_outcomes(&outcomes[0]))
}

fn score(rejections: &[bool], is_false: &[bool]) -> TrialOutcome {
    let mut o = TrialOutcome { null_rejected: false, false_total: 0, false_rejected: 0 };
    for (&r, &f) in rejections.iter().zip(is_false) {
        if f {
            o.false_total += 1;
            o.false_rejected += r as usize;
        } else if r {
            o.null_rejected = true;
        }
    }
    o
}

/// One CSV row of an oracle or Monte Carlo result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub procedure: String,
    pub n: usize,
    #[serde(rename = "pi_A")]
    pub pi_a: f64,
    #[serde(rename = "mu_A")]
    pub mu_a: f64,
    #[serde(rename = "mu_N")]
    pub mu_n: f64,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub fwer: f64,
    pub fwer_se: f64,
    pub power: Option<f64>,
    pub power_se: Option<f64>,
}

pub const MC_ROW_HEADER: [&str; 12] = [
    "procedure", "n", "pi_A", "mu_A", "mu_N", "alpha", "trials", "seed", "fwer", "fwer_se", "power",
    "power_se",
];

/// Writes rows with a header line, even when `rows` is empty.
pub fn write_mc_rows<W: Write>(out: W, rows: &[McRow]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(MC_ROW_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct Coin;

    impl PValueSource for Coin {
        fn generate(&self, rng: &mut ChaCha8Rng) -> Trial {
            let p_values = (0..5).map(|_| rng.random::<f64>()).collect();
            Trial { p_values, is_false: vec![false, true, false, true, false] }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = trial_rng(7, 3).random();
        let b: f64 = trial_rng(7, 3).random();
        let c: f64 = trial_rng(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scoring() {
        let o = score(&[true, true, false], &[false, true, true]);
        assert_eq!(o, TrialOutcome { null_rejected: true, false_total: 2, false_rejected: 1 });
        assert_eq!(o.power(), Some(0.5));
        assert_eq!(score(&[false], &[false]).power(), None);
    }

    #[test]
    fn estimate_standard_error() {
        let outcomes = [
            TrialOutcome { null_rejected: true, false_total: 2, false_rejected: 2 },
            TrialOutcome { null_rejected: false, false_total: 0, false_rejected: 0 },
            TrialOutcome { null_rejected: false, false_total: 4, false_rejected: 1 },
            TrialOutcome { null_rejected: false, false_total: 1, false_rejected: 0 },
        ];
        let e = McEstimate::from_outcomes(&outcomes);
        assert_eq!(e.fwer_hat, 0.25);
        assert!((e.fwer_se - (0.25f64 * 0.75 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(e.power_trials, 3);
        assert!((e.power_hat.unwrap() - 1.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_ints() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn same_result_regardless_of_thread_count() {
        use crate::config::{PolicyConfig, Procedure};
        use crate::policy::Policy;
        let policy = Policy::new(PolicyConfig::new(Procedure::EiAddisGraph, 0.2)).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| mc_estimate(&policy, &Coin, 300, 11)).unwrap();
        let b = multi.install(|| mc_estimate(&policy, &Coin, 300, 11)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(mc_estimate(&policy, &Coin, 0, 11), Err(McError::NoTrials)));
    }

    #[test]
    fn header_only_csv_when_empty() {
        let mut buf = Vec::new();
        write_mc_rows(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), MC_ROW_HEADER.join(",") + "\n");
    }
}
