use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use exaddis_core::montecarlo::trial_rng;
use exaddis_core::{exact_fwer_global_null, generate_trial, run_procedure, GaussianSetup, Policy, PolicyConfig, Procedure};

fn procedures(c: &mut Criterion) {
    let setup = GaussianSetup::new(1000, 0.5, 4.0, -2.0).unwrap();
    let p = generate_trial(&setup, &mut trial_rng(1, 0)).p_values;
    let mut group = c.benchmark_group("run_procedure_n1000");
    for proc in Procedure::SIX {
        let cfg = PolicyConfig::new(proc, 0.2);
        group.bench_function(proc.name(), |b| b.iter(|| run_procedure(black_box(&cfg), black_box(&p)).unwrap()));
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_oracle");
    for n in [4, 8, 12] {
        let policy = Policy::new(PolicyConfig::new(Procedure::EiAddisGraph, 0.2)).unwrap().with_horizon(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| exact_fwer_global_null(&policy, n).unwrap())
        });
    }
    group.finish();
}

fn trials(c: &mut Criterion) {
    let setup = GaussianSetup::new(1000, 0.5, 4.0, 0.0).unwrap();
    let mut k = 0u64;
    c.bench_function("generate_trial_n1000", |b| {
        b.iter(|| {
            k += 1;
            generate_trial(black_box(&setup), &mut trial_rng(1, k))
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = procedures, oracle, trials
}

criterion_main!(benches);
