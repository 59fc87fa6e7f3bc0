//! Sequential versus data-parallel execution of the planning hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use doacpol_core::engine::{
    optimal_action_distribution, rprime_selection_distribution, PlanningContext, Threshold,
};
use doacpol_core::exec::Execution;
use doacpol_core::firegrid::GridScenario;
use doacpol_core::harness::{run_experiment, ExperimentConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn distributions(c: &mut Criterion) {
    let scenario = GridScenario::builtin_2x2();
    let values = [
        scenario.values[0].clone().unwrap_or_default(),
        scenario.values[1].clone().unwrap_or_default(),
    ];
    let histories = scenario.histories_with(&values).expect("fixed values");
    let epsilon = Threshold::epsilon(0.3).expect("in range");
    let mut group = c.benchmark_group("corner_distributions");
    for (name, execution) in MODES {
        let ctx = PlanningContext {
            execution,
            ..PlanningContext::new(&scenario.model, &scenario.prior, scenario.horizon())
        };
        group.bench_function(BenchmarkId::new("optimal_action", name), |b| {
            b.iter(|| optimal_action_distribution(&ctx, black_box(&histories[0])).expect("plans"))
        });
        group.bench_function(BenchmarkId::new("other_selection", name), |b| {
            b.iter(|| {
                rprime_selection_distribution(&ctx, black_box(&histories[0]), epsilon)
                    .expect("plans")
            })
        });
    }
    group.finish();
}

fn experiments(c: &mut Criterion) {
    let scenario = GridScenario::builtin_4x4();
    let seeds: Vec<u64> = (0..4).collect();
    let mut group = c.benchmark_group("grid_4x4_experiment");
    group.sample_size(10);
    for (name, execution) in MODES {
        let mut cfg =
            ExperimentConfig::for_scenario(&scenario, "DOACPOL-0.8-0.05".parse().expect("label"));
        cfg.execution = execution;
        group.bench_function(BenchmarkId::new("doacpol", name), |b| {
            b.iter(|| run_experiment(&scenario, &cfg, black_box(&seeds)).expect("runs"))
        });
    }
    group.finish();
}

criterion_group!(benches, distributions, experiments);
criterion_main!(benches);
