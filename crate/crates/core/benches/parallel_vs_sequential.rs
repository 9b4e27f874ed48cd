use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relalloc::harness::{gen_uniform, run_grid, BenchOptions, Heuristic, ScenarioSpec};
use relalloc::rare_event::{reliability_estimate, EstimatorOptions, ServiceExposure};
use relalloc::{colgen, rare_event, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn estimator(c: &mut Criterion) {
    let exposure = ServiceExposure::new(vec![0.4, 0.25, 0.1], vec![30, 20, 12]).unwrap();
    let mut group = c.benchmark_group("splitting_estimate");
    group.sample_size(10);
    for (name, execution) in MODES {
        let options = EstimatorOptions {
            execution,
            ..EstimatorOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| reliability_estimate(&exposure, 6.0, 0.01, 7, &options).unwrap())
        });
    }
    group.finish();
}

fn plan_validation(c: &mut Criterion) {
    let scenario = gen_uniform(40, 5, 3).unwrap();
    let run = colgen::solve_scenario(&scenario, Default::default()).unwrap();
    let mut group = c.benchmark_group("plan_validation");
    group.sample_size(10);
    for (name, execution) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                rare_event::validate_plan_reliability(
                    &run.rounded,
                    &scenario,
                    1000,
                    rare_event::ValidationMode::Full,
                    execution,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_cells(c: &mut Criterion) {
    let specs: Vec<ScenarioSpec> = (0..4).map(|seed| ScenarioSpec::uniform(30, 5, seed)).collect();
    let mut group = c.benchmark_group("bench_cells");
    group.sample_size(10);
    for (name, execution) in MODES {
        let options = BenchOptions {
            execution,
            ..BenchOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_grid(&specs, &Heuristic::ALL, &options).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, estimator, plan_validation, bench_cells);
criterion_main!(benches);
