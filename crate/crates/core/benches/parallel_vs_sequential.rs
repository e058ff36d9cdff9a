use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sqs_core::analytic::{exact_mean_check, Conditioning, TestFunction, ZeroDSpec};
use sqs_core::field::{law_moments, FieldSpec};
use sqs_core::par::Execution;
use sqs_core::sampler::{run_classical, run_sqs_selection, SamplerConfig, SamplingMode};
use sqs_core::sqs::{build_offline_tables, OfflineConfig};

const POLICIES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn corrector_batches(c: &mut Criterion) {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let mut group = c.benchmark_group("classical_n8_r2_m16");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let mut cfg = SamplerConfig::new(SamplingMode::Classical, 8, 2, 16);
        cfg.execution = exec;
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_classical(&spec, cfg, None).unwrap())
        });
    }
    group.finish();
}

fn selection_scoring(c: &mut Criterion) {
    let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
    let tables = build_offline_tables(&spec, &law_moments(&spec), &OfflineConfig::new(10, 1)).unwrap();
    let mut group = c.benchmark_group("selection_n10_trials2000_m4");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let mut cfg = SamplerConfig::new(SamplingMode::SqsSelection, 10, 1, 4);
        cfg.trials = 2000;
        cfg.execution = exec;
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_sqs_selection(&spec, cfg, &tables).unwrap())
        });
    }
    group.finish();
}

fn conditioned_draws(c: &mut Criterion) {
    let spec = ZeroDSpec { n: 100, g: TestFunction::Exp, conditioning: Conditioning::Exact };
    let mut group = c.benchmark_group("conditioned_draws_n100_10k");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| exact_mean_check(&spec, 10_000, 0, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, corrector_batches, selection_scoring, conditioned_draws);
criterion_main!(benches);
