use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tas_core::metrics::{Measure, PowerModel};
use tas_core::precoders::PrecoderSpec;
use tas_core::stepwise::{initialize, select_next, AlgoConfig, ScanPath, StepContext};
use tas_core::{generate_rayleigh, run, Execution};

fn config(k: usize, l_max: usize, spec: PrecoderSpec) -> AlgoConfig {
    let measure = Measure::energy_efficiency(vec![1.0; k], PowerModel::reference()).unwrap();
    AlgoConfig::new(l_max, 1.0, spec, measure).forced(true)
}

/// Full forced runs: rank-one candidate scan against from-scratch evaluation.
fn full_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_run_n128_k8_l64");
    group.sample_size(10);
    let ch = generate_rayleigh(128, 8, 1).unwrap();
    for (name, spec) in [("mrt", PrecoderSpec::mrt()), ("zf", PrecoderSpec::zero_forcing())] {
        for (path, scan) in [("rank_one", ScanPath::RankOne), ("naive", ScanPath::Naive)] {
            let cfg = config(8, 64, spec).with_scan(scan);
            group.bench_with_input(BenchmarkId::new(path, name), &cfg, |b, cfg| {
                b.iter(|| run(&ch, cfg).unwrap())
            });
        }
    }
    group.finish();
}

/// One candidate scan at a mid-run state, sequential against rayon.
fn single_scan(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan_n128_k8_l32");
    let ch = generate_rayleigh(128, 8, 2).unwrap();
    let cfg = config(8, 33, PrecoderSpec::regularized(0.5).unwrap());
    let mut state = initialize(&ch, &cfg).unwrap();
    while state.level() < 32 {
        let ctx = StepContext::new(&state, &cfg.measure);
        let tas_core::stepwise::Selection::Accept(best) = select_next(&ch, &state, &ctx, &cfg).unwrap() else {
            unreachable!("forced")
        };
        state = tas_core::stepwise::apply_step(&ch, &state, &best, &cfg).unwrap();
    }
    let ctx = StepContext::new(&state, &cfg.measure);
    for (path, scan) in [("rank_one", ScanPath::RankOne), ("naive", ScanPath::Naive)] {
        for (mode, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let cfg = cfg.clone().with_scan(scan).with_execution(exec);
            group.bench_function(BenchmarkId::new(path, mode), |b| {
                b.iter(|| select_next(&ch, &state, &ctx, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, full_run, single_scan);
criterion_main!(benches);
