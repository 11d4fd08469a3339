use std::hint::black_box;

use apdsim::countermeasures::{find_zero_count_gap, GapScan};
use apdsim::experiments::{run_sweep, SweepSpec, SweepVariable};
use apdsim::{ApdParams, Execution};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn power_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("power_sweep");
    group.sample_size(10);
    for (name, execution) in MODES {
        let spec = SweepSpec {
            gates_per_point: 100_000,
            execution,
            ..SweepSpec::new(SweepVariable::Power, (1e-12, 1e-3), 40, ApdParams::apd1())
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_sweep(black_box(&spec)).unwrap()));
    }
    group.finish();
}

fn gap_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("gap_search");
    group.sample_size(10);
    let params = ApdParams::apd1();
    for (name, execution) in MODES {
        let scan = GapScan { gates_per_point: 100_000, execution, ..GapScan::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| find_zero_count_gap(black_box(&params), 1e-12, 1e-3, &scan).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, power_sweep, gap_search);
criterion_main!(benches);
