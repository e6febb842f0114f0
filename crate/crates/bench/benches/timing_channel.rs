// Sampling time for the u1 (total 128, never rejects) and u0 (total 128.5)
// tables. Per-bit OS randomness keeps the draw cost proportional to its
// length, as in a deployment; with k = 16 the two should converge.

use std::hint::black_box;

use b2exp::{normalized_sample, OsBits};
use b2exp_bench::TimingTables;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn timing_channel(c: &mut Criterion) {
    let mut group = c.benchmark_group("timing-channel");
    for k in [1u64, 2, 4, 8, 16] {
        let fixture = TimingTables::new(k).unwrap();
        for (label, table) in &fixture.tables {
            group.bench_function(BenchmarkId::new(*label, k), |b| {
                b.iter(|| black_box(normalized_sample(&fixture.ctx, table, &fixture.opts, &mut OsBits).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, timing_channel);
criterion_main!(benches);
