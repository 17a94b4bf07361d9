//! Time-surface construction cost at typical desk event rates.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use evgest_bench::synthetic_stream;
use evgest_core::surface::build_time_surface;
use evgest_core::window::WindowConfig;

fn encoding(c: &mut Criterion) {
    let config = WindowConfig::default();
    let mut group = c.benchmark_group("time_surface");
    for &total in &[10_000usize, 50_000] {
        let stream = synthetic_stream(total, 3);
        let end_ns = stream.duration_ns();
        group.bench_function(format!("{total}_events"), |b| {
            b.iter(|| {
                build_time_surface(black_box(&stream), end_ns, &config).expect("surface")
            })
        });
    }
    group.finish();
}

criterion_group!(benches, encoding);
criterion_main!(benches);
