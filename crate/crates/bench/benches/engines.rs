use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use rampsim_bench::fixture;
use rampsim_core::analysis::batch_means;
use rampsim_core::analysis::region::examples;
use rampsim_core::{run, EngineKind, PolicyKind};

fn engines(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine");
    g.sample_size(10);
    for (engine, steps) in [(EngineKind::Slot, 20_000), (EngineKind::Micro, 1_000)] {
        for kind in [PolicyKind::Greedy, PolicyKind::Drr] {
            let s = fixture(kind, engine, steps);
            let id = BenchmarkId::new(format!("{engine:?}"), format!("{}/{steps}", kind.name()));
            g.bench_with_input(id, &s, |b, s| b.iter(|| run(black_box(s)).unwrap()));
        }
    }
    g.finish();
}

fn analysis(c: &mut Criterion) {
    c.bench_function("region/renewal_slow_ramp2", |b| {
        let case = examples::get("renewal_slow_ramp2").unwrap();
        b.iter(|| case.region().unwrap())
    });
    let series: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 101) as f64).collect();
    c.bench_function("batch_means/100k", |b| b.iter(|| batch_means(black_box(&series), 1_000, 1_000, 0.95).unwrap()));
}

criterion_group!(benches, engines, analysis);
criterion_main!(benches);
