use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use smc_core::engine::{run_filter, run_replicates, summarize, FilterConfig};
use smc_core::models::FiniteHmm;
use smc_core::{Functional, SelectionScheme};

fn replicates(c: &mut Criterion) {
    let hmm = FiniteHmm::mixing_instance(20, 1);
    let model = hmm.filter().unwrap();
    let phi = [Functional::indicator("x=0", 3, 0)];
    let k = 8;
    let mut group = c.benchmark_group("replicates");
    group.sample_size(10);
    for h in [1_000usize, 10_000] {
        let config = FilterConfig::new(h, 20, SelectionScheme::Residual, 1);
        group.bench_with_input(BenchmarkId::new("sequential", h), &config, |b, config| {
            b.iter(|| {
                let traces = (0..k)
                    .map(|i| run_filter(&model, &config.clone().with_stream(i), &phi).unwrap())
                    .collect();
                summarize(&phi, traces)
            })
        });
        let label = if smc_core::par::is_parallel() { "rayon" } else { "fallback" };
        group.bench_with_input(BenchmarkId::new(label, h), &config, |b, config| {
            b.iter(|| run_replicates(&model, config, &phi, k as usize).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replicates);
criterion_main!(benches);
