use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use tsln_bench::{desk_sample, fake_draws};
use tsln_core::engine::{sample, LogDensity, SamplerConfig};
use tsln_core::stage1::{build_s1_estimates, smoothing_ratio, Stage1Model, Stage1Spec};
use tsln_core::stage2::{stage2_model, Stage2Spec};

fn stage_one_density(c: &mut Criterion) {
    let (s, w) = desk_sample();
    let model = Stage1Model::new(&s, &w, &Stage1Spec::tsln()).unwrap();
    let x = vec![0.1; model.dim()];
    let mut grad = vec![0.0; model.dim()];
    c.bench_function("stage1_log_density_grad", |b| {
        b.iter(|| black_box(model.log_density(black_box(&x), &mut grad)))
    });
}

fn s1_aggregation(c: &mut Criterion) {
    let (s, w) = desk_sample();
    let p = fake_draws(1000, s.len());
    c.bench_function("s1_estimates_1000_draws", |b| {
        b.iter(|| black_box(build_s1_estimates(&p, &s, &w, 3).unwrap()))
    });
    c.bench_function("smoothing_ratio_1000_draws", |b| {
        b.iter(|| black_box(smoothing_ratio(&p, &s, &w).unwrap()))
    });
}

fn stage_two_fit(c: &mut Criterion) {
    let (s, w) = desk_sample();
    let s1 = build_s1_estimates(&fake_draws(200, s.len()), &s, &w, 3).unwrap();
    let model = stage2_model(&s1, s.areas(), &Stage2Spec::default()).unwrap();
    let cfg = SamplerConfig { chains: 2, warmup: 200, draws: 200, ..Default::default() };
    let mut group = c.benchmark_group("hmc");
    group.sample_size(10);
    group.bench_function("stage2_iid_2x400", |b| {
        b.iter_batched(|| cfg.clone(), |cfg| black_box(sample(&model, &cfg).unwrap()), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, stage_one_density, s1_aggregation, stage_two_fit);
criterion_main!(benches);
