use coldlab::oracle::{DataDistribution, DataSource};
use coldlab::rng::seeded;
use coldlab::sampling::{sample_batch, sampler_log_prob};
use coldlab::{ConditioningInput, NeuralConfig, NeuralPolicy, SamplerSpec, TabularPolicy};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn specs() -> [(&'static str, SamplerSpec); 3] {
    [
        ("temperature", SamplerSpec::temperature(1.0)),
        ("nucleus", SamplerSpec::nucleus(0.95)),
        ("mixture", SamplerSpec::mixture(0.9, 0.95, 0.2)),
    ]
}

fn batch(c: &mut Criterion) {
    let data = DataDistribution::synthetic_task();
    let tab = TabularPolicy::random(data.vocab(), data.max_len(), 0, 1.0, &mut seeded(1)).unwrap();
    let cfg = NeuralConfig { embed_dim: 8, hidden_dim: 16 };
    let neural = NeuralPolicy::random(data.vocab(), data.max_len(), cfg, &mut seeded(2)).unwrap();
    let inputs = vec![ConditioningInput::empty(); 256];
    let mut g = c.benchmark_group("sample_batch_256");
    for (name, spec) in specs() {
        g.bench_with_input(BenchmarkId::new("tabular", name), &spec, |b, s| {
            b.iter(|| sample_batch(&tab, &inputs, s, black_box(7), 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("neural", name), &spec, |b, s| {
            b.iter(|| sample_batch(&neural, &inputs, s, black_box(7), 1).unwrap())
        });
    }
    g.finish();
}

fn density(c: &mut Criterion) {
    let data = DataDistribution::synthetic_task();
    let tab = TabularPolicy::random(data.vocab(), data.max_len(), 0, 1.0, &mut seeded(1)).unwrap();
    let x = ConditioningInput::empty();
    let trajs = sample_batch(&tab, &vec![x.clone(); 64], &SamplerSpec::temperature(1.0), 3, 1).unwrap();
    let mut g = c.benchmark_group("sampler_log_prob_64");
    for (name, spec) in specs() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, s| {
            b.iter(|| trajs.iter().map(|t| sampler_log_prob(&tab, &x, &t.y, s).unwrap()).sum::<f64>())
        });
    }
    g.finish();
}

criterion_group!(benches, batch, density);
criterion_main!(benches);
