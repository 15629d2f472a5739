use std::hint::black_box;

use aligan_core::active::{query_qbc, Pool, Predictor};
use aligan_core::geodata::{synthesize, SyntheticConfig};
use aligan_core::losses::{generator_sensitivity, SensitivityMode};
use aligan_core::model::{Generator, ModelConfig};
use aligan_core::par::{self, Execution};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn sensitivity(c: &mut Criterion) {
    let survey = synthesize(&SyntheticConfig::default()).unwrap();
    let data: Vec<_> = survey.initial_samples().unwrap().into_iter().take(64).collect();
    let gen = Generator::init(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut group = c.benchmark_group("fisher_sensitivity");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generator_sensitivity(black_box(&data), &gen, SensitivityMode::Fisher, exec).unwrap())
        });
    }
    group.finish();
}

fn committee_scoring(c: &mut Criterion) {
    let survey = synthesize(&SyntheticConfig::full_scale()).unwrap();
    let pool = Pool::from_survey(&survey).unwrap();
    let model = ModelConfig::default();
    let gens: Vec<Generator> = (0..10)
        .map(|k| Generator::init(&model, &mut ChaCha8Rng::seed_from_u64(k)).unwrap())
        .collect();
    let members: Vec<&dyn Predictor> = gens.iter().map(|g| g as &dyn Predictor).collect();
    let mut group = c.benchmark_group("qbc_scoring_140");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| query_qbc(black_box(&pool), &members, exec).unwrap())
        });
    }
    group.finish();
}

fn map_kernel(c: &mut Criterion) {
    let items: Vec<u64> = (0..64).collect();
    let work = |&k: &u64| (0..20_000u64).fold(k, |acc, i| acc.wrapping_mul(6364136223846793005).wrapping_add(i));
    let mut group = c.benchmark_group("par_map_64");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map(exec, black_box(&items), work))
        });
    }
    group.finish();
}

criterion_group!(benches, sensitivity, committee_scoring, map_kernel);
criterion_main!(benches);
