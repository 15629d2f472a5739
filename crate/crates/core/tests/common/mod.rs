#![allow(dead_code)]

use aligan_core::active::Strategy;
use aligan_core::autodiff::{NodeId, ParamSet};
use aligan_core::geodata::{FreshnessTag, LabeledSample, SyntheticConfig};
use aligan_core::harness::ExperimentConfig;
use aligan_core::losses::{LossGraph, LossSpec, SensitivityVector};
use aligan_core::model::{Binding, Discriminator, Generator, ModelConfig, SampleIndex};
use aligan_core::par::Execution;
use aligan_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mini() -> ModelConfig {
    ModelConfig {
        d_x: 6,
        d_y: 3,
        heads: 2,
        d_k: 2,
        gen_hidden: vec![5, 4],
        disc_hidden: vec![5, 4],
    }
}

pub fn nets(cfg: &ModelConfig, seed: u64) -> (Generator, Discriminator) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Generator::init(cfg, &mut rng).unwrap();
    let d = Discriminator::init(cfg, &mut rng).unwrap();
    (g, d)
}

pub fn simplex(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut y: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= s);
    y
}

/// Random samples with alternating freshness tags.
pub fn batch(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| LabeledSample {
            index: SampleIndex(3 * i + 1),
            chainage: i as f64,
            location_id: i as u32,
            round: 0,
            tau: if i % 2 == 0 {
                FreshnessTag::Original
            } else {
                FreshnessTag::Fresh
            },
            features: (0..cfg.d_x).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: simplex(&mut rng, cfg.d_y),
        })
        .collect()
}

pub fn random_like(params: &ParamSet, seed: u64, scale: f64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    for (_, t) in out.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
    }
    out
}

pub fn perturbed(params: &ParamSet, seed: u64, scale: f64) -> ParamSet {
    let noise = random_like(params, seed, scale);
    let mut out = params.clone();
    for (name, t) in out.iter_mut() {
        let n = noise.get(name).unwrap().data();
        t.data_mut().iter_mut().zip(n).for_each(|(v, e)| *v += e);
    }
    out
}

pub fn positive_alpha(params: &ParamSet, seed: u64) -> SensitivityVector {
    let mut a = random_like(params, seed, 1.0);
    for (_, t) in a.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.1);
    }
    SensitivityVector(a)
}

/// A loss expressed on a graph over trainable copies of both networks.
pub type LossFn<'a> = dyn Fn(&mut LossGraph<'_>, &Generator, &Discriminator) -> Result<NodeId> + 'a;

fn eval(batch: &[LabeledSample], g: &Generator, d: &Discriminator, f: &LossFn<'_>) -> f64 {
    let spec = LossSpec {
        gen: Binding::Trainable,
        disc: Some(Binding::Trainable),
    };
    let mut lg = LossGraph::build(batch, g, d, spec).unwrap();
    let id = f(&mut lg, g, d).unwrap();
    lg.value(id).unwrap()
}

/// Worst per-tensor relative error `|fd - an| / (|fd| + |an|)` (norms over
/// the tensor) between reverse-mode and central-difference gradients.
pub fn fd_check(
    batch: &[LabeledSample],
    gen: &Generator,
    disc: &Discriminator,
    f: &LossFn<'_>,
    h: f64,
) -> (f64, String) {
    let spec = LossSpec {
        gen: Binding::Trainable,
        disc: Some(Binding::Trainable),
    };
    let mut lg = LossGraph::build(batch, gen, disc, spec).unwrap();
    let out = f(&mut lg, gen, disc).unwrap();
    let grads = lg.graph.backward(out).unwrap();
    let mut worst = (0.0, String::new());
    for (name, an) in grads.iter() {
        let mut diff2 = 0.0;
        let mut norm_fd = 0.0;
        let mut norm_an = 0.0;
        for k in 0..an.len() {
            let shift = |delta: f64| {
                let (mut g, mut d) = (gen.clone(), disc.clone());
                let set = if name.starts_with(Generator::PREFIX) {
                    g.params_mut()
                } else {
                    d.params_mut()
                };
                set.get_mut(name).unwrap().data_mut()[k] += delta;
                eval(batch, &g, &d, f)
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let a = an.data()[k];
            diff2 += (fd - a) * (fd - a);
            norm_fd += fd * fd;
            norm_an += a * a;
        }
        let denom = norm_fd.sqrt() + norm_an.sqrt();
        let rel = if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 };
        if rel > worst.0 {
            worst = (rel, name.to_string());
        }
    }
    worst
}

/// Discriminator whose freshness head outputs exactly 1 when `x[0] > 0`
/// and exactly 0 otherwise.
pub fn freshness_oracle(cfg: &ModelConfig) -> Discriminator {
    let (_, mut d) = nets(cfg, 0);
    for (name, t) in d.params_mut().iter_mut() {
        t.data_mut().fill(0.0);
        let cols = t.shape().last().copied().unwrap_or(1);
        match name {
            "d.fc0.w" | "d.fc1.w" => t.data_mut()[0] = 1.0,
            "d.out.w" => t.data_mut()[cols] = 2000.0,
            "d.out.b" => t.data_mut()[1] = -1000.0,
            _ => {}
        }
    }
    d
}

/// Sets `x[0]` to `+1` for fresh samples and `-1` for original ones.
pub fn mark_freshness(batch: &mut [LabeledSample]) {
    for s in batch {
        s.features[0] = if s.tau == FreshnessTag::Fresh { 1.0 } else { -1.0 };
    }
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Three strategies, two rounds, two repeats on a 40 m tunnel.
pub fn tiny_experiment() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        strategies: vec![Strategy::Random, Strategy::Entropy, Strategy::Committee],
        rounds: 2,
        repeats: 2,
        seed: 5,
        committee_size: 2,
        execution: Execution::Parallel,
        ..ExperimentConfig::default()
    };
    c.data.synthetic = SyntheticConfig {
        tunnel_length: 40.0,
        train_locations: 12,
        pool_locations: 4,
        d_x: 6,
        d_y: 3,
        layers: 3,
        ..SyntheticConfig::default()
    };
    c.model = mini();
    c.train.pretrain.iterations = 20;
    c.train.initial.iterations = 10;
    c.train.incremental.iterations = 5;
    c
}
