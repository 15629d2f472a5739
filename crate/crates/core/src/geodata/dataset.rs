use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FreshnessTag, LabeledSample};
use crate::error::{Error, Result};

/// Share of the previous round's data kept by [`rehearsal_merge`].
pub const REHEARSAL_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Holds out `round(test_fraction * locations)` whole drill locations for
/// testing, then moves `round(validation_fraction * n)` of the remaining
/// samples to validation. Each part stays in chainage order.
pub fn split_dataset(
    samples: Vec<LabeledSample>,
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("labeled samples"));
    }
    if !(0.0..1.0).contains(&test_fraction) || !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config("split fractions must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut locations: Vec<u32> = samples
        .iter()
        .map(|s| s.location_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    locations.shuffle(&mut rng);
    let n_test = (test_fraction * locations.len() as f64).round() as usize;
    let test_ids: BTreeSet<u32> = locations[..n_test].iter().copied().collect();

    let (mut test, rest): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| test_ids.contains(&s.location_id));
    let n_val = (validation_fraction * rest.len() as f64).round() as usize;
    let held: BTreeSet<usize> = sample(&mut rng, rest.len(), n_val).into_iter().collect();
    let (mut validation, mut train) = (Vec::new(), Vec::new());
    for (k, s) in rest.into_iter().enumerate() {
        if held.contains(&k) {
            validation.push(s);
        } else {
            train.push(s);
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("training split"));
    }
    let by_chainage = |v: &mut Vec<LabeledSample>| v.sort_by(|a, b| a.chainage.total_cmp(&b.chainage));
    by_chainage(&mut train);
    by_chainage(&mut validation);
    by_chainage(&mut test);
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Keeps a random `floor(0.8 n)` of `prev` in their original order and
/// appends `add` tagged as fresh. Retained samples keep their tags.
pub fn rehearsal_merge<R: Rng + ?Sized>(
    prev: &[LabeledSample],
    add: &[LabeledSample],
    rng: &mut R,
) -> Vec<LabeledSample> {
    let keep = (REHEARSAL_FRACTION * prev.len() as f64).floor() as usize;
    let mut kept: Vec<usize> = sample(rng, prev.len(), keep).into_vec();
    kept.sort_unstable();
    let mut out: Vec<LabeledSample> = kept.into_iter().map(|k| prev[k].clone()).collect();
    out.extend(add.iter().cloned().map(|mut s| {
        s.tau = FreshnessTag::Fresh;
        s
    }));
    out
}

/// Per-feature z-scoring fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for r in rows {
            if n == 0 {
                sum = vec![0.0; r.len()];
                sq = vec![0.0; r.len()];
            } else if r.len() != sum.len() {
                return Err(Error::Data(format!(
                    "feature width {} differs from {}",
                    r.len(),
                    sum.len()
                )));
            }
            for (j, v) in r.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset("normalizer rows"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / nf - m * m).max(0.0).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_samples(&self, samples: &mut [LabeledSample]) {
        for s in samples {
            s.features = self.apply(&s.features);
        }
    }
}
