use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GeologyProfile, OperationalRecord, SyntheticConfig};
use crate::error::{Error, Result};

/// Fixed nonlinear map from thickness fractions to sensor attributes:
/// `f_j = tanh(gain_j * (sum_t lift[j][t] y_t + bias_j))`.
///
/// The lift gives every rock-soil type its own signature column, so the
/// fractions can be read back from noise-free attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub d_x: usize,
    pub d_y: usize,
    /// Row-major `d_x x d_y`.
    pub lift: Vec<f64>,
    pub bias: Vec<f64>,
    pub gain: Vec<f64>,
}

impl FeatureMap {
    pub fn from_config(config: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC2B2_AE3D_27D4_EB4F);
        let (d_x, d_y) = (config.d_x, config.d_y);
        let lift = (0..d_x * d_y).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let bias = (0..d_x).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let gain = (0..d_x).map(|_| rng.random_range(0.5..1.5)).collect();
        Self {
            d_x,
            d_y,
            lift,
            bias,
            gain,
        }
    }

    pub fn apply(&self, fractions: &[f64]) -> Vec<f64> {
        (0..self.d_x)
            .map(|j| {
                let row = &self.lift[j * self.d_y..(j + 1) * self.d_y];
                let z: f64 = row.iter().zip(fractions).map(|(a, y)| a * y).sum();
                (self.gain[j] * (z + self.bias[j])).tanh()
            })
            .collect()
    }
}

/// Records at chainages `0, s, 2s, ...` below the tunnel length. Each
/// attribute is the feature map of the local geology plus stationary AR(1)
/// noise that runs along the chainage.
pub fn synth_records(profile: &GeologyProfile, config: &SyntheticConfig) -> Result<Vec<OperationalRecord>> {
    config.validate()?;
    if profile.d_y != config.d_y {
        return Err(Error::Config(format!(
            "profile has {} types but the config asks for {}",
            profile.d_y, config.d_y
        )));
    }
    let map = FeatureMap::from_config(config);
    let n = config.record_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1656_67B1_9E37_79F9);
    let rho = config.noise_rho;
    let innovation =
        Normal::new(0.0, config.noise * (1.0 - rho * rho).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let stationary = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut noise: Vec<f64> = (0..config.d_x).map(|_| stationary.sample(&mut rng)).collect();

    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let chainage = k as f64 * config.spacing;
        let mut features = map.apply(&profile.fractions_at(chainage));
        if k > 0 {
            for e in noise.iter_mut() {
                *e = rho * *e + innovation.sample(&mut rng);
            }
        }
        if config.noise > 0.0 {
            for (f, e) in features.iter_mut().zip(&noise) {
                *f += e;
            }
        }
        out.push(OperationalRecord { chainage, features });
    }
    Ok(out)
}
