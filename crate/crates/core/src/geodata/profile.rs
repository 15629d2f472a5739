//! Layered synthetic stratigraphy.
//!
//! The drilled column `[0, H]` below the tunnel alignment is cut by a stack
//! of boundary surfaces. Each boundary depth is a base level plus a few
//! sinusoids along chainage, and every fault shifts all boundaries by its
//! throw across a narrow transition. Boundaries are clipped to the column
//! and forced to be monotone with depth, so layers pinch out where surfaces
//! cross. The thickness fraction of a rock-soil type is the summed
//! thickness of its layers divided by `H`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::SyntheticConfig;
use crate::error::{Error, Result};

/// A rock-soil type with its physical and mechanical indicators: unit
/// weight (kN/m^3), friction angle (deg), elastic modulus (MPa), Poisson
/// ratio, lateral pressure coefficient, permeability (m/d) and bearing
/// capacity (kPa), plus how often it was met in the drilling campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RockSoilType {
    pub code: &'static str,
    pub unit_weight: f64,
    pub friction_angle: f64,
    pub elastic_modulus: f64,
    pub poisson: f64,
    pub lateral_coeff: f64,
    pub permeability: f64,
    pub bearing_capacity: f64,
    pub occurrences: u32,
}

const fn rock(code: &'static str, ind: [f64; 7], occurrences: u32) -> RockSoilType {
    RockSoilType {
        code,
        unit_weight: ind[0],
        friction_angle: ind[1],
        elastic_modulus: ind[2],
        poisson: ind[3],
        lateral_coeff: ind[4],
        permeability: ind[5],
        bearing_capacity: ind[6],
        occurrences,
    }
}

/// The eleven rock-soil types of the reference subway project.
pub const CATALOG: [RockSoilType; 11] = [
    rock("2-3", [17.0, 4.5, 4.0, 0.40, 0.65, 0.003, 10.0], 7),
    rock("4-2", [19.0, 15.0, 15.0, 0.32, 0.50, 0.005, 25.0], 3),
    rock("4-4", [18.0, 8.0, 4.5, 0.42, 0.70, 0.005, 18.0], 2),
    rock("4-10", [20.5, 32.0, 25.0, 0.22, 0.35, 20.0, 55.0], 9),
    rock("7-2-1", [18.5, 20.5, 18.0, 0.30, 0.45, 0.5, 22.0], 9),
    rock("7-2-2", [18.5, 22.5, 20.0, 0.28, 0.55, 0.5, 28.0], 36),
    rock("9-1", [19.5, 25.0, 40.0, 0.25, 0.0, 0.8, 45.0], 9),
    rock("9-2-1", [20.5, 27.5, 90.0, 0.25, 0.0, 2.5, 60.0], 5),
    rock("12-1", [19.5, 27.0, 40.0, 0.25, 0.0, 1.0, 45.0], 6),
    rock("12-2-1", [20.5, 30.0, 90.0, 0.25, 0.0, 2.5, 60.0], 1),
    rock("12-3", [24.5, 55.0, 10000.0, 0.22, 0.0, 1.5, 380.0], 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub wavelength: f64,
    pub phase: f64,
}

/// Bottom surface of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub base_depth: f64,
    pub waves: Vec<Wave>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub chainage: f64,
    /// Downward shift of every boundary past the fault, in meters.
    pub throw: f64,
    /// Width of the transition zone in meters.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeologyProfile {
    pub seed: u64,
    pub length: f64,
    pub column_height: f64,
    pub d_y: usize,
    /// Rock-soil type of each layer, top to bottom.
    pub layer_types: Vec<usize>,
    /// One fewer than the layers; the last layer ends at the column base.
    pub boundaries: Vec<Boundary>,
    pub faults: Vec<Fault>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl GeologyProfile {
    fn fault_shift(&self, chainage: f64) -> f64 {
        self.faults
            .iter()
            .map(|f| f.throw * smoothstep((chainage - f.chainage) / f.width + 0.5))
            .sum()
    }

    /// Depth of boundary `k` at `chainage`, before clipping.
    pub fn boundary_depth(&self, k: usize, chainage: f64) -> f64 {
        let b = &self.boundaries[k];
        let waves: f64 = b
            .waves
            .iter()
            .map(|w| w.amplitude * (TAU * chainage / w.wavelength + w.phase).sin())
            .sum();
        b.base_depth + waves + self.fault_shift(chainage)
    }

    /// Thickness fractions of every rock-soil type at `chainage`.
    pub fn fractions_at(&self, chainage: f64) -> Vec<f64> {
        let h = self.column_height;
        let mut out = vec![0.0; self.d_y];
        let mut top = 0.0;
        let last = self.layer_types.len() - 1;
        for (k, &ty) in self.layer_types.iter().enumerate() {
            let bottom = if k == last {
                h
            } else {
                self.boundary_depth(k, chainage).clamp(top, h)
            };
            out[ty] += (bottom - top) / h;
            top = bottom;
        }
        out
    }

    pub fn contains(&self, chainage: f64) -> bool {
        (0.0..=self.length).contains(&chainage)
    }
}

/// Draws a layered profile from `config`; the same config always yields
/// the same profile.
pub fn synth_profile(config: &SyntheticConfig) -> Result<GeologyProfile> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let h = config.column_height;
    let length = config.tunnel_length;

    let weights: Vec<f64> = if config.d_y == CATALOG.len() {
        CATALOG.iter().map(|r| f64::from(r.occurrences)).collect()
    } else {
        vec![1.0; config.d_y]
    };
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut layer_types: Vec<usize> = Vec::with_capacity(config.layers);
    while layer_types.len() < config.layers {
        let ty = pick.sample(&mut rng);
        if config.d_y > 1 && layer_types.last() == Some(&ty) {
            continue;
        }
        layer_types.push(ty);
    }

    // Base levels spread beyond the column so faults and waves bring
    // deeper and shallower layers into view.
    let n_b = config.layers - 1;
    let (lo, hi) = (-0.3 * h, 1.3 * h);
    let max_wavelength = (0.6 * length).clamp(10.0, 150.0);
    let boundaries = (0..n_b)
        .map(|k| {
            let slot = (hi - lo) / n_b as f64;
            let base_depth = lo + slot * (k as f64 + rng.random_range(0.25..0.75));
            let waves = (0..3)
                .map(|_| Wave {
                    amplitude: rng.random_range(0.03..0.15) * h,
                    wavelength: rng.random_range(0.15..1.0) * max_wavelength,
                    phase: rng.random_range(0.0..TAU),
                })
                .collect();
            Boundary { base_depth, waves }
        })
        .collect();

    let expected = config.fault_rate * length / 100.0;
    let n_faults = if expected > 0.0 {
        Poisson::new(expected)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let throw = Normal::new(0.0, 0.25 * h).map_err(|e| Error::Config(e.to_string()))?;
    let mut faults: Vec<Fault> = (0..n_faults)
        .map(|_| Fault {
            chainage: rng.random_range(0.0..length),
            throw: throw.sample(&mut rng),
            width: 0.4,
        })
        .collect();
    faults.sort_by(|a, b| a.chainage.total_cmp(&b.chainage));

    Ok(GeologyProfile {
        seed: config.seed,
        length,
        column_height: h,
        d_y: config.d_y,
        layer_types,
        boundaries,
        faults,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_are_normalized_everywhere() {
        let cfg = SyntheticConfig::default();
        let p = synth_profile(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let c = rng.random_range(0.0..cfg.tunnel_length);
            let f = p.fractions_at(c);
            assert!(f.iter().all(|&v| v >= 0.0));
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_profile() {
        let cfg = SyntheticConfig::default();
        assert_eq!(synth_profile(&cfg).unwrap(), synth_profile(&cfg).unwrap());
        let other = SyntheticConfig { seed: 7, ..cfg.clone() };
        assert_ne!(synth_profile(&cfg).unwrap(), synth_profile(&other).unwrap());
    }

    #[test]
    fn single_layer_is_one_hot() {
        let cfg = SyntheticConfig {
            layers: 1,
            ..SyntheticConfig::default()
        };
        let p = synth_profile(&cfg).unwrap();
        let ty = p.layer_types[0];
        for c in [0.0, 13.7, 100.0, 199.9] {
            let f = p.fractions_at(c);
            assert_eq!(f[ty], 1.0);
            assert_eq!(f.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn geology_varies_along_the_tunnel() {
        let p = synth_profile(&SyntheticConfig::default()).unwrap();
        let a = p.fractions_at(10.0);
        let b = p.fractions_at(150.0);
        assert_ne!(a, b);
        let mut seen = vec![false; p.d_y];
        for k in 0..2000 {
            for (t, v) in p.fractions_at(k as f64 * 0.1).iter().enumerate() {
                if *v > 0.0 {
                    seen[t] = true;
                }
            }
        }
        assert!(seen.iter().filter(|s| **s).count() >= 3);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SyntheticConfig {
            spacing: -1.0,
            ..SyntheticConfig::default()
        };
        assert!(matches!(synth_profile(&cfg), Err(Error::Config(_))));
    }
}
