//! Ground truth, operational records and dataset plumbing.
//!
//! A [`Survey`] bundles a chainage-ordered record stream, the drill
//! locations along the tunnel and an [`Oracle`] that returns the true
//! thickness fractions at any chainage. Surveys come either from the
//! synthetic generator ([`synthesize`]) or from CSV files
//! ([`csvio::load_survey`]).

pub mod csvio;
mod dataset;
mod profile;
mod records;
mod survey;

use serde::{Deserialize, Serialize};

pub use dataset::{rehearsal_merge, split_dataset, Normalizer, Split};
pub use profile::{synth_profile, Boundary, Fault, GeologyProfile, RockSoilType, Wave, CATALOG};
pub use records::{synth_records, FeatureMap};
pub use survey::{
    build_pool, drill, label_window, synthesize, LabelTable, Oracle, PoolCandidate, Survey, POOL_OFFSETS,
};

use crate::error::{Error, Result};
use crate::model::SampleIndex;

/// Whether a training sample arrived through a query round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FreshnessTag {
    Original,
    Fresh,
}

impl FreshnessTag {
    /// The regression target of the freshness head: 0 or 1.
    pub fn value(self) -> f64 {
        match self {
            FreshnessTag::Original => 0.0,
            FreshnessTag::Fresh => 1.0,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(FreshnessTag::Original),
            1 => Some(FreshnessTag::Fresh),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            FreshnessTag::Original => 0,
            FreshnessTag::Fresh => 1,
        }
    }
}

/// One row of TBM sensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalRecord {
    pub chainage: f64,
    pub features: Vec<f64>,
}

/// A record paired with the drilled geology at its chainage.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub index: SampleIndex,
    pub chainage: f64,
    pub location_id: u32,
    /// Query round that produced the sample (0 for the original data).
    pub round: u32,
    pub tau: FreshnessTag,
    pub features: Vec<f64>,
    pub label: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationRole {
    /// Labeled up front; split into train/validation/test.
    Train,
    /// Held back as query candidates.
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillLocation {
    pub id: u32,
    pub chainage: f64,
    pub role: LocationRole,
}

/// Checks that `p` is a probability vector within `tol`.
pub fn check_fractions(p: &[f64], tol: f64) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < -tol) {
        return Err(Error::Data(format!("fractions must be finite and nonnegative: {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Parameters of the synthetic tunnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Tunnel length in meters.
    pub tunnel_length: f64,
    /// Distance between consecutive records in meters.
    pub spacing: f64,
    pub train_locations: usize,
    pub pool_locations: usize,
    /// Stationary standard deviation of the AR(1) sensor noise.
    pub noise: f64,
    /// Lag-one autocorrelation of the sensor noise.
    pub noise_rho: f64,
    pub d_x: usize,
    pub d_y: usize,
    /// Stacked layers in the drilled column, before pinch-outs.
    pub layers: usize,
    /// Height of the drilled column in meters.
    pub column_height: f64,
    /// Expected faults per 100 m.
    pub fault_rate: f64,
    /// Half-width of the labeling window in meters.
    pub window: f64,
    /// Share of training locations held out for testing.
    pub test_fraction: f64,
    /// Share of training samples held out for validation.
    pub validation_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            tunnel_length: 200.0,
            spacing: 0.05,
            train_locations: 60,
            pool_locations: 28,
            noise: 0.1,
            noise_rho: 0.7,
            d_x: 69,
            d_y: 11,
            layers: 8,
            column_height: 20.0,
            fault_rate: 1.5,
            window: 0.3,
            test_fraction: 0.25,
            validation_fraction: 0.25,
        }
    }
}

impl SyntheticConfig {
    /// The default 88 drill locations along a 2 km tunnel.
    pub fn full_scale() -> Self {
        Self {
            tunnel_length: 2000.0,
            ..Self::default()
        }
    }

    pub fn locations(&self) -> usize {
        self.train_locations + self.pool_locations
    }

    pub fn record_count(&self) -> usize {
        (self.tunnel_length / self.spacing).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic data: {m}")));
        if !(self.tunnel_length > 0.0) || !(self.spacing > 0.0) {
            return bad("tunnel length and spacing must be positive");
        }
        if self.spacing > self.tunnel_length {
            return bad("spacing exceeds tunnel length");
        }
        if self.d_x == 0 || self.d_y == 0 || self.layers == 0 {
            return bad("d_x, d_y and layers must be positive");
        }
        if self.train_locations == 0 {
            return bad("at least one training location is required");
        }
        if !(self.window > 0.0) || !(self.column_height > 0.0) {
            return bad("window and column height must be positive");
        }
        let segment = self.tunnel_length / self.locations() as f64;
        if segment < 2.0 * self.window + 2.0 * self.spacing {
            return bad("drill locations are too dense for non-overlapping windows");
        }
        if !(0.0..1.0).contains(&self.test_fraction) || !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("split fractions must lie in [0, 1)");
        }
        if !(self.noise >= 0.0) || !(-1.0 < self.noise_rho && self.noise_rho < 1.0) {
            return bad("noise must be >= 0 and |rho| < 1");
        }
        if !(self.fault_rate >= 0.0) {
            return bad("fault rate must be >= 0");
        }
        Ok(())
    }
}
