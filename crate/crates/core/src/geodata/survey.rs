use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_fractions, synth_profile, synth_records, DrillLocation, FreshnessTag, GeologyProfile, LabeledSample,
    LocationRole, OperationalRecord, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::model::SampleIndex;

/// Offsets of the five pool records around a drill location, in meters.
pub const POOL_OFFSETS: [f64; 5] = [-0.3, -0.15, 0.0, 0.15, 0.3];

/// Drilled labels read from file, sorted by chainage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTable {
    pub chainages: Vec<f64>,
    pub labels: Vec<Vec<f64>>,
}

impl LabelTable {
    pub fn new(mut rows: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Data(format!("duplicate label at chainage {}", w[0].0)));
            }
        }
        let (chainages, labels) = rows.into_iter().unzip();
        Ok(Self { chainages, labels })
    }

    fn lookup(&self, chainage: f64) -> Option<&[f64]> {
        let tol = 1e-9 * chainage.abs().max(1.0);
        let k = self.chainages.partition_point(|c| *c < chainage - tol);
        match self.chainages.get(k) {
            Some(c) if (c - chainage).abs() <= tol => Some(&self.labels[k]),
            _ => None,
        }
    }
}

/// Source of ground-truth fractions.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    Synthetic(GeologyProfile),
    Table(LabelTable),
}

impl Oracle {
    pub fn drill(&self, chainage: f64) -> Result<Vec<f64>> {
        match self {
            Oracle::Synthetic(p) => {
                if !p.contains(chainage) {
                    return Err(Error::Data(format!(
                        "chainage {chainage} lies outside the tunnel [0, {}]",
                        p.length
                    )));
                }
                Ok(p.fractions_at(chainage))
            }
            Oracle::Table(t) => t
                .lookup(chainage)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Data(format!("no drilled label at chainage {chainage}"))),
        }
    }
}

/// Ground-truth fractions at `chainage`.
pub fn drill(oracle: &Oracle, chainage: f64) -> Result<Vec<f64>> {
    oracle.drill(chainage)
}

/// Records, drill locations and the oracle for one tunnel.
#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    /// Sorted by chainage; position is the sample index.
    pub records: Vec<OperationalRecord>,
    /// Sorted by chainage; ids are unique.
    pub locations: Vec<DrillLocation>,
    pub oracle: Oracle,
    /// Half-width of the labeling window in meters.
    pub window: f64,
}

impl Survey {
    pub fn d_x(&self) -> usize {
        self.records.first().map_or(0, |r| r.features.len())
    }

    pub fn location(&self, id: u32) -> Result<&DrillLocation> {
        self.locations
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::Data(format!("unknown drill location {id}")))
    }

    pub fn locations_with(&self, role: LocationRole) -> impl Iterator<Item = &DrillLocation> {
        self.locations.iter().filter(move |l| l.role == role)
    }

    /// Drills location `id` and labels the records in its window.
    pub fn label_location(&self, id: u32, round: u32, tau: FreshnessTag) -> Result<Vec<LabeledSample>> {
        let loc = self.location(id)?;
        label_window(&self.records, loc, &self.oracle, self.window, round, tau)
    }

    /// Labeled windows of every training location, tagged as original data.
    pub fn initial_samples(&self) -> Result<Vec<LabeledSample>> {
        let mut out = Vec::new();
        for loc in self.locations_with(LocationRole::Train) {
            out.extend(label_window(
                &self.records,
                loc,
                &self.oracle,
                self.window,
                0,
                FreshnessTag::Original,
            )?);
        }
        Ok(out)
    }
}

/// Pairs every record within `window` of the location with the oracle's
/// fractions at the record's own chainage.
pub fn label_window(
    records: &[OperationalRecord],
    location: &DrillLocation,
    oracle: &Oracle,
    window: f64,
    round: u32,
    tau: FreshnessTag,
) -> Result<Vec<LabeledSample>> {
    let tol = 1e-9 * location.chainage.abs().max(1.0);
    let lo = location.chainage - window - tol;
    let hi = location.chainage + window + tol;
    let start = records.partition_point(|r| r.chainage < lo);
    let mut out = Vec::new();
    for (k, r) in records.iter().enumerate().skip(start) {
        if r.chainage > hi {
            break;
        }
        let label = oracle.drill(r.chainage)?;
        check_fractions(&label, 1e-6)?;
        out.push(LabeledSample {
            index: SampleIndex(k),
            chainage: r.chainage,
            location_id: location.id,
            round,
            tau,
            features: r.features.clone(),
            label,
        });
    }
    if out.is_empty() {
        log::warn!(
            "no records within {window} m of drill location {} at {}",
            location.id,
            location.chainage
        );
    }
    Ok(out)
}

/// One unlabeled record in the active-learning pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCandidate {
    pub location_id: u32,
    pub offset: f64,
    pub chainage: f64,
    pub index: SampleIndex,
    pub features: Vec<f64>,
}

fn nearest_record(records: &[OperationalRecord], target: f64) -> usize {
    let k = records.partition_point(|r| r.chainage < target);
    if k == 0 {
        return 0;
    }
    if k == records.len() {
        return k - 1;
    }
    if target - records[k - 1].chainage <= records[k].chainage - target {
        k - 1
    } else {
        k
    }
}

/// Five candidates per pool location, one per offset. Each offset snaps to
/// the nearest record; when that record is already taken by the same
/// location, the next unused record in the offset's direction is used.
pub fn build_pool(survey: &Survey) -> Result<Vec<PoolCandidate>> {
    let records = &survey.records;
    if records.is_empty() {
        return Err(Error::EmptyDataset("records"));
    }
    let mut out = Vec::new();
    for loc in survey.locations_with(LocationRole::Pool) {
        let mut taken: Vec<usize> = Vec::with_capacity(POOL_OFFSETS.len());
        for &offset in &POOL_OFFSETS {
            let mut k = nearest_record(records, loc.chainage + offset);
            let step: isize = if offset < 0.0 { -1 } else { 1 };
            let mut tries = 0;
            while taken.contains(&k) {
                let next = k as isize + step;
                if next < 0 || next as usize >= records.len() || tries > records.len() {
                    return Err(Error::Data(format!(
                        "not enough records around pool location {} for five distinct candidates",
                        loc.id
                    )));
                }
                k = next as usize;
                tries += 1;
            }
            taken.push(k);
            out.push(PoolCandidate {
                location_id: loc.id,
                offset,
                chainage: records[k].chainage,
                index: SampleIndex(k),
                features: records[k].features.clone(),
            });
        }
    }
    Ok(out)
}

/// Stratified drill locations snapped to the record grid, with a seeded
/// random choice of which locations form the pool.
fn place_locations(config: &SyntheticConfig, records: &[OperationalRecord]) -> Vec<DrillLocation> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x27BB_2EE6_87B0_B0FD);
    let n = config.locations();
    let segment = config.tunnel_length / n as f64;
    let margin = config.window + config.spacing;
    let last = records.len() - 1;
    let chainages: Vec<f64> = (0..n)
        .map(|i| {
            let c = segment * i as f64 + rng.random_range(margin..segment - margin);
            let k = ((c / config.spacing).round() as usize).min(last);
            records[k].chainage
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut roles = vec![LocationRole::Train; n];
    for &i in order.iter().take(config.pool_locations) {
        roles[i] = LocationRole::Pool;
    }
    chainages
        .into_iter()
        .zip(roles)
        .enumerate()
        .map(|(i, (chainage, role))| DrillLocation {
            id: i as u32,
            chainage,
            role,
        })
        .collect()
}

/// The whole synthetic pipeline: profile, records and drill locations.
pub fn synthesize(config: &SyntheticConfig) -> Result<Survey> {
    let profile = synth_profile(config)?;
    let records = synth_records(&profile, config)?;
    let locations = place_locations(config, &records);
    Ok(Survey {
        records,
        locations,
        oracle: Oracle::Synthetic(profile),
        window: config.window,
    })
}
