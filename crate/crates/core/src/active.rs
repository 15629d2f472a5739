//! Query pool, query strategies and the QBC committee.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{build_pool, check_fractions, LabeledSample, PoolCandidate, Survey};
use crate::model::{Discriminator, Generator, ModelConfig, SampleIndex};
use crate::par::{self, Execution};
use crate::training::{incremental_train, initial_train, pretrain_generator, AnchorState, TrainConfig};

/// Unlabeled candidates, five per drill location. Querying any candidate
/// removes its whole location.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    candidates: Vec<PoolCandidate>,
    queried: BTreeSet<u32>,
}

impl Pool {
    pub fn new(mut candidates: Vec<PoolCandidate>) -> Self {
        candidates.sort_by(|a, b| a.chainage.total_cmp(&b.chainage));
        Self {
            candidates,
            queried: BTreeSet::new(),
        }
    }

    pub fn from_survey(survey: &Survey) -> Result<Self> {
        Ok(Self::new(build_pool(survey)?))
    }

    /// Remaining candidates in chainage order.
    pub fn candidates(&self) -> &[PoolCandidate] {
        &self.candidates
    }

    pub fn candidates_mut(&mut self) -> &mut [PoolCandidate] {
        &mut self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Distinct drill locations still in the pool.
    pub fn location_count(&self) -> usize {
        self.candidates
            .iter()
            .map(|c| c.location_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn queried(&self) -> &BTreeSet<u32> {
        &self.queried
    }

    /// Drops every candidate of `location_id`; returns how many left.
    pub fn remove_location(&mut self, location_id: u32) -> Result<usize> {
        if !self.queried.insert(location_id) {
            return Err(Error::InvalidArgument(format!(
                "location {location_id} was already queried"
            )));
        }
        let before = self.candidates.len();
        self.candidates.retain(|c| c.location_id != location_id);
        let removed = before - self.candidates.len();
        if removed == 0 {
            return Err(Error::InvalidArgument(format!(
                "location {location_id} is not in the pool"
            )));
        }
        Ok(removed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RS")]
    Random,
    #[serde(rename = "EUS")]
    Entropy,
    #[serde(rename = "QBC")]
    Committee,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Entropy, Strategy::Committee];

    pub fn code(self) -> &'static str {
        match self {
            Strategy::Random => "RS",
            Strategy::Entropy => "EUS",
            Strategy::Committee => "QBC",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`; expected RS, EUS or QBC")))
    }
}

/// The queried candidate with its score and the best score among
/// candidates of other locations. Random queries carry no scores.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryChoice {
    pub candidate: PoolCandidate,
    pub score: Option<f64>,
    pub runner_up: Option<f64>,
}

/// Anything that predicts fractions for pool candidates.
pub trait Predictor: Sync {
    fn predict(&self, candidates: &[PoolCandidate]) -> Result<Vec<Vec<f64>>>;
}

impl Predictor for Generator {
    fn predict(&self, candidates: &[PoolCandidate]) -> Result<Vec<Vec<f64>>> {
        let rows: Vec<(&[f64], SampleIndex)> = candidates.iter().map(|c| (c.features.as_slice(), c.index)).collect();
        self.predict_batch(&rows)
    }
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy_score(p: &[f64]) -> Result<f64> {
    check_fractions(p, 1e-9)?;
    Ok(-p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// Index of the largest entry; the first one wins ties.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = j;
        }
    }
    best
}

/// Entropy of the members' argmax votes.
pub fn vote_entropy(predictions: &[&[f64]]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::UntrainedCommittee);
    }
    let width = predictions[0].len();
    let mut votes = vec![0usize; width];
    for p in predictions {
        if p.len() != width {
            return Err(Error::ShapeMismatch {
                op: "vote_entropy",
                detail: format!("member prediction widths {} and {}", width, p.len()),
            });
        }
        votes[argmax(p)] += 1;
    }
    let c = predictions.len() as f64;
    Ok(-votes
        .iter()
        .filter(|v| **v > 0)
        .map(|&v| {
            let q = v as f64 / c;
            q * q.ln()
        })
        .sum::<f64>())
}

/// Position of the highest score, lowest chainage first among exact ties.
pub fn select_max(scores: &[f64], chainages: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, s) in scores.iter().enumerate() {
        best = match best {
            None => Some(k),
            Some(b) if *s > scores[b] || (*s == scores[b] && chainages[k] < chainages[b]) => Some(k),
            keep => keep,
        };
    }
    best
}

fn choose(pool: &Pool, scores: Vec<f64>) -> Result<QueryChoice> {
    let cands = pool.candidates();
    let chainages: Vec<f64> = cands.iter().map(|c| c.chainage).collect();
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("query score {s}")));
    }
    let k = select_max(&scores, &chainages).ok_or(Error::EmptyPool)?;
    let winner = &cands[k];
    let runner_up = scores
        .iter()
        .zip(cands)
        .filter(|(_, c)| c.location_id != winner.location_id)
        .map(|(s, _)| *s)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
    Ok(QueryChoice {
        candidate: winner.clone(),
        score: Some(scores[k]),
        runner_up,
    })
}

/// A uniformly random remaining candidate.
pub fn query_random<R: Rng + ?Sized>(pool: &Pool, rng: &mut R) -> Result<QueryChoice> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let k = rng.random_range(0..pool.len());
    Ok(QueryChoice {
        candidate: pool.candidates()[k].clone(),
        score: None,
        runner_up: None,
    })
}

/// The candidate whose prediction has maximal entropy.
pub fn query_eus(pool: &Pool, predictor: &dyn Predictor) -> Result<QueryChoice> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let preds = predictor.predict(pool.candidates())?;
    let scores = preds.iter().map(|p| entropy_score(p)).collect::<Result<Vec<_>>>()?;
    choose(pool, scores)
}

/// The candidate on which the members' argmax votes disagree most.
pub fn query_qbc(pool: &Pool, members: &[&dyn Predictor], exec: Execution) -> Result<QueryChoice> {
    if members.is_empty() {
        return Err(Error::UntrainedCommittee);
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let per_member = par::map(exec, members, |m| m.predict(pool.candidates()));
    let per_member = per_member.into_iter().collect::<Result<Vec<_>>>()?;
    let scores = (0..pool.len())
        .map(|k| {
            let votes: Vec<&[f64]> = per_member.iter().map(|p| p[k].as_slice()).collect();
            vote_entropy(&votes)
        })
        .collect::<Result<Vec<_>>>()?;
    choose(pool, scores)
}

/// One committee member with its own networks and training data.
#[derive(Debug, Clone)]
pub struct Member {
    pub gen: Generator,
    pub disc: Discriminator,
    pub seed: u64,
}

/// Independently trained networks for query-by-committee.
#[derive(Debug, Clone, Default)]
pub struct Committee {
    pub members: Vec<Member>,
}

fn member_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1)
}

impl Committee {
    /// Trains `size` members, each from fresh weights on its own random
    /// 80 % subset of `data`.
    pub fn train(
        data: &[LabeledSample],
        size: usize,
        model: &ModelConfig,
        config: &TrainConfig,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("committee training set"));
        }
        let seeds: Vec<u64> = (0..size).map(|k| member_seed(seed, k)).collect();
        let members = par::map(exec, &seeds, |&s| -> Result<Member> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let keep = ((0.8 * data.len() as f64).floor() as usize).max(1);
            let mut idx = sample(&mut rng, data.len(), keep).into_vec();
            idx.sort_unstable();
            let subset: Vec<LabeledSample> = idx.into_iter().map(|i| data[i].clone()).collect();
            let mut gen = Generator::init(model, &mut rng)?;
            let mut disc = Discriminator::init(model, &mut rng)?;
            pretrain_generator(&subset, &mut gen, config, s ^ 1)?;
            initial_train(&subset, &mut gen, &mut disc, config, s ^ 2)?;
            Ok(Member { gen, disc, seed: s })
        });
        Ok(Self {
            members: members.into_iter().collect::<Result<Vec<_>>>()?,
        })
    }

    /// Runs one incremental round on every member, anchored to the
    /// member's current weights on `prev`.
    pub fn update(
        &mut self,
        prev: &[LabeledSample],
        data: &[LabeledSample],
        config: &TrainConfig,
        round: u32,
        exec: Execution,
    ) -> Result<()> {
        let results = par::map(exec, &self.members, |m| -> Result<Member> {
            let anchors = AnchorState::compute(prev, &m.gen, &m.disc, config.sensitivity, Execution::Sequential)?;
            let mut next = m.clone();
            incremental_train(
                data,
                &mut next.gen,
                &mut next.disc,
                &anchors,
                config,
                m.seed ^ (u64::from(round) << 8),
            )?;
            Ok(next)
        });
        self.members = results.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    pub fn predictors(&self) -> Vec<&dyn Predictor> {
        self.members.iter().map(|m| &m.gen as &dyn Predictor).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(location_id: u32, chainage: f64) -> PoolCandidate {
        PoolCandidate {
            location_id,
            offset: 0.0,
            chainage,
            index: SampleIndex(0),
            features: vec![chainage],
        }
    }

    /// Predicts the stored vector for the candidate at each chainage.
    struct Table(Vec<(f64, Vec<f64>)>);

    impl Predictor for Table {
        fn predict(&self, candidates: &[PoolCandidate]) -> Result<Vec<Vec<f64>>> {
            Ok(candidates
                .iter()
                .map(|c| self.0.iter().find(|(ch, _)| *ch == c.chainage).unwrap().1.clone())
                .collect())
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let mut one_hot = vec![0.0; 11];
        one_hot[4] = 1.0;
        assert_eq!(entropy_score(&one_hot).unwrap(), 0.0);
        let u = vec![1.0 / 11.0; 11];
        assert!((entropy_score(&u).unwrap() - 11f64.ln()).abs() < 1e-12);
        let mut half = vec![0.0; 11];
        half[0] = 0.5;
        half[1] = 0.5;
        assert!((entropy_score(&half).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(entropy_score(&[0.5, 0.6]), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn vote_entropy_closed_forms() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let same: Vec<&[f64]> = vec![&a; 10];
        assert_eq!(vote_entropy(&same).unwrap(), 0.0);
        let mut split: Vec<&[f64]> = vec![&a; 5];
        split.extend(vec![&b as &[f64]; 5]);
        assert!((vote_entropy(&split).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(vote_entropy(&[]), Err(Error::UntrainedCommittee)));
    }

    #[test]
    fn uniform_prediction_wins_eus() {
        let pool = Pool::new(vec![cand(0, 1.0), cand(1, 2.0), cand(2, 3.0)]);
        let t = Table(vec![
            (1.0, vec![0.8, 0.1, 0.1]),
            (2.0, vec![1.0 / 3.0; 3]),
            (3.0, vec![0.6, 0.4, 0.0]),
        ]);
        let q = query_eus(&pool, &t).unwrap();
        assert_eq!(q.candidate.location_id, 1);
        assert!((q.score.unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lower_chainage() {
        let pool = Pool::new(vec![cand(0, 5.0), cand(1, 2.0)]);
        let t = Table(vec![(5.0, vec![0.5, 0.5]), (2.0, vec![0.5, 0.5])]);
        assert_eq!(query_eus(&pool, &t).unwrap().candidate.chainage, 2.0);
    }

    #[test]
    fn empty_pool_and_committee_errors() {
        let pool = Pool::new(vec![]);
        let t = Table(vec![]);
        assert!(matches!(query_eus(&pool, &t), Err(Error::EmptyPool)));
        assert!(matches!(
            query_random(&pool, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyPool)
        ));
        let pool = Pool::new(vec![cand(0, 1.0)]);
        assert!(matches!(
            query_qbc(&pool, &[], Execution::Sequential),
            Err(Error::UntrainedCommittee)
        ));
    }

    #[test]
    fn single_candidate_random_query() {
        let pool = Pool::new(vec![cand(3, 1.0)]);
        let q = query_random(&pool, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(q.candidate.location_id, 3);
    }

    #[test]
    fn removing_a_location_drops_all_its_records() {
        let mut pool = Pool::new((0..10).map(|k| cand(k / 5, k as f64)).collect());
        assert_eq!(pool.location_count(), 2);
        assert_eq!(pool.remove_location(0).unwrap(), 5);
        assert_eq!(pool.len(), 5);
        assert!(pool.remove_location(0).is_err());
        assert!(pool.candidates().iter().all(|c| c.location_id == 1));
    }

    #[test]
    fn runner_up_excludes_the_winning_location() {
        let pool = Pool::new(vec![cand(0, 1.0), cand(0, 1.1), cand(1, 2.0)]);
        let t = Table(vec![
            (1.0, vec![0.5, 0.5]),
            (1.1, vec![0.5, 0.5]),
            (2.0, vec![0.9, 0.1]),
        ]);
        let q = query_eus(&pool, &t).unwrap();
        let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((q.runner_up.unwrap() - h).abs() < 1e-15);
    }

    #[test]
    fn strategy_codes_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.code().parse::<Strategy>().unwrap(), s);
        }
        assert!("XYZ".parse::<Strategy>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn entropy_is_bounded(raw in proptest::collection::vec(0.0f64..1.0, 11)) {
                let total: f64 = raw.iter().sum();
                prop_assume!(total > 1e-6);
                let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
                let h = entropy_score(&p).unwrap();
                prop_assert!(h >= 0.0);
                prop_assert!(h <= 11f64.ln() + 1e-12);
            }

            #[test]
            fn selection_survives_increasing_transforms(
                ticks in proptest::collection::vec(0u32..20, 1..10),
                shift in -50i32..50,
                scale in 1u32..8,
            ) {
                let scores: Vec<f64> = ticks.iter().map(|t| f64::from(*t) / 8.0).collect();
                let chainages: Vec<f64> = (0..scores.len()).map(|k| (k * 7 % 11) as f64).collect();
                let moved: Vec<f64> = scores.iter().map(|s| s * f64::from(scale) + f64::from(shift)).collect();
                let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
                let base = select_max(&scores, &chainages);
                prop_assert_eq!(base, select_max(&moved, &chainages));
                prop_assert_eq!(base, select_max(&cubed, &chainages));
            }

            #[test]
            fn vote_entropy_is_bounded(votes in proptest::collection::vec(0usize..4, 1..12)) {
                let rows: Vec<Vec<f64>> = votes.iter().map(|v| {
                    let mut p = vec![0.0; 4];
                    p[*v] = 1.0;
                    p
                }).collect();
                let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                let h = vote_entropy(&refs).unwrap();
                prop_assert!(h >= 0.0 && h <= (votes.len() as f64).ln() + 1e-12);
                let unanimous = votes.iter().all(|v| *v == votes[0]);
                prop_assert_eq!(h == 0.0, unanimous);
            }
        }
    }
}
