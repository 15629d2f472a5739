//! The outer query loop: initial training, repeated query rounds per
//! strategy, metrics and report emission.

mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{emit_report, read_metrics, ReportFiles, GAIN_HEADER, MSE_REPEATS_HEADER, QUERY_LOG_HEADER};

use crate::active::{query_eus, query_qbc, query_random, Committee, Pool, QueryChoice, Strategy};
use crate::error::{Error, Result};
use crate::geodata::csvio::load_survey;
use crate::geodata::{
    rehearsal_merge, split_dataset, synthesize, LabeledSample, Normalizer, Split, Survey, SyntheticConfig,
};
use crate::losses::sup_loss;
use crate::model::{generator_forward, Checkpoint, Discriminator, Generator, ModelConfig};
use crate::par::{self, Execution};
use crate::training::{
    incremental_train, initial_train, pretrain_generator, write_trace, AnchorState, TraceRow, TrainConfig,
};

/// Relative rise of the supervised loss on retained samples that triggers
/// a forgetting warning.
pub const FORGETTING_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

fn default_window() -> f64 {
    0.3
}

fn default_fraction() -> f64 {
    0.25
}

/// Files for a real survey. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub records: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<PathBuf>,
    #[serde(default)]
    pub pool_locations: Vec<u32>,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_fraction")]
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvConfig>,
}

impl DataConfig {
    /// The survey plus its test and validation fractions.
    pub fn load(&self) -> Result<(Survey, f64, f64)> {
        match self.source {
            DataSource::Synthetic => {
                let s = &self.synthetic;
                Ok((synthesize(s)?, s.test_fraction, s.validation_fraction))
            }
            DataSource::Csv => {
                let c = self
                    .csv
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.source = \"csv\" needs a [data.csv] table".into()))?;
                let survey = load_survey(
                    &c.records,
                    &c.labels,
                    c.locations.as_deref(),
                    &c.pool_locations,
                    c.window,
                )?;
                Ok((survey, c.test_fraction, c.validation_fraction))
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(c) = &mut self.csv {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut c.records);
            fix(&mut c.labels);
            if let Some(l) = &mut c.locations {
                fix(l);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    /// Query rounds T.
    pub rounds: u32,
    pub repeats: usize,
    /// Base seed; repeat `r` uses `seed + r` unless `seeds` is given.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub committee_size: usize,
    pub execution: Execution,
    /// Drop the freshness head and the incremental regularizers.
    pub gan_gp: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            rounds: 9,
            repeats: 5,
            seed: 1,
            seeds: None,
            committee_size: 10,
            execution: Execution::Parallel,
            gan_gp: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config and resolves data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(format!("in {}", path.display())))?;
        cfg.data.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.repeats as u64).map(|r| self.seed.wrapping_add(r)).collect(),
        }
    }

    /// The training settings actually used, with the ablation applied.
    pub fn effective_train(&self) -> TrainConfig {
        if self.gan_gp {
            self.train.clone().without_regularizers()
        } else {
            self.train.clone()
        }
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.repeats {
                return bad(format!("{} seeds given for {} repeats", s.len(), self.repeats));
            }
        }
        let seeds = self.seed_list();
        if (1..seeds.len()).any(|i| seeds[..i].contains(&seeds[i])) {
            return bad("repeat seeds must be distinct".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if (1..self.strategies.len()).any(|i| self.strategies[..i].contains(&self.strategies[i])) {
            return bad("strategies must be distinct".into());
        }
        if self.strategies.contains(&Strategy::Committee) && self.committee_size < 2 {
            return bad("QBC needs a committee of at least 2".into());
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
        }
        Ok(())
    }

    /// Checks against the loaded survey.
    pub fn validate_against(&self, survey: &Survey, d_y: usize) -> Result<()> {
        if survey.d_x() != self.model.d_x || d_y != self.model.d_y {
            return Err(Error::Config(format!(
                "model expects d_x = {}, d_y = {} but the data has d_x = {}, d_y = {d_y}",
                self.model.d_x,
                self.model.d_y,
                survey.d_x()
            )));
        }
        let pool = survey.locations_with(crate::geodata::LocationRole::Pool).count();
        if self.rounds as usize > pool {
            return Err(Error::Config(format!(
                "{} rounds exceed the {pool} pool locations",
                self.rounds
            )));
        }
        Ok(())
    }
}

/// Mean squared Euclidean error of the generator over `samples`.
pub fn compute_mse(gen: &Generator, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("MSE evaluation set"));
    }
    let mut total = 0.0;
    for s in samples {
        let p = generator_forward(&s.features, s.index, gen)?;
        if p.len() != s.label.len() {
            return Err(Error::ShapeMismatch {
                op: "compute_mse",
                detail: format!("prediction {} vs label {}", p.len(), s.label.len()),
            });
        }
        total += p.iter().zip(&s.label).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

/// Relative improvement `(prev - cur) / prev`.
pub fn perf_gain(mse_prev: f64, mse_cur: f64) -> Result<f64> {
    if !(mse_prev > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "previous MSE must be positive, got {mse_prev}"
        )));
    }
    Ok((mse_prev - mse_cur) / mse_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub location_id: u32,
    pub chainage: f64,
    pub score: Option<f64>,
    pub runner_up: Option<f64>,
    pub train_size: usize,
    pub mse: f64,
    pub gain: f64,
    /// Supervised loss on retained samples after the round over before.
    pub forgetting_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub seed: u64,
    pub mse0: f64,
    pub runs: Vec<StrategyRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub round: u32,
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config: ExperimentConfig,
    pub repeats: Vec<RepeatMetrics>,
    /// Wall-clock times; not serialized so reruns stay byte-identical.
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

impl RunMetrics {
    /// Strategies in config order.
    pub fn strategies(&self) -> Vec<Strategy> {
        self.config.strategies.clone()
    }

    /// Seed-averaged MSE per round for `strategy`, starting at round 0.
    pub fn mean_mse(&self, strategy: Strategy) -> Vec<f64> {
        let n = self.repeats.len() as f64;
        let rounds = self
            .repeats
            .iter()
            .map(|r| r.run(strategy).map_or(0, |s| s.rounds.len()))
            .min()
            .unwrap_or(0);
        let mut out = vec![self.repeats.iter().map(|r| r.mse0).sum::<f64>() / n];
        for t in 0..rounds {
            out.push(
                self.repeats
                    .iter()
                    .map(|r| r.run(strategy).map_or(0.0, |s| s.rounds[t].mse))
                    .sum::<f64>()
                    / n,
            );
        }
        out
    }

    /// Gains of the seed-averaged MSE curve, for rounds 1.. .
    pub fn mean_gain(&self, strategy: Strategy) -> Result<Vec<f64>> {
        let m = self.mean_mse(strategy);
        m.windows(2).map(|w| perf_gain(w[0], w[1])).collect()
    }
}

impl RepeatMetrics {
    pub fn run(&self, strategy: Strategy) -> Option<&StrategyRun> {
        self.runs.iter().find(|r| r.strategy == strategy)
    }
}

/// Where optional per-run artifacts go.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for loss-trace CSVs.
    pub traces: Option<PathBuf>,
    /// Directory for final model checkpoints.
    pub checkpoints: Option<PathBuf>,
}

/// Networks after initial training together with the normalized splits.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub gen: Generator,
    pub disc: Discriminator,
    pub normalizer: Normalizer,
    pub split: Split,
    pub pretrain_trace: Vec<TraceRow>,
    pub initial_trace: Vec<TraceRow>,
    pub mse0: f64,
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stage_seed(seed: u64, strategy: Option<Strategy>, round: u32, stage: u64) -> u64 {
    let s = strategy.map_or(0, |k| k as u64 + 1);
    mix(mix(mix(seed, s), u64::from(round)), stage)
}

/// Splits and normalizes the initial samples, then pre-trains and trains
/// fresh networks on them.
pub fn train_baseline(
    survey: &Survey,
    model: &ModelConfig,
    train: &TrainConfig,
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Baseline> {
    let mut split = split_dataset(
        survey.initial_samples()?,
        test_fraction,
        validation_fraction,
        mix(seed, 1),
    )?;
    if split.test.is_empty() {
        return Err(Error::EmptyDataset("test split"));
    }
    let normalizer = Normalizer::fit(split.train.iter().map(|s| s.features.as_slice()))?;
    normalizer.apply_samples(&mut split.train);
    normalizer.apply_samples(&mut split.validation);
    normalizer.apply_samples(&mut split.test);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2));
    let mut gen = Generator::init(model, &mut rng)?;
    let mut disc = Discriminator::init(model, &mut rng)?;
    let pretrain_trace = pretrain_generator(&split.train, &mut gen, train, mix(seed, 3))?;
    let initial_trace = initial_train(&split.train, &mut gen, &mut disc, train, mix(seed, 4))?;
    let mse0 = compute_mse(&gen, &split.test)?;
    Ok(Baseline {
        gen,
        disc,
        normalizer,
        split,
        pretrain_trace,
        initial_trace,
        mse0,
    })
}

/// Runs every strategy and repeat of `cfg`.
pub fn run_al_igan(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    run_al_igan_with(cfg, &RunOptions::default())
}

pub fn run_al_igan_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunMetrics> {
    cfg.validate()?;
    let (survey, test_fraction, validation_fraction) = cfg.data.load()?;
    let d_y = survey.initial_samples()?.first().map_or(0, |s| s.label.len());
    cfg.validate_against(&survey, d_y)?;
    let ctx = Ctx {
        cfg,
        opts,
        survey: &survey,
        train: cfg.effective_train(),
        test_fraction,
        validation_fraction,
    };
    let seeds = cfg.seed_list();
    let results = par::map(cfg.execution, &seeds, |&s| {
        ctx.repeat(s).map_err(|e| e.context(format!("seed {s}")))
    });
    let mut repeats = Vec::with_capacity(seeds.len());
    let mut timings = Vec::new();
    for r in results {
        let (m, t) = r?;
        repeats.push(m);
        timings.extend(t);
    }
    Ok(RunMetrics {
        config: cfg.clone(),
        repeats,
        timings,
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    survey: &'a Survey,
    train: TrainConfig,
    test_fraction: f64,
    validation_fraction: f64,
}

struct Clock<'a> {
    seed: u64,
    out: &'a mut Vec<Timing>,
}

impl Clock<'_> {
    fn time<T>(&mut self, strategy: Option<Strategy>, round: u32, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let v = f();
        self.out.push(Timing {
            seed: self.seed,
            strategy,
            round,
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        v
    }
}

impl Ctx<'_> {
    fn trace(&self, name: String, rows: &[TraceRow]) -> Result<()> {
        match &self.opts.traces {
            Some(dir) => write_trace(&dir.join(name), rows),
            None => Ok(()),
        }
    }

    fn repeat(&self, seed: u64) -> Result<(RepeatMetrics, Vec<Timing>)> {
        let mut timings = Vec::new();
        let mut clock = Clock {
            seed,
            out: &mut timings,
        };
        let base = clock.time(None, 0, "baseline", || {
            train_baseline(
                self.survey,
                &self.cfg.model,
                &self.train,
                self.test_fraction,
                self.validation_fraction,
                seed,
            )
        })?;
        self.trace(format!("seed{seed}_pretrain.csv"), &base.pretrain_trace)?;
        self.trace(format!("seed{seed}_initial.csv"), &base.initial_trace)?;
        log::info!("seed {seed}: MSE_0 = {:.6}", base.mse0);

        let committee = if self.cfg.strategies.contains(&Strategy::Committee) {
            Some(clock.time(None, 0, "committee", || {
                Committee::train(
                    &base.split.train,
                    self.cfg.committee_size,
                    &self.cfg.model,
                    &self.train,
                    mix(seed, 5),
                    self.cfg.execution,
                )
            })?)
        } else {
            None
        };

        let mut pool = Pool::from_survey(self.survey)?;
        for c in pool.candidates_mut() {
            c.features = base.normalizer.apply(&c.features);
        }

        let mut runs = Vec::with_capacity(self.cfg.strategies.len());
        for &strategy in &self.cfg.strategies {
            let run = self
                .strategy_run(seed, strategy, &base, pool.clone(), committee.clone(), &mut clock)
                .map_err(|e| e.context(format!("strategy {strategy}")))?;
            runs.push(run);
        }
        Ok((
            RepeatMetrics {
                seed,
                mse0: base.mse0,
                runs,
            },
            timings,
        ))
    }

    fn strategy_run(
        &self,
        seed: u64,
        strategy: Strategy,
        base: &Baseline,
        mut pool: Pool,
        mut committee: Option<Committee>,
        clock: &mut Clock<'_>,
    ) -> Result<StrategyRun> {
        let exec = self.cfg.execution;
        let mut gen = base.gen.clone();
        let mut disc = base.disc.clone();
        let mut data = base.split.train.clone();
        let mut mse_prev = base.mse0;
        let mut rounds = Vec::new();
        let mut query_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, Some(strategy), 0, 6));
        for t in 1..=self.cfg.rounds {
            if pool.is_empty() {
                log::warn!("seed {seed}, {strategy}: pool exhausted before round {t}");
                break;
            }
            let k = Some(strategy);
            let choice: QueryChoice = clock.time(k, t, "query", || match strategy {
                Strategy::Random => query_random(&pool, &mut query_rng),
                Strategy::Entropy => query_eus(&pool, &gen),
                Strategy::Committee => {
                    let c = committee.as_ref().ok_or(Error::UntrainedCommittee)?;
                    query_qbc(&pool, &c.predictors(), exec)
                }
            })?;
            let loc = choice.candidate.location_id;
            pool.remove_location(loc)?;
            let mut add = self
                .survey
                .label_location(loc, t, crate::geodata::FreshnessTag::Fresh)?;
            base.normalizer.apply_samples(&mut add);
            let mut merge_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, k, t, 7));
            let merged = rehearsal_merge(&data, &add, &mut merge_rng);
            let retained = &merged[..merged.len() - add.len()];

            let anchors = clock.time(k, t, "anchors", || {
                AnchorState::compute(&data, &gen, &disc, self.train.sensitivity, exec)
            })?;
            let before = if retained.is_empty() {
                0.0
            } else {
                sup_loss(retained, &gen)?
            };
            let trace = clock
                .time(k, t, "incremental", || {
                    incremental_train(
                        &merged,
                        &mut gen,
                        &mut disc,
                        &anchors,
                        &self.train,
                        stage_seed(seed, k, t, 8),
                    )
                })
                .map_err(|e| e.context(format!("round {t}")))?;
            self.trace(format!("seed{seed}_{strategy}_round{t}.csv"), &trace)?;
            let after = if retained.is_empty() {
                0.0
            } else {
                sup_loss(retained, &gen)?
            };
            let forgetting_ratio = if before > 0.0 { after / before } else { 1.0 };
            if forgetting_ratio > 1.0 + FORGETTING_TOLERANCE {
                log::warn!(
                    "seed {seed}, {strategy}, round {t}: supervised loss on retained samples rose from {before:.6} to {after:.6}"
                );
            }

            if let Some(c) = committee.as_mut() {
                if strategy == Strategy::Committee {
                    clock.time(k, t, "committee", || c.update(&data, &merged, &self.train, t, exec))?;
                }
            }

            let mse = compute_mse(&gen, &base.split.test)?;
            let gain = perf_gain(mse_prev, mse)?;
            log::info!("seed {seed}, {strategy}, round {t}: location {loc}, MSE = {mse:.6}, gain = {gain:.4}");
            rounds.push(RoundRecord {
                round: t,
                location_id: loc,
                chainage: choice.candidate.chainage,
                score: choice.score,
                runner_up: choice.runner_up,
                train_size: merged.len(),
                mse,
                gain,
                forgetting_ratio,
            });
            mse_prev = mse;
            data = merged;
        }
        if let Some(dir) = &self.opts.checkpoints {
            std::fs::create_dir_all(dir)?;
            Checkpoint::new(&gen, &disc).save(&dir.join(format!("seed{seed}_{strategy}.json")))?;
        }
        Ok(StrategyRun { strategy, rounds })
    }
}
