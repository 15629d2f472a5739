//! Pre-training, initial adversarial training and incremental training.
//!
//! Both adversarial stages run the same five sub-steps per iteration:
//! supervised (S), discriminative (D), supervised, generative (G),
//! supervised. Every sub-step is one Adam step on one minibatch. Batches
//! are consecutive slices of a per-epoch shuffle and carry over from one
//! sub-step to the next.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, ParamSet};
use crate::error::{Error, Result};
use crate::geodata::LabeledSample;
use crate::losses::{
    discriminator_sensitivity, ewc_loss, generator_sensitivity, LossGraph, LossSpec, SensitivityMode, SensitivityVector,
};
use crate::model::{Binding, Discriminator, Generator};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            lr: 0.005,
            batch_size: 32,
        }
    }
}

/// Iterations, learning rates and batch size of one adversarial stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub iterations: usize,
    /// Rate of the G-step.
    pub lr_gen: f64,
    /// Rate of the D-step.
    pub lr_disc: f64,
    /// Rate of the S-steps.
    pub lr_sup: f64,
    pub batch_size: usize,
}

/// A partial stage table; absent keys keep the stage defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StagePatch {
    iterations: Option<usize>,
    lr_gen: Option<f64>,
    lr_disc: Option<f64>,
    lr_sup: Option<f64>,
    batch_size: Option<usize>,
}

impl StagePatch {
    fn over(self, base: StageConfig) -> StageConfig {
        StageConfig {
            iterations: self.iterations.unwrap_or(base.iterations),
            lr_gen: self.lr_gen.unwrap_or(base.lr_gen),
            lr_disc: self.lr_disc.unwrap_or(base.lr_disc),
            lr_sup: self.lr_sup.unwrap_or(base.lr_sup),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
        }
    }
}

fn initial_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    Ok(StagePatch::deserialize(d)?.over(StageConfig::initial()))
}

fn incremental_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    Ok(StagePatch::deserialize(d)?.over(StageConfig::incremental()))
}

impl StageConfig {
    pub fn initial() -> Self {
        Self {
            iterations: 300,
            lr_gen: 1e-4,
            lr_disc: 5e-4,
            lr_sup: 1e-3,
            batch_size: 88,
        }
    }

    pub fn incremental() -> Self {
        Self {
            iterations: 100,
            batch_size: 32,
            ..Self::initial()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain: PretrainConfig,
    #[serde(deserialize_with = "initial_stage")]
    pub initial: StageConfig,
    #[serde(deserialize_with = "incremental_stage")]
    pub incremental: StageConfig,
    pub lambda_g: f64,
    pub lambda_d: f64,
    pub beta_g: f64,
    pub beta_d: f64,
    /// Whether the D-step also moves the generator.
    pub disc_step_updates_generator: bool,
    /// Whether the G-step also moves the discriminator.
    pub gen_step_updates_discriminator: bool,
    pub sensitivity: SensitivityMode,
    pub adam: AdamConfig,
    /// Any loss term beyond this magnitude aborts training.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain: PretrainConfig::default(),
            initial: StageConfig::initial(),
            incremental: StageConfig::incremental(),
            lambda_g: 500.0,
            lambda_d: 500.0,
            beta_g: 1.0,
            beta_d: 1.0,
            disc_step_updates_generator: true,
            gen_step_updates_discriminator: true,
            sensitivity: SensitivityMode::Fisher,
            adam: AdamConfig::default(),
            divergence_threshold: 1e6,
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

impl StageConfig {
    fn validate(&self, stage: &str) -> Result<()> {
        check_rate(&format!("{stage}.lr_gen"), self.lr_gen)?;
        check_rate(&format!("{stage}.lr_disc"), self.lr_disc)?;
        check_rate(&format!("{stage}.lr_sup"), self.lr_sup)?;
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{stage}.batch_size must be positive")));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate("pretrain.lr", self.pretrain.lr)?;
        if self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        self.initial.validate("initial")?;
        self.incremental.validate("incremental")?;
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("lambda_d", self.lambda_d),
            ("beta_g", self.beta_g),
            ("beta_d", self.beta_d),
        ] {
            check_rate(name, v)?;
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence_threshold must be positive".into()));
        }
        if let SensitivityMode::Hessian { step } = self.sensitivity {
            if !(step > 0.0) {
                return Err(Error::Config("sensitivity step must be positive".into()));
            }
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    /// The ablation without freshness head or EWC terms.
    pub fn without_regularizers(mut self) -> Self {
        self.lambda_g = 0.0;
        self.lambda_d = 0.0;
        self.beta_g = 0.0;
        self.beta_d = 0.0;
        self
    }
}

/// Frozen networks from the previous round with their sensitivities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorState {
    pub gen: ParamSet,
    pub disc: ParamSet,
    pub alpha_g: SensitivityVector,
    pub alpha_d: SensitivityVector,
}

impl AnchorState {
    /// Anchors the current networks; `alpha_g` comes from the supervised
    /// fit of the generator and `alpha_d` from the discriminative loss.
    pub fn compute(
        data: &[LabeledSample],
        gen: &Generator,
        disc: &Discriminator,
        mode: SensitivityMode,
        exec: Execution,
    ) -> Result<Self> {
        Ok(Self {
            gen: gen.params().clone(),
            disc: disc.params().clone(),
            alpha_g: generator_sensitivity(data, gen, mode, exec)?,
            alpha_d: discriminator_sensitivity(data, gen, disc, mode, exec)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Supervised,
    Discriminative,
    Generative,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Supervised => "S",
            StepKind::Discriminative => "D",
            StepKind::Generative => "G",
        })
    }
}

/// Loss values seen by one sub-step. Terms that the step did not
/// evaluate are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub step: StepKind,
    pub l_s: Option<f64>,
    pub l_d: Option<f64>,
    pub l_g: Option<f64>,
    pub ewc_g: Option<f64>,
    pub ewc_d: Option<f64>,
    pub is: Option<f64>,
}

impl TraceRow {
    fn new(iteration: usize, step: StepKind) -> Self {
        Self {
            iteration,
            step,
            l_s: None,
            l_d: None,
            l_g: None,
            ewc_g: None,
            ewc_d: None,
            is: None,
        }
    }
}

pub const TRACE_HEADER: &str = "iteration,step,l_s,l_d,l_g,ewc_g,ewc_d,is";

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{TRACE_HEADER}")?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.step,
            cell(r.l_s),
            cell(r.l_d),
            cell(r.l_g),
            cell(r.ewc_g),
            cell(r.ewc_d),
            cell(r.is)
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Consecutive minibatches over shuffled epochs; the last batch of an
/// epoch may be short.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next_batch(&mut self, data: &[LabeledSample]) -> Vec<LabeledSample> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let batch = self.order[self.pos..end].iter().map(|&i| data[i].clone()).collect();
        self.pos = end;
        batch
    }
}

struct Guard<'a> {
    stage: &'a str,
    threshold: f64,
}

impl Guard<'_> {
    fn check(&self, iteration: usize, loss: &'static str, value: f64) -> Result<f64> {
        if !value.is_finite() || value.abs() > self.threshold {
            return Err(Error::Divergence {
                stage: self.stage.to_string(),
                iteration,
                loss,
                value,
            });
        }
        Ok(value)
    }

    /// Turns numeric blow-ups inside the graph into divergence errors.
    fn wrap<T>(&self, iteration: usize, loss: &'static str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::NonFinite(_) | Error::NonFiniteGradient(_) => Error::Divergence {
                stage: self.stage.to_string(),
                iteration,
                loss,
                value: f64::NAN,
            },
            other => other,
        })
    }
}

/// Adam state of one loss over both networks.
struct PairState {
    g: AdamState,
    d: AdamState,
}

impl PairState {
    fn new(config: AdamConfig) -> Self {
        Self {
            g: AdamState::new(config),
            d: AdamState::new(config),
        }
    }
}

fn supervised_step(
    batch: &[LabeledSample],
    gen: &mut Generator,
    disc: &Discriminator,
    state: &mut AdamState,
    lr: f64,
    guard: &Guard,
    row: &mut TraceRow,
) -> Result<()> {
    let it = row.iteration;
    let mut lg = guard.wrap(
        it,
        "l_s",
        LossGraph::build(
            batch,
            gen,
            disc,
            LossSpec {
                gen: Binding::Trainable,
                disc: None,
            },
        ),
    )?;
    let loss = guard.wrap(it, "l_s", lg.supervised())?;
    row.l_s = Some(guard.check(it, "l_s", lg.value(loss)?)?);
    let grads = guard.wrap(it, "l_s", lg.graph.backward(loss))?;
    guard.wrap(it, "l_s", state.step(gen.params_mut(), &grads, lr))
}

/// Regularizer terms of one incremental stage.
struct Incremental<'a> {
    anchors: &'a AnchorState,
    lambda_g: f64,
    lambda_d: f64,
    beta_g: f64,
    beta_d: f64,
}

#[allow(clippy::too_many_arguments)]
fn adversarial_step(
    kind: StepKind,
    batch: &[LabeledSample],
    gen: &mut Generator,
    disc: &mut Discriminator,
    state: &mut PairState,
    lr: f64,
    update_other: bool,
    reg: Option<&Incremental>,
    guard: &Guard,
    row: &mut TraceRow,
) -> Result<()> {
    let it = row.iteration;
    let (name, spec) = match kind {
        StepKind::Discriminative => (
            "l_d",
            LossSpec {
                gen: if update_other {
                    Binding::Trainable
                } else {
                    Binding::Frozen
                },
                disc: Some(Binding::Trainable),
            },
        ),
        StepKind::Generative => (
            "l_g",
            LossSpec {
                gen: Binding::Trainable,
                disc: Some(if update_other {
                    Binding::Trainable
                } else {
                    Binding::Frozen
                }),
            },
        ),
        StepKind::Supervised => unreachable!("supervised steps use supervised_step"),
    };
    let mut lg = guard.wrap(it, name, LossGraph::build(batch, gen, disc, spec))?;
    let base = if kind == StepKind::Discriminative {
        guard.wrap(it, name, lg.discriminative())?
    } else {
        guard.wrap(it, name, lg.generative())?
    };
    let base_value = guard.check(it, name, lg.value(base)?)?;
    if kind == StepKind::Discriminative {
        row.l_d = Some(base_value);
    } else {
        row.l_g = Some(base_value);
    }

    let mut total = base;
    if let Some(r) = reg {
        let (lambda, beta, current, anchor, alpha) = match kind {
            StepKind::Discriminative => (r.lambda_d, r.beta_d, disc.params(), &r.anchors.disc, &r.anchors.alpha_d),
            _ => (r.lambda_g, r.beta_g, gen.params(), &r.anchors.gen, &r.anchors.alpha_g),
        };
        let ewc_value = ewc_loss(current, anchor, alpha)?;
        let ewc_value = guard.check(it, "ewc", ewc_value)?;
        if kind == StepKind::Discriminative {
            row.ewc_d = Some(ewc_value);
        } else {
            row.ewc_g = Some(ewc_value);
        }
        if lambda != 0.0 {
            let e = guard.wrap(it, "ewc", lg.ewc(current, anchor, alpha))?;
            total = lg.weighted_add(total, lambda, e)?;
        }
        if beta != 0.0 {
            let is = guard.wrap(it, "is", lg.incremental_supervised())?;
            row.is = Some(guard.check(it, "is", lg.value(is)?)?);
            total = lg.weighted_add(total, beta, is)?;
        }
        let t = lg.value(total)?;
        if !t.is_finite() {
            return Err(Error::Divergence {
                stage: guard.stage.to_string(),
                iteration: it,
                loss: name,
                value: t,
            });
        }
    }

    let grads = guard.wrap(it, name, lg.graph.backward(total))?;
    let g_grads = grads.filter_prefix(Generator::PREFIX);
    let d_grads = grads.filter_prefix(Discriminator::PREFIX);
    if spec.gen == Binding::Trainable {
        guard.wrap(it, name, state.g.step(gen.params_mut(), &g_grads, lr))?;
    }
    if spec.disc == Some(Binding::Trainable) {
        guard.wrap(it, name, state.d.step(disc.params_mut(), &d_grads, lr))?;
    }
    Ok(())
}

/// Runs `stage.iterations` rounds of the S, D, S, G, S interleave. Adam
/// moments start from zero.
#[allow(clippy::too_many_arguments)]
fn adversarial_phase(
    stage_name: &str,
    data: &[LabeledSample],
    gen: &mut Generator,
    disc: &mut Discriminator,
    stage: &StageConfig,
    config: &TrainConfig,
    reg: Option<&Incremental>,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    let guard = Guard {
        stage: stage_name,
        threshold: config.divergence_threshold,
    };
    let mut batches = Batcher::new(data.len(), stage.batch_size, seed);
    let mut sup = AdamState::new(config.adam);
    let mut dstate = PairState::new(config.adam);
    let mut gstate = PairState::new(config.adam);
    let mut trace = Vec::with_capacity(5 * stage.iterations);
    for it in 0..stage.iterations {
        for kind in [
            StepKind::Supervised,
            StepKind::Discriminative,
            StepKind::Supervised,
            StepKind::Generative,
            StepKind::Supervised,
        ] {
            let batch = batches.next_batch(data);
            let mut row = TraceRow::new(it, kind);
            match kind {
                StepKind::Supervised => {
                    supervised_step(&batch, gen, disc, &mut sup, stage.lr_sup, &guard, &mut row)?;
                }
                StepKind::Discriminative => adversarial_step(
                    kind,
                    &batch,
                    gen,
                    disc,
                    &mut dstate,
                    stage.lr_disc,
                    config.disc_step_updates_generator,
                    reg,
                    &guard,
                    &mut row,
                )?,
                StepKind::Generative => adversarial_step(
                    kind,
                    &batch,
                    gen,
                    disc,
                    &mut gstate,
                    stage.lr_gen,
                    config.gen_step_updates_discriminator,
                    reg,
                    &guard,
                    &mut row,
                )?,
            }
            trace.push(row);
        }
    }
    Ok(trace)
}

const MONITOR_WINDOW: usize = 50;

/// Fits the generator to `data` with the supervised loss alone.
pub fn pretrain_generator(
    data: &[LabeledSample],
    gen: &mut Generator,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("pre-training set"));
    }
    let guard = Guard {
        stage: "pretrain",
        threshold: config.divergence_threshold,
    };
    // Only the generator is bound; the discriminator is a placeholder.
    let disc = Discriminator::init(gen.config(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut batches = Batcher::new(data.len(), config.pretrain.batch_size, seed);
    let mut state = AdamState::new(config.adam);
    let mut trace = Vec::with_capacity(config.pretrain.iterations);
    let mut prev_window: Option<f64> = None;
    let mut window_sum = 0.0;
    for it in 0..config.pretrain.iterations {
        let batch = batches.next_batch(data);
        let mut row = TraceRow::new(it, StepKind::Supervised);
        supervised_step(&batch, gen, &disc, &mut state, config.pretrain.lr, &guard, &mut row)?;
        window_sum += row.l_s.unwrap_or(0.0);
        if (it + 1) % MONITOR_WINDOW == 0 {
            let mean = window_sum / MONITOR_WINDOW as f64;
            if let Some(prev) = prev_window {
                if mean > prev {
                    log::warn!(
                        "pre-training loss rose from {prev:.6} to {mean:.6} over iterations {}..{}",
                        it + 1 - MONITOR_WINDOW,
                        it + 1
                    );
                }
            }
            prev_window = Some(mean);
            window_sum = 0.0;
        }
        trace.push(row);
    }
    Ok(trace)
}

/// Adversarial training on the original data.
pub fn initial_train(
    data: &[LabeledSample],
    gen: &mut Generator,
    disc: &mut Discriminator,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    adversarial_phase("initial", data, gen, disc, &config.initial, config, None, seed)
}

/// Adversarial training on a merged dataset with EWC and freshness terms
/// anchored to the previous round.
pub fn incremental_train(
    data: &[LabeledSample],
    gen: &mut Generator,
    disc: &mut Discriminator,
    anchors: &AnchorState,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    let reg = Incremental {
        anchors,
        lambda_g: config.lambda_g,
        lambda_d: config.lambda_d,
        beta_g: config.beta_g,
        beta_d: config.beta_d,
    };
    adversarial_phase(
        "incremental",
        data,
        gen,
        disc,
        &config.incremental,
        config,
        Some(&reg),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::FreshnessTag;
    use crate::model::{ModelConfig, SampleIndex};
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_x: 6,
            d_y: 3,
            heads: 2,
            d_k: 2,
            gen_hidden: vec![5, 4],
            disc_hidden: vec![5, 4],
        }
    }

    fn data(n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let a: f64 = rng.random_range(0.0..1.0);
                LabeledSample {
                    index: SampleIndex(i),
                    chainage: i as f64,
                    location_id: 0,
                    round: 0,
                    tau: FreshnessTag::Original,
                    features: (0..6).map(|j| (a * (j + 1) as f64).sin()).collect(),
                    label: vec![a, (1.0 - a) / 2.0, (1.0 - a) / 2.0],
                }
            })
            .collect()
    }

    fn nets() -> (Generator, Discriminator) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (
            Generator::init(&tiny(), &mut rng).unwrap(),
            Discriminator::init(&tiny(), &mut rng).unwrap(),
        )
    }

    fn short() -> TrainConfig {
        TrainConfig {
            pretrain: PretrainConfig {
                iterations: 20,
                ..PretrainConfig::default()
            },
            initial: StageConfig {
                iterations: 6,
                batch_size: 8,
                ..StageConfig::initial()
            },
            incremental: StageConfig {
                iterations: 6,
                batch_size: 8,
                ..StageConfig::initial()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_the_stage_table() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.pretrain.iterations, c.pretrain.lr, c.pretrain.batch_size),
            (200, 0.005, 32)
        );
        assert_eq!(
            c.initial,
            StageConfig {
                iterations: 300,
                lr_gen: 1e-4,
                lr_disc: 5e-4,
                lr_sup: 1e-3,
                batch_size: 88
            }
        );
        assert_eq!((c.incremental.iterations, c.incremental.batch_size), (100, 32));
        assert_eq!((c.lambda_g, c.lambda_d, c.beta_g, c.beta_d), (500.0, 500.0, 1.0, 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn partial_stage_tables_keep_stage_defaults() {
        let c: TrainConfig = toml::from_str("[incremental]\niterations = 7\n[initial]\nbatch_size = 5\n").unwrap();
        assert_eq!(
            c.incremental,
            StageConfig {
                iterations: 7,
                ..StageConfig::incremental()
            }
        );
        assert_eq!(
            c.initial,
            StageConfig {
                batch_size: 5,
                ..StageConfig::initial()
            }
        );
        let back: TrainConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<TrainConfig>("[initial]\nsteps = 1\n").is_err());
    }

    #[test]
    fn zero_iterations_leave_weights_alone() {
        let (mut g, mut d) = nets();
        let (g0, d0) = (g.clone(), d.clone());
        let cfg = TrainConfig {
            initial: StageConfig {
                iterations: 0,
                ..StageConfig::initial()
            },
            ..TrainConfig::default()
        };
        let trace = initial_train(&data(10, 0), &mut g, &mut d, &cfg, 3).unwrap();
        assert!(trace.is_empty());
        assert_eq!((g, d), (g0, d0));
    }

    #[test]
    fn zero_rate_pretraining_is_identity() {
        let (mut g, _) = nets();
        let g0 = g.clone();
        let cfg = TrainConfig {
            pretrain: PretrainConfig {
                lr: 0.0,
                iterations: 10,
                batch_size: 4,
            },
            ..TrainConfig::default()
        };
        pretrain_generator(&data(10, 0), &mut g, &cfg, 0).unwrap();
        assert_eq!(g, g0);
    }

    #[test]
    fn step_order_is_s_d_s_g_s() {
        let (mut g, mut d) = nets();
        let trace = initial_train(&data(20, 0), &mut g, &mut d, &short(), 5).unwrap();
        let names: String = trace.iter().map(|r| r.step.to_string()).collect();
        assert_eq!(names, "SDSGS".repeat(6));
        assert!(trace.iter().enumerate().all(|(k, r)| r.iteration == k / 5));
    }

    #[test]
    fn batcher_covers_epochs_with_short_tail() {
        let d = data(10, 0);
        let mut b = Batcher::new(10, 4, 0);
        let sizes: Vec<usize> = (0..6).map(|_| b.next_batch(&d).len()).collect();
        assert_eq!(sizes, vec![4, 4, 2, 4, 4, 2]);
    }

    #[test]
    fn frozen_partner_is_untouched() {
        let (mut g, mut d) = nets();
        let cfg = TrainConfig {
            disc_step_updates_generator: false,
            gen_step_updates_discriminator: false,
            initial: StageConfig {
                iterations: 3,
                lr_sup: 0.0,
                lr_disc: 0.0,
                batch_size: 8,
                ..StageConfig::initial()
            },
            ..TrainConfig::default()
        };
        let d0 = d.clone();
        initial_train(&data(16, 0), &mut g, &mut d, &cfg, 0).unwrap();
        assert_eq!(d, d0, "only the G-step had a nonzero rate and it may not move D");
    }

    #[test]
    fn divergence_is_reported() {
        let (mut g, mut d) = nets();
        let cfg = TrainConfig {
            divergence_threshold: 1e-9,
            ..short()
        };
        match initial_train(&data(10, 0), &mut g, &mut d, &cfg, 0) {
            Err(Error::Divergence {
                stage, iteration, loss, ..
            }) => {
                assert_eq!((stage.as_str(), iteration, loss), ("initial", 0, "l_s"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let run = || {
            let (mut g, mut d) = nets();
            let s = data(20, 0);
            pretrain_generator(&s, &mut g, &short(), 1).unwrap();
            initial_train(&s, &mut g, &mut d, &short(), 2).unwrap();
            (g, d)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn incremental_trace_has_regularizer_terms() {
        let (mut g, mut d) = nets();
        let s = data(12, 0);
        let anchors = AnchorState::compute(&s, &g, &d, SensitivityMode::Fisher, Execution::Sequential).unwrap();
        let trace = incremental_train(&s, &mut g, &mut d, &anchors, &short(), 0).unwrap();
        assert_eq!(trace[1].ewc_d, Some(0.0));
        assert!(trace[1].is.is_some() && trace[3].ewc_g.is_some());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trace(&p, &trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        assert_eq!(text.lines().count(), trace.len() + 1);
    }
}
