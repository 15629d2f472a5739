//! Loss functions and per-weight sensitivities.
//!
//! Losses are built on a [`LossGraph`], which runs the generator and the
//! discriminator over one batch once and lets any combination of terms
//! share that forward pass. The free functions at the bottom evaluate a
//! single loss by value.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamSet};
use crate::error::{Error, Result};
use crate::geodata::LabeledSample;
use crate::model::{Binding, DiscHeads, Discriminator, Generator};
use crate::par::{self, Execution};
use crate::tensor::Tensor;

/// One batch evaluated through both networks inside a single graph.
pub struct LossGraph<'a> {
    pub graph: Graph,
    batch: &'a [LabeledSample],
    generated: Vec<NodeId>,
    labels: Vec<NodeId>,
    fake: Vec<DiscHeads>,
    real: Vec<DiscHeads>,
}

/// Which networks a [`LossGraph`] evaluates and how they are bound.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub gen: Binding,
    /// `None` skips the discriminator entirely.
    pub disc: Option<Binding>,
}

impl<'a> LossGraph<'a> {
    pub fn build(batch: &'a [LabeledSample], gen: &Generator, disc: &Discriminator, spec: LossSpec) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("loss"));
        }
        let mut g = Graph::new();
        let gnodes = gen.bind(&mut g, spec.gen)?;
        let dnodes = match spec.disc {
            Some(how) => Some(disc.bind(&mut g, how)?),
            None => None,
        };
        let mut generated = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut fake = Vec::new();
        let mut real = Vec::new();
        for s in batch {
            let x = g.constant(Tensor::vector(s.features.clone()))?;
            let y = g.constant(Tensor::vector(s.label.clone()))?;
            let gx = gnodes.forward(&mut g, x, s.index)?;
            if let Some(d) = &dnodes {
                fake.push(d.forward(&mut g, x, gx)?);
                real.push(d.forward(&mut g, x, y)?);
            }
            generated.push(gx);
            labels.push(y);
        }
        Ok(Self {
            graph: g,
            batch,
            generated,
            labels,
            fake,
            real,
        })
    }

    fn need_disc(&self, what: &'static str) -> Result<()> {
        if self.fake.is_empty() {
            return Err(Error::InvalidArgument(format!("{what} needs the discriminator")));
        }
        Ok(())
    }

    /// Mean of `||G[x] - y||^2`.
    pub fn supervised(&mut self) -> Result<NodeId> {
        let g = &mut self.graph;
        let mut terms = Vec::with_capacity(self.generated.len());
        for (gx, y) in self.generated.iter().zip(&self.labels) {
            let d = g.sub(*gx, *y)?;
            let d2 = g.square(d)?;
            terms.push(g.sum(d2)?);
        }
        let all = g.concat(&terms)?;
        g.mean(all)
    }

    /// Mean of `log(1 - D_rg[x, y]) + log(D_rg[x, G[x]])`.
    pub fn discriminative(&mut self) -> Result<NodeId> {
        self.need_disc("discriminative loss")?;
        let g = &mut self.graph;
        let mut terms = Vec::with_capacity(self.real.len());
        for (r, f) in self.real.iter().zip(&self.fake) {
            let one_minus = g.scale(r.real_vs_generated, -1.0)?;
            let one_minus = g.add_scalar(one_minus, 1.0)?;
            let a = g.log_prob(one_minus)?;
            let b = g.log_prob(f.real_vs_generated)?;
            terms.push(g.add(a, b)?);
        }
        let all = g.concat(&terms)?;
        g.mean(all)
    }

    /// Mean of `log(1 - D_rg[x, G[x]])`.
    pub fn generative(&mut self) -> Result<NodeId> {
        self.need_disc("generative loss")?;
        let g = &mut self.graph;
        let mut terms = Vec::with_capacity(self.fake.len());
        for f in &self.fake {
            let one_minus = g.scale(f.real_vs_generated, -1.0)?;
            let one_minus = g.add_scalar(one_minus, 1.0)?;
            terms.push(g.log_prob(one_minus)?);
        }
        let all = g.concat(&terms)?;
        g.mean(all)
    }

    /// `1/(2I) * sum((D_of[x, G[x]] - tau)^2 + (D_of[x, y] - tau)^2)`.
    pub fn incremental_supervised(&mut self) -> Result<NodeId> {
        self.need_disc("incremental supervised loss")?;
        let g = &mut self.graph;
        let mut terms = Vec::with_capacity(2 * self.fake.len());
        for ((f, r), s) in self.fake.iter().zip(&self.real).zip(self.batch) {
            let tau = s.tau.value();
            for head in [f.fresh_vs_original, r.fresh_vs_original] {
                let d = g.add_scalar(head, -tau)?;
                terms.push(g.square(d)?);
            }
        }
        let all = g.concat(&terms)?;
        let total = g.sum(all)?;
        g.scale(total, 0.5 / self.batch.len() as f64)
    }

    /// `1/2 * sum_p |alpha_p| (w_p - anchor_p)^2` over the tensors of
    /// `anchor`. Weights that are bound as parameters in this graph carry
    /// gradients; frozen ones contribute a constant.
    pub fn ewc(&mut self, current: &ParamSet, anchor: &ParamSet, alpha: &SensitivityVector) -> Result<NodeId> {
        check_ewc_shapes(current, anchor, alpha)?;
        let g = &mut self.graph;
        let mut parts = Vec::with_capacity(anchor.len());
        for (name, w0) in anchor.iter() {
            let w = match g.param_node(name) {
                Some(id) => id,
                None => g.constant(current.require(name)?.clone())?,
            };
            let a = alpha.0.require(name)?.map(f64::abs);
            let w0 = g.constant(w0.clone())?;
            let a = g.constant(a)?;
            let d = g.sub(w, w0)?;
            let d2 = g.square(d)?;
            let weighted = g.mul(a, d2)?;
            parts.push(g.sum(weighted)?);
        }
        let all = g.concat(&parts)?;
        let total = g.sum(all)?;
        g.scale(total, 0.5)
    }

    /// `base + coeff * term` on the graph, skipping the term entirely when
    /// `coeff` is zero so a disabled regularizer leaves `base` untouched.
    pub fn weighted_add(&mut self, base: NodeId, coeff: f64, term: NodeId) -> Result<NodeId> {
        if coeff == 0.0 {
            return Ok(base);
        }
        let t = self.graph.scale(term, coeff)?;
        self.graph.add(base, t)
    }

    pub fn value(&self, id: NodeId) -> Result<f64> {
        self.graph.scalar(id)
    }
}

fn check_ewc_shapes(current: &ParamSet, anchor: &ParamSet, alpha: &SensitivityVector) -> Result<()> {
    anchor.check_congruent(&alpha.0, "ewc_loss")?;
    for (name, w0) in anchor.iter() {
        let w = current.get(name).ok_or_else(|| Error::ShapeMismatch {
            op: "ewc_loss",
            detail: format!("current weights lack `{name}`"),
        })?;
        w.check_same_shape(w0, "ewc_loss")?;
    }
    Ok(())
}

/// Per-weight sensitivity of a trained network, laid out like its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensitivityVector(pub ParamSet);

impl SensitivityVector {
    pub fn params(&self) -> &ParamSet {
        &self.0
    }

    pub fn zeros_like(params: &ParamSet) -> Self {
        Self(params.zeros_like())
    }
}

/// How per-weight sensitivity is estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Mean squared per-sample gradient (empirical Fisher diagonal).
    #[default]
    Fisher,
    /// Mean second derivative per weight, from central differences of the
    /// gradient. Costs two gradient passes per weight and sample, so it is
    /// meant for validating [`SensitivityMode::Fisher`] on small networks.
    Hessian { step: f64 },
}

/// A sum of per-sample losses whose gradients can be taken at arbitrary
/// weights.
pub trait PerSampleObjective: Sync {
    fn num_samples(&self) -> usize;
    /// Gradient of sample `i`'s loss at `params`.
    fn gradient(&self, params: &ParamSet, i: usize) -> Result<ParamSet>;
}

const CHUNK: usize = 16;

/// Sensitivity of every weight in `params` under `objective`, averaged
/// over samples.
pub fn sensitivity<O: PerSampleObjective>(
    objective: &O,
    params: &ParamSet,
    mode: SensitivityMode,
    exec: Execution,
) -> Result<SensitivityVector> {
    let n = objective.num_samples();
    if n == 0 {
        return Err(Error::EmptyDataset("sensitivity"));
    }
    let chunks = n.div_ceil(CHUNK);
    let partials = par::map_range(exec, chunks, |c| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; params.numel()];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let contrib = match mode {
                SensitivityMode::Fisher => objective
                    .gradient(params, i)?
                    .flatten()
                    .into_iter()
                    .map(|g| g * g)
                    .collect(),
                SensitivityMode::Hessian { step } => hessian_diagonal(objective, params, i, step)?,
            };
            for (a, v) in acc.iter_mut().zip(contrib) {
                *a += v;
            }
        }
        Ok(acc)
    });
    let mut total = vec![0.0; params.numel()];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let inv = 1.0 / n as f64;
    Ok(SensitivityVector(unflatten(params, total.into_iter().map(|v| v * inv))))
}

fn hessian_diagonal<O: PerSampleObjective>(objective: &O, params: &ParamSet, i: usize, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut out = Vec::with_capacity(params.numel());
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let len = params.require(name)?.len();
        for k in 0..len {
            let w = params.require(name)?.data()[k];
            probe.get_mut(name).expect("cloned").data_mut()[k] = w + step;
            let plus = objective.gradient(&probe, i)?.require(name)?.data()[k];
            probe.get_mut(name).expect("cloned").data_mut()[k] = w - step;
            let minus = objective.gradient(&probe, i)?.require(name)?.data()[k];
            probe.get_mut(name).expect("cloned").data_mut()[k] = w;
            out.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(out)
}

fn unflatten(template: &ParamSet, values: impl Iterator<Item = f64>) -> ParamSet {
    let mut out = template.zeros_like();
    let mut values = values;
    for (_, t) in out.iter_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("one value per weight");
        }
    }
    out
}

/// `||G[x] - y||^2` per sample, differentiated with respect to the
/// generator.
pub struct GeneratorFit<'a> {
    pub gen: &'a Generator,
    pub data: &'a [LabeledSample],
}

impl PerSampleObjective for GeneratorFit<'_> {
    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn gradient(&self, params: &ParamSet, i: usize) -> Result<ParamSet> {
        let gen = Generator::from_params(self.gen.config(), params.clone())?;
        let sample = std::slice::from_ref(&self.data[i]);
        // The discriminator is never bound here; any instance will do.
        let mut lg = LossGraph::build(
            sample,
            &gen,
            &dummy_disc(&gen)?,
            LossSpec {
                gen: Binding::Trainable,
                disc: None,
            },
        )?;
        let loss = lg.supervised()?;
        lg.graph.backward(loss)
    }
}

/// Per-sample discriminative loss, differentiated with respect to the
/// discriminator with the generator held fixed.
pub struct DiscriminatorFit<'a> {
    pub gen: &'a Generator,
    pub disc: &'a Discriminator,
    pub data: &'a [LabeledSample],
}

impl PerSampleObjective for DiscriminatorFit<'_> {
    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn gradient(&self, params: &ParamSet, i: usize) -> Result<ParamSet> {
        let disc = Discriminator::from_params(self.disc.config(), params.clone())?;
        let sample = std::slice::from_ref(&self.data[i]);
        let mut lg = LossGraph::build(
            sample,
            self.gen,
            &disc,
            LossSpec {
                gen: Binding::Frozen,
                disc: Some(Binding::Trainable),
            },
        )?;
        let loss = lg.discriminative()?;
        lg.graph.backward(loss)
    }
}

fn dummy_disc(gen: &Generator) -> Result<Discriminator> {
    use rand::SeedableRng;
    Discriminator::init(gen.config(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
}

pub fn generator_sensitivity(
    data: &[LabeledSample],
    gen: &Generator,
    mode: SensitivityMode,
    exec: Execution,
) -> Result<SensitivityVector> {
    sensitivity(&GeneratorFit { gen, data }, gen.params(), mode, exec)
}

pub fn discriminator_sensitivity(
    data: &[LabeledSample],
    gen: &Generator,
    disc: &Discriminator,
    mode: SensitivityMode,
    exec: Execution,
) -> Result<SensitivityVector> {
    sensitivity(&DiscriminatorFit { gen, disc, data }, disc.params(), mode, exec)
}

fn eval_one(
    batch: &[LabeledSample],
    gen: &Generator,
    disc: &Discriminator,
    with_disc: bool,
    f: impl FnOnce(&mut LossGraph) -> Result<NodeId>,
) -> Result<f64> {
    let spec = LossSpec {
        gen: Binding::Frozen,
        disc: with_disc.then_some(Binding::Frozen),
    };
    let mut lg = LossGraph::build(batch, gen, disc, spec)?;
    let id = f(&mut lg)?;
    lg.value(id)
}

/// Discriminative loss of one batch.
pub fn disc_loss(batch: &[LabeledSample], gen: &Generator, disc: &Discriminator) -> Result<f64> {
    eval_one(batch, gen, disc, true, |lg| lg.discriminative())
}

/// Generative loss of one batch.
pub fn gen_loss(batch: &[LabeledSample], gen: &Generator, disc: &Discriminator) -> Result<f64> {
    eval_one(batch, gen, disc, true, |lg| lg.generative())
}

/// Supervised loss of one batch.
pub fn sup_loss(batch: &[LabeledSample], gen: &Generator) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("sup_loss"));
    }
    let disc = dummy_disc(gen)?;
    eval_one(batch, gen, &disc, false, |lg| lg.supervised())
}

/// Freshness loss of one batch.
pub fn is_loss(batch: &[LabeledSample], gen: &Generator, disc: &Discriminator) -> Result<f64> {
    eval_one(batch, gen, disc, true, |lg| lg.incremental_supervised())
}

/// EWC penalty of `current` relative to `anchor`.
pub fn ewc_loss(current: &ParamSet, anchor: &ParamSet, alpha: &SensitivityVector) -> Result<f64> {
    check_ewc_shapes(current, anchor, alpha)?;
    let mut total = 0.0;
    for (name, w0) in anchor.iter() {
        let w = current.require(name)?;
        let a = alpha.0.require(name)?;
        let part: f64 = w
            .data()
            .iter()
            .zip(w0.data())
            .zip(a.data())
            .map(|((w, w0), a)| a.abs() * (w - w0) * (w - w0))
            .sum();
        total += part;
    }
    Ok(0.5 * total)
}

/// Regularizer weights for one network in incremental training.
#[derive(Debug, Clone, Copy)]
pub struct Regularizer<'a> {
    pub anchor: &'a ParamSet,
    pub alpha: &'a SensitivityVector,
    pub lambda: f64,
    pub beta: f64,
}

/// Generative loss plus EWC on the generator plus the freshness loss.
pub fn gen_loss_incremental(
    batch: &[LabeledSample],
    gen: &Generator,
    disc: &Discriminator,
    reg: Regularizer<'_>,
) -> Result<f64> {
    let current = gen.params();
    eval_one(batch, gen, disc, true, |lg| {
        let mut total = lg.generative()?;
        if reg.lambda != 0.0 {
            let e = lg.ewc(current, reg.anchor, reg.alpha)?;
            total = lg.weighted_add(total, reg.lambda, e)?;
        }
        if reg.beta != 0.0 {
            let i = lg.incremental_supervised()?;
            total = lg.weighted_add(total, reg.beta, i)?;
        }
        Ok(total)
    })
}

/// Discriminative loss plus EWC on the discriminator plus the freshness
/// loss.
pub fn disc_loss_incremental(
    batch: &[LabeledSample],
    gen: &Generator,
    disc: &Discriminator,
    reg: Regularizer<'_>,
) -> Result<f64> {
    let current = disc.params();
    eval_one(batch, gen, disc, true, |lg| {
        let mut total = lg.discriminative()?;
        if reg.lambda != 0.0 {
            let e = lg.ewc(current, reg.anchor, reg.alpha)?;
            total = lg.weighted_add(total, reg.lambda, e)?;
        }
        if reg.beta != 0.0 {
            let i = lg.incremental_supervised()?;
            total = lg.weighted_add(total, reg.beta, i)?;
        }
        Ok(total)
    })
}
