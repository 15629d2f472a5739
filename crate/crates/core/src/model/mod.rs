//! The generator/discriminator pair.
//!
//! The generator maps an operational record to a thickness-fraction vector:
//! multi-head self-attention plus a fixed positional encoding feed a small
//! ReLU regression head with a softmax output. The discriminator scores a
//! `(record, fractions)` pair with two sigmoid heads: real-vs-generated and
//! fresh-vs-original.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;

use crate::autodiff::{Graph, NodeId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Position of a record in the full chainage-ordered record stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleIndex(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Operational attributes per record.
    pub d_x: usize,
    /// Rock-soil types.
    pub d_y: usize,
    /// Attention heads.
    pub heads: usize,
    /// Per-head query/key/value width.
    pub d_k: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 69,
            d_y: 11,
            heads: 8,
            d_k: 8,
            gen_hidden: vec![20, 7],
            disc_hidden: vec![20, 7],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.d_y == 0 || self.heads == 0 || self.d_k == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal positional code of record `index`: component `2k` is
/// `sin(i / 10000^(2k/d))` and `2k+1` is `cos(i / 10000^(2k/d))`.
pub fn pe_encode(index: SampleIndex, d: usize) -> Tensor {
    let i = index.0 as f64;
    let data = (0..d)
        .map(|j| {
            let even = (j - j % 2) as f64;
            let angle = i / 10000f64.powf(even / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect();
    Tensor::vector(data)
}

/// Whether a network enters a graph as trainable parameters or as frozen
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

fn bind_tensor(g: &mut Graph, name: &str, t: &Tensor, how: Binding) -> Result<NodeId> {
    match how {
        Binding::Trainable => g.param(name, t.clone()),
        Binding::Frozen => g.constant(t.clone()),
    }
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::matrix(rows, cols, data).expect("rows * cols values")
}

fn dense_stack(params: &mut ParamSet, rng: &mut impl Rng, prefix: &str, widths: &[usize]) {
    let n = widths.len() - 1;
    for (l, pair) in widths.windows(2).enumerate() {
        let tag = if l + 1 == n {
            "out".to_string()
        } else {
            format!("fc{l}")
        };
        params.insert(format!("{prefix}.{tag}.w"), xavier(rng, pair[1], pair[0]));
        params.insert(format!("{prefix}.{tag}.b"), Tensor::zeros(&[pair[1]]));
    }
}

fn layer_names(prefix: &str, n_layers: usize) -> Vec<(String, String)> {
    (0..n_layers)
        .map(|l| {
            let tag = if l + 1 == n_layers {
                "out".to_string()
            } else {
                format!("fc{l}")
            };
            (format!("{prefix}.{tag}.w"), format!("{prefix}.{tag}.b"))
        })
        .collect()
}

/// Generator weights. Per-head query, key and value maps are stored as
/// row blocks of `g.attn.wq`, `g.attn.wk` and `g.attn.wv` (head `l` owns
/// rows `l*d_k .. (l+1)*d_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: ModelConfig,
    params: ParamSet,
}

impl Generator {
    pub const PREFIX: &'static str = "g.";

    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let hk = config.heads * config.d_k;
        let mut params = ParamSet::new();
        params.insert("g.attn.wq", xavier(rng, hk, config.d_x));
        params.insert("g.attn.wk", xavier(rng, hk, config.d_x));
        params.insert("g.attn.wv", xavier(rng, hk, config.d_x));
        params.insert("g.attn.wo", xavier(rng, config.d_x, hk));
        let mut widths = vec![config.d_x];
        widths.extend(&config.gen_hidden);
        widths.push(config.d_y);
        dense_stack(&mut params, rng, "g", &widths);
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Rebuilds a generator from stored weights, checking every shape.
    pub fn from_params(config: &ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Self::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        template.params.check_congruent(&params, "generator weights")?;
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph, how: Binding) -> Result<GeneratorNodes> {
        let p = &self.params;
        let n_layers = self.config.gen_hidden.len() + 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (w, b) in layer_names("g", n_layers) {
            layers.push((
                bind_tensor(g, &w, p.require(&w)?, how)?,
                bind_tensor(g, &b, p.require(&b)?, how)?,
            ));
        }
        Ok(GeneratorNodes {
            wq: bind_tensor(g, "g.attn.wq", p.require("g.attn.wq")?, how)?,
            wk: bind_tensor(g, "g.attn.wk", p.require("g.attn.wk")?, how)?,
            wv: bind_tensor(g, "g.attn.wv", p.require("g.attn.wv")?, how)?,
            wo: bind_tensor(g, "g.attn.wo", p.require("g.attn.wo")?, how)?,
            layers,
            heads: self.config.heads,
            d_k: self.config.d_k,
            d_x: self.config.d_x,
        })
    }

    /// Predicted fractions for a batch of `(features, index)` records.
    pub fn predict_batch(&self, records: &[(&[f64], SampleIndex)]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g, Binding::Frozen)?;
        records
            .iter()
            .map(|(x, i)| {
                let xn = g.constant(Tensor::vector(x.to_vec()))?;
                let y = nodes.forward(&mut g, xn, *i)?;
                Ok(g.value(y).data().to_vec())
            })
            .collect()
    }
}

/// Generator weights as nodes of one graph.
#[derive(Debug, Clone)]
pub struct GeneratorNodes {
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
    layers: Vec<(NodeId, NodeId)>,
    heads: usize,
    d_k: usize,
    d_x: usize,
}

impl GeneratorNodes {
    /// Per head: `A = softmax_rows(q k^T / sqrt(d_x))`, `h = A v`; the heads
    /// are concatenated and projected back to `d_x`.
    pub fn msa(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let dk = self.d_k;
        let q = g.matmul(self.wq, x)?;
        let k = g.matmul(self.wk, x)?;
        let v = g.matmul(self.wv, x)?;
        let inv_scale = 1.0 / (self.d_x as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for l in 0..self.heads {
            let ql = g.slice(q, l * dk, dk)?;
            let kl = g.slice(k, l * dk, dk)?;
            let vl = g.slice(v, l * dk, dk)?;
            let qc = g.reshape(ql, &[dk, 1])?;
            let kr = g.reshape(kl, &[1, dk])?;
            let scores = g.matmul(qc, kr)?;
            let scores = g.scale(scores, inv_scale)?;
            let attn = g.softmax(scores)?;
            heads.push(g.matmul(attn, vl)?);
        }
        let cat = g.concat(&heads)?;
        g.matmul(self.wo, cat)
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, index: SampleIndex) -> Result<NodeId> {
        let msa = self.msa(g, x)?;
        let pe = g.constant(pe_encode(index, self.d_x))?;
        let mut h = g.add(msa, pe)?;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(*w, h)?;
            let z = g.add(z, *b)?;
            h = if l == last { g.softmax(z)? } else { g.relu(z)? };
        }
        Ok(h)
    }
}

/// Discriminator weights: a ReLU stack over `concat(x, y)` ending in two
/// sigmoid units.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: ModelConfig,
    params: ParamSet,
}

impl Discriminator {
    pub const PREFIX: &'static str = "d.";

    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut widths = vec![config.d_x + config.d_y];
        widths.extend(&config.disc_hidden);
        widths.push(2);
        dense_stack(&mut params, rng, "d", &widths);
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn from_params(config: &ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Self::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        template.params.check_congruent(&params, "discriminator weights")?;
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph, how: Binding) -> Result<DiscriminatorNodes> {
        let n_layers = self.config.disc_hidden.len() + 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (w, b) in layer_names("d", n_layers) {
            layers.push((
                bind_tensor(g, &w, self.params.require(&w)?, how)?,
                bind_tensor(g, &b, self.params.require(&b)?, how)?,
            ));
        }
        Ok(DiscriminatorNodes { layers })
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorNodes {
    layers: Vec<(NodeId, NodeId)>,
}

/// The two discriminator heads for one pair, each a one-element vector.
#[derive(Debug, Clone, Copy)]
pub struct DiscHeads {
    pub real_vs_generated: NodeId,
    pub fresh_vs_original: NodeId,
}

impl DiscriminatorNodes {
    pub fn forward(&self, g: &mut Graph, x: NodeId, y: NodeId) -> Result<DiscHeads> {
        let mut h = g.concat(&[x, y])?;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(*w, h)?;
            let z = g.add(z, *b)?;
            h = if l == last { g.sigmoid(z)? } else { g.relu(z)? };
        }
        Ok(DiscHeads {
            real_vs_generated: g.slice(h, 0, 1)?,
            fresh_vs_original: g.slice(h, 1, 1)?,
        })
    }
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::ShapeMismatch {
            op: "model input",
            detail: format!("{what} has {} values, expected {n}", v.len()),
        });
    }
    Ok(())
}

/// Multi-head self-attention output for one record.
pub fn msa_forward(x: &[f64], gen: &Generator) -> Result<Vec<f64>> {
    check_len("record", x, gen.config.d_x)?;
    let mut g = Graph::new();
    let nodes = gen.bind(&mut g, Binding::Frozen)?;
    let xn = g.constant(Tensor::vector(x.to_vec()))?;
    let y = nodes.msa(&mut g, xn)?;
    Ok(g.value(y).data().to_vec())
}

/// Predicted thickness fractions for one record.
pub fn generator_forward(x: &[f64], index: SampleIndex, gen: &Generator) -> Result<Vec<f64>> {
    check_len("record", x, gen.config.d_x)?;
    Ok(gen.predict_batch(&[(x, index)])?.remove(0))
}

/// `(p_real_vs_generated, p_fresh_vs_original)` for one pair.
pub fn discriminator_forward(x: &[f64], y: &[f64], disc: &Discriminator) -> Result<(f64, f64)> {
    check_len("record", x, disc.config.d_x)?;
    check_len("fractions", y, disc.config.d_y)?;
    let mut g = Graph::new();
    let nodes = disc.bind(&mut g, Binding::Frozen)?;
    let xn = g.constant(Tensor::vector(x.to_vec()))?;
    let yn = g.constant(Tensor::vector(y.to_vec()))?;
    let heads = nodes.forward(&mut g, xn, yn)?;
    Ok((
        g.value(heads.real_vs_generated).data()[0],
        g.value(heads.fresh_vs_original).data()[0],
    ))
}
