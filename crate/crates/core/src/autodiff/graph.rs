//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every builder call evaluates its node immediately, so a graph is also a
//! tape of the forward pass. The recorded ops can be replayed with other
//! input or parameter bindings through [`Graph::forward_eval`] and
//! [`Graph::replay_with_params`], and [`Graph::backward`] propagates the
//! adjoint of a scalar node back to every named parameter.
//!
//! Nodes are appended in evaluation order, so parents always precede their
//! children and the graph is acyclic by construction.

use std::collections::BTreeMap;

use crate::autodiff::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied inside [`Graph::log_prob`]; the upper clamp is
/// `1 - PROB_EPS`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Input(String),
    Param(String),
    Constant,
    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    /// Joins scalars and vectors into one vector.
    Concat(Vec<NodeId>),
    Slice {
        src: NodeId,
        start: usize,
        len: usize,
    },
    Reshape(NodeId, Vec<usize>),
    Transpose(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// Along the last axis.
    Softmax(NodeId),
    Log(NodeId),
    /// `log(clamp(x, PROB_EPS, 1 - PROB_EPS))`.
    LogProb(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Log(_) => "log",
            Op::LogProb(_) => "log_prob",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Constant => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Slice { src: a, .. }
            | Op::Reshape(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::LogProb(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.nodes[id.0].value.item()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Parameter node registered under `name`, if any.
    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let value = compute(&op, |id| &self.nodes[id.0].value)?;
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push(op, value, needs_grad))
    }

    pub fn input(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("input `{name}`")));
        }
        Ok(self.push(Op::Input(name), value, false))
    }

    /// Registers a trainable leaf. Names must be unique within a graph.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        let id = self.push(Op::Param(name.clone()), value, true);
        self.params.insert(name, id);
        Ok(id)
    }

    /// Registers every tensor of `set` as a parameter.
    pub fn params_from(&mut self, set: &ParamSet) -> Result<BTreeMap<String, NodeId>> {
        set.iter()
            .map(|(name, t)| Ok((name.to_string(), self.param(name, t.clone())?)))
            .collect()
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite("constant".into()));
        }
        Ok(self.push(Op::Constant, value, false))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::AddScalar(a, c))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.record(Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.record(Op::Slice { src, start, len })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Op::Reshape(a, shape.to_vec()))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Softmax(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log(a))
    }

    pub fn log_prob(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::LogProb(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Square(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Mean(a))
    }

    /// Re-evaluates the recorded ops with fresh input bindings.
    ///
    /// Every input node must be bound by name. Entries that name a
    /// parameter override its recorded value.
    pub fn forward_eval(&self, bindings: &BTreeMap<String, Tensor>, outputs: &[NodeId]) -> Result<Vec<Tensor>> {
        self.replay(outputs, |op| match op {
            Op::Input(name) => bindings
                .get(name)
                .map(Some)
                .ok_or_else(|| Error::UnboundInput(name.clone())),
            Op::Param(name) => Ok(bindings.get(name)),
            _ => Ok(None),
        })
    }

    /// Re-evaluates the recorded ops with some parameters replaced; inputs
    /// keep their recorded values.
    pub fn replay_with_params(&self, params: &ParamSet, outputs: &[NodeId]) -> Result<Vec<Tensor>> {
        self.replay(outputs, |op| match op {
            Op::Param(name) => Ok(params.get(name)),
            _ => Ok(None),
        })
    }

    fn replay<'a>(
        &'a self,
        outputs: &[NodeId],
        leaf: impl Fn(&'a Op) -> Result<Option<&'a Tensor>>,
    ) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input(_) | Op::Param(_) | Op::Constant => {
                    let bound = leaf(&node.op)?;
                    match bound {
                        Some(t) => {
                            t.check_same_shape(&node.value, "forward_eval binding")?;
                            if !t.is_finite() {
                                return Err(Error::NonFinite(format!("binding for {}", node.op.name())));
                            }
                            t.clone()
                        }
                        None => node.value.clone(),
                    }
                }
                op => compute(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(outputs.iter().map(|id| values[id.0].clone()).collect())
    }

    /// Gradient of the scalar node `output` with respect to every parameter.
    /// Parameters that do not influence `output` get a zero gradient.
    pub fn backward(&self, output: NodeId) -> Result<ParamSet> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(Error::NotScalar(out.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Param(_) = node.op {
                adj[idx] = Some(g);
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut adj)?;
        }

        let mut grads = ParamSet::new();
        for (name, id) in &self.params {
            let g = match adj.get(id.0).and_then(|g| g.clone()) {
                Some(g) => g,
                None => self.nodes[id.0].value.zeros_like(),
            };
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Input(_) | Op::Param(_) | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                if bv.rank() == 1 {
                    if self.wants(*a) {
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let gi = g.data()[i];
                            if gi != 0.0 {
                                let row = &mut da[i * k..(i + 1) * k];
                                for (r, bj) in row.iter_mut().zip(bv.data()) {
                                    *r = gi * bj;
                                }
                            }
                        }
                        accumulate(adj, *a, Tensor::new(vec![m, k], da)?)?;
                    }
                    if self.wants(*b) {
                        let mut db = vec![0.0; k];
                        for i in 0..m {
                            let gi = g.data()[i];
                            let row = &av.data()[i * k..(i + 1) * k];
                            for (d, aij) in db.iter_mut().zip(row) {
                                *d += gi * aij;
                            }
                        }
                        accumulate(adj, *b, Tensor::vector(db))?;
                    }
                } else {
                    let n = bv.shape()[1];
                    if self.wants(*a) {
                        // dA = G B^T
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for j in 0..k {
                                let mut s = 0.0;
                                for c in 0..n {
                                    s += g.data()[i * n + c] * bv.data()[j * n + c];
                                }
                                da[i * k + j] = s;
                            }
                        }
                        accumulate(adj, *a, Tensor::new(vec![m, k], da)?)?;
                    }
                    if self.wants(*b) {
                        // dB = A^T G
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            for j in 0..k {
                                let aij = av.data()[i * k + j];
                                for c in 0..n {
                                    db[j * n + c] += aij * g.data()[i * n + c];
                                }
                            }
                        }
                        accumulate(adj, *b, Tensor::new(vec![k, n], db)?)?;
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.wants(*b) {
                    accumulate(adj, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.wants(*b) {
                    accumulate(adj, *b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, zip_map(g, val(*b), |x, y| x * y))?;
                }
                if self.wants(*b) {
                    accumulate(adj, *b, zip_map(g, val(*a), |x, y| x * y))?;
                }
            }
            Op::Scale(a, c) => accumulate(adj, *a, g.map(|v| v * c))?,
            Op::AddScalar(a, _) => accumulate(adj, *a, g.clone())?,
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let n = pv.len();
                    if self.wants(*p) {
                        let piece = Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                        accumulate(adj, *p, piece)?;
                    }
                    offset += n;
                }
            }
            Op::Slice { src, start, len } => {
                let mut full = val(*src).zeros_like();
                full.data_mut()[*start..start + len].copy_from_slice(g.data());
                accumulate(adj, *src, full)?;
            }
            Op::Reshape(a, _) => accumulate(adj, *a, g.reshaped(val(*a).shape())?)?,
            Op::Transpose(a) => accumulate(adj, *a, transpose(g)?)?,
            Op::Relu(a) => accumulate(adj, *a, zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }))?,
            Op::Sigmoid(a) => accumulate(adj, *a, zip_map(g, &node.value, |gv, s| gv * s * (1.0 - s)))?,
            Op::Softmax(a) => {
                let s = &node.value;
                let width = *s.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; s.len()];
                for ((srow, grow), drow) in s
                    .data()
                    .chunks(width)
                    .zip(g.data().chunks(width))
                    .zip(dx.chunks_mut(width))
                {
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((d, sv), gv) in drow.iter_mut().zip(srow).zip(grow) {
                        *d = sv * (gv - dot);
                    }
                }
                accumulate(adj, *a, Tensor::new(s.shape().to_vec(), dx)?)?;
            }
            Op::Log(a) => accumulate(adj, *a, zip_map(g, val(*a), |gv, x| gv / x))?,
            Op::LogProb(a) => accumulate(
                adj,
                *a,
                zip_map(g, val(*a), |gv, x| {
                    if x > PROB_EPS && x < 1.0 - PROB_EPS {
                        gv / x
                    } else {
                        0.0
                    }
                }),
            )?,
            Op::Square(a) => accumulate(adj, *a, zip_map(g, val(*a), |gv, x| 2.0 * x * gv))?,
            Op::Sum(a) => {
                let gv = g.item()?;
                accumulate(adj, *a, Tensor::filled(val(*a).shape(), gv))?;
            }
            Op::Mean(a) => {
                let av = val(*a);
                let gv = g.item()? / av.len() as f64;
                accumulate(adj, *a, Tensor::filled(av.shape(), gv))?;
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map preserves shape")
}

fn transpose(t: &Tensor) -> Result<Tensor> {
    if t.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "transpose",
            detail: format!("expected a matrix, got {:?}", t.shape()),
        });
    }
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    a.check_same_shape(b, op)
}

fn compute<'a>(op: &Op, get: impl Fn(NodeId) -> &'a Tensor) -> Result<Tensor> {
    let out = match op {
        Op::Input(_) | Op::Param(_) | Op::Constant => {
            return Err(Error::InvalidArgument("leaf nodes carry their own value".into()))
        }
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.rank() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    detail: format!("left operand must be a matrix, got {:?}", a.shape()),
                });
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            match b.shape() {
                [kb] if *kb == k => {
                    let bd = b.data();
                    let out = a
                        .data()
                        .chunks_exact(k)
                        .map(|row| row.iter().zip(bd).map(|(x, y)| x * y).sum())
                        .collect();
                    Tensor::vector(out)
                }
                [kb, n] if *kb == k => {
                    let n = *n;
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..k {
                            let aij = a.data()[i * k + j];
                            if aij == 0.0 {
                                continue;
                            }
                            let brow = &b.data()[j * n..(j + 1) * n];
                            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                                *o += aij * bv;
                            }
                        }
                    }
                    Tensor::new(vec![m, n], out)?
                }
                other => {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        detail: format!("{:?} x {:?}", a.shape(), other),
                    })
                }
            }
        }
        Op::Add(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape("add", a, b)?;
            zip_map(a, b, |x, y| x + y)
        }
        Op::Sub(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape("sub", a, b)?;
            zip_map(a, b, |x, y| x - y)
        }
        Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape("mul", a, b)?;
            zip_map(a, b, |x, y| x * y)
        }
        Op::Scale(a, c) => get(*a).map(|v| v * c),
        Op::AddScalar(a, c) => get(*a).map(|v| v + c),
        Op::Concat(parts) => {
            let mut out = Vec::new();
            for p in parts {
                let t = get(*p);
                if t.rank() > 1 {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        detail: format!("parts must be scalars or vectors, got {:?}", t.shape()),
                    });
                }
                out.extend_from_slice(t.data());
            }
            Tensor::vector(out)
        }
        Op::Slice { src, start, len } => {
            let t = get(*src);
            if t.rank() != 1 || start + len > t.len() {
                return Err(Error::ShapeMismatch {
                    op: "slice",
                    detail: format!("[{start}..{}] of {:?}", start + len, t.shape()),
                });
            }
            Tensor::vector(t.data()[*start..start + len].to_vec())
        }
        Op::Reshape(a, shape) => get(*a).reshaped(shape)?,
        Op::Transpose(a) => transpose(get(*a))?,
        Op::Relu(a) => get(*a).map(|v| v.max(0.0)),
        Op::Sigmoid(a) => get(*a).map(sigmoid),
        Op::Softmax(a) => {
            let t = get(*a);
            let width = *t.shape().last().ok_or(Error::ShapeMismatch {
                op: "softmax",
                detail: "scalar input".into(),
            })?;
            let mut out = t.data().to_vec();
            for row in out.chunks_mut(width) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
            Tensor::new(t.shape().to_vec(), out)?
        }
        Op::Log(a) => get(*a).map(f64::ln),
        Op::LogProb(a) => get(*a).map(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()),
        Op::Square(a) => get(*a).map(|v| v * v),
        Op::Sum(a) => Tensor::scalar(get(*a).sum()),
        Op::Mean(a) => {
            let t = get(*a);
            if t.is_empty() {
                return Err(Error::ShapeMismatch {
                    op: "mean",
                    detail: "empty tensor".into(),
                });
            }
            Tensor::scalar(t.sum() / t.len() as f64)
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite(op.name().to_string()));
    }
    Ok(out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
