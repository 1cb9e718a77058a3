//! Computation graphs over [`Tensor`] values.
//!
//! A [`Graph`] is a define-then-run recording of primitive operations.
//! Leaves are either named *parameters* (trainable, supplied by a
//! [`crate::TensorMap`]) or named *inputs* (per-example bindings). Interior
//! nodes apply one primitive each. Shapes are inferred and validated at
//! construction time so a malformed wiring fails before any numbers flow.
//!
//! The same graph can be evaluated repeatedly with different bindings; see
//! [`crate::autodiff::forward`] and [`crate::autodiff::backward`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Primitive operations. Backward rules live in `autodiff`.
#[derive(Debug, Clone)]
pub enum Op {
    /// Leaf bound per evaluation (ids, coordinates, targets, constants).
    Input,
    /// Leaf holding a trainable tensor; receives a gradient.
    Param,
    /// Elementwise sum. The right operand may have a shape that is a
    /// trailing suffix of the left (broadcast over leading axes).
    Add,
    /// Elementwise difference, same broadcast rule as [`Op::Add`].
    Sub,
    /// Elementwise (Hadamard) product, same broadcast rule as [`Op::Add`].
    Mul,
    /// Rank-2 matrix product `[m,k] x [k,n] -> [m,n]`.
    MatMul,
    /// Rank-2 transpose.
    Transpose,
    /// Same-element reinterpretation to a new shape.
    Reshape(Vec<usize>),
    /// Concatenation along the last axis; leading axes must agree.
    Concat,
    /// Contiguous slice of the last axis.
    SliceLast { start: usize, len: usize },
    /// Row lookup: `(table [r,c], indices [k]) -> [k,c]`. Indices must hold
    /// integral values in `0..r`; their gradient is zero, the table gradient
    /// is a scatter-add of output rows.
    Gather,
    /// Row-wise softmax over the last axis.
    Softmax,
    /// Row-wise log-softmax over the last axis (numerically stable).
    LogSoftmax,
    /// Row-wise softmax where `masked[j] == true` forces weight exactly 0
    /// at slot `j`; remaining weights still sum to 1.
    MaskedSoftmax { masked: Vec<bool> },
    /// Elementwise max(x, 0).
    Relu,
    /// Elementwise natural logarithm.
    Log,
    /// Multiplication by a compile-time constant.
    Scale(f64),
    /// `(x, gain, bias)`: normalize the last axis to zero mean and unit
    /// variance, then apply the learned affine.
    LayerNorm { eps: f64 },
    /// Inverted dropout; identity when evaluated with `train == false`.
    Dropout { rate: f64 },
    /// Sum of all elements, shape `[1]`.
    SumAll,
    /// Mean of all elements, shape `[1]`.
    MeanAll,
    /// `(a, b)` same shape: sum of squared differences, shape `[1]`.
    SquaredError,
    /// `(weights [r], table [r,c]) -> [c]`: the table row at the argmax of
    /// `weights` (ties break to the lowest index). Constant with respect to
    /// both inputs — no gradient flows through this node.
    ArgmaxGather,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Concat => "concat",
            Op::SliceLast { .. } => "slice_last",
            Op::Gather => "gather",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::Relu => "relu",
            Op::Log => "log",
            Op::Scale(_) => "scale",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::SumAll => "sum_all",
            Op::MeanAll => "mean_all",
            Op::SquaredError => "squared_error",
            Op::ArgmaxGather => "argmax_gather",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    /// Leaf name for `Input`/`Param` nodes.
    pub leaf: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Input,
    Param,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: Vec<(String, NodeId)>,
    leaves: BTreeMap<String, (NodeId, LeafKind)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    pub fn output_id(&self, name: &str) -> Result<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::UnknownOutput(name.to_string()))
    }

    /// Leaf names with their node ids and kinds, in name order.
    pub fn leaves(&self) -> impl Iterator<Item = (&str, NodeId, LeafKind)> {
        self.leaves.iter().map(|(n, (id, k))| (n.as_str(), *id, *k))
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .filter(|(_, (_, k))| *k == LeafKind::Param)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// Human-readable node label for error messages.
    pub fn label(&self, id: NodeId) -> String {
        let node = &self.nodes[id];
        match &node.leaf {
            Some(name) => format!("n{id}:{}`{name}`", node.op.name()),
            None => format!("n{id}:{}", node.op.name()),
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>, leaf: Option<String>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, shape, leaf });
        id
    }

    fn shape_err(&self, op: &Op, detail: String) -> Error {
        Error::Shape { node: format!("n{}:{}", self.nodes.len(), op.name()), detail }
    }

    fn check_rank2(&self, op: &Op, id: NodeId) -> Result<(usize, usize)> {
        let s = &self.nodes[id].shape;
        if s.len() != 2 {
            return Err(self.shape_err(op, format!("expected rank-2 operand, {} has shape {s:?}", self.label(id))));
        }
        Ok((s[0], s[1]))
    }

    fn leaf(&mut self, name: &str, shape: &[usize], kind: LeafKind) -> Result<NodeId> {
        if self.leaves.contains_key(name) {
            return Err(Error::Config(format!("duplicate leaf name `{name}`")));
        }
        let op = match kind {
            LeafKind::Input => Op::Input,
            LeafKind::Param => Op::Param,
        };
        let id = self.push(op, vec![], shape.to_vec(), Some(name.to_string()));
        self.leaves.insert(name.to_string(), (id, kind));
        Ok(id)
    }

    /// Declare a per-evaluation input leaf.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.leaf(name, shape, LeafKind::Input)
    }

    /// Declare a trainable parameter leaf.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.leaf(name, shape, LeafKind::Param)
    }

    /// Declare a trainable parameter leaf, or return the existing one when
    /// the name is already declared with the same shape — weight sharing
    /// across sub-networks built by repeated calls of one builder.
    pub fn shared_param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if let Some(&(id, kind)) = self.leaves.get(name) {
            if kind != LeafKind::Param {
                return Err(Error::Config(format!("leaf `{name}` is an input, not a parameter")));
            }
            if self.nodes[id].shape != shape {
                return Err(Error::Config(format!(
                    "shared parameter `{name}` redeclared with shape {shape:?}, was {:?}",
                    self.nodes[id].shape
                )));
            }
            return Ok(id);
        }
        self.param(name, shape)
    }

    /// Expose a node as a named output.
    pub fn mark_output(&mut self, name: &str, id: NodeId) -> Result<()> {
        if self.outputs.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate output name `{name}`")));
        }
        self.outputs.push((name.to_string(), id));
        Ok(())
    }

    fn elementwise(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].shape.clone();
        let sb = self.nodes[b].shape.clone();
        if sa != sb && !sa.ends_with(&sb) {
            return Err(self.shape_err(
                &op,
                format!("operand shapes {sa:?} and {sb:?} neither match nor suffix-broadcast"),
            ));
        }
        Ok(self.push(op, vec![a, b], sa, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Mul, a, b)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.check_rank2(&Op::MatMul, a)?;
        let (k2, n) = self.check_rank2(&Op::MatMul, b)?;
        if k != k2 {
            return Err(self.shape_err(
                &Op::MatMul,
                format!("inner dimensions disagree: [{m},{k}] x [{k2},{n}]"),
            ));
        }
        Ok(self.push(Op::MatMul, vec![a, b], vec![m, n], None))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.check_rank2(&Op::Transpose, a)?;
        Ok(self.push(Op::Transpose, vec![a], vec![n, m], None))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = self.nodes[a].shape.iter().product();
        let target: usize = shape.iter().product();
        if numel != target {
            return Err(self.shape_err(
                &Op::Reshape(shape.to_vec()),
                format!("cannot reshape {:?} ({numel} elements) to {shape:?} ({target})", self.nodes[a].shape),
            ));
        }
        Ok(self.push(Op::Reshape(shape.to_vec()), vec![a], shape.to_vec(), None))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(self.shape_err(&Op::Concat, "needs at least one operand".into()));
        }
        let first = self.nodes[parts[0]].shape.clone();
        if first.is_empty() {
            return Err(self.shape_err(&Op::Concat, "operands must have rank >= 1".into()));
        }
        let lead = &first[..first.len() - 1];
        let mut last = 0usize;
        for &p in parts {
            let s = &self.nodes[p].shape;
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(self.shape_err(
                    &Op::Concat,
                    format!("leading axes disagree: {first:?} vs {s:?}"),
                ));
            }
            last += s[s.len() - 1];
        }
        let mut shape = lead.to_vec();
        shape.push(last);
        Ok(self.push(Op::Concat, parts.to_vec(), shape, None))
    }

    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.nodes[a].shape.clone();
        let op = Op::SliceLast { start, len };
        let Some(&width) = s.last() else {
            return Err(self.shape_err(&op, "operand must have rank >= 1".into()));
        };
        if start + len > width {
            return Err(self.shape_err(&op, format!("slice {start}..{} exceeds axis of size {width}", start + len)));
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        Ok(self.push(op, vec![a], shape, None))
    }

    pub fn gather(&mut self, table: NodeId, indices: NodeId) -> Result<NodeId> {
        let (_, c) = self.check_rank2(&Op::Gather, table)?;
        let si = self.nodes[indices].shape.clone();
        if si.len() != 1 {
            return Err(self.shape_err(&Op::Gather, format!("indices must be rank-1, got {si:?}")));
        }
        Ok(self.push(Op::Gather, vec![table, indices], vec![si[0], c], None))
    }

    fn rowwise(&mut self, op: Op, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a].shape.clone();
        if s.is_empty() || *s.last().unwrap() == 0 {
            return Err(self.shape_err(&op, format!("needs a non-empty last axis, got {s:?}")));
        }
        Ok(self.push(op, vec![a], s, None))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.rowwise(Op::Softmax, a)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.rowwise(Op::LogSoftmax, a)
    }

    pub fn masked_softmax(&mut self, a: NodeId, masked: Vec<bool>) -> Result<NodeId> {
        let s = self.nodes[a].shape.clone();
        let op = Op::MaskedSoftmax { masked: masked.clone() };
        if s.last() != Some(&masked.len()) {
            return Err(self.shape_err(&op, format!("mask length {} != last axis of {s:?}", masked.len())));
        }
        if masked.iter().all(|&m| m) {
            return Err(self.shape_err(&op, "every slot is masked".into()));
        }
        self.rowwise(op, a)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a].shape.clone();
        Ok(self.push(Op::Relu, vec![a], s, None))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a].shape.clone();
        Ok(self.push(Op::Log, vec![a], s, None))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let s = self.nodes[a].shape.clone();
        Ok(self.push(Op::Scale(factor), vec![a], s, None))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let op = Op::LayerNorm { eps };
        let s = self.nodes[x].shape.clone();
        let Some(&width) = s.last() else {
            return Err(self.shape_err(&op, "operand must have rank >= 1".into()));
        };
        for &affine in &[gain, bias] {
            if self.nodes[affine].shape != [width] {
                return Err(self.shape_err(
                    &op,
                    format!(
                        "gain/bias must have shape [{width}], got {:?}",
                        self.nodes[affine].shape
                    ),
                ));
            }
        }
        Ok(self.push(op, vec![x, gain, bias], s, None))
    }

    pub fn dropout(&mut self, a: NodeId, rate: f64) -> Result<NodeId> {
        let op = Op::Dropout { rate };
        if !(0.0..1.0).contains(&rate) {
            return Err(self.shape_err(&op, format!("rate {rate} outside [0, 1)")));
        }
        let s = self.nodes[a].shape.clone();
        Ok(self.push(op, vec![a], s, None))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        Ok(self.push(Op::SumAll, vec![a], vec![1], None))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        Ok(self.push(Op::MeanAll, vec![a], vec![1], None))
    }

    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].shape.clone();
        let sb = self.nodes[b].shape.clone();
        if sa != sb {
            return Err(self.shape_err(&Op::SquaredError, format!("operand shapes differ: {sa:?} vs {sb:?}")));
        }
        Ok(self.push(Op::SquaredError, vec![a, b], vec![1], None))
    }

    pub fn argmax_gather(&mut self, weights: NodeId, table: NodeId) -> Result<NodeId> {
        let sw = self.nodes[weights].shape.clone();
        if sw.len() != 1 {
            return Err(self.shape_err(&Op::ArgmaxGather, format!("weights must be rank-1, got {sw:?}")));
        }
        let (rows, c) = self.check_rank2(&Op::ArgmaxGather, table)?;
        if rows != sw[0] {
            return Err(self.shape_err(
                &Op::ArgmaxGather,
                format!("weights length {} != table rows {rows}", sw[0]),
            ));
        }
        Ok(self.push(Op::ArgmaxGather, vec![weights, table], vec![c], None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_inference() {
        let mut g = Graph::new();
        let a = g.input("a", &[2, 3]).unwrap();
        let b = g.input("b", &[3, 4]).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.node(c).shape, vec![2, 4]);
    }

    #[test]
    fn matmul_inner_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.input("a", &[2, 3]).unwrap();
        let b = g.input("b", &[4, 4]).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("inner dimensions"), "{err}");
    }

    #[test]
    fn suffix_broadcast_accepted_prefix_rejected() {
        let mut g = Graph::new();
        let x = g.input("x", &[4, 3]).unwrap();
        let bias = g.input("bias", &[3]).unwrap();
        let head = g.input("head", &[4]).unwrap();
        assert!(g.add(x, bias).is_ok());
        assert!(g.add(x, head).is_err());
    }

    #[test]
    fn concat_tracks_last_axis() {
        let mut g = Graph::new();
        let a = g.input("a", &[2, 3]).unwrap();
        let b = g.input("b", &[2, 5]).unwrap();
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.node(c).shape, vec![2, 8]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut g = Graph::new();
        g.param("w", &[2, 2]).unwrap();
        assert!(g.input("w", &[2]).is_err());
        let n = g.param("v", &[1]).unwrap();
        g.mark_output("y", n).unwrap();
        assert!(g.mark_output("y", n).is_err());
    }

    #[test]
    fn fully_masked_softmax_rejected() {
        let mut g = Graph::new();
        let a = g.input("a", &[3]).unwrap();
        assert!(g.masked_softmax(a, vec![true, true, true]).is_err());
        assert!(g.masked_softmax(a, vec![false, true, true]).is_ok());
    }
}
