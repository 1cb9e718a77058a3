//! Forward evaluation and reverse-mode differentiation of a [`Graph`].
//!
//! `forward` walks the recorded nodes in order and materializes every
//! intermediate tensor. `backward` walks them in reverse, accumulating
//! gradients with the hand-derived rule for each primitive. Everything is
//! `f64`; with a fixed dropout seed both passes are bit-reproducible, which
//! the training determinism contract relies on.
//!
//! `finite_diff_check` is the referee: it re-derives every parameter
//! gradient by central differences and reports the worst relative
//! disagreement, so each primitive's backward rule is validated against an
//! independent computation rather than against itself.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, LeafKind, NodeId, Op};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Named tensor collections: parameters, bindings, gradients.
pub type TensorMap = BTreeMap<String, Tensor>;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Acceptance threshold on the relative error between analytic and numeric
/// gradients.
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct EvalContext {
    /// Apply dropout when true; dropout is the identity otherwise.
    pub train: bool,
    /// Seed for dropout masks. Masks depend only on this seed and the node
    /// id, never on evaluation order.
    pub dropout_seed: u64,
    /// Scan every intermediate for NaN/Inf and fail fast.
    pub check_finite: bool,
}

impl Default for EvalContext {
    fn default() -> Self {
        Self { train: false, dropout_seed: 0, check_finite: cfg!(debug_assertions) }
    }
}

impl EvalContext {
    pub fn train(dropout_seed: u64) -> Self {
        Self { train: true, dropout_seed, ..Self::default() }
    }
}

/// All intermediate values from one forward pass, plus the dropout masks
/// that were drawn, so backward replays the identical computation.
#[derive(Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn output<'a>(&'a self, graph: &Graph, name: &str) -> Result<&'a Tensor> {
        Ok(&self.values[graph.output_id(name)?])
    }
}

// ── Dense kernels ────────────────────────────────────────────────────────

/// C[m,n] = A[m,k] * B[k,n]; ikj order keeps all three row-major walks.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] * B^T where B is stored [k,n].
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// C[k,n] = A^T * B where A is stored [m,k] and B is [m,n].
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for l in 0..m {
        let arow = &a[l * k..(l + 1) * k];
        let brow = &b[l * n..(l + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn last_axis(shape: &[usize]) -> (usize, usize) {
    let width = *shape.last().unwrap_or(&1);
    let rows = shape.iter().product::<usize>() / width.max(1);
    (rows, width)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn integral_index(node: &str, v: f64, rows: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || (v as usize) >= rows {
        return Err(Error::Malformed(format!(
            "{node}: index {v} is not a valid row of a {rows}-row table"
        )));
    }
    Ok(v as usize)
}

// ── Forward ──────────────────────────────────────────────────────────────

/// Evaluate every node. Parameters satisfy `Param` leaves, `bindings`
/// satisfy `Input` leaves; a missing or mis-shaped entry is an error naming
/// the leaf.
pub fn forward(
    graph: &Graph,
    params: &TensorMap,
    bindings: &TensorMap,
    ctx: &EvalContext,
) -> Result<Evaluation> {
    let nodes = graph.nodes();
    let mut values: Vec<Tensor> = Vec::with_capacity(nodes.len());
    let mut masks: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];

    for (id, node) in nodes.iter().enumerate() {
        let value = match &node.op {
            Op::Input | Op::Param => {
                let name = node.leaf.as_deref().expect("leaf node carries a name");
                let source = if matches!(node.op, Op::Param) { params } else { bindings };
                let got = source.get(name).ok_or_else(|| Error::MissingBinding(name.to_string()))?;
                if got.shape() != node.shape.as_slice() {
                    return Err(Error::Shape {
                        node: graph.label(id),
                        detail: format!("declared {:?}, bound {:?}", node.shape, got.shape()),
                    });
                }
                got.clone()
            }
            Op::Add | Op::Sub | Op::Mul => {
                let a = &values[node.inputs[0]];
                let b = &values[node.inputs[1]];
                let bn = b.numel();
                let mut out = a.data().to_vec();
                let bd = b.data();
                match node.op {
                    Op::Add => out.iter_mut().enumerate().for_each(|(i, v)| *v += bd[i % bn]),
                    Op::Sub => out.iter_mut().enumerate().for_each(|(i, v)| *v -= bd[i % bn]),
                    _ => out.iter_mut().enumerate().for_each(|(i, v)| *v *= bd[i % bn]),
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::MatMul => {
                let a = &values[node.inputs[0]];
                let b = &values[node.inputs[1]];
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                Tensor::new(node.shape.clone(), matmul(a.data(), b.data(), m, k, n))?
            }
            Op::Transpose => {
                let a = &values[node.inputs[0]];
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let ad = a.data();
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = ad[i * n + j];
                    }
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Reshape(shape) => Tensor::new(shape.clone(), values[node.inputs[0]].data().to_vec())?,
            Op::Concat => {
                let (rows, width) = last_axis(&node.shape);
                let mut out = vec![0.0; rows * width];
                let mut offset = 0;
                for &src in &node.inputs {
                    let t = &values[src];
                    let w = *t.shape().last().unwrap();
                    for r in 0..rows {
                        out[r * width + offset..r * width + offset + w]
                            .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
                    }
                    offset += w;
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::SliceLast { start, len } => {
                let a = &values[node.inputs[0]];
                let (rows, w) = last_axis(a.shape());
                let mut out = vec![0.0; rows * len];
                for r in 0..rows {
                    out[r * len..(r + 1) * len]
                        .copy_from_slice(&a.data()[r * w + start..r * w + start + len]);
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Gather => {
                let table = &values[node.inputs[0]];
                let idx = &values[node.inputs[1]];
                let (rows, c) = (table.shape()[0], table.shape()[1]);
                let mut out = Vec::with_capacity(idx.numel() * c);
                for &v in idx.data() {
                    let r = integral_index(&graph.label(id), v, rows)?;
                    out.extend_from_slice(&table.data()[r * c..(r + 1) * c]);
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Softmax => {
                let a = &values[node.inputs[0]];
                let (rows, w) = last_axis(a.shape());
                let mut out = vec![0.0; rows * w];
                for r in 0..rows {
                    softmax_row(&a.data()[r * w..(r + 1) * w], &mut out[r * w..(r + 1) * w]);
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::LogSoftmax => {
                let a = &values[node.inputs[0]];
                let (rows, w) = last_axis(a.shape());
                let mut out = vec![0.0; rows * w];
                for r in 0..rows {
                    let row = &a.data()[r * w..(r + 1) * w];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                    for (o, &x) in out[r * w..(r + 1) * w].iter_mut().zip(row) {
                        *o = x - lse;
                    }
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::MaskedSoftmax { masked } => {
                let a = &values[node.inputs[0]];
                let (rows, w) = last_axis(a.shape());
                let mut out = vec![0.0; rows * w];
                for r in 0..rows {
                    let row = &a.data()[r * w..(r + 1) * w];
                    let max = row
                        .iter()
                        .zip(masked)
                        .filter(|(_, &m)| !m)
                        .map(|(&x, _)| x)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..w {
                        if !masked[j] {
                            let e = (row[j] - max).exp();
                            out[r * w + j] = e;
                            sum += e;
                        }
                    }
                    for j in 0..w {
                        if !masked[j] {
                            out[r * w + j] /= sum;
                        }
                    }
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Relu => {
                let mut out = values[node.inputs[0]].data().to_vec();
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Log => {
                let mut out = values[node.inputs[0]].data().to_vec();
                out.iter_mut().for_each(|v| *v = v.ln());
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Scale(c) => {
                let mut out = values[node.inputs[0]].data().to_vec();
                out.iter_mut().for_each(|v| *v *= c);
                Tensor::new(node.shape.clone(), out)?
            }
            Op::LayerNorm { eps } => {
                let x = &values[node.inputs[0]];
                let gain = values[node.inputs[1]].data();
                let bias = values[node.inputs[2]].data();
                let (rows, w) = last_axis(x.shape());
                let mut out = vec![0.0; rows * w];
                for r in 0..rows {
                    let row = &x.data()[r * w..(r + 1) * w];
                    let mean = row.iter().sum::<f64>() / w as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    for j in 0..w {
                        out[r * w + j] = (row[j] - mean) * inv * gain[j] + bias[j];
                    }
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Dropout { rate } => {
                let a = &values[node.inputs[0]];
                if ctx.train && *rate > 0.0 {
                    let mut rng = stream(ctx.dropout_seed, "dropout-node", &[id as u64]);
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..a.numel())
                        .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    let out = a.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    masks[id] = Some(mask);
                    Tensor::new(node.shape.clone(), out)?
                } else {
                    a.clone()
                }
            }
            Op::SumAll => Tensor::scalar(values[node.inputs[0]].data().iter().sum()),
            Op::MeanAll => {
                let a = &values[node.inputs[0]];
                Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
            }
            Op::SquaredError => {
                let a = values[node.inputs[0]].data();
                let b = values[node.inputs[1]].data();
                Tensor::scalar(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
            }
            Op::ArgmaxGather => {
                let w = &values[node.inputs[0]];
                let table = &values[node.inputs[1]];
                let c = table.shape()[1];
                let mut best = 0usize;
                for (j, &v) in w.data().iter().enumerate() {
                    if v > w.data()[best] {
                        best = j;
                    }
                }
                Tensor::new(node.shape.clone(), table.data()[best * c..(best + 1) * c].to_vec())?
            }
        };
        if ctx.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { node: graph.label(id) });
        }
        values.push(value);
    }

    Ok(Evaluation { values, masks })
}

// ── Backward ─────────────────────────────────────────────────────────────

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        None => *slot = Some(delta),
    }
}

/// Sum a gradient of `lhs` shape down to the suffix-broadcast `rhs` shape.
fn reduce_to_suffix(gy: &Tensor, rhs_shape: &[usize]) -> Tensor {
    let rn: usize = rhs_shape.iter().product();
    let mut out = vec![0.0; rn];
    for (i, v) in gy.data().iter().enumerate() {
        out[i % rn] += v;
    }
    Tensor::new(rhs_shape.to_vec(), out).expect("suffix shape")
}

/// Reverse pass from the named output. `output_grad` defaults to 1 for
/// single-element outputs and is required otherwise. Returns one gradient
/// tensor per parameter leaf; parameters the output does not depend on get
/// zero tensors.
pub fn backward(
    graph: &Graph,
    eval: &Evaluation,
    output: &str,
    output_grad: Option<&Tensor>,
) -> Result<TensorMap> {
    let out_id = graph.output_id(output)?;
    let out_shape = eval.values[out_id].shape().to_vec();
    let seed = match output_grad {
        Some(g) => {
            if g.shape() != out_shape.as_slice() {
                return Err(Error::Shape {
                    node: format!("output `{output}`"),
                    detail: format!("gradient shape {:?} != output shape {:?}", g.shape(), out_shape),
                });
            }
            g.clone()
        }
        None => {
            if eval.values[out_id].numel() != 1 {
                return Err(Error::NonScalarOutput { output: output.to_string() });
            }
            Tensor::filled(&out_shape, 1.0)
        }
    };

    let nodes = graph.nodes();
    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    grads[out_id] = Some(seed);

    for id in (0..nodes.len()).rev() {
        let Some(gy) = grads[id].take() else { continue };
        let node = &nodes[id];
        match &node.op {
            Op::Input | Op::Param => {
                // Leaves keep their gradient; restore it for collection.
                grads[id] = Some(gy);
            }
            Op::Add => {
                let b_shape = eval.values[node.inputs[1]].shape().to_vec();
                accumulate(&mut grads[node.inputs[1]], reduce_to_suffix(&gy, &b_shape));
                accumulate(&mut grads[node.inputs[0]], gy);
            }
            Op::Sub => {
                let b_shape = eval.values[node.inputs[1]].shape().to_vec();
                let mut gb = reduce_to_suffix(&gy, &b_shape);
                gb.data_mut().iter_mut().for_each(|v| *v = -*v);
                accumulate(&mut grads[node.inputs[1]], gb);
                accumulate(&mut grads[node.inputs[0]], gy);
            }
            Op::Mul => {
                let a = &eval.values[node.inputs[0]];
                let b = &eval.values[node.inputs[1]];
                let bn = b.numel();
                let mut ga = gy.clone();
                for (i, v) in ga.data_mut().iter_mut().enumerate() {
                    *v *= b.data()[i % bn];
                }
                let mut prod = gy.clone();
                for (i, v) in prod.data_mut().iter_mut().enumerate() {
                    *v *= a.data()[i];
                }
                let gb = reduce_to_suffix(&prod, b.shape());
                accumulate(&mut grads[node.inputs[0]], ga);
                accumulate(&mut grads[node.inputs[1]], gb);
            }
            Op::MatMul => {
                let a = &eval.values[node.inputs[0]];
                let b = &eval.values[node.inputs[1]];
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let ga = matmul_nt(gy.data(), b.data(), m, n, k);
                let gb = matmul_tn(a.data(), gy.data(), m, k, n);
                accumulate(&mut grads[node.inputs[0]], Tensor::new(vec![m, k], ga)?);
                accumulate(&mut grads[node.inputs[1]], Tensor::new(vec![k, n], gb)?);
            }
            Op::Transpose => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = gy.data()[i * n + j];
                    }
                }
                accumulate(&mut grads[node.inputs[0]], Tensor::new(vec![n, m], out)?);
            }
            Op::Reshape(_) => {
                let src_shape = eval.values[node.inputs[0]].shape().to_vec();
                accumulate(&mut grads[node.inputs[0]], Tensor::new(src_shape, gy.into_data())?);
            }
            Op::Concat => {
                let (rows, width) = last_axis(&node.shape);
                let mut offset = 0;
                for &src in &node.inputs {
                    let s = eval.values[src].shape().to_vec();
                    let w = *s.last().unwrap();
                    let mut part = vec![0.0; rows * w];
                    for r in 0..rows {
                        part[r * w..(r + 1) * w]
                            .copy_from_slice(&gy.data()[r * width + offset..r * width + offset + w]);
                    }
                    accumulate(&mut grads[src], Tensor::new(s, part)?);
                    offset += w;
                }
            }
            Op::SliceLast { start, len } => {
                let src_shape = eval.values[node.inputs[0]].shape().to_vec();
                let (rows, w) = last_axis(&src_shape);
                let mut out = vec![0.0; rows * w];
                for r in 0..rows {
                    out[r * w + start..r * w + start + len]
                        .copy_from_slice(&gy.data()[r * len..(r + 1) * len]);
                }
                accumulate(&mut grads[node.inputs[0]], Tensor::new(src_shape, out)?);
            }
            Op::Gather => {
                let table = &eval.values[node.inputs[0]];
                let idx = &eval.values[node.inputs[1]];
                let c = table.shape()[1];
                let mut gt = Tensor::zeros(table.shape());
                for (j, &v) in idx.data().iter().enumerate() {
                    let r = v as usize;
                    for col in 0..c {
                        gt.data_mut()[r * c + col] += gy.data()[j * c + col];
                    }
                }
                accumulate(&mut grads[node.inputs[0]], gt);
                // Index input is non-differentiable; it receives no gradient.
            }
            Op::Softmax | Op::MaskedSoftmax { .. } => {
                let y = &eval.values[id];
                let (rows, w) = last_axis(y.shape());
                let mut gx = vec![0.0; rows * w];
                for r in 0..rows {
                    let yr = &y.data()[r * w..(r + 1) * w];
                    let gr = &gy.data()[r * w..(r + 1) * w];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..w {
                        gx[r * w + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(&mut grads[node.inputs[0]], Tensor::new(node.shape.clone(), gx)?);
            }
            Op::LogSoftmax => {
                let y = &eval.values[id];
                let (rows, w) = last_axis(y.shape());
                let mut gx = vec![0.0; rows * w];
                for r in 0..rows {
                    let yr = &y.data()[r * w..(r + 1) * w];
                    let gr = &gy.data()[r * w..(r + 1) * w];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..w {
                        gx[r * w + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                accumulate(&mut grads[node.inputs[0]], Tensor::new(node.shape.clone(), gx)?);
            }
            Op::Relu => {
                let x = &eval.values[node.inputs[0]];
                let mut gx = gy;
                for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                accumulate(&mut grads[node.inputs[0]], gx);
            }
            Op::Log => {
                let x = &eval.values[node.inputs[0]];
                let mut gx = gy;
                for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                    *g /= v;
                }
                accumulate(&mut grads[node.inputs[0]], gx);
            }
            Op::Scale(c) => {
                let mut gx = gy;
                gx.data_mut().iter_mut().for_each(|v| *v *= c);
                accumulate(&mut grads[node.inputs[0]], gx);
            }
            Op::LayerNorm { eps } => {
                let x = &eval.values[node.inputs[0]];
                let gain = eval.values[node.inputs[1]].data();
                let (rows, w) = last_axis(x.shape());
                let wf = w as f64;
                let mut gx = vec![0.0; rows * w];
                let mut ggain = vec![0.0; w];
                let mut gbias = vec![0.0; w];
                for r in 0..rows {
                    let row = &x.data()[r * w..(r + 1) * w];
                    let gr = &gy.data()[r * w..(r + 1) * w];
                    let mean = row.iter().sum::<f64>() / wf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / wf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut gnorm_mean = 0.0;
                    let mut gnorm_dot = 0.0;
                    for j in 0..w {
                        let xh = (row[j] - mean) * inv;
                        let gn = gr[j] * gain[j];
                        ggain[j] += gr[j] * xh;
                        gbias[j] += gr[j];
                        gnorm_mean += gn;
                        gnorm_dot += gn * xh;
                    }
                    gnorm_mean /= wf;
                    gnorm_dot /= wf;
                    for j in 0..w {
                        let xh = (row[j] - mean) * inv;
                        let gn = gr[j] * gain[j];
                        gx[r * w + j] = (gn - gnorm_mean - xh * gnorm_dot) * inv;
                    }
                }
                accumulate(&mut grads[node.inputs[0]], Tensor::new(node.shape.clone(), gx)?);
                accumulate(&mut grads[node.inputs[1]], Tensor::new(vec![w], ggain)?);
                accumulate(&mut grads[node.inputs[2]], Tensor::new(vec![w], gbias)?);
            }
            Op::Dropout { .. } => {
                let mut gx = gy;
                if let Some(mask) = &eval.masks[id] {
                    for (g, m) in gx.data_mut().iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                accumulate(&mut grads[node.inputs[0]], gx);
            }
            Op::SumAll => {
                let src_shape = eval.values[node.inputs[0]].shape().to_vec();
                accumulate(&mut grads[node.inputs[0]], Tensor::filled(&src_shape, gy.item()));
            }
            Op::MeanAll => {
                let src = &eval.values[node.inputs[0]];
                let g = gy.item() / src.numel() as f64;
                accumulate(&mut grads[node.inputs[0]], Tensor::filled(src.shape(), g));
            }
            Op::SquaredError => {
                let a = &eval.values[node.inputs[0]];
                let b = &eval.values[node.inputs[1]];
                let g = gy.item();
                let mut ga = Tensor::zeros(a.shape());
                let mut gb = Tensor::zeros(b.shape());
                for i in 0..a.numel() {
                    let d = 2.0 * g * (a.data()[i] - b.data()[i]);
                    ga.data_mut()[i] = d;
                    gb.data_mut()[i] = -d;
                }
                accumulate(&mut grads[node.inputs[0]], ga);
                accumulate(&mut grads[node.inputs[1]], gb);
            }
            Op::ArgmaxGather => {
                // Constant with respect to both inputs: nothing flows back.
            }
        }
    }

    let mut out = TensorMap::new();
    for (name, id, kind) in graph.leaves() {
        if kind == LeafKind::Param {
            let g = grads[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(&graph.node(id).shape));
            out.insert(name.to_string(), g);
        }
    }
    Ok(out)
}

// ── Numeric gradient referee ─────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Parameter name and flat element index of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare analytic gradients of the named scalar output against central
/// finite differences `(f(p+h) - f(p-h)) / 2h` at every parameter entry.
/// The relative error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    graph: &Graph,
    params: &TensorMap,
    bindings: &TensorMap,
    output: &str,
    h: f64,
    ctx: &EvalContext,
) -> Result<FdReport> {
    let eval = forward(graph, params, bindings, ctx)?;
    if eval.output(graph, output)?.numel() != 1 {
        return Err(Error::NonScalarOutput { output: output.to_string() });
    }
    let analytic = backward(graph, &eval, output, None)?;

    let mut work = params.clone();
    let mut report = FdReport { max_rel_err: 0.0, worst: None, entries_checked: 0 };
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let n = params[&name].numel();
        for i in 0..n {
            let orig = params[&name].data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = forward(graph, &work, bindings, ctx)?.output(graph, output)?.item();
            work.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = forward(graph, &work, bindings, ctx)?.output(graph, output)?.item();
            work.get_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let exact = analytic[&name].data()[i];
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
