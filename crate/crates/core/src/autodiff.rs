//! Reverse-mode automatic differentiation over a recorded expression tape.
//!
//! A [`Tape`] is a program: leaves (inputs and parameters) are declared with
//! their shapes, primitive operations are appended in topological order, and
//! [`Tape::eval`] computes every node's value for a concrete set of leaf
//! tensors. [`Tape::backward`] then walks the nodes once in reverse and returns
//! the adjoint of every parameter leaf.
//!
//! The ReLU subgradient at exactly zero is taken to be zero.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    /// Data fed at eval time; receives no gradient.
    Input,
    /// Trainable parameter; receives a gradient from `backward`.
    Param,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: String, kind: LeafKind, shape: Vec<usize> },
    Const(Tensor),
    /// Elementwise sum; the right operand may be a single row broadcast over rows.
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    /// Column-wise concatenation of matrices with equal row counts.
    Concat(Vec<NodeId>),
    /// Column range `[start, end)`.
    Slice(NodeId, usize, usize),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } | Op::Const(_) => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Sum(a) | Op::Relu(a) | Op::Sin(a) | Op::Cos(a) | Op::Square(a) => vec![*a],
            Op::Scale(a, _) | Op::Slice(a, ..) => vec![*a],
            Op::Concat(p) => p.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Sum(_) => "sum",
            Op::Relu(_) => "relu",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
        }
    }
}

/// Gradient of a scalar with respect to each parameter leaf, in leaf
/// declaration order, addressable by leaf name or by block prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl GradientVector {
    pub fn new(entries: Vec<(String, Vec<usize>, Vec<f64>)>) -> Self {
        GradientVector { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.iter().find(|e| e.0 == name).map(|e| e.2.as_slice())
    }

    /// Concatenation of every entry whose name is `block` or starts with `block.`.
    pub fn block(&self, block: &str) -> Vec<f64> {
        let prefix = format!("{block}.");
        self.entries
            .iter()
            .filter(|e| e.0 == block || e.0.starts_with(&prefix))
            .flat_map(|e| e.2.iter().copied())
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.2.iter().copied()).collect()
    }

    /// Number of named entries.
    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.entries.iter().map(|e| (e.0.as_str(), e.1.as_slice(), e.2.as_slice()))
    }

    pub fn scaled(mut self, w: f64) -> Self {
        self.entries.iter_mut().for_each(|e| e.2.iter_mut().for_each(|v| *v *= w));
        self
    }

    /// `self += w * other`; both must share the same layout.
    pub fn add_scaled(&mut self, other: &GradientVector, w: f64) {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.2.iter_mut().zip(&b.2).for_each(|(x, y)| *x += w * y);
        }
    }
}

/// A recorded program of primitive tensor operations plus cached forward values.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    ops: Vec<Op>,
    leaves: Vec<NodeId>,
    values: Vec<Option<Tensor>>,
    evaluated: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        self.values.push(None);
        self.evaluated = false;
        self.ops.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Declares a leaf. Leaves are fed to `eval` in declaration order.
    pub fn leaf(&mut self, name: impl Into<String>, kind: LeafKind, shape: &[usize]) -> NodeId {
        let id = self.push(Op::Leaf { name: name.into(), kind, shape: shape.to_vec() });
        self.leaves.push(id);
        id
    }

    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        self.leaf(name, LeafKind::Input, shape)
    }

    pub fn param(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        self.leaf(name, LeafKind::Param, shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    /// `a - b`, recorded as `add(a, scale(b, -1))`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice(a, start, end))
    }

    /// Leaf names, kinds and shapes in declaration order.
    pub fn leaves(&self) -> Vec<(&str, LeafKind, &[usize])> {
        self.leaves
            .iter()
            .map(|&id| match &self.ops[id] {
                Op::Leaf { name, kind, shape } => (name.as_str(), *kind, shape.as_slice()),
                _ => unreachable!(),
            })
            .collect()
    }

    /// Cached forward value of a node (after `eval`).
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id).and_then(|v| v.as_ref())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id].as_ref().expect("parents precede children")
    }

    /// Runs the forward pass for the given leaf values (declaration order) and
    /// returns the value of the last node.
    pub fn eval(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        self.eval_with(&inputs.iter().collect::<Vec<_>>())?;
        Ok(self.values.last().and_then(|v| v.clone()).unwrap_or_else(|| Tensor::scalar(0.0)))
    }

    /// Forward pass taking leaf values by reference; returns nothing. Use
    /// [`Tape::value`] to read results.
    pub fn run(&mut self, inputs: &[&Tensor]) -> Result<()> {
        self.eval_with(inputs)
    }

    fn eval_with(&mut self, inputs: &[&Tensor]) -> Result<()> {
        self.evaluated = false;
        if inputs.len() != self.leaves.len() {
            return Err(Error::invalid(format!(
                "tape declares {} leaves but {} inputs were given",
                self.leaves.len(),
                inputs.len()
            )));
        }
        let mut next_leaf = 0;
        for id in 0..self.ops.len() {
            let value = match &self.ops[id] {
                Op::Leaf { name, shape, .. } => {
                    let t = inputs[next_leaf];
                    next_leaf += 1;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::Shape {
                            node: id,
                            op: "leaf",
                            detail: format!("leaf `{name}` declared {shape:?}, got {:?}", t.shape()),
                        });
                    }
                    t.clone()
                }
                op => {
                    if let Some(p) = op.parents().into_iter().find(|&p| p >= id) {
                        return Err(self.shape_err(id, format!("operand {p} does not precede node {id}")));
                    }
                    self.forward_op(id, op)?
                }
            };
            self.values[id] = Some(value);
        }
        self.evaluated = true;
        Ok(())
    }

    fn shape_err(&self, id: NodeId, detail: String) -> Error {
        Error::Shape { node: id, op: self.ops[id].name(), detail }
    }

    fn forward_op(&self, id: NodeId, op: &Op) -> Result<Tensor> {
        let out = match op {
            Op::Leaf { .. } => unreachable!(),
            Op::Const(t) => t.clone(),
            Op::Add(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape() == y.shape() {
                    let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
                    Tensor::from_parts(x.shape().to_vec(), data)
                } else if y.rows() == 1 && y.cols() == x.cols() && x.shape().len() == 2 {
                    let c = x.cols();
                    let yd = y.data();
                    let data = x.data().iter().enumerate().map(|(i, p)| p + yd[i % c]).collect();
                    Tensor::from_parts(x.shape().to_vec(), data)
                } else {
                    return Err(self.shape_err(id, format!("{:?} + {:?}", x.shape(), y.shape())));
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape() != y.shape() {
                    return Err(self.shape_err(id, format!("{:?} * {:?}", x.shape(), y.shape())));
                }
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape().len() != 2 || y.shape().len() != 2 || x.cols() != y.rows() {
                    return Err(self.shape_err(id, format!("{:?} @ {:?}", x.shape(), y.shape())));
                }
                x.matmul(y)?
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Relu(a) => self.val(*a).map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Sin(a) => self.val(*a).map(f64::sin),
            Op::Cos(a) => self.val(*a).map(f64::cos),
            Op::Square(a) => self.val(*a).map(|v| v * v),
            Op::Scale(a, c) => {
                let c = *c;
                self.val(*a).map(|v| c * v)
            }
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(self.shape_err(id, "no operands".into()));
                }
                let rows = self.val(parts[0]).rows();
                let mut total = 0;
                for &p in parts {
                    let t = self.val(p);
                    if t.shape().len() != 2 || t.rows() != rows {
                        return Err(self.shape_err(id, format!("operand {p} has shape {:?}, expected {rows} rows", t.shape())));
                    }
                    total += t.cols();
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.val(p).row(r));
                    }
                }
                Tensor::from_parts(vec![rows, total], data)
            }
            Op::Slice(a, start, end) => {
                let x = self.val(*a);
                if x.shape().len() != 2 || start >= end || *end > x.cols() {
                    return Err(self.shape_err(id, format!("columns {start}..{end} of {:?}", x.shape())));
                }
                let mut data = Vec::with_capacity(x.rows() * (end - start));
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row(r)[*start..*end]);
                }
                Tensor::from_parts(vec![x.rows(), end - start], data)
            }
        };
        Ok(out)
    }

    /// Reverse pass from a scalar node; returns adjoints of all parameter leaves.
    pub fn backward(&self, output: NodeId) -> Result<GradientVector> {
        let adj = self.adjoints(output)?;
        let entries = self
            .leaves
            .iter()
            .filter_map(|&id| match &self.ops[id] {
                Op::Leaf { name, kind: LeafKind::Param, shape } => {
                    let g = adj[id].clone().unwrap_or_else(|| vec![0.0; shape.iter().product()]);
                    Some((name.clone(), shape.clone(), g))
                }
                _ => None,
            })
            .collect();
        Ok(GradientVector::new(entries))
    }

    /// Adjoints of every node with respect to a scalar output. Nodes that do not
    /// influence the output have `None`.
    pub fn adjoints(&self, output: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let out_val = self
            .value(output)
            .ok_or_else(|| Error::invalid(format!("node {output} does not exist")))?;
        if out_val.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, node {output} has shape {:?}",
                out_val.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output + 1];
        adj[output] = Some(vec![1.0]);
        for id in (0..=output).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        adj.resize(self.ops.len(), None);
        Ok(adj)
    }

    fn propagate(&self, id: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, contrib: Vec<f64>) {
            match &mut adj[id] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                slot => *slot = Some(contrib),
            }
        }
        match &self.ops[id] {
            Op::Leaf { .. } | Op::Const(_) => {}
            Op::Add(a, b) => {
                acc(adj, *a, g.to_vec());
                let y = self.val(*b);
                if y.len() == g.len() {
                    acc(adj, *b, g.to_vec());
                } else {
                    let c = y.cols();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % c] += v;
                    }
                    acc(adj, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let ga = g.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(x.data()).map(|(g, x)| g * x).collect();
                acc(adj, *a, ga);
                acc(adj, *b, gb);
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, y.data(), true, &mut ga, 0.0);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, x.data(), true, g, false, &mut gb, 0.0);
                acc(adj, *a, ga);
                acc(adj, *b, gb);
            }
            Op::Sum(a) => {
                let n = self.val(*a).len();
                acc(adj, *a, vec![g[0]; n]);
            }
            Op::Relu(a) => {
                let x = self.val(*a);
                let ga = g.iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                acc(adj, *a, ga);
            }
            Op::Sin(a) => {
                let x = self.val(*a);
                acc(adj, *a, g.iter().zip(x.data()).map(|(g, x)| g * x.cos()).collect());
            }
            Op::Cos(a) => {
                let x = self.val(*a);
                acc(adj, *a, g.iter().zip(x.data()).map(|(g, x)| -g * x.sin()).collect());
            }
            Op::Square(a) => {
                let x = self.val(*a);
                acc(adj, *a, g.iter().zip(x.data()).map(|(g, x)| 2.0 * x * g).collect());
            }
            Op::Scale(a, c) => acc(adj, *a, g.iter().map(|g| c * g).collect()),
            Op::Concat(parts) => {
                let rows = self.val(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
                let mut offset = 0;
                for &p in parts {
                    let c = self.val(p).cols();
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    acc(adj, p, gp);
                    offset += c;
                }
            }
            Op::Slice(a, start, end) => {
                let x = self.val(*a);
                let (rows, cols, w) = (x.rows(), x.cols(), end - start);
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    ga[r * cols + start..r * cols + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                acc(adj, *a, ga);
            }
        }
    }
}

/// Central finite-difference gradient of `f` at `params`, with per-coordinate
/// step `h = step * max(1, |p_i|)`.
pub fn finite_diff_grad<F>(f: F, params: &Tensor, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut grad = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let p = params.data()[i];
        let h = step * p.abs().max(1.0);
        probe.data_mut()[i] = p + h;
        let fp = f(&probe);
        probe.data_mut()[i] = p - h;
        let fm = f(&probe);
        probe.data_mut()[i] = p;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Named finite-difference gradient over several parameter tensors, returned in
/// the same layout as [`Tape::backward`].
pub fn finite_diff_named<F>(f: F, params: &[(String, Tensor)], step: f64) -> Result<GradientVector>
where
    F: Fn(&[(String, Tensor)]) -> f64,
{
    let work = RefCell::new(params.to_vec());
    let mut entries = Vec::with_capacity(params.len());
    for (i, (name, base)) in params.iter().enumerate() {
        let g = finite_diff_grad(
            |t| {
                let saved = std::mem::replace(&mut work.borrow_mut()[i].1, t.clone());
                let v = f(&work.borrow());
                work.borrow_mut()[i].1 = saved;
                v
            },
            base,
            step,
        )?;
        entries.push((name.clone(), base.shape().to_vec(), g));
    }
    Ok(GradientVector::new(entries))
}

/// Leaf-declaration-ordered map from parameter name to adjoint, convenient in tests.
pub fn gradient_map(g: &GradientVector) -> BTreeMap<String, Vec<f64>> {
    g.entries.iter().map(|e| (e.0.clone(), e.2.clone())).collect()
}
