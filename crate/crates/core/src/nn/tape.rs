//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value. Because a node
//! can only reference nodes that already exist, the node list is always in
//! topological order and the backward pass is a single reverse sweep.
//!
//! ```
//! use vrfm_core::nn::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::scalar(3.0), true);
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().as_slice(), &[6.0]);
//! ```

use std::sync::Arc;

use super::matrix::{gemm, Matrix};
use super::NnError;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation recorded by a node.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Input or parameter; no inputs.
    Leaf,
    /// `(m x k) * (k x n)`.
    MatMul,
    /// Elementwise sum. The right operand may be a `1 x n` row broadcast over
    /// the rows of the left operand (bias addition).
    Add,
    /// Elementwise difference of equally shaped operands.
    Sub,
    /// Elementwise product of equally shaped operands.
    Mul,
    /// Column-wise concatenation of any number of operands with equal row count.
    Concat,
    /// Exact GeLU, `x * Phi(x)`.
    Gelu,
    /// `x * sigmoid(x)`.
    Silu,
    Square,
    /// Mean of all entries, producing a `1 x 1` node.
    Mean,
    /// Sum of all entries, producing a `1 x 1` node.
    Sum,
    Log,
    Exp,
    Scale(f64),
    /// Sinusoidal embedding of every entry; an `n x k` input becomes
    /// `n x (k * dim)`.
    SinEmbed { dim: usize, max_period: f64 },
    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    Clamp { lo: f64, hi: f64 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Concat => "concat",
            Op::Gelu => "gelu",
            Op::Silu => "silu",
            Op::Square => "square",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::Scale(_) => "scale",
            Op::SinEmbed { .. } => "sin_embed",
            Op::Clamp { .. } => "clamp",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Arc<Matrix>,
    /// Forward intermediate reused by the backward pass (GeLU: `Phi(x)`).
    aux: Option<Matrix>,
    requires_grad: bool,
}

/// Computation record for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    visits: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, if `id` requires a gradient
    /// and the loss depends on it.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `id`, or zeros of `shape` when the loss does
    /// not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }

    /// Number of nodes visited by the backward sweep.
    pub fn visits(&self) -> usize {
        self.visits
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Frequencies of a sinusoidal embedding with `dim / 2` geometrically
/// spaced entries from 1 down to `1 / max_period`.
pub fn embedding_frequencies(dim: usize, max_period: f64) -> Vec<f64> {
    let half = dim / 2;
    if half <= 1 {
        return vec![1.0; half];
    }
    let log_period = max_period.ln();
    (0..half)
        .map(|i| (-log_period * i as f64 / (half - 1) as f64).exp())
        .collect()
}

fn shape_err(op: &Op, detail: String) -> NnError {
    NnError::ShapeMismatch {
        op: op.name(),
        detail,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input or parameter node.
    pub fn leaf(&mut self, value: impl Into<Arc<Matrix>>, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value.into(), None, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(
        &mut self,
        op: Op,
        inputs: Vec<NodeId>,
        value: Arc<Matrix>,
        aux: Option<Matrix>,
        requires_grad: bool,
    ) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            aux,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records `op` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, NnError> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(NnError::UnknownNode(id.0));
            }
        }
        let arity_ok = match op {
            Op::Leaf => false,
            Op::Concat => !inputs.is_empty(),
            Op::MatMul | Op::Add | Op::Sub | Op::Mul => inputs.len() == 2,
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(shape_err(&op, format!("got {} inputs", inputs.len())));
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let (value, aux) = if op == Op::Gelu {
            let x = &self.nodes[inputs[0].0].value;
            let cdf = x.map(std_normal_cdf);
            let value = x.zip_map(&cdf, |v, c| v * c);
            (value, requires_grad.then_some(cdf))
        } else {
            (self.eval(&op, inputs)?, None)
        };
        Ok(self.push(op, inputs.to_vec(), Arc::new(value), aux, requires_grad))
    }

    fn eval(&self, op: &Op, inputs: &[NodeId]) -> Result<Matrix, NnError> {
        let a = &self.nodes[inputs[0].0].value;
        let value = match op {
            Op::Leaf => unreachable!("leaf nodes are created with Tape::leaf"),
            Op::MatMul => {
                let b = &self.nodes[inputs[1].0].value;
                if a.cols() != b.rows() {
                    return Err(shape_err(
                        op,
                        format!("{}x{} * {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                    ));
                }
                a.matmul(b)
            }
            Op::Add => {
                let b = &self.nodes[inputs[1].0].value;
                if a.shape() == b.shape() {
                    a.zip_map(b, |x, y| x + y)
                } else if b.rows() == 1 && b.cols() == a.cols() {
                    let mut out = Matrix::clone(a);
                    for r in 0..out.rows() {
                        for (o, &bias) in out.row_slice_mut(r).iter_mut().zip(b.as_slice()) {
                            *o += bias;
                        }
                    }
                    out
                } else {
                    return Err(shape_err(
                        op,
                        format!("{}x{} + {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                    ));
                }
            }
            Op::Sub | Op::Mul => {
                let b = &self.nodes[inputs[1].0].value;
                if a.shape() != b.shape() {
                    return Err(shape_err(
                        op,
                        format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                    ));
                }
                if *op == Op::Sub {
                    a.zip_map(b, |x, y| x - y)
                } else {
                    a.zip_map(b, |x, y| x * y)
                }
            }
            Op::Concat => {
                let rows = a.rows();
                let mut cols = 0;
                for id in inputs {
                    let m = &self.nodes[id.0].value;
                    if m.rows() != rows {
                        return Err(shape_err(
                            op,
                            format!("row count {} vs {}", m.rows(), rows),
                        ));
                    }
                    cols += m.cols();
                }
                let mut out = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let dst = out.row_slice_mut(r);
                    let mut offset = 0;
                    for id in inputs {
                        let src = self.nodes[id.0].value.row_slice(r);
                        dst[offset..offset + src.len()].copy_from_slice(src);
                        offset += src.len();
                    }
                }
                out
            }
            Op::Gelu => a.map(|x| x * std_normal_cdf(x)),
            Op::Silu => a.map(|x| x * sigmoid(x)),
            Op::Square => a.map(|x| x * x),
            Op::Mean => {
                if a.is_empty() {
                    return Err(shape_err(op, "empty input".into()));
                }
                Matrix::scalar(a.sum() / a.len() as f64)
            }
            Op::Sum => Matrix::scalar(a.sum()),
            Op::Log => a.map(f64::ln),
            Op::Exp => a.map(f64::exp),
            Op::Scale(s) => a.map(|x| x * s),
            Op::SinEmbed { dim, max_period } => {
                if *dim < 2 || dim % 2 != 0 {
                    return Err(NnError::OddEmbeddingDim(*dim));
                }
                let freqs = embedding_frequencies(*dim, *max_period);
                let mut out = Matrix::zeros(a.rows(), a.cols() * dim);
                for r in 0..a.rows() {
                    let src = a.row_slice(r);
                    let dst = out.row_slice_mut(r);
                    for (j, &v) in src.iter().enumerate() {
                        for (i, &w) in freqs.iter().enumerate() {
                            dst[j * dim + 2 * i] = (v * w).sin();
                            dst[j * dim + 2 * i + 1] = (v * w).cos();
                        }
                    }
                }
                out
            }
            Op::Clamp { lo, hi } => a.map(|x| x.clamp(*lo, *hi)),
        };
        Ok(value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId, NnError> {
        self.apply(Op::Concat, inputs)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Gelu, &[a])
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Silu, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Square, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Mean, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Sum, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Log, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        self.apply(Op::Exp, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, NnError> {
        self.apply(Op::Scale(factor), &[a])
    }

    pub fn sin_embed(&mut self, a: NodeId, dim: usize, max_period: f64) -> Result<NodeId, NnError> {
        self.apply(Op::SinEmbed { dim, max_period }, &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId, NnError> {
        self.apply(Op::Clamp { lo, hi }, &[a])
    }

    /// Gradients of the scalar node `loss` with respect to every node that
    /// requires a gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NnError> {
        let shape = self.nodes.get(loss.0).ok_or(NnError::UnknownNode(loss.0))?.value.shape();
        if shape != (1, 1) {
            return Err(NnError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        self.backward_with_seed(loss, Matrix::scalar(1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`)
    /// back through the tape.
    pub fn backward_with_seed(&self, output: NodeId, seed: Matrix) -> Result<Gradients, NnError> {
        let node = self.nodes.get(output.0).ok_or(NnError::UnknownNode(output.0))?;
        if node.value.shape() != seed.shape() {
            return Err(shape_err(
                &node.op,
                format!(
                    "seed {}x{} for output {}x{}",
                    seed.rows(),
                    seed.cols(),
                    node.value.rows(),
                    node.value.cols()
                ),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        let mut visits = 0;
        for idx in (0..=output.0).rev() {
            visits += 1;
            let node = &self.nodes[idx];
            if !node.requires_grad || node.op == Op::Leaf {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads, visits })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut accumulate = |id: NodeId, delta: Matrix| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if wants(a) {
                    accumulate(a, gemm(g, false, input(1), true));
                }
                if wants(b) {
                    accumulate(b, gemm(input(0), true, g, false));
                }
            }
            Op::Add => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if wants(a) {
                    accumulate(a, g.clone());
                }
                if wants(b) {
                    let bv = input(1);
                    if bv.shape() == g.shape() {
                        accumulate(b, g.clone());
                    } else {
                        let mut reduced = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (acc, &v) in reduced.as_mut_slice().iter_mut().zip(g.row_slice(r)) {
                                *acc += v;
                            }
                        }
                        accumulate(b, reduced);
                    }
                }
            }
            Op::Sub => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if wants(a) {
                    accumulate(a, g.clone());
                }
                if wants(b) {
                    accumulate(b, g.map(|v| -v));
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if wants(a) {
                    accumulate(a, g.zip_map(input(1), |gv, bv| gv * bv));
                }
                if wants(b) {
                    accumulate(b, g.zip_map(input(0), |gv, av| gv * av));
                }
            }
            Op::Concat => {
                let mut offset = 0;
                for &id in &node.inputs {
                    let cols = self.nodes[id.0].value.cols();
                    if wants(id) {
                        let mut part = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            part.row_slice_mut(r)
                                .copy_from_slice(&g.row_slice(r)[offset..offset + cols]);
                        }
                        accumulate(id, part);
                    }
                    offset += cols;
                }
            }
            Op::Gelu => {
                let x = input(0);
                let mut out = Matrix::zeros(x.rows(), x.cols());
                let cdf = node.aux.as_ref().expect("gelu caches Phi(x) when a gradient is required");
                for (((o, &gv), &xv), &c) in out
                    .as_mut_slice()
                    .iter_mut()
                    .zip(g.as_slice())
                    .zip(x.as_slice())
                    .zip(cdf.as_slice())
                {
                    *o = gv * (c + xv * std_normal_pdf(xv));
                }
                accumulate(node.inputs[0], out);
            }
            Op::Silu => {
                let a = node.inputs[0];
                accumulate(
                    a,
                    g.zip_map(input(0), |gv, x| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    }),
                );
            }
            Op::Square => {
                accumulate(node.inputs[0], g.zip_map(input(0), |gv, x| 2.0 * gv * x));
            }
            Op::Mean => {
                let x = input(0);
                let gv = g.as_slice()[0] / x.len() as f64;
                accumulate(node.inputs[0], Matrix::filled(x.rows(), x.cols(), gv));
            }
            Op::Sum => {
                let x = input(0);
                accumulate(
                    node.inputs[0],
                    Matrix::filled(x.rows(), x.cols(), g.as_slice()[0]),
                );
            }
            Op::Log => {
                accumulate(node.inputs[0], g.zip_map(input(0), |gv, x| gv / x));
            }
            Op::Exp => {
                accumulate(node.inputs[0], g.zip_map(&node.value, |gv, y| gv * y));
            }
            Op::Scale(s) => {
                accumulate(node.inputs[0], g.map(|gv| gv * s));
            }
            Op::SinEmbed { dim, max_period } => {
                let x = input(0);
                let freqs = embedding_frequencies(*dim, *max_period);
                let mut out = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gr = g.row_slice(r);
                    let yr = node.value.row_slice(r);
                    for j in 0..x.cols() {
                        let mut acc = 0.0;
                        for (i, &w) in freqs.iter().enumerate() {
                            let s = yr[j * dim + 2 * i];
                            let c = yr[j * dim + 2 * i + 1];
                            acc += w * (gr[j * dim + 2 * i] * c - gr[j * dim + 2 * i + 1] * s);
                        }
                        out.set(r, j, acc);
                    }
                }
                accumulate(node.inputs[0], out);
            }
            Op::Clamp { lo, hi } => {
                accumulate(
                    node.inputs[0],
                    g.zip_map(input(0), |gv, x| if x < *lo || x > *hi { 0.0 } else { gv }),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn add_elementwise() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::row(&[1.0, 2.0]), false);
        let b = t.leaf(Matrix::row(&[3.0, 4.0]), false);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).as_slice(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i = t.leaf(Matrix::identity(2), false);
        let v = t.leaf(Matrix::column(&[5.0, 7.0]), false);
        let out = t.matmul(i, v).unwrap();
        assert_eq!(t.value(out).as_slice(), &[5.0, 7.0]);
    }

    #[test]
    fn gelu_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0), false);
        let y = t.gelu(x).unwrap();
        assert_eq!(t.value(y).as_slice(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_dims() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3), false);
        let b = t.leaf(Matrix::zeros(2, 3), false);
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("2x3 * 2x3"), "{err}");
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0), true);
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn mean_of_constants_has_zero_grads() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::row(&[1.0, 2.0]), true);
        let c = t.leaf(Matrix::row(&[4.0, 5.0]), false);
        let zero = t.scale(w, 0.0).unwrap();
        let s = t.add(zero, c).unwrap();
        let m = t.mean(s).unwrap();
        assert_eq!(t.value(m).as_slice(), &[4.5]);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(w).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn gelu_gradient_matches_finite_difference() {
        let f = |x: f64| x * std_normal_cdf(x);
        let h = 1e-5;
        let fd = (f(1.5 + h) - f(1.5 - h)) / (2.0 * h);
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(1.5), true);
        let y = t.gelu(x).unwrap();
        let g = t.backward(y).unwrap().get(x).unwrap().as_slice()[0];
        assert!(((g - fd) / fd).abs() < 1e-6, "{g} vs {fd}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row(&[1.0, 2.0]), true);
        let y = t.square(x).unwrap();
        assert!(matches!(t.backward(y), Err(NnError::NonScalarLoss { .. })));
    }

    #[test]
    fn backward_visits_every_node_once() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row(&[1.0, -2.0, 0.5]), true);
        let c = t.leaf(Matrix::row(&[0.1, 0.2, 0.3]), false);
        let a = t.mul(x, c).unwrap();
        let b = t.gelu(a).unwrap();
        let d = t.add(b, x).unwrap();
        let l = t.sum(d).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.visits(), t.len());
    }

    #[test]
    fn sin_embed_layout() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::column(&[0.0]), false);
        let e = t.sin_embed(x, 8, 1e4).unwrap();
        assert_eq!(t.value(e).as_slice(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let y = t.leaf(Matrix::column(&[0.7]), false);
        let e2 = t.sin_embed(y, 2, 1e4).unwrap();
        assert!(approx(t.value(e2).get(0, 0), 0.7f64.sin(), 1e-15));
        assert!(approx(t.value(e2).get(0, 1), 0.7f64.cos(), 1e-15));
        assert!(matches!(t.sin_embed(y, 3, 1e4), Err(NnError::OddEmbeddingDim(3))));
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(3, 2, vec![1.0; 6]), false);
        let b = t.leaf(Matrix::row(&[0.5, -0.5]), true);
        let y = t.add(x, b).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(b).unwrap().as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn frequencies_span_one_to_inverse_period() {
        let f = embedding_frequencies(64, 1e4);
        assert_eq!(f.len(), 32);
        assert!(approx(f[0], 1.0, 1e-15));
        assert!(approx(f[31], 1e-4, 1e-12));
        assert!(f.windows(2).all(|w| w[1] < w[0]));
    }
}
