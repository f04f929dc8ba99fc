//! Tape-based reverse-mode differentiation over vector-valued nodes.
//!
//! Nodes are appended in evaluation order, so the tape index is already a
//! topological order; `backward` walks it in reverse from the loss node.

use super::tensor::{affine, sigmoid, softplus};
use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `W·x + b` with `W` stored row-major in the weight node.
    Affine {
        w: NodeId,
        b: NodeId,
        x: NodeId,
    },
    Tanh(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Square(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        src: NodeId,
        start: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    rows: usize,
    cols: usize,
}

/// Single-use computation graph. Build it with the forward ops, then call
/// [`Graph::backward`] once the scalar loss node is in place.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>, rows: usize, cols: usize) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            rows,
            cols,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn vec_push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        let n = value.len();
        self.push(op, value, n, 1)
    }

    /// Vector leaf: a parameter or a constant input.
    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.vec_push(Op::Leaf, value)
    }

    /// Matrix leaf (row-major).
    pub fn matrix_leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId> {
        ensure_dim("matrix leaf", rows * cols, data.len())?;
        Ok(self.push(Op::Leaf, data, rows, cols))
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = (self.nodes[w.0].rows, self.nodes[w.0].cols);
        ensure_dim("affine input", cols, self.nodes[x.0].value.len())?;
        ensure_dim("affine bias", rows, self.nodes[b.0].value.len())?;
        let mut out = vec![0.0; rows];
        affine(
            &self.nodes[w.0].value,
            cols,
            &self.nodes[x.0].value,
            &self.nodes[b.0].value,
            &mut out,
        );
        Ok(self.vec_push(Op::Affine { w, b, x }, out))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.vec_push(op, v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn offset(&mut self, a: NodeId, k: f64) -> NodeId {
        self.unary(a, Op::Offset(a), |x| x + k)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        ensure_dim("elementwise operand", va.len(), vb.len())?;
        let v = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.vec_push(op, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.iter().sum();
        self.vec_push(Op::Sum(a), vec![s])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let v = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.vec_push(Op::Concat(parts.to_vec()), v)
    }

    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.nodes[src.0].value.len();
        if start + len > n {
            return Err(Error::dim("slice bounds", n, start + len));
        }
        let v = self.nodes[src.0].value[start..start + len].to_vec();
        Ok(self.vec_push(Op::Slice { src, start }, v))
    }

    /// Reverse sweep from a scalar loss node. The loss adjoint is seeded with 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let width = self.nodes[loss.0].value.len();
        if width != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss node, got width {width}"
            )));
        }
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            if g.iter().all(|&x| x == 0.0) {
                adj[i] = g;
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Affine { w, b, x } => {
                    let cols = self.nodes[w.0].cols;
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    for (r, gr) in g.iter().enumerate() {
                        adj[b.0][r] += gr;
                        let wrow = &mut adj[w.0][r * cols..(r + 1) * cols];
                        for (dw, xj) in wrow.iter_mut().zip(xv) {
                            *dw += gr * xj;
                        }
                    }
                    let dx = &mut adj[x.0];
                    for (r, gr) in g.iter().enumerate() {
                        let row = &wv[r * cols..(r + 1) * cols];
                        for (d, wrj) in dx.iter_mut().zip(row) {
                            *d += gr * wrj;
                        }
                    }
                }
                Op::Tanh(a) => {
                    for ((d, y), gi) in adj[a.0].iter_mut().zip(&node.value).zip(&g) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Softplus(a) => {
                    let xs = &self.nodes[a.0].value;
                    for ((d, x), gi) in adj[a.0].iter_mut().zip(xs).zip(&g) {
                        *d += gi * sigmoid(*x);
                    }
                }
                Op::Log(a) => {
                    let xs = &self.nodes[a.0].value;
                    for ((d, x), gi) in adj[a.0].iter_mut().zip(xs).zip(&g) {
                        *d += gi / x;
                    }
                }
                Op::Square(a) => {
                    let xs = &self.nodes[a.0].value;
                    for ((d, x), gi) in adj[a.0].iter_mut().zip(xs).zip(&g) {
                        *d += gi * 2.0 * x;
                    }
                }
                Op::Scale(a, k) => {
                    for (d, gi) in adj[a.0].iter_mut().zip(&g) {
                        *d += gi * k;
                    }
                }
                Op::Offset(a) => {
                    for (d, gi) in adj[a.0].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &g, 1.0);
                    accumulate(&mut adj[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], &g, 1.0);
                    accumulate(&mut adj[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for k in 0..g.len() {
                        adj[a.0][k] += g[k] * vb[k];
                        adj[b.0][k] += g[k] * va[k];
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for k in 0..g.len() {
                        adj[a.0][k] += g[k] / vb[k];
                        adj[b.0][k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                }
                Op::Sum(a) => {
                    for d in adj[a.0].iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut adj[p.0], &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    accumulate(&mut adj[src.0][*start..*start + g.len()], &g, 1.0);
                }
            }
            adj[i] = g;
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Adjoints of every node after a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> &[f64] {
        &self.adjoints[id.0]
    }
}
