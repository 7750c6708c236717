//! Tape-style reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep. Gradients
//! accumulate, which makes a sum of losses backpropagate as the sum of the
//! individual backward passes.

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Concat(NodeId, NodeId),
    SliceLast(NodeId, usize, usize),
    Reshape(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Square(NodeId),
    SoftmaxRows(NodeId),
    Gelu(NodeId),
    LayerNormRows(NodeId, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if any
    /// reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2().map_err(|_| shape_err("matmul", av, bv))?;
        let (k2, n) = bv.dims2().map_err(|_| shape_err("matmul", av, bv))?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op_name, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        self.derived(value, Op::Scale(a, factor), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(a).transpose2()?;
        Ok(self.derived(value, Op::Transpose(a), &[a]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last_dim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, rb) = (av.rank(), bv.rank());
        if ra == 0 || ra != rb || av.shape()[..ra - 1] != bv.shape()[..rb - 1] {
            return Err(shape_err("concat_last_dim", av, bv));
        }
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        let rows = av.outer_len();
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = av.shape().to_vec();
        shape[ra - 1] = ca + cb;
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::Concat(a, b), &[a, b]))
    }

    /// Keeps columns `start..end` of the last axis.
    pub fn slice_last_dim(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, NumericsError> {
        let av = self.value(a);
        let c = av.last_dim();
        if av.rank() == 0 || start >= end || end > c {
            return Err(NumericsError::Slice {
                shape: av.shape().to_vec(),
                start,
                end,
            });
        }
        let w = end - start;
        let rows = av.outer_len();
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * c + start..r * c + end]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::SliceLast(a, start, end), &[a]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NumericsError> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.derived(value, Op::Reshape(a), &[a]))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.derived(value, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        self.derived(value, Op::MeanAll(a), &[a])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v * v);
        self.derived(value, Op::Square(a), &[a])
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let av = self.value(a);
        if av.rank() < 2 {
            return Err(NumericsError::Rank {
                expected: 2,
                shape: av.shape().to_vec(),
            });
        }
        let c = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::SoftmaxRows(a), &[a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.derived(value, Op::Gelu(a), &[a])
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let av = self.value(a);
        let c = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            let (mean, inv_std) = row_moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::LayerNormRows(a, eps), &[a])
    }

    /// Backpropagates from a single-element node, accumulating into every
    /// upstream node that needs a gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<(), NumericsError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(NumericsError::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let seed = Tensor::filled(rv.shape(), 1.0);
        self.accumulate(root, seed);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &grad);
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn accumulate(&mut self, id: NodeId, contribution: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().expect("checked at build");
                let n = self.value(b).last_dim();
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(g.data(), self.value(b).data(), &mut da, m, n, k);
                    self.accumulate(a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(self.value(a).data(), g.data(), &mut db, m, k, n);
                    self.accumulate(b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let d = zip(g, self.value(b), |x, y| x * y);
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let d = zip(g, self.value(a), |x, y| x * y);
                    self.accumulate(b, d);
                }
            }
            Op::Scale(a, f) => self.accumulate(a, g.map(|v| v * f)),
            Op::Transpose(a) => self.accumulate(a, g.transpose2().unwrap()),
            Op::Concat(a, b) => {
                let ca = self.value(a).last_dim();
                let cb = self.value(b).last_dim();
                let rows = g.outer_len();
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for row in g.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                let sa = self.value(a).shape().to_vec();
                let sb = self.value(b).shape().to_vec();
                self.accumulate(a, Tensor::new(sa, da).unwrap());
                self.accumulate(b, Tensor::new(sb, db).unwrap());
            }
            Op::SliceLast(a, start, end) => {
                let av = self.value(a);
                let c = av.last_dim();
                let w = end - start;
                let mut d = Tensor::zeros(av.shape());
                for (r, grow) in g.data().chunks(w).enumerate() {
                    d.data_mut()[r * c + start..r * c + end].copy_from_slice(grow);
                }
                self.accumulate(a, d);
            }
            Op::Reshape(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, g.reshaped(&shape).unwrap());
            }
            Op::SumAll(a) => {
                let d = Tensor::filled(self.value(a).shape(), g.data()[0]);
                self.accumulate(a, d);
            }
            Op::MeanAll(a) => {
                let av = self.value(a);
                let d = Tensor::filled(av.shape(), g.data()[0] / av.len().max(1) as f64);
                self.accumulate(a, d);
            }
            Op::Square(a) => {
                let d = zip(g, self.value(a), |gv, x| 2.0 * x * gv);
                self.accumulate(a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let c = y.last_dim();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                let d = Tensor::new(y.shape().to_vec(), d).unwrap();
                self.accumulate(a, d);
            }
            Op::Gelu(a) => {
                let d = zip(g, self.value(a), |gv, x| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                self.accumulate(a, d);
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.value(a);
                let y = &self.nodes[i].value;
                let c = x.last_dim();
                let mut d = Vec::with_capacity(x.len());
                for ((xr, yr), gr) in x
                    .data()
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let (_, inv_std) = row_moments(xr, eps);
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                    d.extend(
                        gr.iter()
                            .zip(yr)
                            .map(|(gv, yv)| inv_std * (gv - mean_g - yv * mean_gy)),
                    );
                }
                let d = Tensor::new(x.shape().to_vec(), d).unwrap();
                self.accumulate(a, d);
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
