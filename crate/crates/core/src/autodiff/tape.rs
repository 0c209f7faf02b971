//! Reverse-mode tape over dense row-major batches.
//!
//! Forward-mode UV tangents are recorded as ordinary nodes (the tangent of a
//! Softplus layer is `σ(x) ⊙ ẋ`), so reverse accumulation over the tape
//! differentiates through Jacobian entries as well as values.

use ndarray::{s, Array2, Axis};

use super::kernels;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Affine { x: NodeId, w: ParamId, b: Option<ParamId> },
    Softplus(NodeId),
    Sigmoid(NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Square(NodeId),
    RowSums(NodeId),
    MaxPoolRows { x: NodeId, argmax: Vec<usize> },
    BroadcastRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows { x: NodeId, idx: Vec<usize> },
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Affine { .. } => "affine",
            Op::Softplus(_) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Mul(..) => "mul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::RowSums(_) => "row_sums",
            Op::MaxPoolRows { .. } => "max_pool_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records one loss evaluation against a read-only parameter store.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn affine(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> NodeId {
        let y = kernels::affine(
            self.value(x).view(),
            self.params.get(w).view(),
            b.map(|b| self.params.get(b).view()),
        );
        self.push(y, Op::Affine { x, w, b }, true)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let y = kernels::map(self.value(x).view(), kernels::softplus);
        let rg = self.rg(x);
        self.push(y, Op::Softplus(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = kernels::map(self.value(x).view(), kernels::sigmoid);
        let rg = self.rg(x);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let y = kernels::mul(self.value(a).view(), self.value(b).view());
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Mul(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let y = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let y = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let y = self.value(x) * k;
        let rg = self.rg(x);
        self.push(y, Op::Scale(x, k), rg)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).mapv(|v| v * v);
        let rg = self.rg(x);
        self.push(y, Op::Square(x), rg)
    }

    /// n×c → n×1.
    pub fn row_sums(&mut self, x: NodeId) -> NodeId {
        let y = kernels::row_sums(self.value(x).view());
        let rg = self.rg(x);
        self.push(y, Op::RowSums(x), rg)
    }

    /// n×c → 1×c column maxima.
    pub fn max_pool_rows(&mut self, x: NodeId) -> NodeId {
        let (y, argmax) = kernels::max_pool_rows(self.value(x).view());
        let rg = self.rg(x);
        self.push(y, Op::MaxPoolRows { x, argmax }, rg)
    }

    /// 1×c → rows×c.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.nrows(), 1, "broadcast_rows expects a single row");
        let y = v.broadcast((rows, v.ncols())).unwrap().to_owned();
        let rg = self.rg(x);
        self.push(y, Op::BroadcastRows(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(y, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(y, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let y = self.value(x).select(Axis(0), &idx);
        let rg = self.rg(x);
        self.push(y, Op::GatherRows { x, idx }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = kernels::sum_all(self.value(x).view());
        let rg = self.rg(x);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = kernels::sum_all(v.view()) / v.len() as f64;
        let rg = self.rg(x);
        self.push(Array2::from_elem((1, 1), s), Op::Mean(x), rg)
    }

    /// Reports the first non-finite node, if any.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !kernels::all_finite(n.value.view()) {
                return Err(Error::NonFiniteValue {
                    location: format!("tape node {i} ({})", n.op.name()),
                });
            }
        }
        Ok(())
    }

    /// Reverse accumulation from a scalar node. Parameters that do not
    /// influence `loss` receive exact zeros.
    pub fn backprop(&self, loss: NodeId, loss_adjoint: f64) -> Result<Gradients> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::InvalidTape(format!("node {} not on tape", loss.0)))?;
        if root.value.dim() != (1, 1) {
            return Err(Error::InvalidTape(format!(
                "loss node has shape {:?}, expected a scalar",
                root.value.dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem((1, 1), loss_adjoint));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    grads.grads[w.0] += &g.t().dot(xv);
                    if let Some(b) = b {
                        grads.grads[b.0] += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                    if self.rg(*x) {
                        let gx = g.dot(self.params.get(*w));
                        accumulate(&mut adj, *x, gx);
                    }
                }
                Op::Softplus(x) => {
                    let gx = kernels::mul(g.view(), self.value(*x).mapv(kernels::sigmoid).view());
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = kernels::mul(g.view(), y.mapv(|s| s * (1.0 - s)).view());
                    accumulate(&mut adj, *x, gx);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = kernels::mul(g.view(), self.value(*b).view());
                        accumulate(&mut adj, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = kernels::mul(g.view(), self.value(*a).view());
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, -g);
                    }
                }
                Op::Scale(x, k) => accumulate(&mut adj, *x, g * *k),
                Op::Square(x) => {
                    let gx = kernels::mul(g.view(), self.value(*x).view()) * 2.0;
                    accumulate(&mut adj, *x, gx);
                }
                Op::RowSums(x) => {
                    let cols = self.value(*x).ncols();
                    let gx = g.broadcast((g.nrows(), cols)).unwrap().to_owned();
                    accumulate(&mut adj, *x, gx);
                }
                Op::MaxPoolRows { x, argmax } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[[r, c]] += g[[0, c]];
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::BroadcastRows(x) => {
                    accumulate(&mut adj, *x, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.rg(p) {
                            accumulate(&mut adj, p, g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.rg(p) {
                            accumulate(&mut adj, p, g.slice(s![off..off + h, ..]).to_owned());
                        }
                        off += h;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.value(*x).raw_dim(), g[[0, 0]]);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Mean(x) => {
                    let v = self.value(*x);
                    let gx = Array2::from_elem(v.raw_dim(), g[[0, 0]] / v.len() as f64);
                    accumulate(&mut adj, *x, gx);
                }
            }
        }
        for (id, g) in grads.iter() {
            if !kernels::all_finite(g.view()) {
                return Err(Error::NonFiniteGradient {
                    param: self.params.name(id).to_string(),
                });
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut adj[id.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with(w: Array2<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", w);
        (s, id)
    }

    #[test]
    fn non_scalar_root_is_invalid() {
        let (s, w) = store_with(array![[1.0, 2.0]]);
        let mut t = Tape::new(&s);
        let x = t.constant(array![[1.0, 1.0], [2.0, 2.0]]);
        let y = t.affine(x, w, None);
        assert!(matches!(t.backprop(y, 1.0), Err(Error::InvalidTape(_))));
    }

    #[test]
    fn unused_parameters_get_exact_zeros() {
        let mut s = ParamStore::new();
        let w = s.add("w", array![[2.0]]);
        let unused = s.add("unused", array![[5.0, 6.0]]);
        let mut t = Tape::new(&s);
        let x = t.constant(array![[3.0]]);
        let y = t.affine(x, w, None);
        let l = t.sum(y);
        let g = t.backprop(l, 1.0).unwrap();
        assert_eq!(g.get(w)[[0, 0]], 3.0);
        assert!(g.get(unused).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_of_linear_outputs_gives_input_outer_structure() {
        // loss = sum(W p + b) → ∂/∂W_ij = p_j, ∂/∂b_i = 1
        let mut s = ParamStore::new();
        let w = s.add("w", array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let b = s.add("b", Array2::zeros((1, 3)));
        let mut t = Tape::new(&s);
        let p = t.constant(array![[0.3, 0.7]]);
        let y = t.affine(p, w, Some(b));
        assert_eq!(t.value(y), &array![[0.3, 0.7, 0.0]]);
        let l = t.sum(y);
        let g = t.backprop(l, 1.0).unwrap();
        for i in 0..3 {
            assert_eq!(g.get(w)[[i, 0]], 0.3);
            assert_eq!(g.get(w)[[i, 1]], 0.7);
            assert_eq!(g.get(b)[[0, i]], 1.0);
        }
    }

    #[test]
    fn frobenius_of_tangent_gives_2a() {
        // φ(u,v) = (a·u, 0, 0): J = [[a,0],[0,0],[0,0]], ||J||² = a², d/da = 2a.
        let (s, a) = store_with(array![[3.0, 0.0]]);
        let mut t = Tape::new(&s);
        let du = t.constant(array![[1.0, 0.0]]);
        let dv = t.constant(array![[0.0, 1.0]]);
        let ju = t.affine(du, a, None);
        let jv = t.affine(dv, a, None);
        let ju2 = t.square(ju);
        let jv2 = t.square(jv);
        let su = t.sum(ju2);
        let sv = t.sum(jv2);
        let l = t.add(su, sv);
        assert_eq!(t.scalar(l), 9.0);
        let g = t.backprop(l, 1.0).unwrap();
        assert_eq!(g.get(a)[[0, 0]], 6.0);
        assert_eq!(g.get(a)[[0, 1]], 0.0);
    }

    #[test]
    fn check_finite_reports_location() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.constant(array![[1.0, f64::NAN]]);
        let _ = t.sum(x);
        let err = t.check_finite().unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { ref location } if location.contains("node 0")));
    }

    #[test]
    fn gather_and_pool_route_adjoints() {
        let (s, w) = store_with(array![[1.0]]);
        let mut t = Tape::new(&s);
        let x = t.constant(array![[1.0], [4.0], [2.0]]);
        let y = t.affine(x, w, None);
        let g = t.gather_rows(y, vec![2, 2, 0]);
        let p = t.max_pool_rows(y);
        let sg = t.sum(g);
        let sp = t.sum(p);
        let l = t.add(sg, sp);
        // loss = w(2+2+1) + w·4
        assert_eq!(t.scalar(l), 9.0);
        let grads = t.backprop(l, 1.0).unwrap();
        assert_eq!(grads.get(w)[[0, 0]], 9.0);
    }
}
