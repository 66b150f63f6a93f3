use std::borrow::Cow;

use super::kernels::{axpy, dot, log_softmax, matvec, softmax_into};
use super::{Gradients, ParamId, ParamStore, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param,
    Affine,
    Tanh,
    SoftmaxRow,
    EmbeddingLookup,
    MeanRows,
    Concat,
    Add,
    AddRowBroadcast,
    Scale,
    Dot,
    WeightedRows,
    CrossEntropyPick,
    Sum,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Affine {
        w: usize,
        x: usize,
        b: Option<usize>,
    },
    Tanh(usize),
    SoftmaxRow(usize),
    Embedding {
        table: usize,
        ids: Vec<u32>,
    },
    MeanRows(usize),
    Concat(Vec<usize>),
    Add(usize, usize),
    AddRowBroadcast {
        m: usize,
        v: usize,
    },
    Scale(usize, f64),
    Dot(usize, usize),
    WeightedRows {
        weights: usize,
        rows: usize,
    },
    CrossEntropyPick {
        logits: usize,
        target: usize,
    },
    Sum(Vec<usize>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Constant => OpKind::Constant,
            Op::Param(_) => OpKind::Param,
            Op::Affine { .. } => OpKind::Affine,
            Op::Tanh(_) => OpKind::Tanh,
            Op::SoftmaxRow(_) => OpKind::SoftmaxRow,
            Op::Embedding { .. } => OpKind::EmbeddingLookup,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::Concat(_) => OpKind::Concat,
            Op::Add(..) => OpKind::Add,
            Op::AddRowBroadcast { .. } => OpKind::AddRowBroadcast,
            Op::Scale(..) => OpKind::Scale,
            Op::Dot(..) => OpKind::Dot,
            Op::WeightedRows { .. } => OpKind::WeightedRows,
            Op::CrossEntropyPick { .. } => OpKind::CrossEntropyPick,
            Op::Sum(_) => OpKind::Sum,
        }
    }
}

struct Node<'p, T: Scalar> {
    op: Op,
    value: Cow<'p, Tensor<T>>,
}

/// Append-only operation record. Inputs always precede their consumers, so
/// node order is a valid topological order for the backward sweep.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
    param_nodes: Vec<Option<NodeId>>,
}

fn mismatch<T: Scalar>(op: OpKind, ts: &[&Tensor<T>]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        shapes: ts.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.kind() });
        }
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn v(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId, TensorError> {
        self.push(Op::Constant, value)
    }

    /// Leaf node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Cow::Borrowed(self.params.get(id)),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// `W·x + b` for a vector `x`, or `X·Wᵀ + b` applied to every row of a matrix `x`.
    pub fn affine(
        &mut self,
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, TensorError> {
        let (wt, xt) = (self.v(w), self.v(x));
        if wt.shape().len() != 2 || xt.cols() != wt.cols() || xt.shape().len() > 2 {
            return Err(mismatch(OpKind::Affine, &[wt, xt]));
        }
        let m = wt.rows();
        if let Some(b) = b {
            let bt = self.v(b);
            if bt.shape() != [m] {
                return Err(mismatch(OpKind::Affine, &[wt, xt, bt]));
            }
        }
        let n = wt.cols();
        let k = xt.rows();
        let mut out = vec![T::zero(); k * m];
        for r in 0..k {
            matvec(wt.data(), n, xt.row(r), &mut out[r * m..(r + 1) * m]);
        }
        if let Some(b) = b {
            let bt = self.v(b).data();
            for row in out.chunks_exact_mut(m) {
                axpy(T::one(), bt, row);
            }
        }
        let shape = if xt.is_vector() { vec![m] } else { vec![k, m] };
        let value = Tensor::new(shape, out)?;
        self.push(
            Op::Affine {
                w: w.0,
                x: x.0,
                b: b.map(|b| b.0),
            },
            value,
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xt = self.v(x);
        let data = xt.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        self.push(Op::Tanh(x.0), value)
    }

    /// Softmax over a vector, or independently over each row of a matrix.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xt = self.v(x);
        if xt.shape().len() > 2 {
            return Err(mismatch(OpKind::SoftmaxRow, &[xt]));
        }
        let mut out = Tensor::zeros(xt.shape());
        for r in 0..xt.rows() {
            softmax_into(xt.row(r), out.row_mut(r));
        }
        self.push(Op::SoftmaxRow(x.0), out)
    }

    /// Rows `table[ids]` as a `len(ids) × d` matrix.
    pub fn embedding(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId, TensorError> {
        let tt = self.v(table);
        if tt.shape().len() != 2 || ids.is_empty() {
            return Err(mismatch(OpKind::EmbeddingLookup, &[tt]));
        }
        let d = tt.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= tt.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: OpKind::EmbeddingLookup,
                    index: id,
                    rows: tt.rows(),
                });
            }
            data.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        self.push(
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            value,
        )
    }

    /// Mean over the rows of a matrix, producing a vector.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xt = self.v(x);
        if xt.shape().len() > 2 {
            return Err(mismatch(OpKind::MeanRows, &[xt]));
        }
        let k = xt.rows();
        let mut out = vec![T::zero(); xt.cols()];
        for r in 0..k {
            axpy(T::one(), xt.row(r), &mut out);
        }
        let inv = T::one() / T::of(k as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::vector(out);
        self.push(Op::MeanRows(x.0), value)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.v(p);
            if !t.is_vector() {
                return Err(mismatch(OpKind::Concat, &[t]));
            }
            data.extend_from_slice(t.data());
        }
        if data.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: OpKind::Concat,
                shapes: vec![],
            });
        }
        let value = Tensor::vector(data);
        self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (at, bt) = (self.v(a), self.v(b));
        if at.shape() != bt.shape() {
            return Err(mismatch(OpKind::Add, &[at, bt]));
        }
        let mut out = at.clone();
        out.add_assign(bt);
        self.push(Op::Add(a.0, b.0), out)
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_row_broadcast(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, TensorError> {
        let (mt, vt) = (self.v(m), self.v(v));
        if mt.shape().len() != 2 || !vt.is_vector() || vt.len() != mt.cols() {
            return Err(mismatch(OpKind::AddRowBroadcast, &[mt, vt]));
        }
        let mut out = mt.clone();
        for r in 0..out.rows() {
            axpy(T::one(), vt.data(), out.row_mut(r));
        }
        self.push(Op::AddRowBroadcast { m: m.0, v: v.0 }, out)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId, TensorError> {
        let mut out = self.v(x).clone();
        out.scale_in_place(T::of(k));
        self.push(Op::Scale(x.0, k), out)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (at, bt) = (self.v(a), self.v(b));
        if !at.is_vector() || at.shape() != bt.shape() {
            return Err(mismatch(OpKind::Dot, &[at, bt]));
        }
        let value = Tensor::scalar(dot(at.data(), bt.data()));
        self.push(Op::Dot(a.0, b.0), value)
    }

    /// `Σ_r weights[r] · rows[r]`.
    pub fn weighted_rows(&mut self, weights: NodeId, rows: NodeId) -> Result<NodeId, TensorError> {
        let (wt, rt) = (self.v(weights), self.v(rows));
        if !wt.is_vector() || rt.shape().len() != 2 || rt.rows() != wt.len() {
            return Err(mismatch(OpKind::WeightedRows, &[wt, rt]));
        }
        let mut out = vec![T::zero(); rt.cols()];
        for (r, &w) in wt.data().iter().enumerate() {
            axpy(w, rt.row(r), &mut out);
        }
        let value = Tensor::vector(out);
        self.push(
            Op::WeightedRows {
                weights: weights.0,
                rows: rows.0,
            },
            value,
        )
    }

    /// `-log softmax(logits)[target]` as a scalar.
    pub fn cross_entropy_pick(
        &mut self,
        logits: NodeId,
        target: u32,
    ) -> Result<NodeId, TensorError> {
        let lt = self.v(logits);
        if !lt.is_vector() {
            return Err(mismatch(OpKind::CrossEntropyPick, &[lt]));
        }
        let t = target as usize;
        if t >= lt.len() {
            return Err(TensorError::IndexOutOfRange {
                op: OpKind::CrossEntropyPick,
                index: t,
                rows: lt.len(),
            });
        }
        let data = lt.data();
        let max = data.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = data.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        let value = Tensor::scalar(lse - data[t]);
        self.push(
            Op::CrossEntropyPick {
                logits: logits.0,
                target: t,
            },
            value,
        )
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut s = T::zero();
        for &x in xs {
            let t = self.v(x);
            if !t.is_scalar() {
                return Err(mismatch(OpKind::Sum, &[t]));
            }
            s += t.data()[0];
        }
        self.push(Op::Sum(xs.iter().map(|x| x.0).collect()), Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar loss. Parameters the loss does not reach
    /// receive zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownNode(loss.0));
        }
        let lv = self.v(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => *out.get_mut(*pid) = g,
                Op::Affine { w, x, b } => {
                    let wt = &self.nodes[*w].value;
                    let xt = &self.nodes[*x].value;
                    let (m, n) = (wt.rows(), wt.cols());
                    let k = xt.rows();
                    {
                        let gw = acc(&mut grads, &self.nodes, *w);
                        for r in 0..k {
                            let gr = &g.data()[r * m..(r + 1) * m];
                            let xr = xt.row(r);
                            for (i, &gi) in gr.iter().enumerate() {
                                if gi != T::zero() {
                                    axpy(gi, xr, &mut gw.data_mut()[i * n..(i + 1) * n]);
                                }
                            }
                        }
                    }
                    {
                        let gx = acc(&mut grads, &self.nodes, *x);
                        for r in 0..k {
                            let gr = &g.data()[r * m..(r + 1) * m];
                            let gxr = &mut gx.data_mut()[r * n..(r + 1) * n];
                            for (i, &gi) in gr.iter().enumerate() {
                                if gi != T::zero() {
                                    axpy(gi, wt.row(i), gxr);
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = acc(&mut grads, &self.nodes, *b);
                        for r in 0..k {
                            axpy(T::one(), &g.data()[r * m..(r + 1) * m], gb.data_mut());
                        }
                    }
                }
                Op::Tanh(x) => {
                    // sech² from the input keeps full relative precision
                    // where 1 - y² would cancel.
                    let xs = self.nodes[*x].value.data();
                    let d: Vec<T> = xs
                        .iter()
                        .map(|&xi| T::of(1.0 / xi.as_f64().cosh().powi(2)))
                        .collect();
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for ((gxi, &di), &gi) in gx.data_mut().iter_mut().zip(&d).zip(g.data()) {
                        *gxi += gi * di;
                    }
                }
                Op::SoftmaxRow(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, &self.nodes, *x);
                    let c = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let s = dot(gr, yr);
                        let gxr = &mut gx.data_mut()[r * c..(r + 1) * c];
                        for j in 0..c {
                            gxr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let gt = acc(&mut grads, &self.nodes, *table);
                    let d = gt.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(
                            T::one(),
                            &g.data()[r * d..(r + 1) * d],
                            gt.row_mut(id as usize),
                        );
                    }
                }
                Op::MeanRows(x) => {
                    let gx = acc(&mut grads, &self.nodes, *x);
                    let k = gx.rows();
                    let inv = T::one() / T::of(k as f64);
                    for r in 0..k {
                        axpy(inv, g.data(), gx.row_mut(r));
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let gp = acc(&mut grads, &self.nodes, p);
                        let len = gp.len();
                        axpy(T::one(), &g.data()[off..off + len], gp.data_mut());
                        off += len;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &self.nodes, *a).add_assign(&g);
                    acc(&mut grads, &self.nodes, *b).add_assign(&g);
                }
                Op::AddRowBroadcast { m, v } => {
                    acc(&mut grads, &self.nodes, *m).add_assign(&g);
                    let gv = acc(&mut grads, &self.nodes, *v);
                    for r in 0..g.rows() {
                        axpy(T::one(), g.row(r), gv.data_mut());
                    }
                }
                Op::Scale(x, k) => {
                    axpy(
                        T::of(*k),
                        g.data(),
                        acc(&mut grads, &self.nodes, *x).data_mut(),
                    );
                }
                Op::Dot(a, b) => {
                    let gs = g.data()[0];
                    let bv = self.nodes[*b].value.data();
                    axpy(gs, bv, acc(&mut grads, &self.nodes, *a).data_mut());
                    let av = self.nodes[*a].value.data();
                    axpy(gs, av, acc(&mut grads, &self.nodes, *b).data_mut());
                }
                Op::WeightedRows { weights, rows } => {
                    let wt = &self.nodes[*weights].value;
                    let rt = &self.nodes[*rows].value;
                    {
                        let gw = acc(&mut grads, &self.nodes, *weights);
                        for r in 0..rt.rows() {
                            gw.data_mut()[r] += dot(g.data(), rt.row(r));
                        }
                    }
                    let gr = acc(&mut grads, &self.nodes, *rows);
                    for (r, &w) in wt.data().iter().enumerate() {
                        axpy(w, g.data(), gr.row_mut(r));
                    }
                }
                Op::CrossEntropyPick { logits, target } => {
                    let gs = g.data()[0];
                    let lt = &self.nodes[*logits].value;
                    let lp = log_softmax(lt.data());
                    let mut p: Vec<T> = lp.iter().map(|l| T::of(l.exp())).collect();
                    // p_t - 1 as the negated mass elsewhere, exact even when p_t ≈ 1.
                    let rest: f64 = lp
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| j != target)
                        .map(|(_, l)| l.exp())
                        .sum();
                    p[*target] = T::of(-rest);
                    axpy(gs, &p, acc(&mut grads, &self.nodes, *logits).data_mut());
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        acc(&mut grads, &self.nodes, x).data_mut()[0] += g.data()[0];
                    }
                }
            }
        }
        Ok(out)
    }
}

fn acc<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    nodes: &[Node<'_, T>],
    i: usize,
) -> &'a mut Tensor<T> {
    grads[i].get_or_insert_with(|| Tensor::zeros(nodes[i].value.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        ParamStore::new()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let ps = store();
        let mut g = Graph::new(&ps);
        let x = g.constant(Tensor::vector(vec![0.0])).unwrap();
        let y = g.tanh(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let ps = store();
        let mut g = Graph::new(&ps);
        let x = g.constant(Tensor::vector(vec![0.0; 3])).unwrap();
        let y = g.softmax(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_hand_example() {
        let ps = store();
        let mut g = Graph::new(&ps);
        let w = g
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let x = g.constant(Tensor::vector(vec![1.0, 1.0])).unwrap();
        let b = g.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = g.affine(w, x, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_rejects_bad_shapes_with_op_and_shapes() {
        let ps = store();
        let mut g = Graph::new(&ps);
        let w = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let x = g.constant(Tensor::zeros(&[2])).unwrap();
        match g.affine(w, x, None) {
            Err(TensorError::ShapeMismatch { op, shapes }) => {
                assert_eq!(op, OpKind::Affine);
                assert_eq!(shapes, vec![vec![2, 3], vec![2]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let ps = store();
        let mut g = Graph::new(&ps);
        assert!(matches!(
            g.constant(Tensor::vector(vec![f64::NAN])),
            Err(TensorError::NonFinite { .. })
        ));
        let x = g.constant(Tensor::vector(vec![1e300])).unwrap();
        assert!(matches!(
            g.scale(x, 1e300),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn dot_self_gradient_is_twice_w() {
        let mut ps = store();
        let w = ps.push("w", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let wn = g.param(w);
        let l = g.dot(wn, wn).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut ps = store();
        let x = ps.push("x", Tensor::vector(vec![0.0]));
        let mut g = Graph::new(&ps);
        let xn = g.param(x);
        let y = g.tanh(xn).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0]);
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut ps = store();
        let a = ps.push("a", Tensor::vector(vec![1.0, 2.0]));
        let b = ps.push("b", Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let mut g = Graph::new(&ps);
        let an = g.param(a);
        let l = g.dot(an, an).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(b).shape(), &[2, 2]);
        assert!(grads.get(b).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let ps = store();
        let mut g = Graph::new(&ps);
        let x = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(
            g.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn param_nodes_are_deduplicated() {
        let mut ps = store();
        let a = ps.push("a", Tensor::vector(vec![1.0]));
        let mut g = Graph::new(&ps);
        assert_eq!(g.param(a), g.param(a));
        assert_eq!(g.len(), 1);
    }
}
