//! Tensor-level reverse-mode differentiation over a recorded tape.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for gradient propagation. Parameter
//! leaves read from a borrowed [`ParameterStore`]; leaves from frozen groups
//! do not require gradients, and nothing upstream of them is visited.

use super::math::{compensated_sum, sigmoid, softplus};
use super::store::{GradientMap, GroupId, ParameterStore};
use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Config(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param { group: GroupId, offset: usize },
    /// `x * w^T` with `w` stored `out x in`.
    MatMulT(NodeId, NodeId),
    /// Adds a `1 x n` row to every row.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Columns { src: NodeId, start: usize },
    RowSum(NodeId),
    Mean(NodeId),
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation over one parameter store.
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Config(format!("{what}: shape {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// A `rows x cols` block of a parameter group starting at `offset`.
    pub fn param(&mut self, group: GroupId, offset: usize, rows: usize, cols: usize) -> Result<NodeId> {
        let g = self.store.group(group);
        let end = offset + rows * cols;
        if end > g.values().len() {
            return Err(Error::Config(format!(
                "block {rows}x{cols}@{offset} exceeds group `{}` of length {}",
                g.name(),
                g.values().len()
            )));
        }
        let value = Tensor::new(rows, cols, g.values()[offset..end].to_vec())?;
        let rg = g.trainable();
        Ok(self.push(value, Op::Param { group, offset }, rg))
    }

    /// A whole group as a `1 x n` row.
    pub fn param_group(&mut self, group: GroupId) -> Result<NodeId> {
        let n = self.store.values(group).len();
        self.param(group, 0, 1, n)
    }

    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols != wv.cols {
            return Err(Error::Config(format!(
                "matmul: input width {} vs weight width {}",
                xv.cols, wv.cols
            )));
        }
        let (b, inp, out) = (xv.rows, xv.cols, wv.rows);
        let mut data = vec![0.0; b * out];
        for r in 0..b {
            let xr = &xv.data[r * inp..(r + 1) * inp];
            let dst = &mut data[r * out..(r + 1) * out];
            for (o, d) in dst.iter_mut().enumerate() {
                let wr = &wv.data[o * inp..(o + 1) * inp];
                *d = dot(xr, wr);
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::new(b, out, data)?, Op::MatMulT(x, w), rg))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows != 1 || bv.cols != av.cols {
            return Err(Error::Config(format!(
                "add_row: bias {:?} vs input {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let mut value = av.clone();
        for row in value.data.chunks_mut(bv.cols) {
            for (v, b) in row.iter_mut().zip(&bv.data) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> Result<NodeId> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::Config(format!(
                "mul_const: shape {:?} vs {:?}",
                self.value(a).shape(),
                c.shape()
            )));
        }
        let value = self.value(a).zip(&c, |x, y| x * y);
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Columns `start..start + len` as a `rows x len` node.
    pub fn columns(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let sv = self.value(src);
        if start + len > sv.cols {
            return Err(Error::Config(format!(
                "columns {start}..{} out of range for width {}",
                start + len,
                sv.cols
            )));
        }
        let mut data = Vec::with_capacity(sv.rows * len);
        for r in 0..sv.rows {
            data.extend_from_slice(&sv.data[r * sv.cols + start..r * sv.cols + start + len]);
        }
        let value = Tensor::new(sv.rows, len, data)?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::Columns { src, start }, rg))
    }

    pub fn column(&mut self, src: NodeId, j: usize) -> Result<NodeId> {
        self.columns(src, j, 1)
    }

    /// Per-row compensated sum, `rows x 1`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av
            .data
            .chunks(av.cols.max(1))
            .map(|row| compensated_sum(row.iter().copied()))
            .take(av.rows)
            .collect();
        let value = Tensor::column(data);
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let n = av.data.len().max(1) as f64;
        let value = Tensor::scalar(av.data.iter().sum::<f64>() / n);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reverse sweep from a scalar node; returns gradients for every trainable
/// parameter and exact zeros for frozen groups.
pub fn backward(tape: &Tape<'_>, loss: NodeId) -> Result<GradientMap> {
    if tape.nodes.is_empty() || loss.0 >= tape.nodes.len() {
        return Err(Error::Usage("backward called without a recorded forward pass".into()));
    }
    if tape.value(loss).item().is_none() {
        return Err(Error::Usage(format!(
            "backward needs a scalar loss, got shape {:?}",
            tape.value(loss).shape()
        )));
    }
    let mut out = GradientMap::zeros_like(tape.store);
    if !tape.rg(loss) {
        return Ok(out);
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(Tensor::scalar(1.0));

    for i in (0..=loss.0).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &tape.nodes[i];
        if !node.requires_grad {
            continue;
        }
        let mut send = |id: NodeId, delta: Tensor| {
            if !tape.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param { group, offset } => {
                let dst = &mut out.group_mut(*group)[*offset..*offset + g.data.len()];
                for (d, v) in dst.iter_mut().zip(&g.data) {
                    *d += v;
                }
            }
            Op::MatMulT(x, w) => {
                let (xv, wv) = (tape.value(*x), tape.value(*w));
                let (b, inp, outw) = (xv.rows, xv.cols, wv.rows);
                if tape.rg(*x) {
                    let mut dx = vec![0.0; b * inp];
                    for r in 0..b {
                        let dxr = &mut dx[r * inp..(r + 1) * inp];
                        for o in 0..outw {
                            let gro = g.data[r * outw + o];
                            if gro != 0.0 {
                                let wr = &wv.data[o * inp..(o + 1) * inp];
                                for (d, wv) in dxr.iter_mut().zip(wr) {
                                    *d += gro * wv;
                                }
                            }
                        }
                    }
                    send(*x, Tensor { rows: b, cols: inp, data: dx });
                }
                if tape.rg(*w) {
                    let mut dw = vec![0.0; outw * inp];
                    for r in 0..b {
                        let xr = &xv.data[r * inp..(r + 1) * inp];
                        for o in 0..outw {
                            let gro = g.data[r * outw + o];
                            if gro != 0.0 {
                                let dwr = &mut dw[o * inp..(o + 1) * inp];
                                for (d, xv) in dwr.iter_mut().zip(xr) {
                                    *d += gro * xv;
                                }
                            }
                        }
                    }
                    send(*w, Tensor { rows: outw, cols: inp, data: dw });
                }
            }
            Op::AddRow(a, bias) => {
                if tape.rg(*bias) {
                    let mut db = vec![0.0; g.cols];
                    for row in g.data.chunks(g.cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    send(*bias, Tensor::row(db));
                }
                send(*a, g);
            }
            Op::Add(a, b) => {
                send(*b, g.clone());
                send(*a, g);
            }
            Op::Sub(a, b) => {
                send(*b, g.map(|v| -v));
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (tape.value(*a), tape.value(*b));
                if tape.rg(*a) {
                    send(*a, g.zip(bv, |x, y| x * y));
                }
                if tape.rg(*b) {
                    send(*b, g.zip(av, |x, y| x * y));
                }
            }
            Op::MulConst(a, c) => send(*a, g.zip(c, |x, y| x * y)),
            Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => send(*a, g),
            Op::Sigmoid(a) => {
                let y = &node.value;
                send(*a, g.zip(y, |gv, s| gv * s * (1.0 - s)));
            }
            Op::Softplus(a) => {
                let x = tape.value(*a);
                send(*a, g.zip(x, |gv, xv| gv * sigmoid(xv)));
            }
            Op::Square(a) => {
                let x = tape.value(*a);
                send(*a, g.zip(x, |gv, xv| 2.0 * gv * xv));
            }
            Op::Columns { src, start } => {
                let sv = tape.value(*src);
                let mut d = Tensor::zeros(sv.rows, sv.cols);
                for r in 0..sv.rows {
                    for c in 0..g.cols {
                        d.data[r * sv.cols + start + c] = g.data[r * g.cols + c];
                    }
                }
                send(*src, d);
            }
            Op::RowSum(a) => {
                let av = tape.value(*a);
                let mut d = Tensor::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    for c in 0..av.cols {
                        d.data[r * av.cols + c] = g.data[r];
                    }
                }
                send(*a, d);
            }
            Op::Mean(a) => {
                let av = tape.value(*a);
                let scale = g.data[0] / av.data.len().max(1) as f64;
                send(*a, av.map(|_| scale));
            }
            Op::Sum(a) => {
                let av = tape.value(*a);
                let v = g.data[0];
                send(*a, av.map(|_| v));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Vec<f64>)]) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (n, v) in values {
            s.add_group(n, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn square_gradient() {
        let s = store_with(&[("p", vec![3.0])]);
        let mut tape = Tape::new(&s);
        let p = tape.param_group(GroupId(0)).unwrap();
        let sq = tape.square(p);
        let loss = tape.sum(sq);
        let g = backward(&tape, loss).unwrap();
        assert_eq!(g.group(GroupId(0)), &[6.0]);
    }

    #[test]
    fn sum_of_parameters_has_unit_gradient() {
        let s = store_with(&[("a", vec![1.0, 2.0, 3.0]), ("b", vec![-4.0])]);
        let mut tape = Tape::new(&s);
        let a = tape.param_group(GroupId(0)).unwrap();
        let b = tape.param_group(GroupId(1)).unwrap();
        let sa = tape.sum(a);
        let sb = tape.sum(b);
        let loss = tape.add(sa, sb).unwrap();
        let g = backward(&tape, loss).unwrap();
        assert_eq!(g.group(GroupId(0)), &[1.0, 1.0, 1.0]);
        assert_eq!(g.group(GroupId(1)), &[1.0]);
    }

    #[test]
    fn frozen_group_gets_exact_zeros() {
        let mut s = store_with(&[("a", vec![1.0, 2.0]), ("b", vec![5.0, 7.0])]);
        s.set_trainable(GroupId(1), false);
        let mut tape = Tape::new(&s);
        let a = tape.param_group(GroupId(0)).unwrap();
        let b = tape.param_group(GroupId(1)).unwrap();
        let m = tape.mul(a, b).unwrap();
        let loss = tape.sum(m);
        let g = backward(&tape, loss).unwrap();
        assert_eq!(g.group(GroupId(0)), &[5.0, 7.0]);
        assert_eq!(g.group(GroupId(1)), &[0.0, 0.0]);
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let s = store_with(&[("a", vec![1.0])]);
        let tape = Tape::new(&s);
        assert!(matches!(backward(&tape, NodeId(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_on_non_scalar_is_usage_error() {
        let s = store_with(&[("a", vec![1.0, 2.0])]);
        let mut tape = Tape::new(&s);
        let a = tape.param_group(GroupId(0)).unwrap();
        assert!(matches!(backward(&tape, a), Err(Error::Usage(_))));
    }

    #[test]
    fn matmul_shape_mismatch_is_config_error() {
        let s = store_with(&[("w", vec![0.0; 6])]);
        let mut tape = Tape::new(&s);
        let w = tape.param(GroupId(0), 0, 2, 3).unwrap();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.matmul_t(x, w), Err(Error::Config(_))));
    }

    #[test]
    fn matmul_gradients_match_hand_values() {
        // loss = sum(x W^T), x = [1, 2], W = [[3, 4], [5, 6]]
        let s = store_with(&[("w", vec![3.0, 4.0, 5.0, 6.0])]);
        let mut tape = Tape::new(&s);
        let w = tape.param(GroupId(0), 0, 2, 2).unwrap();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let y = tape.matmul_t(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 17.0]);
        let loss = tape.sum(y);
        let g = backward(&tape, loss).unwrap();
        assert_eq!(g.group(GroupId(0)), &[1.0, 2.0, 1.0, 2.0]);
    }
}
