//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Node ids
//! are assigned in creation order, so the id order is already a topological
//! order and [`Tape::backward`] simply walks it in reverse.
//!
//! ```
//! use c2f::autodiff::Tape;
//! use c2f::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::row_vector(vec![2.0, 3.0]), true);
//! let loss = x.hadamard(x).unwrap().sum();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 6.0]);
//! ```

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::TensorError;
use crate::tensor::Tensor;

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Hadamard(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Exp(usize),
    Log(usize),
    RowSoftmax(usize),
    LogRowSoftmax(usize),
    ReduceSum(usize),
    SumCols(usize),
    GatherRows(usize, Rc<[usize]>),
    SegmentSum(usize, Rc<[usize]>),
    SegmentSoftmax(usize, Rc<[usize]>),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    RepeatCols(usize, usize),
    BlockSumCols(usize, usize),
    LeakyRelu(usize, f64),
    Elu(usize, f64),
    Transpose(usize),
    Reshape(usize),
    NormalizeRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, leaves only.
    grad: Option<Tensor>,
}

/// Records operations for a single backward pass. Not shareable across
/// threads; build one tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input. Only leaves created with `requires_grad` collect
    /// gradients.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    /// Gradient accumulated on a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        if !self.owns(v) {
            return None;
        }
        self.nodes.borrow()[v.id].grad.clone()
    }

    /// Resets every leaf accumulator.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Propagates `d root / d leaf` into every reachable leaf that requires a
    /// gradient. Repeated calls accumulate.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !self.owns(root) {
            return Err(TensorError::ForeignVar);
        }
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let shape = nodes[root.id].value.shape();
            if shape != [1, 1] {
                return Err(TensorError::NotScalar { shape });
            }
            let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
            grads[root.id] = Some(Tensor::scalar(1.0));
            let mut leaf_grads = Vec::new();
            for id in (0..=root.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                } else {
                    propagate(&nodes, id, &g, &mut grads);
                }
            }
            leaf_grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, contribution: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let need = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if need(*a) {
                let da = g.matmul_t(val(*b)).expect("shapes checked on forward");
                accumulate(nodes, grads, *a, da);
            }
            if need(*b) {
                let db = val(*a).t_matmul(g).expect("shapes checked on forward");
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::AddRow(a, r) => {
            accumulate(nodes, grads, *a, g.clone());
            if need(*r) {
                accumulate(nodes, grads, *r, column_sums(g));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * c)),
        Op::Hadamard(a, b) => {
            if need(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |x, y| x * y));
            }
            if need(*b) {
                accumulate(nodes, grads, *b, g.zip_map(val(*a), |x, y| x * y));
            }
        }
        Op::MulRow(a, r) => {
            let row = val(*r);
            if need(*a) {
                let mut da = g.clone();
                for i in 0..da.rows() {
                    for (x, &s) in da.row_mut(i).iter_mut().zip(row.data()) {
                        *x *= s;
                    }
                }
                accumulate(nodes, grads, *a, da);
            }
            if need(*r) {
                accumulate(
                    nodes,
                    grads,
                    *r,
                    column_sums(&g.zip_map(val(*a), |x, y| x * y)),
                );
            }
        }
        Op::MulCol(a, c) => {
            let col = val(*c);
            if need(*a) {
                let mut da = g.clone();
                for i in 0..da.rows() {
                    let s = col.data()[i];
                    da.row_mut(i).iter_mut().for_each(|x| *x *= s);
                }
                accumulate(nodes, grads, *a, da);
            }
            if need(*c) {
                accumulate(
                    nodes,
                    grads,
                    *c,
                    row_sums(&g.zip_map(val(*a), |x, y| x * y)),
                );
            }
        }
        Op::Exp(a) => accumulate(nodes, grads, *a, g.zip_map(out, |x, y| x * y)),
        Op::Log(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |x, y| x / y)),
        Op::RowSoftmax(a) => {
            let mut da = Tensor::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                let (y, gi) = (out.row(i), g.row(i));
                let dot: f64 = y.iter().zip(gi).map(|(a, b)| a * b).sum();
                for ((d, &yj), &gj) in da.row_mut(i).iter_mut().zip(y).zip(gi) {
                    *d = yj * (gj - dot);
                }
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::LogRowSoftmax(a) => {
            let mut da = Tensor::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                let (y, gi) = (out.row(i), g.row(i));
                let total: f64 = gi.iter().sum();
                for ((d, &yj), &gj) in da.row_mut(i).iter_mut().zip(y).zip(gi) {
                    *d = gj - yj.exp() * total;
                }
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::ReduceSum(a) => {
            let [r, c] = val(*a).shape();
            accumulate(nodes, grads, *a, Tensor::filled(r, c, g.data()[0]));
        }
        Op::SumCols(a) => {
            let [r, c] = val(*a).shape();
            accumulate(nodes, grads, *a, Tensor::from_fn(r, c, |i, _| g.data()[i]));
        }
        Op::GatherRows(a, idx) => {
            let [r, c] = val(*a).shape();
            let mut da = Tensor::zeros(r, c);
            for (k, &src) in idx.iter().enumerate() {
                for (d, &x) in da.row_mut(src).iter_mut().zip(g.row(k)) {
                    *d += x;
                }
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::SegmentSum(a, offsets) => {
            let [r, c] = val(*a).shape();
            let mut da = Tensor::zeros(r, c);
            for (s, w) in offsets.windows(2).enumerate() {
                for row in w[0]..w[1] {
                    da.row_mut(row).copy_from_slice(g.row(s));
                }
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::SegmentSoftmax(a, offsets) => {
            let c = out.cols();
            let mut da = Tensor::zeros(out.rows(), c);
            for w in offsets.windows(2) {
                for j in 0..c {
                    let dot: f64 = (w[0]..w[1]).map(|r| out.get(r, j) * g.get(r, j)).sum();
                    for r in w[0]..w[1] {
                        da.set(r, j, out.get(r, j) * (g.get(r, j) - dot));
                    }
                }
            }
            accumulate(nodes, grads, *a, da);
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for &p in parts {
                let width = val(p).cols();
                if need(p) {
                    let dp = Tensor::from_fn(g.rows(), width, |i, j| g.get(i, start + j));
                    accumulate(nodes, grads, p, dp);
                }
                start += width;
            }
        }
        Op::SliceCols(a, start) => {
            let [r, c] = val(*a).shape();
            let end = start + out.cols();
            let da = Tensor::from_fn(r, c, |i, j| {
                if (*start..end).contains(&j) {
                    g.get(i, j - start)
                } else {
                    0.0
                }
            });
            accumulate(nodes, grads, *a, da);
        }
        Op::RepeatCols(a, times) => {
            let [r, c] = val(*a).shape();
            let da = Tensor::from_fn(r, c, |i, j| {
                (0..*times).map(|t| g.get(i, j * times + t)).sum()
            });
            accumulate(nodes, grads, *a, da);
        }
        Op::BlockSumCols(a, width) => {
            let [r, c] = val(*a).shape();
            let da = Tensor::from_fn(r, c, |i, j| g.get(i, j / width));
            accumulate(nodes, grads, *a, da);
        }
        Op::LeakyRelu(a, slope) => {
            let d = g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { gx * slope });
            accumulate(nodes, grads, *a, d);
        }
        Op::Elu(a, alpha) => {
            let x = val(*a);
            let d = Tensor::from_fn(x.rows(), x.cols(), |i, j| {
                let xi = x.get(i, j);
                let slope = if xi > 0.0 { 1.0 } else { out.get(i, j) + alpha };
                g.get(i, j) * slope
            });
            accumulate(nodes, grads, *a, d);
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transpose()),
        Op::Reshape(a) => {
            let [r, c] = val(*a).shape();
            accumulate(nodes, grads, *a, g.reshape(r, c).expect("same length"));
        }
        Op::NormalizeRows(a) => {
            let x = val(*a);
            let mut da = Tensor::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                let (y, gi) = (out.row(i), g.row(i));
                let dot: f64 = y.iter().zip(gi).map(|(a, b)| a * b).sum();
                for ((d, &yj), &gj) in da.row_mut(i).iter_mut().zip(y).zip(gi) {
                    *d = (gj - yj * dot) / norm;
                }
            }
            accumulate(nodes, grads, *a, da);
        }
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for i in 0..t.rows() {
        for (o, &x) in out.data_mut().iter_mut().zip(t.row(i)) {
            *o += x;
        }
    }
    out
}

fn row_sums(t: &Tensor) -> Tensor {
    Tensor::col_vector((0..t.rows()).map(|i| t.row(i).iter().sum()).collect())
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&rows)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(TensorError::Invalid {
            op,
            reason: format!("offsets do not partition {rows} rows"),
        })
    }
}

/// Softmax of `values` written into `out`, `-inf` mapped to exactly zero.
/// Returns false when no entry is finite.
fn softmax_into(values: impl Iterator<Item = f64> + Clone, out: &mut [f64]) -> bool {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return false;
    }
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(values) {
        *o = if v == f64::NEG_INFINITY {
            0.0
        } else {
            (v - max).exp()
        };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    true
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.value().shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a `1×1` variable.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn same_tape(&self, other: Var<'_>) -> Result<()> {
        if self.tape.owns(other) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'_>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn same_shape(&self, other: Var<'_>, op: &'static str) -> Result<()> {
        self.same_tape(other)?;
        let (l, r) = (self.shape(), other.shape());
        if l != r {
            return Err(TensorError::ShapeMismatch {
                op,
                left: l,
                right: r,
            });
        }
        Ok(())
    }

    pub fn matmul(self, other: Var<'_>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'_>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'_>) -> Result<Var<'t>> {
        self.same_shape(other, "sub")?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Adds a `1×cols` row to every row.
    pub fn add_row(self, row: Var<'_>) -> Result<Var<'t>> {
        self.same_tape(row)?;
        let (a, r) = (self.shape(), row.shape());
        if r != [1, a[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: a,
                right: r,
            });
        }
        let mut v = self.value().clone();
        {
            let rv = row.value();
            for i in 0..a[0] {
                for (x, &b) in v.row_mut(i).iter_mut().zip(rv.data()) {
                    *x += b;
                }
            }
        }
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let v = self.value().map(|x| x * factor);
        self.unary(v, Op::Scale(self.id, factor))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn hadamard(self, other: Var<'_>) -> Result<Var<'t>> {
        self.same_shape(other, "hadamard")?;
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.binary(other, v, Op::Hadamard(self.id, other.id)))
    }

    /// Multiplies every row elementwise by a `1×cols` row.
    pub fn mul_row(self, row: Var<'_>) -> Result<Var<'t>> {
        self.same_tape(row)?;
        let (a, r) = (self.shape(), row.shape());
        if r != [1, a[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row",
                left: a,
                right: r,
            });
        }
        let mut v = self.value().clone();
        {
            let rv = row.value();
            for i in 0..a[0] {
                for (x, &s) in v.row_mut(i).iter_mut().zip(rv.data()) {
                    *x *= s;
                }
            }
        }
        Ok(self.binary(row, v, Op::MulRow(self.id, row.id)))
    }

    /// Scales row `i` by entry `i` of a `rows×1` column.
    pub fn mul_col(self, col: Var<'_>) -> Result<Var<'t>> {
        self.same_tape(col)?;
        let (a, c) = (self.shape(), col.shape());
        if c != [a[0], 1] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                left: a,
                right: c,
            });
        }
        let mut v = self.value().clone();
        {
            let cv = col.value();
            for i in 0..a[0] {
                let s = cv.data()[i];
                v.row_mut(i).iter_mut().for_each(|x| *x *= s);
            }
        }
        Ok(self.binary(col, v, Op::MulCol(self.id, col.id)))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if let Some(&bad) = x.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(TensorError::NonPositiveLog { value: bad });
            }
            x.map(f64::ln)
        };
        Ok(self.unary(v, Op::Log(self.id)))
    }

    /// Softmax along each row. `-inf` entries get probability 0; a row with no
    /// finite entry is an error.
    pub fn row_softmax(self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let mut out = Tensor::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                if !softmax_into(x.row(i).iter().copied(), out.row_mut(i)) {
                    return Err(TensorError::EmptySoftmax { row: i });
                }
            }
            out
        };
        Ok(self.unary(v, Op::RowSoftmax(self.id)))
    }

    /// `log(row_softmax(x))` computed without forming the probabilities.
    pub fn log_row_softmax(self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let mut out = Tensor::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                let lse = crate::tensor::log_sum_exp(x.row(i));
                if lse == f64::NEG_INFINITY || lse.is_nan() {
                    return Err(TensorError::EmptySoftmax { row: i });
                }
                for (o, &xi) in out.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o = xi - lse;
                }
            }
            out
        };
        Ok(self.unary(v, Op::LogRowSoftmax(self.id)))
    }

    /// Sum of all entries as a `1×1` variable.
    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::ReduceSum(self.id))
    }

    /// Alias of [`Var::sum`].
    pub fn reduce_sum(self) -> Var<'t> {
        self.sum()
    }

    /// Sums each row, giving a `rows×1` column.
    pub fn sum_cols(self) -> Var<'t> {
        let v = row_sums(&self.value());
        self.unary(v, Op::SumCols(self.id))
    }

    /// Row `k` of the output is row `indices[k]` of the input.
    pub fn gather_rows(self, indices: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        let indices: Rc<[usize]> = indices.into();
        let v = {
            let x = self.value();
            let mut out = Tensor::zeros(indices.len(), x.cols());
            for (k, &src) in indices.iter().enumerate() {
                if src >= x.rows() {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_rows",
                        index: src,
                        len: x.rows(),
                    });
                }
                out.row_mut(k).copy_from_slice(x.row(src));
            }
            out
        };
        Ok(self.unary(v, Op::GatherRows(self.id, indices)))
    }

    /// Sums consecutive row ranges `offsets[s]..offsets[s + 1]` into row `s`.
    pub fn segment_sum(self, offsets: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        let offsets: Rc<[usize]> = offsets.into();
        let v = {
            let x = self.value();
            check_offsets("segment_sum", &offsets, x.rows())?;
            let mut out = Tensor::zeros(offsets.len() - 1, x.cols());
            for (s, w) in offsets.windows(2).enumerate() {
                for r in w[0]..w[1] {
                    for (o, &xv) in out.row_mut(s).iter_mut().zip(x.row(r)) {
                        *o += xv;
                    }
                }
            }
            out
        };
        Ok(self.unary(v, Op::SegmentSum(self.id, offsets)))
    }

    /// Softmax down each column within every row segment.
    pub fn segment_softmax(self, offsets: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        let offsets: Rc<[usize]> = offsets.into();
        let v = {
            let x = self.value();
            check_offsets("segment_softmax", &offsets, x.rows())?;
            let c = x.cols();
            let mut out = Tensor::zeros(x.rows(), c);
            let mut buf = Vec::new();
            for (s, w) in offsets.windows(2).enumerate() {
                if w[0] == w[1] {
                    continue;
                }
                buf.resize(w[1] - w[0], 0.0);
                for j in 0..c {
                    if !softmax_into((w[0]..w[1]).map(|r| x.get(r, j)), &mut buf) {
                        return Err(TensorError::EmptySoftmax { row: s });
                    }
                    for (k, r) in (w[0]..w[1]).enumerate() {
                        out.set(r, j, buf[k]);
                    }
                }
            }
            out
        };
        Ok(self.unary(v, Op::SegmentSoftmax(self.id, offsets)))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn elu(self, alpha: f64) -> Var<'t> {
        let v = self
            .value()
            .map(|x| if x > 0.0 { x } else { alpha * x.exp_m1() });
        self.unary(v, Op::Elu(self.id, alpha))
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value().reshape(rows, cols)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if start > end || end > x.cols() {
                return Err(TensorError::Invalid {
                    op: "slice_cols",
                    reason: format!("range {start}..{end} outside {} columns", x.cols()),
                });
            }
            Tensor::from_fn(x.rows(), end - start, |i, j| x.get(i, start + j))
        };
        Ok(self.unary(v, Op::SliceCols(self.id, start)))
    }

    /// Repeats each column `times` times in place: `[a, b] → [a, a, b, b]`.
    pub fn repeat_cols(self, times: usize) -> Var<'t> {
        let v = {
            let x = self.value();
            Tensor::from_fn(x.rows(), x.cols() * times, |i, j| x.get(i, j / times))
        };
        self.unary(v, Op::RepeatCols(self.id, times))
    }

    /// Sums each contiguous group of `width` columns.
    pub fn block_sum_cols(self, width: usize) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if width == 0 || !x.cols().is_multiple_of(width) {
                return Err(TensorError::Invalid {
                    op: "block_sum_cols",
                    reason: format!("{} columns not divisible by {width}", x.cols()),
                });
            }
            Tensor::from_fn(x.rows(), x.cols() / width, |i, b| {
                x.row(i)[b * width..(b + 1) * width].iter().sum()
            })
        };
        Ok(self.unary(v, Op::BlockSumCols(self.id, width)))
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            let mut out = x.clone();
            for i in 0..x.rows() {
                let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(TensorError::ZeroNorm { row: i });
                }
                out.row_mut(i).iter_mut().for_each(|v| *v /= norm);
            }
            out
        };
        Ok(self.unary(v, Op::NormalizeRows(self.id)))
    }

    /// A copy of this value that gradients never flow through.
    pub fn detach(self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.push(v, Op::Leaf, false)
    }
}

/// Concatenates variables left to right.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or(TensorError::Invalid {
        op: "concat_cols",
        reason: "nothing to concatenate".into(),
    })?;
    let tape = first.tape;
    let rows = first.shape()[0];
    let mut width = 0;
    for p in parts {
        first.same_tape(*p)?;
        let s = p.shape();
        if s[0] != rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: first.shape(),
                right: s,
            });
        }
        width += s[1];
    }
    let mut out = Tensor::zeros(rows, width);
    let mut start = 0;
    for p in parts {
        let v = p.value();
        for i in 0..rows {
            out.row_mut(i)[start..start + v.cols()].copy_from_slice(v.row(i));
        }
        start += v.cols();
    }
    let rg = parts.iter().any(|p| p.requires_grad());
    Ok(tape.push(
        out,
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        rg,
    ))
}

/// Row-wise dot products of two equally shaped variables, as a column.
pub fn row_dot<'t>(a: Var<'t>, b: Var<'_>) -> Result<Var<'t>> {
    Ok(a.hadamard(b)?.sum_cols())
}

/// Compares analytic gradients of `f` at `x` against central differences
/// with step `h`. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over all entries.
pub fn grad_check<F, E>(f: F, x: &Tensor, h: f64) -> std::result::Result<f64, E>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> std::result::Result<Var<'t>, E>,
    E: From<TensorError>,
{
    grad_check_many(|tape, xs| f(tape, xs[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F, E>(f: F, inputs: &[Tensor], h: f64) -> std::result::Result<f64, E>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> std::result::Result<Var<'t>, E>,
    E: From<TensorError>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = f(&tape, &vars)?;
        tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, x)| {
                tape.grad(*v)
                    .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()))
            })
            .collect()
    };
    let eval = |inputs: &[Tensor]| -> std::result::Result<f64, E> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.item()?)
    };
    let mut worst = 0.0_f64;
    let mut probe = inputs.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for e in 0..inputs[p].len() {
            let orig = inputs[p].data()[e];
            probe[p].data_mut()[e] = orig + h;
            let plus = eval(&probe)?;
            probe[p].data_mut()[e] = orig - h;
            let minus = eval(&probe)?;
            probe[p].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (grad.data()[e] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_with_identity() {
        let tape = Tape::new();
        let m = Tensor::from_fn(3, 2, |i, j| i as f64 * 2.0 - j as f64);
        let i3 = tape.constant(Tensor::identity(3));
        let mv = tape.constant(m.clone());
        assert_eq!(*i3.matmul(mv).unwrap().value(), m);
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![0.0, 0.0, 0.0]));
        assert_close(
            x.row_softmax().unwrap().value().data(),
            &[1.0 / 3.0; 3],
            1e-15,
        );
        let x = tape.constant(Tensor::row_vector(vec![1.0, 0.7]));
        let p = x.row_softmax().unwrap();
        assert_close(p.value().data(), &[0.574443, 0.425557], 1e-6);
    }

    #[test]
    fn softmax_neg_inf_and_empty_row() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![1.0, f64::NEG_INFINITY]));
        assert_eq!(x.row_softmax().unwrap().value().data(), &[1.0, 0.0]);
        let x = tape.constant(Tensor::row_vector(vec![f64::NEG_INFINITY; 2]));
        assert_eq!(
            x.row_softmax().unwrap_err(),
            TensorError::EmptySoftmax { row: 0 }
        );
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(2, 3, |i, j| (i + j) as f64), true);
        tape.backward(x.sum()).unwrap();
        assert_eq!(tape.grad(x).unwrap(), Tensor::ones(2, 3));
    }

    #[test]
    fn backward_of_square() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![2.0, 3.0]), true);
        let y = x.hadamard(x).unwrap().sum();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 6.0]);
        // accumulates
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[8.0, 12.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_bad_roots() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NotScalar { shape: [2, 2] })
        ));
        let other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0), true);
        assert_eq!(tape.backward(y), Err(TensorError::ForeignVar));
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![1.0, 0.0]));
        assert_eq!(
            x.log().unwrap_err(),
            TensorError::NonPositiveLog { value: 0.0 }
        );
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(3, 2));
        let msg = a.add(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![1.0, -2.0]), true);
        let y = x.detach().hadamard(x.detach()).unwrap().sum();
        tape.backward(y).unwrap();
        assert!(tape.grad(x).is_none());
        let z = x.detach().hadamard(x).unwrap().sum();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn grad_check_sum_is_exact() {
        let x = Tensor::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let err = grad_check(|_, x| Ok::<_, TensorError>(x.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn segment_ops_forward() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::col_vector(vec![1.0, 2.0, 3.0, 0.0]));
        let s = x.segment_sum(vec![0, 1, 1, 4]).unwrap();
        assert_eq!(s.value().data(), &[1.0, 0.0, 5.0]);
        let p = x.segment_softmax(vec![0, 1, 4]).unwrap();
        let v = p.value();
        assert_eq!(v.get(0, 0), 1.0);
        assert!((v.get(1, 0) + v.get(2, 0) + v.get(3, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn repeat_and_block_sum_shapes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let r = x.repeat_cols(3);
        assert_eq!(r.value().data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let b = r.block_sum_cols(3).unwrap();
        assert_eq!(b.value().data(), &[3.0, 6.0]);
    }
}
