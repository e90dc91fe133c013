//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough of its
//! inputs to replay the chain rule. Node ids increase monotonically, so the
//! node list is already in topological order and [`Tape::backward`] is a
//! single reverse sweep that visits each node once.
//!
//! Broadcasting is limited to a right-hand operand of shape `1×1` (scalar)
//! or `1×c` (row). Anything else has to be built explicitly, e.g. an outer
//! product with a ones column.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::param::{GradStore, ParamId, ParamStore};
use crate::tensor::{gemm_acc, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Abs,
    Exp,
    ExpM1,
    Ln,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Unary(Var, Unary),
    Affine(Var, f64),
    Clamp(Var, f64, f64),
    Dropout(Var, Vec<f64>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Transpose(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    Mean(Var),
    Lookup {
        table: Var,
        ids: Vec<usize>,
        padding: Option<usize>,
    },
    Pick(Var, usize),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    /// Drops every recorded node, releasing all intermediate values.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf tracking gradients without being backed by a parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node;
    /// frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_arc(store.shared(id), Op::Leaf, !store.is_frozen(id));
        self.params.insert(id, v);
        v
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, s) = self.dims(a)?;
        let (s2, c) = self.dims(b)?;
        if s != s2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; r * c];
        gemm_acc(r, s, c, self.value(a).data(), false, self.value(b).data(), false, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_matrix(r, c, out), Op::MatMul(a, b), rg))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (r, c) = self.dims(a)?;
        let (rb, cb) = self.dims(b)?;
        if (r, c) == (rb, cb) {
            Ok(Bcast::Same)
        } else if (rb, cb) == (1, 1) {
            Ok(Bcast::Scalar)
        } else if rb == 1 && cb == c {
            Ok(Bcast::Row)
        } else {
            Err(self.shape_err(op, a, b))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let mode = self.bcast(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match mode {
                    Bcast::Same => bv[i],
                    Bcast::Scalar => bv[0],
                    Bcast::Row => bv[i % c],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, make(a, b, mode), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Abs => f64::abs,
            Unary::Exp => f64::exp,
            Unary::ExpM1 => f64::exp_m1,
            Unary::Ln => f64::ln,
        };
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, Op::Unary(a, kind), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    /// Absolute value; the backward pass uses `sign(0) = 0`.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    /// `exp(a) − 1`, accurate near zero.
    pub fn exp_m1(&mut self, a: Var) -> Var {
        self.unary(a, Unary::ExpM1)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(&[a]);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    /// Inverted dropout. With `rng = None` (eval mode) or `p = 0` this is
    /// the identity and returns `a` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return a };
        if p <= 0.0 {
            return a;
        }
        assert!(p < 1.0, "dropout probability must be < 1");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    /// Row-wise softmax, shifted by the row max for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                z += e;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= z;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_matrix(r, c, out), Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_matrix(r, c, out), Op::LogSoftmaxRows(a), rg))
    }

    /// Concatenates along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        assert!(axis < 2, "concat axis must be 0 or 1");
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let (r0, c0) = self.dims(first)?;
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(self.shape_err("concat", first, p));
            }
            rows += r;
            cols += c;
        }
        let (rows, cols) = if axis == 0 { (rows, c0) } else { (r0, cols) };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
        } else {
            for i in 0..rows {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row_slice(i));
                }
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_matrix(rows, cols, out),
            Op::Concat(parts.to_vec(), axis),
            rg,
        ))
    }

    /// Keeps `range` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        assert!(axis < 2, "slice axis must be 0 or 1");
        let (r, c) = self.dims(a)?;
        let extent = if axis == 0 { r } else { c };
        if range.start >= range.end || range.end > extent {
            return Err(TensorError::Slice {
                axis,
                start: range.start,
                end: range.end,
                shape: vec![r, c],
            });
        }
        let x = self.value(a);
        let len = range.end - range.start;
        let out = if axis == 0 {
            Tensor::from_matrix(len, c, x.data()[range.start * c..range.end * c].to_vec())
        } else {
            let mut d = Vec::with_capacity(r * len);
            for i in 0..r {
                d.extend_from_slice(&x.row_slice(i)[range.clone()]);
            }
            Tensor::from_matrix(r, len, d)
        };
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Slice(a, axis, range.start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.dims(a)?;
        let out = self.value(a).transposed();
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Sums along `axis`: 0 collapses rows (`1×c`), 1 collapses columns (`r×1`).
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a);
        let rg = self.rg(&[a]);
        match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
                        *o += v;
                    }
                }
                Ok(self.push(Tensor::from_matrix(1, c, out), Op::SumRows(a), rg))
            }
            1 => {
                let out = (0..r).map(|i| x.row_slice(i).iter().sum()).collect();
                Ok(self.push(Tensor::from_matrix(r, 1, out), Op::SumCols(a), rg))
            }
            _ => panic!("sum axis must be 0 or 1"),
        }
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Gathers rows of `table` (`V×d`) into a `len×d` matrix.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.lookup_impl(table, ids, None)
    }

    /// Like [`lookup`](Self::lookup), but `padding` ids read as zero vectors
    /// and the padding row never receives gradient.
    pub fn lookup_padded(&mut self, table: Var, ids: &[usize], padding: usize) -> Result<Var> {
        self.lookup_impl(table, ids, Some(padding))
    }

    fn lookup_impl(&mut self, table: Var, ids: &[usize], padding: Option<usize>) -> Result<Var> {
        let (v, d) = self.dims(table)?;
        if ids.is_empty() {
            return Err(TensorError::Contract("lookup with no ids".into()));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Vocabulary { id, rows: v });
            }
            if Some(id) == padding {
                out.extend(std::iter::repeat_n(0.0, d));
            } else {
                out.extend_from_slice(t.row_slice(id));
            }
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_matrix(ids.len(), d, out),
            Op::Lookup {
                table,
                ids: ids.to_vec(),
                padding,
            },
            rg,
        ))
    }

    /// Single element as a `1×1` tensor.
    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if row >= r || col >= c {
            return Err(TensorError::Slice {
                axis: if row >= r { 0 } else { 1 },
                start: if row >= r { row } else { col },
                end: if row >= r { row + 1 } else { col + 1 },
                shape: vec![r, c],
            });
        }
        let idx = row * c + col;
        let v = self.value(a).data()[idx];
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, idx), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_deref() else { continue };
            self.propagate(i, g, before);
        }
        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(&p, &v)| (p, v)).collect(),
        })
    }

    /// Runs [`backward`](Self::backward) and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut GradStore) -> Result<Gradients> {
        let g = self.backward(loss)?;
        g.accumulate(store);
        Ok(g)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, s) = self.value(*a).dims2().unwrap();
                let c = out.cols();
                if needs(*a) {
                    let ga = slot(grads, *a, r * s);
                    gemm_acc(r, c, s, g, false, self.value(*b).data(), true, ga);
                }
                if needs(*b) {
                    let gb = slot(grads, *b, s * c);
                    gemm_acc(s, r, c, self.value(*a).data(), true, g, false, gb);
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
                if needs(*b) {
                    let nb = self.value(*b).numel();
                    reduce_into(slot(grads, *b, nb), g, *mode, out.cols(), |x, _| sign * x);
                }
            }
            Op::Mul(a, b, mode) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let c = out.cols();
                if needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (k, (d, gk)) in ga.iter_mut().zip(g).enumerate() {
                        let y = match mode {
                            Bcast::Same => bv[k],
                            Bcast::Scalar => bv[0],
                            Bcast::Row => bv[k % c],
                        };
                        *d += gk * y;
                    }
                }
                if needs(*b) {
                    reduce_into(slot(grads, *b, bv.len()), g, *mode, c, |x, k| x * av[k]);
                }
            }
            Op::Unary(a, kind) => {
                let x = self.value(*a).data();
                let y = out.data();
                let ga = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    let d = match kind {
                        Unary::Tanh => 1.0 - y[k] * y[k],
                        Unary::Sigmoid => y[k] * (1.0 - y[k]),
                        Unary::Abs => sign(x[k]),
                        Unary::Exp => y[k],
                        Unary::ExpM1 => y[k] + 1.0,
                        Unary::Ln => 1.0 / x[k],
                    };
                    ga[k] += g[k] * d;
                }
            }
            Op::Affine(a, scale) => add_into(slot(grads, *a, g.len()), g, *scale),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    if x[k] > *lo && x[k] < *hi {
                        ga[k] += g[k];
                    }
                }
            }
            Op::Dropout(a, mask) => {
                let ga = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * mask[k];
                }
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = out.dims2().unwrap();
                let y = out.data();
                let ga = slot(grads, *a, g.len());
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                    for k in row {
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = out.dims2().unwrap();
                let y = out.data();
                let ga = slot(grads, *a, g.len());
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let total: f64 = g[row.clone()].iter().sum();
                    for k in row {
                        ga[k] += g[k] - y[k].exp() * total;
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let cols = out.cols();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.value(*p).dims2().unwrap();
                    if needs(*p) {
                        let gp = slot(grads, *p, pr * pc);
                        if *axis == 0 {
                            add_into(gp, &g[offset * cols..(offset + pr) * cols], 1.0);
                        } else {
                            for i in 0..pr {
                                let src = &g[i * cols + offset..i * cols + offset + pc];
                                add_into(&mut gp[i * pc..(i + 1) * pc], src, 1.0);
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice(a, axis, start) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let (or, oc) = out.dims2().unwrap();
                let ga = slot(grads, *a, r * c);
                if *axis == 0 {
                    add_into(&mut ga[start * c..(start + or) * c], g, 1.0);
                } else {
                    for i in 0..r {
                        add_into(&mut ga[i * c + start..i * c + start + oc], &g[i * oc..(i + 1) * oc], 1.0);
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let ga = slot(grads, *a, r * c);
                // out is c×r
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::SumRows(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    add_into(&mut ga[i * c..(i + 1) * c], g, 1.0);
                }
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for x in &mut ga[i * c..(i + 1) * c] {
                        *x += g[i];
                    }
                }
            }
            Op::SumAll(a) | Op::Mean(a) => {
                let n = self.value(*a).numel();
                let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / n as f64 } else { 1.0 };
                for x in slot(grads, *a, n).iter_mut() {
                    *x += g[0] * scale;
                }
            }
            Op::Lookup { table, ids, padding } => {
                let (v, d) = self.value(*table).dims2().unwrap();
                let gt = slot(grads, *table, v * d);
                for (row, &id) in ids.iter().enumerate() {
                    if Some(id) == *padding {
                        continue;
                    }
                    add_into(&mut gt[id * d..(id + 1) * d], &g[row * d..(row + 1) * d], 1.0);
                }
            }
            Op::Pick(a, idx) => {
                let n = self.value(*a).numel();
                slot(grads, *a, n)[*idx] += g[0];
            }
        }
    }
}

/// Node gradients from one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced the loss
    /// through a differentiable path.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(tape.shape(v).to_vec(), g.clone()).expect("gradient shape"))
    }

    pub fn accumulate(&self, store: &mut GradStore) {
        let mut params = self.params.clone();
        params.sort_by_key(|(p, _)| *p);
        for (p, v) in params {
            if let Some(Some(g)) = self.grads.get(v.0) {
                store.accumulate(p, g);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn reduce_into(dst: &mut [f64], g: &[f64], mode: Bcast, cols: usize, f: impl Fn(f64, usize) -> f64) {
    match mode {
        Bcast::Same => {
            for (k, d) in dst.iter_mut().enumerate() {
                *d += f(g[k], k);
            }
        }
        Bcast::Scalar => {
            dst[0] += g.iter().enumerate().map(|(k, &x)| f(x, k)).sum::<f64>();
        }
        Bcast::Row => {
            for (k, &x) in g.iter().enumerate() {
                dst[k % cols] += f(x, k);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let a = tape.constant(t(&[&[0.3, -1.0], &[2.5, 4.0]]));
        let out = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(out), tape.value(a));

        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t(&[&[1.0], &[1.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out), &t(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_basics() {
        let mut tape = Tape::new();
        let z = tape.variable(Tensor::scalar(0.0));
        let th = tape.tanh(z);
        assert_eq!(tape.value(th).item(), 0.0);
        let g = tape.backward(th).unwrap();
        assert_eq!(g.wrt(&tape, z).unwrap().item(), 1.0);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn abs_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(&[-2.0, 0.0, 3.0]));
        let a = tape.abs(x);
        let s = tape.sum_all(a);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, x).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn broadcast_rules() {
        let mut tape = Tape::new();
        let m = tape.variable(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let row = tape.variable(Tensor::row(&[10.0, 20.0]));
        let sc = tape.variable(Tensor::scalar(2.0));
        let col = tape.constant(Tensor::column(&[1.0, 1.0]));
        let r = tape.add(m, row).unwrap();
        assert_eq!(tape.value(r), &t(&[&[11.0, 22.0], &[13.0, 24.0]]));
        let s = tape.mul(r, sc).unwrap();
        assert_eq!(tape.value(s).get(1, 1), 48.0);
        assert!(tape.add(m, col).is_err());
        let loss = tape.sum_all(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(&tape, row).unwrap().data(), &[4.0, 4.0]);
        assert_eq!(g.wrt(&tape, sc).unwrap().item(), 11.0 + 22.0 + 13.0 + 24.0);
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(&[1.0, 2.0, 3.0, 4.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(tape.dropout(x, 0.0, Some(&mut rng)), x);
        assert_eq!(tape.dropout::<ChaCha8Rng>(x, 0.5, None), x);
        let d = tape.dropout(x, 0.5, Some(&mut rng));
        for (o, i) in tape.value(d).data().iter().zip(tape.value(x).data()) {
            assert!(*o == 0.0 || (*o - 2.0 * i).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(&[0.0, 0.0]));
        let s = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        let b = tape.constant(Tensor::row(&[2f64.ln(), 0.0]));
        let s = tape.softmax_rows(b).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 4]);
        let back = tape.slice(c, 1, 0..2).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
        let c0 = tape.concat(&[a, b], 0).unwrap();
        let back = tape.slice(c0, 0, 2..4).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
        assert!(tape.slice(c, 1, 3..5).is_err());
    }

    #[test]
    fn lookup_zero_row_and_range_check() {
        let mut tape = Tape::new();
        let table = tape.variable(Tensor::zeros(4, 3));
        let e = tape.lookup(table, &[2]).unwrap();
        assert_eq!(tape.value(e).data(), &[0.0, 0.0, 0.0]);
        let err = tape.lookup(table, &[4]).unwrap_err();
        assert!(matches!(err, TensorError::Vocabulary { id: 4, rows: 4 }));
    }

    #[test]
    fn lookup_scatter_adds_and_skips_padding() {
        let mut tape = Tape::new();
        let table = tape.variable(t(&[&[1.0], &[2.0], &[3.0]]));
        let e = tape.lookup_padded(table, &[2, 0, 2, 1], 0).unwrap();
        let s = tape.sum_all(e);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, table).unwrap().data(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn backward_sum_and_mean_square() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(2, 3));
        let s = tape.sum_all(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, x).unwrap().data(), &[1.0; 6]);

        let x = tape.variable(Tensor::row(&[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let m = tape.mean(sq);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.wrt(&tape, x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(&[1.0, 2.0]));
        let mut grads = GradStore::new(&store);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let v = tape.param(&store, w);
            let s = tape.sum_all(v);
            tape.backward_into(s, &mut grads).unwrap();
        }
        assert_eq!(grads.get(w).data(), &[2.0, 2.0]);
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(&[1.0]));
        store.set_frozen(w, true);
        let mut tape = Tape::new();
        let v = tape.param(&store, w);
        let e = tape.exp(v);
        assert!(!tape.requires_grad(e));
    }

    #[test]
    fn clear_releases_nodes() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(&[1.0]));
        let mut tape = Tape::new();
        let v = tape.param(&store, w);
        tape.tanh(v);
        tape.clear();
        assert!(tape.is_empty());
        // parameter buffer is uniquely owned again
        store.get_mut(w).data_mut()[0] = 5.0;
        assert_eq!(store.get(w).item(), 5.0);
    }
}
