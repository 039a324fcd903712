use std::borrow::Cow;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Maxout(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
    MeanRows(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// Leaves may borrow their values (model parameters) for the lifetime `'a`,
/// so binding a model onto a fresh tape does not copy weights. A tape is
/// single-owner; concurrent evaluations each use their own.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Borrowed leaf; `requires_grad` marks it as a trainable parameter.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims(ta);
        let (k2, n) = dims(tb);
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if dims(ta) != dims(tb) {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        Ok(dims(ta))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_dims("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Add(a, b), rg))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = dims(ta);
        if dims(tr) != (1, n) {
            return Err(Error::dim("add_row", ta.shape(), tr.shape()));
        }
        let rd = tr.data();
        let out = ta
            .data()
            .iter()
            .enumerate()
            .map(|(idx, x)| x + rd[idx % n])
            .collect();
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_dims("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let out = t.data().iter().map(|x| x * factor).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Scale(a, factor), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let out = match kind {
            Activation::Tanh => t.data().iter().map(|x| x.tanh()).collect(),
            Activation::Sigmoid => t.data().iter().map(|&x| sigmoid(x)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Act(a, kind), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Concatenates along the last axis; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let m = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::dim(
                    "concat",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Stacks matrices vertically; all parts need the same column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Input("stack of zero tensors".into()))?;
        let n = self.value(first).cols();
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(Error::dim("stack_rows", self.value(first).shape(), t.shape()));
            }
            m += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::StackRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() {
            return Err(Error::Index {
                what: "row",
                index: r,
                size: t.rows(),
            });
        }
        let out = t.row(r).to_vec();
        let n = t.cols();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![1, n], out), Op::Row(a, r), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if len == 0 || start + len > n {
            return Err(Error::Index {
                what: "column slice",
                index: start + len,
                size: n,
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![m, len], out),
            Op::SliceCols(a, start),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.data()[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), rg)
    }

    /// Max over adjacent pairs of the last axis. Ties select the lower index.
    pub fn maxout(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if n % 2 != 0 {
            return Err(Error::dim("maxout", t.shape(), &[2]));
        }
        let out = t
            .data()
            .chunks_exact(2)
            .map(|pair| if pair[0] >= pair[1] { pair[0] } else { pair[1] })
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![m, n / 2], out), Op::Maxout(a), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(softmax_row(t.row(i)));
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(log_softmax_row(t.row(i)));
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::LogSoftmax(a), rg)
    }

    /// Selects rows of an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, e) = dims(t);
        if ids.is_empty() {
            return Err(Error::Input("gather with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: v,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), e], out),
            Op::Gather(table, ids.to_vec()),
            rg,
        ))
    }

    /// Mean negative log-probability of `targets` under row-wise log-probabilities.
    pub fn cross_entropy(&mut self, logprobs: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logprobs);
        let (n, v) = dims(t);
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut total = 0.0;
        for (r, &id) in targets.iter().enumerate() {
            if id >= v {
                return Err(Error::Index {
                    what: "vocabulary",
                    index: id,
                    size: v,
                });
            }
            total -= t.get(r, id);
        }
        let rg = self.rg(&[logprobs]);
        Ok(self.push(
            Tensor::from_parts(vec![1, 1], vec![total / n as f64]),
            Op::CrossEntropy(logprobs, targets.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![1, 1], vec![total]), Op::Sum(a), rg)
    }

    /// Column-wise mean over rows: `m × n -> 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![1, n], out), Op::MeanRows(a), rg)
    }

    /// Reverse sweep from a scalar `target`. Gradients of earlier sweeps are
    /// discarded; every gradient-requiring node recorded up to `target` ends
    /// with a populated (possibly zero) gradient.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        let t = self.value(target);
        if t.len() != 1 {
            return Err(Error::dim("backward", t.shape(), &[1, 1]));
        }
        self.grads = self
            .nodes
            .iter()
            .take(target.0 + 1)
            .map(|n| n.requires_grad.then(|| vec![0.0; n.value.len()]))
            .collect();
        if !self.nodes[target.0].requires_grad {
            return Ok(());
        }
        self.grads[target.0] = Some(vec![1.0]);

        for i in (0..=target.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = self.grads[i].take().expect("grad allocated for requires_grad node");
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Split borrows: node values are read, grads of strictly earlier nodes written.
        let (nodes, grads) = (&self.nodes, &mut self.grads);
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        let out = &nodes[i].value;
        macro_rules! acc {
            ($v:expr) => {
                if nodes[$v.0].requires_grad {
                    grads[$v.0].as_mut()
                } else {
                    None
                }
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = dims(ta);
                let n = tb.cols();
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[r * k + p];
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = acc!(v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gr) = acc!(*row) {
                    let n = gr.len();
                    for (idx, x) in g.iter().enumerate() {
                        gr[idx % n] += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                if let Some(ga) = acc!(*a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(db) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(da) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += s * x);
                }
            }
            Op::Act(a, kind) => {
                if let Some(ga) = acc!(*a) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += match kind {
                            Activation::Tanh => x * (1.0 - y * y),
                            Activation::Sigmoid => x * y * (1.0 - y),
                        };
                    }
                }
            }
            Op::Concat(parts) => {
                let (m, n) = dims(out);
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if let Some(gp) = acc!(p) {
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * n + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if let Some(gp) = acc!(p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(o, x)| *o += x);
                    }
                    offset += len;
                }
            }
            Op::Row(a, r) => {
                let n = val(*a).cols();
                if let Some(ga) = acc!(*a) {
                    ga[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, x)| *o += x);
                }
            }
            Op::SliceCols(a, start) => {
                let n = val(*a).cols();
                let (m, len) = dims(out);
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        for c in 0..len {
                            ga[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims(val(*a));
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Maxout(a) => {
                let da = val(*a).data();
                if let Some(ga) = acc!(*a) {
                    for (j, x) in g.iter().enumerate() {
                        let idx = if da[2 * j] >= da[2 * j + 1] { 2 * j } else { 2 * j + 1 };
                        ga[idx] += x;
                    }
                }
            }
            Op::Softmax(a) => {
                let (m, n) = dims(out);
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        let y = out.row(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = gr.iter().zip(y).map(|(x, y)| x * y).sum();
                        for c in 0..n {
                            ga[r * n + c] += y[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (m, n) = dims(out);
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        let y = out.row(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let total: f64 = gr.iter().sum();
                        for c in 0..n {
                            ga[r * n + c] += gr[c] - y[c].exp() * total;
                        }
                    }
                }
            }
            Op::Gather(table, ids) => {
                let e = val(*table).cols();
                if let Some(gt) = acc!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..e {
                            gt[id * e + c] += g[r * e + c];
                        }
                    }
                }
            }
            Op::CrossEntropy(lp, targets) => {
                let v = val(*lp).cols();
                let scale = g[0] / targets.len() as f64;
                if let Some(gl) = acc!(*lp) {
                    for (r, &id) in targets.iter().enumerate() {
                        gl[r * v + id] -= scale;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::MeanRows(a) => {
                let (m, n) = dims(val(*a));
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c] / m as f64;
                        }
                    }
                }
            }
        }
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Max-subtracted log-softmax of one row.
pub fn log_softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - max - log_total).collect()
}
