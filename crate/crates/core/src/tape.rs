//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`]. Node
//! ids are assigned in creation order, so inputs always precede outputs and a
//! single reverse sweep visits each node once.
//!
//! ```
//! use unicr_core::tape::Tape;
//! use unicr_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let f = tape.dot(x, x).unwrap();
//! let grads = tape.backward(f).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{dot, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Dot(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleBy(Var, Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Row(Var, usize),
    Pick(Var, usize),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    MaxSubtract(Var),
    EmbeddingBag { table: Var, bags: Vec<Vec<u32>> },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every gradient-requiring leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input; receives a gradient in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Evaluation(format!(
                "{} produced a non-finite value",
                op_name(&op)
            )));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(op, value, rg))
    }

    /// Matrix product. Accepts `[m,k]·[k,n]`, `[m,k]·[k]` and `[k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, out_shape_a) = match ta.rank() {
            2 => (ta.shape()[0], ta.shape()[1], true),
            1 => (1, ta.shape()[0], false),
            _ => return Err(dim_err("matmul", "scalar operand")),
        };
        let (kb, n, out_shape_b) = match tb.rank() {
            2 => (tb.shape()[0], tb.shape()[1], true),
            1 => (tb.shape()[0], 1, false),
            _ => return Err(dim_err("matmul", "scalar operand")),
        };
        if !out_shape_a && !out_shape_b {
            return Err(dim_err("matmul", "vector·vector; use dot"));
        }
        if k != kb {
            return Err(dim_err(
                "matmul",
                format!("{} × {}", shape_str(ta), shape_str(tb)),
            ));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let shape = match (out_shape_a, out_shape_b) {
            (true, true) => vec![m, n],
            (true, false) => vec![m],
            (false, true) => vec![n],
            (false, false) => unreachable!(),
        };
        self.push(Op::MatMul(a, b), Tensor::from_parts(shape, out), &[a, b])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 || ta.len() != tb.len() {
            return Err(dim_err(
                "dot",
                format!("{} · {}", shape_str(ta), shape_str(tb)),
            ));
        }
        let v = dot(ta.data(), tb.data());
        self.push(Op::Dot(a, b), Tensor::scalar(v), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(op, format!("{} vs {}", shape_str(ta), shape_str(tb))));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(op, value, &[a, b])
    }

    fn map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(op, value, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Adds a row vector to every row of a matrix (or to a vector of equal length).
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.rank() == 0 || tv.rank() != 1 || tm.cols() != tv.len() {
            return Err(dim_err(
                "add_row",
                format!("{} + {}", shape_str(tm), shape_str(tv)),
            ));
        }
        let c = tv.len();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tv.data()[i % c])
            .collect();
        let value = Tensor::from_parts(tm.shape().to_vec(), data);
        self.push(Op::AddRow(m, v), value, &[m, v])
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(Op::AddConst(a), a, |x| x + c)
    }

    /// Multiplies a tensor by a scalar-valued node.
    pub fn scale_by(&mut self, t: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(dim_err("scale_by", format!("factor {}", shape_str(self.value(s)))));
        }
        let c = self.value(s).item();
        self.map(Op::ScaleBy(t, s), t, |x| c * x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Exp(a), a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|x| **x <= 0.0) {
            return Err(Error::Evaluation(format!("log of non-positive value {x}")));
        }
        self.map(Op::Log(a), a, f64::ln)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Tanh(a), a, f64::tanh)
    }

    /// Softmax of a vector, computed after subtracting the maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || ta.is_empty() {
            return Err(dim_err("softmax", format!("input {}", shape_str(ta))));
        }
        let value = Tensor::vector(softmax(ta.data()));
        self.push(Op::Softmax(a), value, &[a])
    }

    /// Concatenates vectors and scalars into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err("concat", "no inputs"));
        }
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.rank() > 1 {
                return Err(dim_err("concat", format!("input {}", shape_str(t))));
            }
            data.extend_from_slice(t.data());
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data), parts)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(first) = rows.first() else {
            return Err(dim_err("stack", "no inputs"));
        };
        let c = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows {
            let t = self.value(*r);
            if t.rank() != 1 || t.len() != c {
                return Err(dim_err("stack", format!("row {} vs length {c}", shape_str(t))));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_parts(vec![rows.len(), c], data);
        self.push(Op::Stack(rows.to_vec()), value, rows)
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.rank() != 2 || i >= tm.rows() {
            return Err(dim_err("row", format!("row {i} of {}", shape_str(tm))));
        }
        let value = Tensor::vector(tm.row(i).to_vec());
        self.push(Op::Row(m, i), value, &[m])
    }

    /// Element `i` of a vector, as a scalar.
    pub fn pick(&mut self, v: Var, i: usize) -> Result<Var> {
        let tv = self.value(v);
        if tv.rank() != 1 || i >= tv.len() {
            return Err(dim_err("pick", format!("index {i} of {}", shape_str(tv))));
        }
        let value = Tensor::scalar(tv.data()[i]);
        self.push(Op::Pick(v, i), value, &[v])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(0.0, |acc, x| acc + x);
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(dim_err("mean", "empty input"));
        }
        let s = t.data().iter().fold(0.0, |acc, x| acc + x) / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s), &[a])
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let tm = self.value(m);
        if tm.rank() != 2 || tm.rows() == 0 {
            return Err(dim_err("mean_rows", format!("input {}", shape_str(tm))));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(tm.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(Op::MeanRows(m), Tensor::vector(out), &[m])
    }

    /// `a - max(a)`, with the maximum treated as a constant.
    pub fn max_subtract(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(dim_err("max_subtract", "empty input"));
        }
        let mx = max_of(t.data());
        self.map(Op::MaxSubtract(a), a, |x| x - mx)
    }

    /// Mean of the selected table rows, one output row per bag.
    pub fn embedding_bag(&mut self, table: Var, bags: Vec<Vec<u32>>) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(dim_err("embedding_bag", format!("table {}", shape_str(tt))));
        }
        let (v, d) = (tt.rows(), tt.cols());
        let mut out = vec![0.0; bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(dim_err("embedding_bag", format!("bag {b} is empty")));
            }
            let dst = &mut out[b * d..(b + 1) * d];
            for &id in bag {
                let id = id as usize;
                if id >= v {
                    return Err(dim_err("embedding_bag", format!("id {id} ≥ table rows {v}")));
                }
                for (o, x) in dst.iter_mut().zip(tt.row(id)) {
                    *o += x;
                }
            }
            let inv = 1.0 / bag.len() as f64;
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::from_parts(vec![bags.len(), d], out);
        self.push(Op::EmbeddingBag { table, bags }, value, &[table])
    }

    /// Numerically stable `log Σ exp(a_i)`, composed from max-subtract, exp,
    /// sum, log and a constant shift.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let mx = max_of(self.value(a).data());
        let shifted = self.max_subtract(a)?;
        let e = self.exp(shifted)?;
        let s = self.sum(e)?;
        let l = self.log(s)?;
        self.add_const(l, mx)
    }

    /// Reverse sweep from a scalar output. Does not mutate the tape, so
    /// repeated calls return identical maps.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if out.requires_grad {
            adj[output.0] = Some(vec![1.0]);
        }
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            self.propagate(node, &g, &mut adj);
        }
        let mut grads = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let data = adj
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads.insert(
                    Var(id),
                    Tensor::from_parts(node.value.shape().to_vec(), data),
                );
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = if ta.rank() == 2 { (ta.rows(), ta.cols()) } else { (1, ta.len()) };
                let n = if tb.rank() == 2 { tb.cols() } else { 1 };
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let ga = self.slot(adj, *a);
                    for i in 0..m {
                        for kk in 0..k {
                            let brow = &tb.data()[kk * n..(kk + 1) * n];
                            ga[i * k + kk] += dot(&g[i * n..(i + 1) * n], brow);
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let gb = self.slot(adj, *b);
                    for i in 0..m {
                        let arow = &ta.data()[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = arow[kk];
                            for (dst, gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *dst += aik * gv;
                            }
                        }
                    }
                }
            }
            Op::Dot(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                self.accumulate(adj, *a, |i| g[0] * tb[i]);
                self.accumulate(adj, *b, |i| g[0] * ta[i]);
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, |i| g[i]);
                self.accumulate(adj, *b, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, |i| g[i]);
                self.accumulate(adj, *b, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                self.accumulate(adj, *a, |i| g[i] * tb[i]);
                self.accumulate(adj, *b, |i| g[i] * ta[i]);
            }
            Op::AddRow(m, v) => {
                self.accumulate(adj, *m, |i| g[i]);
                if self.nodes[v.0].requires_grad {
                    let c = val(*v).len();
                    let gv = self.slot(adj, *v);
                    for (i, x) in g.iter().enumerate() {
                        gv[i % c] += x;
                    }
                }
            }
            Op::Scale(a, c) => self.accumulate(adj, *a, |i| c * g[i]),
            Op::AddConst(a) | Op::MaxSubtract(a) => self.accumulate(adj, *a, |i| g[i]),
            Op::ScaleBy(t, s) => {
                let c = val(*s).item();
                self.accumulate(adj, *t, |i| c * g[i]);
                let tt = val(*t).data();
                let gs = dot(g, tt);
                self.accumulate(adj, *s, |_| gs);
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.accumulate(adj, *a, |i| g[i] * y[i]);
            }
            Op::Log(a) => {
                let x = val(*a).data();
                self.accumulate(adj, *a, |i| g[i] / x[i]);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(adj, *a, |i| g[i] * y[i] * (1.0 - y[i]));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(adj, *a, |i| g[i] * (1.0 - y[i] * y[i]));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let gy = dot(g, y);
                self.accumulate(adj, *a, |i| y[i] * (g[i] - gy));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    self.accumulate(adj, *p, |i| g[off + i]);
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let c = node.value.cols();
                for (r, p) in rows.iter().enumerate() {
                    self.accumulate(adj, *p, |i| g[r * c + i]);
                }
            }
            Op::Row(m, r) => {
                if self.nodes[m.0].requires_grad {
                    let c = val(*m).cols();
                    let gm = self.slot(adj, *m);
                    for (dst, x) in gm[r * c..(r + 1) * c].iter_mut().zip(g) {
                        *dst += x;
                    }
                }
            }
            Op::Pick(v, i) => {
                if self.nodes[v.0].requires_grad {
                    self.slot(adj, *v)[*i] += g[0];
                }
            }
            Op::Sum(a) => self.accumulate(adj, *a, |_| g[0]),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                self.accumulate(adj, *a, |_| g[0] / n);
            }
            Op::MeanRows(m) => {
                let tm = val(*m);
                let (r, c) = (tm.rows() as f64, tm.cols());
                self.accumulate(adj, *m, |i| g[i % c] / r);
            }
            Op::EmbeddingBag { table, bags } => {
                if self.nodes[table.0].requires_grad {
                    let d = val(*table).cols();
                    let gt = self.slot(adj, *table);
                    for (b, bag) in bags.iter().enumerate() {
                        let inv = 1.0 / bag.len() as f64;
                        let src = &g[b * d..(b + 1) * d];
                        for &id in bag {
                            let id = id as usize;
                            for (dst, x) in gt[id * d..(id + 1) * d].iter_mut().zip(src) {
                                *dst += x * inv;
                            }
                        }
                    }
                }
            }
        }
    }

    fn slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        adj[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn accumulate(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = self.slot(adj, v);
        for (i, dst) in slot.iter_mut().enumerate() {
            *dst += f(i);
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::MatMul(..) => "matmul",
        Op::Dot(..) => "dot",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::ScaleBy(..) => "scale_by",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Softmax(..) => "softmax",
        Op::Concat(..) => "concat",
        Op::Stack(..) => "stack",
        Op::Row(..) => "row",
        Op::Pick(..) => "pick",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::MeanRows(..) => "mean_rows",
        Op::MaxSubtract(..) => "max_subtract",
        Op::EmbeddingBag { .. } => "embedding_bag",
    }
}

/// Row-major product with `k` accumulated in ascending order for every output
/// element, matching a naive triple loop bit-for-bit.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            for (o, bv) in orow.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain-value softmax with max subtraction.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mx = max_of(xs);
    let e: Vec<f64> = xs.iter().map(|x| (x - mx).exp()).collect();
    let s = e.iter().fold(0.0, |acc, x| acc + x);
    e.into_iter().map(|x| x / s).collect()
}
