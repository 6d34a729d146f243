//! Reverse-mode tape over dense tensors.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order. `backward` walks it once in reverse, which fixes the
//! accumulation order and makes gradients bit-reproducible.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a fused operation: maps the output gradient to one
/// gradient per input (same order as the inputs passed to [`Graph::custom`]).
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    NarrowCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { table: Var, rows: Vec<usize> },
    PickCols { src: Var, cols: Vec<usize> },
    Sum(Var),
    Custom { inputs: Vec<Var>, backward: BackwardFn<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Elementwise primitive selector for [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn is_scalar_like<T: Scalar>(t: &Tensor<T>) -> bool {
    t.len() == 1 && t.shape().len() <= 1
}

fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_rows<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (z.rows(), z.cols());
    let mut out = z.clone();
    let data = out.data_mut();
    for i in 0..r {
        let row = &mut data[i * c..(i + 1) * c];
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}

pub(crate) fn log_softmax_rows<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (z.rows(), z.cols());
    let mut out = z.clone();
    let data = out.data_mut();
    for i in 0..r {
        let row = &mut data[i * c..(i + 1) * c];
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let s = row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
        let lse = m + s.ln();
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(ta.zip_map(tb, f))
        } else if is_scalar_like(tb) {
            let s = tb.item();
            Ok(ta.map(|x| f(x, s)))
        } else if is_scalar_like(ta) {
            let s = ta.item();
            Ok(tb.map(|x| f(s, x)))
        } else {
            Err(Error::Dimension {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a[i, :] + bias` for every row `i`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = ta.cols();
        if tb.len() != c {
            return Err(Error::Dimension {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        let b = tb.data();
        for row in out.data_mut().chunks_mut(c) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some((index, &value)) = t.data().iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
            return Err(Error::Domain {
                op: "log",
                index,
                value: value.as_f64(),
            });
        }
        let out = t.map(|x| x.ln());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Config(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        Ok(match op {
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Sub => self.sub(args[0], args[1])?,
            Elementwise::Mul => self.mul(args[0], args[1])?,
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Exp => self.exp(args[0]),
            Elementwise::Log => self.log(args[0])?,
        })
    }

    /// Row-wise softmax (a vector is one row).
    pub fn softmax(&mut self, z: Var) -> Var {
        let out = softmax_rows(self.value(z));
        let rg = self.rg(z);
        self.push(out, Op::SoftmaxRows(z), rg)
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax(&mut self, z: Var) -> Var {
        let out = log_softmax_rows(self.value(z));
        let rg = self.rg(z);
        self.push(out, Op::LogSoftmaxRows(z), rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn narrow_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(Error::Dimension {
                op: "narrow_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], out)?;
        let rg = self.rg(src);
        Ok(self.push(out, Op::NarrowCols { src, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Embedding lookup: row `rows[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let c = t.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= t.rows() {
                return Err(Error::Dimension {
                    op: "gather_rows",
                    left: t.shape().to_vec(),
                    right: vec![r],
                });
            }
            out.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![rows.len(), c], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// `out[i] = src[i, cols[i]]`, shape `[rows × 1]`.
    pub fn pick_cols(&mut self, src: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(src);
        if cols.len() != t.rows() || cols.iter().any(|&c| c >= t.cols()) {
            return Err(Error::Dimension {
                op: "pick_cols",
                left: t.shape().to_vec(),
                right: vec![cols.len()],
            });
        }
        let out: Vec<T> = cols.iter().enumerate().map(|(i, &c)| t.at(i, c)).collect();
        let out = Tensor::new(vec![cols.len(), 1], out)?;
        let rg = self.rg(src);
        Ok(self.push(
            out,
            Op::PickCols {
                src,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).len() as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Fused operation with a caller-supplied forward value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar output. Each node is visited once, in
    /// decreasing index order.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.value(output).shape(), T::one());
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradient wrt an operand of a broadcasting binary op.
    fn reduce_to(&self, v: Var, g: Tensor<T>) -> Tensor<T> {
        let shape = self.value(v).shape();
        if shape == g.shape() {
            g
        } else {
            Tensor::full(shape, g.sum())
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = g.matmul(&tb.transpose()).expect("matmul backward shapes");
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = ta.transpose().matmul(g).expect("matmul backward shapes");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    let ga = self.reduce_to(*a, g.clone());
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.reduce_to(*b, g.clone());
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    let ga = self.reduce_to(*a, g.clone());
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.reduce_to(*b, g.map(|x| -x));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let other_times = |other: &Tensor<T>| -> Tensor<T> {
                    if other.shape() == g.shape() {
                        g.zip_map(other, |x, y| x * y)
                    } else {
                        let s = other.item();
                        g.map(|x| x * s)
                    }
                };
                if self.rg(*a) {
                    let ga = self.reduce_to(*a, other_times(tb));
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.reduce_to(*b, other_times(ta));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(a, bias) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.rg(*bias) {
                    let c = g.cols();
                    let mut acc = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (s, &x) in acc.iter_mut().zip(row) {
                            *s = *s + x;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, acc).expect("bias shape"));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(out, |gy, y| gy * y * (T::one() - y));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(out, |gy, y| gy * (T::one() - y * y));
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| if x > T::zero() { gy } else { T::zero() });
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(out, |gy, y| gy * y);
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| gy / x);
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                let mut ga = out.clone();
                for (i, row) in ga.data_mut().chunks_mut(c).enumerate() {
                    let gr = g.row(i);
                    let dot = row.iter().zip(gr).fold(T::zero(), |acc, (&y, &gy)| acc + y * gy);
                    for (y, &gy) in row.iter_mut().zip(gr) {
                        *y = *y * (gy - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let c = out.cols();
                let mut ga = g.clone();
                for (i, row) in ga.data_mut().chunks_mut(c).enumerate() {
                    let total = row.iter().fold(T::zero(), |acc, &x| acc + x);
                    for (gx, &y) in row.iter_mut().zip(out.row(i)) {
                        *gx = *gx - y.exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::NarrowCols { src, start } => {
                let t = self.value(*src);
                let (r, c) = (t.rows(), t.cols());
                let len = out.cols();
                let mut ga = Tensor::zeros(t.shape());
                let d = ga.data_mut();
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *src, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let w = t.cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(t.len());
                        for i in 0..t.rows() {
                            d.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        let gp = Tensor::new(t.shape().to_vec(), d).expect("concat shape");
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, rows } => {
                let t = self.value(*table);
                let c = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                let d = ga.data_mut();
                for (i, &r) in rows.iter().enumerate() {
                    for (dst, &x) in d[r * c..(r + 1) * c].iter_mut().zip(g.row(i)) {
                        *dst = *dst + x;
                    }
                }
                self.accumulate(grads, *table, ga);
            }
            Op::PickCols { src, cols } => {
                let t = self.value(*src);
                let c = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                let d = ga.data_mut();
                for (i, &col) in cols.iter().enumerate() {
                    d[i * c + col] = g.data()[i];
                }
                self.accumulate(grads, *src, ga);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()));
            }
            Op::Custom { inputs, backward } => {
                let gs = backward(g);
                debug_assert_eq!(gs.len(), inputs.len());
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        self.accumulate(grads, v, gv);
                    }
                }
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
