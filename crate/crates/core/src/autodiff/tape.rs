//! Reverse-mode differentiation on an append-only tape.
//!
//! Every operation appends one node holding the op kind, the input node ids
//! and the forward value. Node ids grow monotonically, so the node list is
//! already a topological order and the backward pass is a single reverse
//! sweep: visit each node once, in reverse id order, adding its
//! vector-Jacobian contributions into the gradients of its inputs.
//!
//! The op set is deliberately small and closed: matmul, add, sub,
//! elementwise mul, scalar scale, tanh, sigmoid, clamped exp, concat, slice,
//! reshape, sum, mean, square and outer product. Division and log never
//! appear, so no op introduces a pole. `exp` clamps its argument at +40
//! before exponentiating and its derivative is zero beyond the clamp, which
//! keeps the gradient consistent with the actual forward map.
//!
//! There is no broadcasting. The only shape-changing rules are the ones each
//! op states; everything else is rejected with the offending shapes and the
//! op name in the message. Replaying a computation with identical inputs is
//! bit-identical: accumulation orders are fixed and nothing on the tape is
//! nondeterministic.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use super::tensor::{NodeRef, Tensor};

static TAPE_STAMP: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    RootNotScalar(Vec<usize>),
    #[error("tensor is not tracked on this tape")]
    NotOnTape,
    #[error("{0}")]
    Invalid(String),
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

/// One recorded operation. Input node ids always precede the node's own id.
#[derive(Debug, Clone)]
enum Step {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Tanh { a: usize },
    Sigmoid { a: usize },
    ExpClamped { a: usize },
    Concat { parts: Vec<usize> },
    Slice { a: usize, start: usize },
    Reshape { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    Square { a: usize },
    Outer { a: usize, b: usize },
}

#[derive(Debug)]
struct Node {
    step: Step,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Operation request for the generic dispatch entry point.
pub enum Op<'a> {
    MatMul(&'a Tensor, &'a Tensor),
    Add(&'a Tensor, &'a Tensor),
    Sub(&'a Tensor, &'a Tensor),
    Mul(&'a Tensor, &'a Tensor),
    Scale(&'a Tensor, f64),
    Tanh(&'a Tensor),
    Sigmoid(&'a Tensor),
    ExpClamped(&'a Tensor),
    Concat(Vec<&'a Tensor>),
    Slice(&'a Tensor, usize, usize),
    Reshape(&'a Tensor, Vec<usize>),
    Sum(&'a Tensor),
    Mean(&'a Tensor),
    Square(&'a Tensor),
    Outer(&'a Tensor, &'a Tensor),
}

/// Append-only record of one computation. A tape is owned by one forward
/// pass at a time; evaluation without gradients just drops the tape.
pub struct Tape {
    stamp: u64,
    nodes: RefCell<Vec<Node>>,
    swept: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            stamp: TAPE_STAMP.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            swept: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `t` as a leaf and returns the tracked handle. Use this once
    /// per parameter per tape; gradients are queried through the returned
    /// tensor. Untracked tensors fed straight into ops are recorded as
    /// independent constants on every use.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = self.push(Step::Leaf, t.shape().to_vec(), t.data().to_vec());
        Tensor::with_node(t.shape().to_vec(), t.data().to_vec(), NodeRef { tape: self.stamp, id })
    }

    /// Same mechanics as `watch`, named for inputs whose gradient is never
    /// read.
    pub fn constant(&self, t: &Tensor) -> Tensor {
        self.watch(t)
    }

    fn push(&self, step: Step, shape: Vec<usize>, data: Vec<f64>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { step, shape, data });
        nodes.len() - 1
    }

    /// Node id of `t` on this tape, recording it as a leaf if untracked or
    /// tracked on some other tape.
    fn ensure(&self, t: &Tensor) -> usize {
        match t.node {
            Some(nref) if nref.tape == self.stamp => nref.id,
            _ => self.push(Step::Leaf, t.shape().to_vec(), t.data().to_vec()),
        }
    }

    fn out(&self, step: Step, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let id = self.push(step, shape.clone(), data.clone());
        Tensor::with_node(shape, data, NodeRef { tape: self.stamp, id })
    }

    fn check_nonempty(op: &'static str, t: &Tensor) -> Result<(), AutodiffError> {
        if t.is_empty() {
            return Err(shape_err(op, format!("empty tensor of shape {:?}", t.shape())));
        }
        Ok(())
    }

    /// Generic dispatch; the named methods below are thin wrappers.
    pub fn forward_op(&self, op: Op<'_>) -> Result<Tensor, AutodiffError> {
        match op {
            Op::MatMul(a, b) => self.matmul(a, b),
            Op::Add(a, b) => self.add(a, b),
            Op::Sub(a, b) => self.sub(a, b),
            Op::Mul(a, b) => self.mul(a, b),
            Op::Scale(a, c) => self.scale(a, c),
            Op::Tanh(a) => self.tanh(a),
            Op::Sigmoid(a) => self.sigmoid(a),
            Op::ExpClamped(a) => self.exp_clamped(a),
            Op::Concat(parts) => self.concat(&parts),
            Op::Slice(a, start, len) => self.slice(a, start, len),
            Op::Reshape(a, shape) => self.reshape(a, shape),
            Op::Sum(a) => self.sum(a),
            Op::Mean(a) => self.mean(a),
            Op::Square(a) => self.square(a),
            Op::Outer(a, b) => self.outer(a, b),
        }
    }

    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty("matmul", a)?;
        Self::check_nonempty("matmul", b)?;
        if a.rank() != 2 {
            return Err(shape_err("matmul", format!("left operand must be rank 2, got {:?}", a.shape())));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        match b.rank() {
            2 => {
                let (kb, n) = (b.shape()[0], b.shape()[1]);
                if k != kb {
                    return Err(shape_err(
                        "matmul",
                        format!("inner dimensions disagree: {:?} x {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                let ad = a.data();
                let bd = b.data();
                for i in 0..m {
                    for l in 0..k {
                        let ail = ad[i * k + l];
                        let brow = &bd[l * n..(l + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for j in 0..n {
                            orow[j] += ail * brow[j];
                        }
                    }
                }
                let (ia, ib) = (self.ensure(a), self.ensure(b));
                Ok(self.out(Step::MatMul { a: ia, b: ib }, vec![m, n], out))
            }
            1 => {
                if k != b.shape()[0] {
                    return Err(shape_err(
                        "matmul",
                        format!("inner dimensions disagree: {:?} x {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m];
                let ad = a.data();
                let bd = b.data();
                for i in 0..m {
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += ad[i * k + l] * bd[l];
                    }
                    out[i] = acc;
                }
                let (ia, ib) = (self.ensure(a), self.ensure(b));
                Ok(self.out(Step::MatMul { a: ia, b: ib }, vec![m], out))
            }
            r => Err(shape_err("matmul", format!("right operand must be rank 1 or 2, got rank {}", r))),
        }
    }

    fn zip(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        step: impl Fn(usize, usize) -> Step,
    ) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty(op, a)?;
        Self::check_nonempty(op, b)?;
        if a.shape() != b.shape() {
            return Err(shape_err(op, format!("shapes disagree: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let (ia, ib) = (self.ensure(a), self.ensure(b));
        Ok(self.out(step(ia, ib), a.shape().to_vec(), data))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.zip("add", a, b, |x, y| x + y, |a, b| Step::Add { a, b })
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.zip("sub", a, b, |x, y| x - y, |a, b| Step::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.zip("mul", a, b, |x, y| x * y, |a, b| Step::Mul { a, b })
    }

    fn unary(
        &self,
        op: &'static str,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        step: impl Fn(usize) -> Step,
    ) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty(op, a)?;
        let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
        let ia = self.ensure(a);
        Ok(self.out(step(ia), a.shape().to_vec(), data))
    }

    /// Multiplication by a compile-time-known scalar; the scalar is an
    /// attribute, not a differentiable input.
    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor, AutodiffError> {
        self.unary("scale", a, |x| c * x, |a| Step::Scale { a, c })
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        self.unary("tanh", a, f64::tanh, |a| Step::Tanh { a })
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), |a| Step::Sigmoid { a })
    }

    /// `exp(min(x, 40))`; the derivative is zero where the clamp is active.
    pub fn exp_clamped(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        self.unary("exp_clamped", a, |x| x.min(40.0).exp(), |a| Step::ExpClamped { a })
    }

    /// Concatenation of rank-1 tensors, in argument order.
    pub fn concat(&self, parts: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".to_string()));
        }
        let mut data = Vec::new();
        for p in parts {
            Self::check_nonempty("concat", p)?;
            if p.rank() != 1 {
                return Err(shape_err("concat", format!("inputs must be rank 1, got {:?}", p.shape())));
            }
            data.extend_from_slice(p.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| self.ensure(p)).collect();
        let n = data.len();
        Ok(self.out(Step::Concat { parts: ids }, vec![n], data))
    }

    /// Contiguous range along axis 0: elements of a vector, rows of a matrix.
    pub fn slice(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty("slice", a)?;
        if len == 0 {
            return Err(shape_err("slice", "zero-length slice".to_string()));
        }
        let (rows, row_w, mut shape) = match a.rank() {
            1 => (a.shape()[0], 1usize, vec![0usize]),
            2 => (a.shape()[0], a.shape()[1], vec![0usize, a.shape()[1]]),
            r => return Err(shape_err("slice", format!("rank {} unsupported, shape {:?}", r, a.shape()))),
        };
        if start + len > rows {
            return Err(shape_err(
                "slice",
                format!("range {}..{} out of bounds for {:?}", start, start + len, a.shape()),
            ));
        }
        shape[0] = len;
        let data = a.data()[start * row_w..(start + len) * row_w].to_vec();
        let ia = self.ensure(a);
        Ok(self.out(Step::Slice { a: ia, start: start * row_w }, shape, data))
    }

    pub fn reshape(&self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty("reshape", a)?;
        let want: usize = shape.iter().product();
        if want != a.len() {
            return Err(shape_err(
                "reshape",
                format!("cannot reshape {:?} ({} elements) to {:?}", a.shape(), a.len(), shape),
            ));
        }
        let ia = self.ensure(a);
        Ok(self.out(Step::Reshape { a: ia }, shape, a.data().to_vec()))
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty("sum", a)?;
        let s: f64 = a.data().iter().sum();
        let ia = self.ensure(a);
        Ok(self.out(Step::Sum { a: ia }, vec![], vec![s]))
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty("mean", a)?;
        let s: f64 = a.data().iter().sum();
        let ia = self.ensure(a);
        Ok(self.out(Step::Mean { a: ia }, vec![], vec![s / a.len() as f64]))
    }

    pub fn square(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        self.unary("square", a, |x| x * x, |a| Step::Square { a })
    }

    /// Outer product of two vectors: `[p] x [q] -> [p,q]`.
    pub fn outer(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        Self::check_nonempty("outer", a)?;
        Self::check_nonempty("outer", b)?;
        if a.rank() != 1 || b.rank() != 1 {
            return Err(shape_err(
                "outer",
                format!("expects two rank-1 tensors, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        let (p, q) = (a.shape()[0], b.shape()[0]);
        let mut data = Vec::with_capacity(p * q);
        for &x in a.data() {
            for &y in b.data() {
                data.push(x * y);
            }
        }
        let (ia, ib) = (self.ensure(a), self.ensure(b));
        Ok(self.out(Step::Outer { a: ia, b: ib }, vec![p, q], data))
    }

    /// Reverse sweep from a scalar root. Returns gradients for every node;
    /// nodes the root does not depend on get zeros. A tape carries one
    /// forward pass, so the sweep runs at most once.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients, AutodiffError> {
        if self.swept.replace(true) {
            return Err(AutodiffError::Invalid(
                "backward already ran on this tape; record a fresh forward pass".to_string(),
            ));
        }
        let root_id = match root.node {
            Some(nref) if nref.tape == self.stamp => nref.id,
            _ => return Err(AutodiffError::NotOnTape),
        };
        if root.len() != 1 {
            return Err(AutodiffError::RootNotScalar(root.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root_id] = Some(vec![1.0]);

        for i in (0..=root_id).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[i];
            match &node.step {
                Step::Leaf => {}
                Step::MatMul { a, b } => {
                    let (ad, bd) = (&nodes[*a].data, &nodes[*b].data);
                    let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    if nodes[*b].shape.len() == 2 {
                        let n = nodes[*b].shape[1];
                        let da = acc(&mut grads, *a, m * k);
                        for i0 in 0..m {
                            for l in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i0 * n + j] * bd[l * n + j];
                                }
                                da[i0 * k + l] += s;
                            }
                        }
                        let db = acc(&mut grads, *b, k * n);
                        for l in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i0 in 0..m {
                                    s += ad[i0 * k + l] * g[i0 * n + j];
                                }
                                db[l * n + j] += s;
                            }
                        }
                    } else {
                        let da = acc(&mut grads, *a, m * k);
                        for i0 in 0..m {
                            for l in 0..k {
                                da[i0 * k + l] += g[i0] * bd[l];
                            }
                        }
                        let db = acc(&mut grads, *b, k);
                        for l in 0..k {
                            let mut s = 0.0;
                            for i0 in 0..m {
                                s += ad[i0 * k + l] * g[i0];
                            }
                            db[l] += s;
                        }
                    }
                }
                Step::Add { a, b } => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, 1.0);
                }
                Step::Sub { a, b } => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, -1.0);
                }
                Step::Mul { a, b } => {
                    let (ad, bd) = (nodes[*a].data.clone(), nodes[*b].data.clone());
                    let da = acc(&mut grads, *a, g.len());
                    for (i0, gi) in g.iter().enumerate() {
                        da[i0] += gi * bd[i0];
                    }
                    let db = acc(&mut grads, *b, g.len());
                    for (i0, gi) in g.iter().enumerate() {
                        db[i0] += gi * ad[i0];
                    }
                }
                Step::Scale { a, c } => add_into(acc(&mut grads, *a, g.len()), &g, *c),
                Step::Tanh { a } => {
                    let y = &node.data;
                    let da = acc(&mut grads, *a, g.len());
                    for (i0, gi) in g.iter().enumerate() {
                        da[i0] += gi * (1.0 - y[i0] * y[i0]);
                    }
                }
                Step::Sigmoid { a } => {
                    let y = &node.data;
                    let da = acc(&mut grads, *a, g.len());
                    for (i0, gi) in g.iter().enumerate() {
                        da[i0] += gi * y[i0] * (1.0 - y[i0]);
                    }
                }
                Step::ExpClamped { a } => {
                    let y = &node.data;
                    let x = nodes[*a].data.clone();
                    let da = acc(&mut grads, *a, g.len());
                    for (i0, gi) in g.iter().enumerate() {
                        if x[i0] <= 40.0 {
                            da[i0] += gi * y[i0];
                        }
                    }
                }
                Step::Concat { parts } => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for pid in parts {
                        let len = nodes[pid].data.len();
                        let dp = acc(&mut grads, pid, len);
                        add_into(dp, &g[off..off + len], 1.0);
                        off += len;
                    }
                }
                Step::Slice { a, start } => {
                    let total = nodes[*a].data.len();
                    let da = acc(&mut grads, *a, total);
                    add_into(&mut da[*start..*start + g.len()], &g, 1.0);
                }
                Step::Reshape { a } => add_into(acc(&mut grads, *a, g.len()), &g, 1.0),
                Step::Sum { a } => {
                    let len = nodes[*a].data.len();
                    let da = acc(&mut grads, *a, len);
                    for v in da.iter_mut() {
                        *v += g[0];
                    }
                }
                Step::Mean { a } => {
                    let len = nodes[*a].data.len();
                    let w = g[0] / len as f64;
                    let da = acc(&mut grads, *a, len);
                    for v in da.iter_mut() {
                        *v += w;
                    }
                }
                Step::Square { a } => {
                    let x = nodes[*a].data.clone();
                    let da = acc(&mut grads, *a, g.len());
                    for (i0, gi) in g.iter().enumerate() {
                        da[i0] += gi * 2.0 * x[i0];
                    }
                }
                Step::Outer { a, b } => {
                    let (ad, bd) = (nodes[*a].data.clone(), nodes[*b].data.clone());
                    let (p, q) = (ad.len(), bd.len());
                    let da = acc(&mut grads, *a, p);
                    for i0 in 0..p {
                        let mut s = 0.0;
                        for j in 0..q {
                            s += g[i0 * q + j] * bd[j];
                        }
                        da[i0] += s;
                    }
                    let db = acc(&mut grads, *b, q);
                    for j in 0..q {
                        let mut s = 0.0;
                        for i0 in 0..p {
                            s += g[i0 * q + j] * ad[i0];
                        }
                        db[j] += s;
                    }
                }
            }
            grads[i] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { stamp: self.stamp, grads, shapes })
    }
}

/// Gradient slot for node `id`, created zero-filled on first touch.
fn acc(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

/// Result of a backward sweep: one gradient per tape node.
#[derive(Debug)]
pub struct Gradients {
    stamp: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`, which must be tracked on
    /// the tape backward ran on. Unreached nodes yield zeros.
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor, AutodiffError> {
        let nref = t.node.ok_or(AutodiffError::NotOnTape)?;
        if nref.tape != self.stamp {
            return Err(AutodiffError::NotOnTape);
        }
        let shape = self.shapes[nref.id].clone();
        let data = match &self.grads[nref.id] {
            Some(g) => g.clone(),
            None => vec![0.0; shape.iter().product()],
        };
        Ok(Tensor::new(shape, data).expect("gradient shape matches node"))
    }
}
