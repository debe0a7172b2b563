//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! The design is a dynamic tape: every differentiable op allocates a fresh
//! output tensor that remembers its parents and a closure computing the
//! vector-Jacobian product. [`Tensor::backward`] replays the tape in reverse
//! topological order using run-local adjoint buffers, then adds the adjoints
//! of `requires_grad` leaves into their persistent `grad` fields. Calling
//! `backward` twice therefore accumulates, and [`zero_grads`] is the explicit
//! reset.
//!
//! Values are immutable while a tape that references them is alive; the only
//! sanctioned mutations are [`Tensor::update_values`] (optimizer steps,
//! finite-difference probes) between passes, and grad bookkeeping. Graphs are
//! per-thread and never shared.

mod gradcheck;

pub use gradcheck::{check_gradients, GradCheck};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: shape {shape:?} wants {expected} values, got {got}")]
    LengthMismatch {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: input must not be empty")]
    Empty { op: &'static str },
    #[error("glu needs an even trailing dimension, got {dim}")]
    OddGlu { dim: usize },
    #[error("{op}: window width {k} must be odd for a centered window")]
    EvenWindow { op: &'static str, k: usize },
    #[error("backward root must hold exactly one value, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },
}

type Result<T> = std::result::Result<T, TensorError>;

// ── grad recording switch ──

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with tape recording disabled. Ops still compute values but the
/// results carry no graph, so `backward` through them is a no-op.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

// ── tensor ──

/// Adjoint buffers for one backward pass, keyed by node identity.
struct Adjoints {
    map: HashMap<usize, Vec<f64>>,
}

impl Adjoints {
    /// Accumulates into `t`'s run-local adjoint via `f`. Skips tensors that
    /// neither require grad nor sit on a path to one.
    fn with(&mut self, t: &Tensor, f: impl FnOnce(&mut [f64])) {
        if !t.needs_grad() {
            return;
        }
        let buf = self
            .map
            .entry(t.id())
            .or_insert_with(|| vec![0.0; t.len()]);
        f(buf);
    }
}

type BackwardFn = Box<dyn Fn(&[f64], &mut Adjoints)>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// A shared handle to a dense row-major `f64` tensor.
///
/// Cloning is cheap (reference count); all clones see the same values and
/// grad. Rank 1 and rank 2 cover everything this crate needs.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    // ── construction ──

    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let expected = numel(shape);
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                op: "new",
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Self::plain(shape.to_vec(), values, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::plain(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::plain(vec![], vec![v], false)
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Self::plain(vec![n], values, false)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Self::new(&[rows, cols], values)
    }

    /// A trainable leaf: `backward` accumulates into its `grad`.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let expected = numel(shape);
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                op: "param",
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Self::plain(shape.to_vec(), values, true))
    }

    fn plain(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
                node: None,
            }),
        }
    }

    fn with_node(shape: Vec<usize>, values: Vec<f64>, node: Node) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                values: RefCell::new(values),
                requires_grad: false,
                grad: RefCell::new(None),
                node: Some(node),
            }),
        }
    }

    /// Builds the op output: taped when recording is on and some parent is
    /// grad-relevant, plain otherwise. `backward` is built lazily so the
    /// no-grad path pays nothing.
    fn make(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: &[&Tensor],
        backward: impl FnOnce() -> BackwardFn,
    ) -> Tensor {
        if grad_enabled() && parents.iter().any(|p| p.needs_grad()) {
            let node = Node {
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: backward(),
            };
            Self::with_node(shape, values, node)
        } else {
            Self::plain(shape, values, false)
        }
    }

    // ── access ──

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrowed view of the row-major values.
    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.inner.shape.clone(),
            });
        }
        Ok(self.inner.values.borrow()[0])
    }

    pub fn get(&self, index: usize) -> Result<f64> {
        let vals = self.inner.values.borrow();
        vals.get(index).copied().ok_or(TensorError::IndexOutOfRange {
            what: "tensor value",
            index,
            size: vals.len(),
        })
    }

    /// In-place mutation of the values. Only sound between passes: any live
    /// tape that read this tensor replays against the new values.
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.values.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn needs_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.inner.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: self.inner.shape.clone(),
            }),
        }
    }

    // ── elementwise ──

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let out: Vec<f64> = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::make(
            self.shape().to_vec(),
            out,
            &[self, other],
            move || {
                Box::new(move |g, sink| {
                    sink.with(&pa, |acc| {
                        for (a, gi) in acc.iter_mut().zip(g) {
                            *a += gi;
                        }
                    });
                    sink.with(&pb, |acc| {
                        for (a, gi) in acc.iter_mut().zip(g) {
                            *a += gi;
                        }
                    });
                })
            },
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let out: Vec<f64> = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::make(
            self.shape().to_vec(),
            out,
            &[self, other],
            move || {
                Box::new(move |g, sink| {
                    {
                        let bv = pb.values();
                        sink.with(&pa, |acc| {
                            for i in 0..g.len() {
                                acc[i] += g[i] * bv[i];
                            }
                        });
                    }
                    let av = pa.values();
                    sink.with(&pb, |acc| {
                        for i in 0..g.len() {
                            acc[i] += g[i] * av[i];
                        }
                    });
                })
            },
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|x| x * c).collect();
        let p = self.clone();
        Tensor::make(self.shape().to_vec(), out, &[self], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += c * gi;
                    }
                })
            })
        })
    }

    // ── linear algebra ──

    /// `[a,b] x [b,c] -> [a,c]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ar, ac) = self.rows_cols("matmul")?;
        let (br, bc) = other.rows_cols("matmul")?;
        if ac != br {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; ar * bc];
        {
            let a = self.values();
            let b = other.values();
            for i in 0..ar {
                for k in 0..ac {
                    let aik = a[i * ac + k];
                    if aik == 0.0 {
                        continue;
                    }
                    for j in 0..bc {
                        out[i * bc + j] += aik * b[k * bc + j];
                    }
                }
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::make(vec![ar, bc], out, &[self, other], move || {
            Box::new(move |g, sink| {
                // dA = G B^T, dB = A^T G
                {
                    let b = pb.values();
                    sink.with(&pa, |acc| {
                        for i in 0..ar {
                            for k in 0..ac {
                                let mut s = 0.0;
                                for j in 0..bc {
                                    s += g[i * bc + j] * b[k * bc + j];
                                }
                                acc[i * ac + k] += s;
                            }
                        }
                    });
                }
                let a = pa.values();
                sink.with(&pb, |acc| {
                    for k in 0..ac {
                        for j in 0..bc {
                            let mut s = 0.0;
                            for i in 0..ar {
                                s += a[i * ac + k] * g[i * bc + j];
                            }
                            acc[k * bc + j] += s;
                        }
                    }
                });
            })
        }))
    }

    /// `[m,k] x [n,k]^T -> [m,n]`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, ka) = self.rows_cols("matmul_nt")?;
        let (n, kb) = other.rows_cols("matmul_nt")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let a = self.values();
            let b = other.values();
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..ka {
                        s += a[i * ka + k] * b[j * ka + k];
                    }
                    out[i * n + j] = s;
                }
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::make(vec![m, n], out, &[self, other], move || {
            Box::new(move |g, sink| {
                // C = A B^T: dA = G B, dB = G^T A
                {
                    let b = pb.values();
                    sink.with(&pa, |acc| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for k in 0..ka {
                                    acc[i * ka + k] += gij * b[j * ka + k];
                                }
                            }
                        }
                    });
                }
                let a = pa.values();
                sink.with(&pb, |acc| {
                    for j in 0..n {
                        for i in 0..m {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..ka {
                                acc[j * ka + k] += gij * a[i * ka + k];
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.rows_cols("add_row_bias")?;
        if bias.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let out: Vec<f64> = {
            let x = self.values();
            let b = bias.values();
            (0..m * n).map(|i| x[i] + b[i % n]).collect()
        };
        let (px, pb) = (self.clone(), bias.clone());
        Ok(Tensor::make(vec![m, n], out, &[self, bias], move || {
            Box::new(move |g, sink| {
                sink.with(&px, |acc| {
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                });
                sink.with(&pb, |acc| {
                    for i in 0..m {
                        for j in 0..n {
                            acc[j] += g[i * n + j];
                        }
                    }
                });
            })
        }))
    }

    /// `w x + b` for `w: [o,i]`, `x: [i]`, `b: [o]`.
    pub fn affine(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (o, i) = w.rows_cols("affine")?;
        if x.shape() != [i] {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: w.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        if b.shape() != [o] {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; o];
        {
            let wv = w.values();
            let xv = x.values();
            let bv = b.values();
            for r in 0..o {
                let mut s = bv[r];
                for c in 0..i {
                    s += wv[r * i + c] * xv[c];
                }
                out[r] = s;
            }
        }
        let (pw, px, pb) = (w.clone(), x.clone(), b.clone());
        Ok(Tensor::make(vec![o], out, &[w, x, b], move || {
            Box::new(move |g, sink| {
                {
                    let xv = px.values();
                    sink.with(&pw, |acc| {
                        for r in 0..o {
                            for c in 0..i {
                                acc[r * i + c] += g[r] * xv[c];
                            }
                        }
                    });
                }
                {
                    let wv = pw.values();
                    sink.with(&px, |acc| {
                        for c in 0..i {
                            let mut s = 0.0;
                            for r in 0..o {
                                s += wv[r * i + c] * g[r];
                            }
                            acc[c] += s;
                        }
                    });
                }
                sink.with(&pb, |acc| {
                    for r in 0..o {
                        acc[r] += g[r];
                    }
                });
            })
        }))
    }

    // ── nonlinearities ──

    /// Gated linear unit over the trailing dimension: the first half gates
    /// nothing, the second half is squashed, `out = a * sigmoid(b)`.
    /// Accepts `[2d]` or `[m,2d]`.
    pub fn glu(&self) -> Result<Tensor> {
        let (rows, width) = match self.inner.shape[..] {
            [w] => (1, w),
            [r, w] => (r, w),
            _ => {
                return Err(TensorError::RankMismatch {
                    op: "glu",
                    expected: 2,
                    shape: self.inner.shape.clone(),
                })
            }
        };
        if width == 0 || width % 2 != 0 {
            return Err(TensorError::OddGlu { dim: width });
        }
        let d = width / 2;
        let mut out = vec![0.0; rows * d];
        let mut sig = vec![0.0; rows * d];
        {
            let v = self.values();
            for r in 0..rows {
                for j in 0..d {
                    let a = v[r * width + j];
                    let b = v[r * width + d + j];
                    let s = sigmoid(b);
                    sig[r * d + j] = s;
                    out[r * d + j] = a * s;
                }
            }
        }
        let out_shape = if self.rank() == 1 { vec![d] } else { vec![rows, d] };
        let p = self.clone();
        Ok(Tensor::make(out_shape, out, &[self], move || {
            Box::new(move |g, sink| {
                let v = p.values();
                sink.with(&p, |acc| {
                    for r in 0..rows {
                        for j in 0..d {
                            let gi = g[r * d + j];
                            let s = sig[r * d + j];
                            let a = v[r * width + j];
                            acc[r * width + j] += gi * s;
                            acc[r * width + d + j] += gi * a * s * (1.0 - s);
                        }
                    }
                });
            })
        }))
    }

    // ── softmax family ──

    /// Softmax of a rank-1 tensor, overflow-safe via max subtraction.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(TensorError::RankMismatch {
                op: "softmax",
                expected: 1,
                shape: self.inner.shape.clone(),
            });
        }
        if self.is_empty() {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let n = self.len();
        softmax_rows_impl(self, vec![n], 1, n, None)
    }

    /// Row-wise softmax of an `[m,n]` matrix. Columns at or beyond
    /// `valid_cols` are treated as `-inf` scores: zero probability, zero
    /// gradient. Rows always sum to 1 over the valid prefix.
    pub fn softmax_rows(&self, valid_cols: Option<usize>) -> Result<Tensor> {
        let (m, n) = self.rows_cols("softmax_rows")?;
        softmax_rows_impl(self, vec![m, n], m, n, valid_cols)
    }

    /// Row-wise log-softmax of an `[m,n]` matrix (full rows, no masking, so
    /// outputs stay finite).
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.rows_cols("log_softmax_rows")?;
        if n == 0 {
            return Err(TensorError::Empty {
                op: "log_softmax_rows",
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let v = self.values();
            for r in 0..m {
                let row = &v[r * n..(r + 1) * n];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                for j in 0..n {
                    out[r * n + j] = row[j] - lse;
                }
            }
        }
        let p = self.clone();
        let saved = out.clone();
        Ok(Tensor::make(vec![m, n], out, &[self], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for r in 0..m {
                        let gsum: f64 = g[r * n..(r + 1) * n].iter().sum();
                        for j in 0..n {
                            let soft = saved[r * n + j].exp();
                            acc[r * n + j] += g[r * n + j] - soft * gsum;
                        }
                    }
                });
            })
        }))
    }

    /// Elementwise `log(exp(a) + exp(b))` where `mask` is true, `a` passed
    /// through where it is false. `mask` spans the trailing dimension and is
    /// broadcast over rows. Overflow-safe.
    pub fn masked_logaddexp(&self, other: &Tensor, mask: &[bool]) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_logaddexp",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let cols = *self.inner.shape.last().unwrap_or(&0);
        if mask.len() != cols {
            return Err(TensorError::LengthMismatch {
                op: "masked_logaddexp",
                shape: self.shape().to_vec(),
                expected: cols,
                got: mask.len(),
            });
        }
        let n = self.len();
        let mut out = vec![0.0; n];
        {
            let a = self.values();
            let b = other.values();
            for i in 0..n {
                out[i] = if mask[i % cols] {
                    logaddexp(a[i], b[i])
                } else {
                    a[i]
                };
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        let mask: Vec<bool> = mask.to_vec();
        Ok(Tensor::make(
            self.shape().to_vec(),
            out,
            &[self, other],
            move || {
                Box::new(move |g, sink| {
                    let a = pa.values();
                    let b = pb.values();
                    // d/da log(e^a + e^b) = sigmoid(a - b), and symmetrically.
                    sink.with(&pa, |acc| {
                        for i in 0..g.len() {
                            let w = if mask[i % cols] {
                                sigmoid(a[i] - b[i])
                            } else {
                                1.0
                            };
                            acc[i] += g[i] * w;
                        }
                    });
                    drop(a);
                    let a = pa.values();
                    sink.with(&pb, |acc| {
                        for i in 0..g.len() {
                            if mask[i % cols] {
                                acc[i] += g[i] * sigmoid(b[i] - a[i]);
                            }
                        }
                    });
                })
            },
        ))
    }

    // ── gather / scatter shapes ──

    /// Embedding lookup: rows of `table` (`[r,d]`) selected by `ids`.
    /// Repeated ids accumulate gradient on the shared row.
    pub fn gather(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (r, d) = table.rows_cols("gather")?;
        for &id in ids {
            if id >= r {
                return Err(TensorError::IndexOutOfRange {
                    what: "gather row",
                    index: id,
                    size: r,
                });
            }
        }
        let mut out = vec![0.0; ids.len() * d];
        {
            let t = table.values();
            for (k, &id) in ids.iter().enumerate() {
                out[k * d..(k + 1) * d].copy_from_slice(&t[id * d..(id + 1) * d]);
            }
        }
        let p = table.clone();
        let ids: Vec<usize> = ids.to_vec();
        let n = ids.len();
        Ok(Tensor::make(vec![n, d], out, &[table], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for (k, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            acc[id * d + j] += g[k * d + j];
                        }
                    }
                });
            })
        }))
    }

    /// One row of an `[m,n]` matrix as a rank-1 tensor.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        let (m, n) = self.rows_cols("row")?;
        if i >= m {
            return Err(TensorError::IndexOutOfRange {
                what: "row",
                index: i,
                size: m,
            });
        }
        let out = self.values()[i * n..(i + 1) * n].to_vec();
        let p = self.clone();
        Ok(Tensor::make(vec![n], out, &[self], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for j in 0..n {
                        acc[i * n + j] += g[j];
                    }
                });
            })
        }))
    }

    /// Picks element `(r, ids[r])` from each row of an `[m,n]` matrix.
    pub fn take_per_row(&self, ids: &[usize]) -> Result<Tensor> {
        let (m, n) = self.rows_cols("take_per_row")?;
        if ids.len() != m {
            return Err(TensorError::LengthMismatch {
                op: "take_per_row",
                shape: self.shape().to_vec(),
                expected: m,
                got: ids.len(),
            });
        }
        for &id in ids {
            if id >= n {
                return Err(TensorError::IndexOutOfRange {
                    what: "take_per_row column",
                    index: id,
                    size: n,
                });
            }
        }
        let out: Vec<f64> = {
            let v = self.values();
            ids.iter().enumerate().map(|(r, &c)| v[r * n + c]).collect()
        };
        let p = self.clone();
        let ids: Vec<usize> = ids.to_vec();
        Ok(Tensor::make(vec![m], out, &[self], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for (r, &c) in ids.iter().enumerate() {
                        acc[r * n + c] += g[r];
                    }
                });
            })
        }))
    }

    /// Sliding-window concatenation for width-`k` convolutions over the rows
    /// of an `[m,d]` matrix: output row `i` is the concatenation of `k` input
    /// rows, zero rows standing in outside the sequence.
    ///
    /// `causal` windows cover `i-k+1 ..= i` (a position sees nothing to its
    /// right); centered windows cover `i-(k-1)/2 ..= i+(k-1)/2` and need odd
    /// `k`.
    pub fn window_concat(&self, k: usize, causal: bool) -> Result<Tensor> {
        let (m, d) = self.rows_cols("window_concat")?;
        if k == 0 {
            return Err(TensorError::Empty { op: "window_concat" });
        }
        if !causal && k.is_multiple_of(2) {
            return Err(TensorError::EvenWindow {
                op: "window_concat",
                k,
            });
        }
        let offset = if causal { k as isize - 1 } else { (k as isize - 1) / 2 };
        let mut out = vec![0.0; m * k * d];
        {
            let v = self.values();
            for i in 0..m as isize {
                for w in 0..k as isize {
                    let src = i - offset + w;
                    if src < 0 || src >= m as isize {
                        continue;
                    }
                    let dst = (i as usize * k + w as usize) * d;
                    let srow = src as usize * d;
                    out[dst..dst + d].copy_from_slice(&v[srow..srow + d]);
                }
            }
        }
        let p = self.clone();
        Ok(Tensor::make(vec![m, k * d], out, &[self], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for i in 0..m as isize {
                        for w in 0..k as isize {
                            let src = i - offset + w;
                            if src < 0 || src >= m as isize {
                                continue;
                            }
                            let gpos = (i as usize * k + w as usize) * d;
                            let srow = src as usize * d;
                            for j in 0..d {
                                acc[srow + j] += g[gpos + j];
                            }
                        }
                    }
                });
            })
        }))
    }

    // ── reductions ──

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        let p = self.clone();
        let n = self.len();
        Tensor::make(vec![], vec![s], &[self], move || {
            Box::new(move |g, sink| {
                sink.with(&p, |acc| {
                    for a in acc.iter_mut().take(n) {
                        *a += g[0];
                    }
                })
            })
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let n = self.len();
        let s: f64 = self.values().iter().sum::<f64>() / n as f64;
        let p = self.clone();
        Ok(Tensor::make(vec![], vec![s], &[self], move || {
            Box::new(move |g, sink| {
                let inv = 1.0 / n as f64;
                sink.with(&p, |acc| {
                    for a in acc.iter_mut() {
                        *a += g[0] * inv;
                    }
                })
            })
        }))
    }

    // ── backward ──

    /// Reverse-mode sweep from a one-element root. Adjoints of this run are
    /// added into the `grad` of every `requires_grad` tensor reachable from
    /// the root, so repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.inner.shape.clone(),
            });
        }
        // iterative post-order topo sort; recursion would overflow on long chains
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((t, child)) = stack.pop() {
            if child == 0 {
                if visited.contains_key(&t.id()) {
                    continue;
                }
                visited.insert(t.id(), ());
            }
            let parents: Option<&Node> = t.inner.node.as_ref();
            let np = parents.map_or(0, |n| n.parents.len());
            if child < np {
                let next = t.inner.node.as_ref().unwrap().parents[child].clone();
                stack.push((t, child + 1));
                if !visited.contains_key(&next.id()) {
                    stack.push((next, 0));
                }
            } else {
                order.push(t);
            }
        }

        let mut adjoints = Adjoints { map: HashMap::new() };
        adjoints.with(self, |buf| buf[0] = 1.0);
        for t in order.iter().rev() {
            let Some(node) = t.inner.node.as_ref() else {
                continue;
            };
            let Some(adj) = adjoints.map.get(&t.id()).cloned() else {
                continue;
            };
            (node.backward)(&adj, &mut adjoints);
        }
        for t in order {
            if t.inner.requires_grad {
                if let Some(adj) = adjoints.map.get(&t.id()) {
                    let mut grad = t.inner.grad.borrow_mut();
                    match grad.as_mut() {
                        Some(gr) => {
                            for (a, b) in gr.iter_mut().zip(adj) {
                                *a += b;
                            }
                        }
                        None => *grad = Some(adj.clone()),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Clears the accumulated grads of every tensor in `params`.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}

fn sigmoid(x: f64) -> f64 {
    // split on sign so exp never overflows
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn softmax_rows_impl(
    input: &Tensor,
    out_shape: Vec<usize>,
    m: usize,
    n: usize,
    valid_cols: Option<usize>,
) -> Result<Tensor> {
    let valid = valid_cols.unwrap_or(n).min(n);
    if valid == 0 {
        return Err(TensorError::Empty { op: "softmax" });
    }
    let mut out = vec![0.0; m * n];
    {
        let v = input.values();
        for r in 0..m {
            let row = &v[r * n..r * n + valid];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..valid {
                let e = (row[j] - mx).exp();
                out[r * n + j] = e;
                z += e;
            }
            for j in 0..valid {
                out[r * n + j] /= z;
            }
        }
    }
    let p = input.clone();
    let saved = out.clone();
    Ok(Tensor::make(out_shape, out, &[input], move || {
        Box::new(move |g, sink| {
            sink.with(&p, |acc| {
                for r in 0..m {
                    let y = &saved[r * n..r * n + valid];
                    let gr = &g[r * n..r * n + valid];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..valid {
                        acc[r * n + j] += y[j] * (gr[j] - dot);
                    }
                }
            });
        })
    }))
}
