//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Define-by-run: every forward op that touches a grad-requiring input
//! records its parents and a backward closure on the output node, so the
//! tape is rebuilt naturally on each forward pass. [`backward`] walks the
//! resulting DAG once in reverse topological order and accumulates (`+=`)
//! into the persistent `grad` buffer of every node with `requires_grad`.
//!
//! Everything is `f64`. Inputs to `log` are clamped below at `1e-12` and
//! inputs to `exp` are clamped above at `50` so forward passes on finite
//! inputs never produce NaN.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels;
use crate::sparse::CsrMatrix;

pub const LOG_CLAMP_MIN: f64 = 1e-12;
pub const EXP_CLAMP_MAX: f64 = 50.0;

/// Per-parent adjoints returned by a backward rule; `None` marks a parent
/// that needs no gradient.
type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>>>;

/// What a backward rule gets to see.
struct BackwardArgs<'a> {
    /// Adjoint of the output node.
    grad: &'a [f64],
    /// Forward value of the output node.
    out: &'a [f64],
    /// Parent handles, in the order they were recorded.
    parents: &'a [Tensor],
}

impl<'a> BackwardArgs<'a> {
    fn needs(&self, i: usize) -> bool {
        self.parents[i].requires_grad()
    }
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
}

/// Shared handle to a tensor node. Cloning copies the handle, not the data.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        let head: Vec<f64> = inner.data.iter().take(4).copied().collect();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, data[..4]={:?})",
            inner.shape, inner.requires_grad, head
        )
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    // ---- construction ------------------------------------------------

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor::leaf(shape.to_vec(), data, false))
    }

    /// Trainable leaf: `requires_grad = true`.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![v], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward_fn: None,
            })),
        }
    }

    /// Record an op output; drops the tape if no parent needs gradients.
    fn op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, f: BackwardFn) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        if parents.iter().any(|p| p.requires_grad()) {
            Tensor {
                inner: Rc::new(RefCell::new(Inner {
                    shape,
                    data,
                    grad: None,
                    requires_grad: true,
                    parents,
                    backward_fn: Some(f),
                })),
            }
        } else {
            Tensor::leaf(shape, data, false)
        }
    }

    // ---- accessors ---------------------------------------------------

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Rows of a 2-D tensor (or length of a 1-D one).
    pub fn rows(&self) -> usize {
        self.inner.borrow().shape[0]
    }

    /// Columns of a 2-D tensor; 1 for 1-D.
    pub fn cols(&self) -> usize {
        let inner = self.inner.borrow();
        if inner.shape.len() >= 2 {
            inner.shape[1]
        } else {
            1
        }
    }

    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        match &mut inner.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => {
                let n = inner.data.len();
                inner.grad = Some(vec![0.0; n]);
            }
        }
    }

    /// Overwrite the stored values in place (used by the optimizer).
    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len());
        inner.data = data;
    }

    /// New constant leaf sharing no tape history with `self`.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::leaf(inner.shape.clone(), inner.data.clone(), false)
    }

    fn ptr(&self) -> *const () {
        Rc::as_ptr(&self.inner) as *const ()
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.data.len();
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (acc, &v) in grad.iter_mut().zip(g.iter()) {
            *acc += v;
        }
    }

    // ---- elementwise arithmetic ---------------------------------------

    fn same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "add")?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(Tensor::op(
            self.shape(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|args| {
                vec![
                    args.needs(0).then(|| args.grad.to_vec()),
                    args.needs(1).then(|| args.grad.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "sub")?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
        };
        Ok(Tensor::op(
            self.shape(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|args| {
                vec![
                    args.needs(0).then(|| args.grad.to_vec()),
                    args.needs(1)
                        .then(|| args.grad.iter().map(|g| -g).collect()),
                ]
            }),
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "mul")?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        Ok(Tensor::op(
            self.shape(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|args| {
                let da = args.needs(0).then(|| {
                    let b = args.parents[1].data();
                    args.grad.iter().zip(b.iter()).map(|(g, y)| g * y).collect()
                });
                let db = args.needs(1).then(|| {
                    let a = args.parents[0].data();
                    args.grad.iter().zip(a.iter()).map(|(g, x)| g * x).collect()
                });
                vec![da, db]
            }),
        ))
    }

    pub fn neg(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| -x).collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| vec![Some(args.grad.iter().map(|g| -g).collect())]),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| c * x).collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |args| vec![Some(args.grad.iter().map(|g| c * g).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x + c).collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| vec![Some(args.grad.to_vec())]),
        )
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: ls,
                rhs: rs,
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut data = vec![0.0; m * n];
        kernels::matmul(&self.data(), &rhs.data(), &mut data, m, k, n);
        Ok(Tensor::op(
            vec![m, n],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |args| {
                let da = args.needs(0).then(|| {
                    let b = args.parents[1].data();
                    let bt = kernels::transpose(&b, k, n);
                    let mut g = vec![0.0; m * k];
                    kernels::matmul(args.grad, &bt, &mut g, m, n, k);
                    g
                });
                let db = args.needs(1).then(|| {
                    let a = args.parents[0].data();
                    let at = kernels::transpose(&a, m, k);
                    let mut g = vec![0.0; k * n];
                    kernels::matmul(&at, args.grad, &mut g, k, m, n);
                    g
                });
                vec![da, db]
            }),
        ))
    }

    /// Sparse-dense product `adj · x`; the sparse operand is constant, so the
    /// gradient flows through `x` only.
    pub fn spmm(adj: &Arc<CsrMatrix>, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 2 || adj.ncols() != xs[0] {
            return Err(Error::Dimension {
                op: "spmm",
                lhs: vec![adj.nrows(), adj.ncols()],
                rhs: xs,
            });
        }
        let cols = xs[1];
        let mut data = vec![0.0; adj.nrows() * cols];
        kernels::spmm(adj, &x.data(), &mut data, cols);
        let adj_b = Arc::clone(adj);
        Ok(Tensor::op(
            vec![adj.nrows(), cols],
            data,
            vec![x.clone()],
            Box::new(move |args| {
                let mut g = vec![0.0; adj_b.ncols() * cols];
                kernels::spmm_transpose_seq(&adj_b, args.grad, &mut g, cols);
                vec![Some(g)]
            }),
        ))
    }

    /// Broadcast-add a length-`k` bias row to every row of an `n×k` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (s, bs) = (self.shape(), bias.shape());
        if s.len() != 2 || bs.len() != 1 || bs[0] != s[1] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: s,
                rhs: bs,
            });
        }
        let (n, k) = (s[0], s[1]);
        let data: Vec<f64> = {
            let (a, b) = (self.data(), bias.data());
            let mut out = Vec::with_capacity(n * k);
            for i in 0..n {
                for j in 0..k {
                    out.push(a[i * k + j] + b[j]);
                }
            }
            out
        };
        Ok(Tensor::op(
            vec![n, k],
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |args| {
                let da = args.needs(0).then(|| args.grad.to_vec());
                let db = args.needs(1).then(|| {
                    let mut g = vec![0.0; k];
                    for row in args.grad.chunks(k) {
                        for (acc, &v) in g.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    g
                });
                vec![da, db]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|args| vec![Some(args.grad.to_vec())]),
        ))
    }

    /// Select rows of a 2-D tensor; backward scatter-adds.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: s,
                rhs: vec![idx.len()],
            });
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Input(format!(
                "gather_rows: row {bad} out of bounds for {n} rows"
            )));
        }
        let data: Vec<f64> = {
            let a = self.data();
            let mut out = Vec::with_capacity(idx.len() * k);
            for &i in idx {
                out.extend_from_slice(&a[i * k..i * k + k]);
            }
            out
        };
        let idx_b: Vec<usize> = idx.to_vec();
        Ok(Tensor::op(
            vec![idx.len(), k],
            data,
            vec![self.clone()],
            Box::new(move |args| {
                let mut g = vec![0.0; n * k];
                for (r, &i) in idx_b.iter().enumerate() {
                    for j in 0..k {
                        g[i * k + j] += args.grad[r * k + j];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Inner products `h[u]·h[v]` for index pairs; output is 1-D.
    pub fn pairwise_dot(&self, pairs: &[(usize, usize)]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "pairwise_dot",
                lhs: s,
                rhs: vec![pairs.len()],
            });
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(Error::Input(format!(
                "pairwise_dot: pair ({u},{v}) out of bounds for {n} rows"
            )));
        }
        let data: Vec<f64> = {
            let h = self.data();
            pairs
                .iter()
                .map(|&(u, v)| {
                    let (hu, hv) = (&h[u * k..u * k + k], &h[v * k..v * k + k]);
                    hu.iter().zip(hv.iter()).map(|(a, b)| a * b).sum()
                })
                .collect()
        };
        let pairs_b: Vec<(usize, usize)> = pairs.to_vec();
        Ok(Tensor::op(
            vec![pairs.len()],
            data,
            vec![self.clone()],
            Box::new(move |args| {
                let h = args.parents[0].data();
                let mut g = vec![0.0; n * k];
                for (i, &(u, v)) in pairs_b.iter().enumerate() {
                    let gi = args.grad[i];
                    for j in 0..k {
                        g[u * k + j] += gi * h[v * k + j];
                        g[v * k + j] += gi * h[u * k + j];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    // ---- nonlinearities -------------------------------------------------

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| stable_sigmoid(x)).collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| {
                vec![Some(
                    args.grad
                        .iter()
                        .zip(args.out.iter())
                        .map(|(g, &s)| g * s * (1.0 - s))
                        .collect(),
                )]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x.max(0.0)).collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| {
                let x = args.parents[0].data();
                vec![Some(
                    args.grad
                        .iter()
                        .zip(x.iter())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn tanh_act(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x.tanh()).collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| {
                vec![Some(
                    args.grad
                        .iter()
                        .zip(args.out.iter())
                        .map(|(g, &t)| g * (1.0 - t * t))
                        .collect(),
                )]
            }),
        )
    }

    /// `exp` with the input clamped above at [`EXP_CLAMP_MAX`].
    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| x.min(EXP_CLAMP_MAX).exp())
            .collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| {
                let x = args.parents[0].data();
                vec![Some(
                    args.grad
                        .iter()
                        .zip(args.out.iter())
                        .zip(x.iter())
                        .map(|((g, &e), &v)| if v < EXP_CLAMP_MAX { g * e } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Natural log with the input clamped below at [`LOG_CLAMP_MIN`].
    pub fn log(&self) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| x.max(LOG_CLAMP_MIN).ln())
            .collect();
        Tensor::op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(|args| {
                let x = args.parents[0].data();
                vec![Some(
                    args.grad
                        .iter()
                        .zip(x.iter())
                        .map(|(g, &v)| if v > LOG_CLAMP_MIN { g / v } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Parametric ReLU with a single learnable slope (a `[1]` tensor).
    pub fn prelu(&self, slope: &Tensor) -> Result<Tensor> {
        if slope.numel() != 1 {
            return Err(Error::Dimension {
                op: "prelu",
                lhs: self.shape(),
                rhs: slope.shape(),
            });
        }
        let a = slope.item();
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { a * x })
            .collect();
        Ok(Tensor::op(
            self.shape(),
            data,
            vec![self.clone(), slope.clone()],
            Box::new(move |args| {
                let x = args.parents[0].data();
                let dx = args.needs(0).then(|| {
                    args.grad
                        .iter()
                        .zip(x.iter())
                        .map(|(g, &v)| if v >= 0.0 { *g } else { a * g })
                        .collect()
                });
                let ds = args.needs(1).then(|| {
                    let s: f64 = args
                        .grad
                        .iter()
                        .zip(x.iter())
                        .filter(|(_, &v)| v < 0.0)
                        .map(|(g, &v)| g * v)
                        .sum();
                    vec![s]
                });
                vec![dx, ds]
            }),
        ))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |args| vec![Some(vec![args.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::op(
            vec![1],
            vec![s / n as f64],
            vec![self.clone()],
            Box::new(move |args| vec![Some(vec![args.grad[0] / n as f64; n])]),
        )
    }

    /// Column means of an `n×k` tensor → 1-D `[k]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::Dimension {
                op: "mean_rows",
                lhs: s,
                rhs: vec![],
            });
        }
        let (n, k) = (s[0], s[1]);
        let data: Vec<f64> = {
            let a = self.data();
            let mut out = vec![0.0; k];
            for i in 0..n {
                for j in 0..k {
                    out[j] += a[i * k + j];
                }
            }
            out.iter_mut().for_each(|v| *v /= n as f64);
            out
        };
        Ok(Tensor::op(
            vec![k],
            data,
            vec![self.clone()],
            Box::new(move |args| {
                let mut g = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..k {
                        g[i * k + j] = args.grad[j] / n as f64;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Per-row means of an `n×k` tensor → 1-D `[n]`.
    pub fn row_mean(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::Dimension {
                op: "row_mean",
                lhs: s,
                rhs: vec![],
            });
        }
        let (n, k) = (s[0], s[1]);
        let data: Vec<f64> = {
            let a = self.data();
            (0..n)
                .map(|i| a[i * k..i * k + k].iter().sum::<f64>() / k as f64)
                .collect()
        };
        Ok(Tensor::op(
            vec![n],
            data,
            vec![self.clone()],
            Box::new(move |args| {
                let mut g = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..k {
                        g[i * k + j] = args.grad[i] / k as f64;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---- losses ----------------------------------------------------------------

/// Mean squared error over all elements; differentiable w.r.t. both inputs.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "mse")?;
    let n = a.numel();
    let v: f64 = {
        let (x, y) = (a.data(), b.data());
        x.iter()
            .zip(y.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            / n as f64
    };
    Ok(Tensor::op(
        vec![1],
        vec![v],
        vec![a.clone(), b.clone()],
        Box::new(move |args| {
            let g0 = args.grad[0];
            let (x, y) = (args.parents[0].data(), args.parents[1].data());
            let da = args.needs(0).then(|| {
                x.iter()
                    .zip(y.iter())
                    .map(|(p, q)| g0 * 2.0 * (p - q) / n as f64)
                    .collect()
            });
            let db = args.needs(1).then(|| {
                x.iter()
                    .zip(y.iter())
                    .map(|(p, q)| g0 * -2.0 * (p - q) / n as f64)
                    .collect()
            });
            vec![da, db]
        }),
    ))
}

/// Numerically stable mean binary cross-entropy from logits. Targets are
/// treated as constants.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    logits.same_shape(targets, "bce_with_logits")?;
    let n = logits.numel();
    debug_assert!(
        targets.data().iter().all(|&t| t == 0.0 || t == 1.0),
        "bce targets must be 0/1"
    );
    let v: f64 = {
        let (z, y) = (logits.data(), targets.data());
        z.iter()
            .zip(y.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n as f64
    };
    let y_saved = targets.to_vec();
    Ok(Tensor::op(
        vec![1],
        vec![v],
        vec![logits.clone()],
        Box::new(move |args| {
            let g0 = args.grad[0];
            let z = args.parents[0].data();
            vec![Some(
                z.iter()
                    .zip(y_saved.iter())
                    .map(|(&z, &y)| g0 * (stable_sigmoid(z) - y) / n as f64)
                    .collect(),
            )]
        }),
    ))
}

/// Mean negative log-likelihood under row-wise softmax, computed stably.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            lhs: s,
            rhs: vec![labels.len()],
        });
    }
    let (n, c) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!(
            "softmax_cross_entropy: label {bad} out of range for {c} classes"
        )));
    }
    let mut softmax = vec![0.0; n * c];
    let v: f64 = {
        let z = logits.data();
        let mut total = 0.0;
        for i in 0..n {
            let row = &z[i * c..i * c + c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &zj) in row.iter().enumerate() {
                let e = (zj - m).exp();
                softmax[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                softmax[i * c + j] /= denom;
            }
            total += denom.ln() + m - row[labels[i]];
        }
        total / n as f64
    };
    let labels_b = labels.to_vec();
    Ok(Tensor::op(
        vec![1],
        vec![v],
        vec![logits.clone()],
        Box::new(move |args| {
            let g0 = args.grad[0];
            let mut g = vec![0.0; n * c];
            for i in 0..n {
                for j in 0..c {
                    let one_hot = if labels_b[i] == j { 1.0 } else { 0.0 };
                    g[i * c + j] = g0 * (softmax[i * c + j] - one_hot) / n as f64;
                }
            }
            vec![Some(g)]
        }),
    ))
}

// ---- backward engine ---------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively:
/// calling twice without zeroing doubles them.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        // constant loss: nothing on the tape
        return Ok(());
    }
    let order = topo_order(loss);
    let mut adjoint: HashMap<*const (), Vec<f64>> = HashMap::new();
    adjoint.insert(loss.ptr(), vec![1.0]);

    for node in order.iter().rev() {
        let Some(g) = adjoint.remove(&node.ptr()) else {
            continue;
        };
        node.accumulate_grad(&g);
        type Propagation = (Vec<Option<Vec<f64>>>, Vec<Tensor>);
        let propagated: Option<Propagation> = {
            let inner = node.inner.borrow();
            inner.backward_fn.as_ref().map(|f| {
                let args = BackwardArgs {
                    grad: &g,
                    out: &inner.data,
                    parents: &inner.parents,
                };
                (f(&args), inner.parents.clone())
            })
        };
        if let Some((grads, parents)) = propagated {
            for (p, pg) in parents.iter().zip(grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                adjoint
                    .entry(p.ptr())
                    .and_modify(|acc| {
                        for (a, v) in acc.iter_mut().zip(pg.iter()) {
                            *a += v;
                        }
                    })
                    .or_insert(pg);
            }
        }
    }
    Ok(())
}

/// Post-order over the grad-requiring sub-DAG; visits each node once.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const ()> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.ptr()) {
            continue;
        }
        stack.push((node.clone(), true));
        let inner = node.inner.borrow();
        for p in &inner.parents {
            if p.requires_grad() && !visited.contains(&p.ptr()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::parameter(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);

        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn spmm_identity_swap_and_zero() {
        // identity adjacency
        let eye = Arc::new(CsrMatrix::from_coo(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]));
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        assert_eq!(Tensor::spmm(&eye, &x).unwrap().to_vec(), vec![1.0, 2.0]);
        // swap adjacency
        let swap = Arc::new(CsrMatrix::from_coo(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]));
        assert_eq!(Tensor::spmm(&swap, &x).unwrap().to_vec(), vec![2.0, 1.0]);
        // all-zero adjacency annihilates
        let zero = Arc::new(CsrMatrix::from_coo(2, 2, &[]));
        assert_eq!(Tensor::spmm(&zero, &x).unwrap().to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_relu_definition() {
        let t = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert!((t.sigmoid().item() - 0.5).abs() < 1e-15);
        let r = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap().relu();
        assert_eq!(r.to_vec(), vec![0.0, 2.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let x = param(&[1], vec![0.0]);
        let y = x.sigmoid().sum();
        backward(&y).unwrap();
        let g = x.grad().unwrap()[0];
        assert!((g - 0.25).abs() < 1e-12, "{g}");
    }

    #[test]
    fn clamped_ops_stay_finite_on_finite_inputs() {
        let t = Tensor::from_vec(&[3], vec![0.0, -5.0, 1e9]).unwrap();
        assert!(t.log().to_vec().iter().all(|v| v.is_finite()));
        let e = Tensor::from_vec(&[3], vec![100.0, 700.0, -700.0]).unwrap();
        assert!(e.exp().to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(mse(&a, &a).unwrap().item(), 0.0);

        let x = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = Tensor::from_vec(&[2], vec![2.0, 0.0]).unwrap();
        assert!((mse(&x, &y).unwrap().item() - 2.0).abs() < 1e-15);

        let w = param(&[1], vec![1.0]);
        let z = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let l = mse(&w, &z).unwrap();
        backward(&l).unwrap();
        assert!((w.grad().unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bce_examples() {
        let z = Tensor::from_vec(&[4], vec![0.0; 4]).unwrap();
        let y = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = bce_with_logits(&z, &y).unwrap().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let z = Tensor::from_vec(&[1], vec![50.0]).unwrap();
        let y = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert!(bce_with_logits(&z, &y).unwrap().item() < 1e-12);

        let z = Tensor::from_vec(&[1], vec![-3.0]).unwrap();
        let l = bce_with_logits(&z, &y).unwrap().item();
        // ln(1 + e^3), evaluated independently
        let want = (1.0_f64 + 3.0_f64.exp()).ln();
        assert!((l - want).abs() < 1e-12);
        assert!((l - 3.048587351573742).abs() < 1e-9);
    }

    #[test]
    fn softmax_ce_examples() {
        let z = Tensor::from_vec(&[1, 7], vec![0.3; 7]).unwrap();
        let l = softmax_cross_entropy(&z, &[4]).unwrap().item();
        assert!((l - (7.0f64).ln()).abs() < 1e-12);

        let mut hot = vec![0.0; 7];
        hot[2] = 50.0;
        let z = Tensor::from_vec(&[1, 7], hot).unwrap();
        assert!(softmax_cross_entropy(&z, &[2]).unwrap().item() < 1e-12);

        let z = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let l = softmax_cross_entropy(&z, &[0]).unwrap().item();
        let want = -((1.0f64).exp() / ((1.0f64).exp() + (2.0f64).exp())).ln();
        assert!((l - want).abs() < 1e-12);
        assert!((l - 1.3132616875182228).abs() < 1e-9);

        assert!(softmax_cross_entropy(&z, &[5]).is_err());
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let w = param(&[3], vec![1.0, -2.0, 0.5]);
        let l = w.sum();
        backward(&l).unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0, 1.0]);

        let w = param(&[1], vec![3.0]);
        let zero = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let l = mse(&w, &zero).unwrap();
        backward(&l).unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = param(&[2], vec![1.0, 2.0]);
        let y = w.scale(2.0);
        assert!(matches!(backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let w = param(&[2], vec![1.0, 2.0]);
        let l = w.sum();
        backward(&l).unwrap();
        backward(&l).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn sum_of_losses_equals_sum_of_grads() {
        let build = |w: &Tensor| {
            let zero = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
            let l1 = mse(w, &zero).unwrap();
            let l2 = w.mul(w).unwrap().sum();
            (l1, l2)
        };
        // joint backward
        let w = param(&[2], vec![1.5, -0.5]);
        let (l1, l2) = build(&w);
        let joint = l1.add(&l2).unwrap();
        backward(&joint).unwrap();
        let g_joint = w.grad().unwrap();
        // term-by-term backward
        let w2 = param(&[2], vec![1.5, -0.5]);
        let (l1, l2) = build(&w2);
        backward(&l1).unwrap();
        backward(&l2).unwrap();
        let g_sep = w2.grad().unwrap();
        for (a, b) in g_joint.iter().zip(g_sep.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_parent_accumulates_both_paths() {
        // d/dx (x*x) = 2x
        let x = param(&[1], vec![3.0]);
        let y = x.mul(&x).unwrap().sum();
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let x = param(&[2], vec![1.0, 2.0]);
        let d = x.detach();
        let l = d.mul(&d).unwrap().sum();
        backward(&l).unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn forward_is_pure_and_repeatable() {
        let x = Tensor::from_vec(&[2, 2], vec![0.3, -0.7, 1.1, 0.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![0.5, 0.25, -1.0, 2.0]).unwrap();
        let a = x.matmul(&w).unwrap().sigmoid().to_vec();
        let b = x.matmul(&w).unwrap().sigmoid().to_vec();
        assert_eq!(a, b);
        // inputs untouched
        assert_eq!(x.to_vec(), vec![0.3, -0.7, 1.1, 0.0]);
    }

    #[test]
    fn gather_and_pairwise_dot_grads() {
        let h = param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = h.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.to_vec(), vec![5.0, 6.0, 1.0, 2.0]);
        let l = g.sum();
        backward(&l).unwrap();
        assert_eq!(h.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);

        let h2 = param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let d = h2.pairwise_dot(&[(0, 1)]).unwrap();
        assert_eq!(d.to_vec(), vec![11.0]);
        backward(&d.sum()).unwrap();
        assert_eq!(h2.grad().unwrap(), vec![3.0, 4.0, 1.0, 2.0]);
    }
}
