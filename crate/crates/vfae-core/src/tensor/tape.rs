//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every forward op appends one node; `backward` replays nodes in reverse
//! index order, which is a valid reverse-topological order because operands
//! always precede their consumers on the tape. Parameter gradients are
//! accumulated (never overwritten) into the owning [`ParamSet`].

use super::params::{ParamId, ParamSet};
use super::{fmt_shape, matmul_nt, matmul_raw, matmul_tn, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// First non-finite value (or domain violation) observed during the forward
/// pass, kept so the failure can be reported instead of propagating silently.
#[derive(Debug, Clone)]
pub struct PoisonInfo {
    pub node: usize,
    pub op: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    Cos(Var),
    Clamp(Var, f64, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    MulConst(Var, f64),
    Matmul(Var, Var),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SelectCol(Var, usize),
    BroadcastCol(Var, usize),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    LogSumExp(Var, Option<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
    poison: Option<PoisonInfo>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), check_finite: true, poison: None }
    }

    /// Disable per-op finiteness scanning (the always-on default) for speed.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
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

    /// Forward value of a scalar node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// First recorded forward failure, if any.
    pub fn poison(&self) -> Option<&PoisonInfo> {
        self.poison.as_ref()
    }

    /// Err if any forward op produced a non-finite value or hit a domain error.
    pub fn healthy(&self) -> Result<(), TensorError> {
        match &self.poison {
            None => Ok(()),
            Some(p) => Err(TensorError::NonFinite(format!(
                "node {} ({}): {}",
                p.node, p.op, p.detail
            ))),
        }
    }

    fn push(&mut self, op_name: &'static str, op: Op, value: Tensor) -> Var {
        if self.check_finite && self.poison.is_none() {
            if let Some((i, bad)) =
                value.data().iter().enumerate().find(|(_, v)| !v.is_finite())
            {
                self.poison = Some(PoisonInfo {
                    node: self.nodes.len(),
                    op: op_name,
                    detail: format!("value[{i}] = {bad}"),
                });
            }
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push("constant", Op::Leaf, t)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push("constant", Op::Leaf, Tensor::scalar(v))
    }

    /// Record a parameter leaf. The current value is snapshotted onto the
    /// tape; gradients flow back into the set on `backward`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push("param", Op::Param(id), params.value(id).clone())
    }

    // ── Unary elementwise ────────────────────────────────────────────

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Var {
        let v = self.value(a);
        let out = Tensor::from_vec(v.shape().to_vec(), v.iter().map(|&x| f(x)).collect());
        self.push(name, op, out)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary("negate", a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// Natural log. Non-positive inputs are a domain error and poison the tape.
    pub fn log(&mut self, a: Var) -> Var {
        if self.check_finite && self.poison.is_none() {
            if let Some((i, bad)) =
                self.value(a).data().iter().enumerate().find(|(_, v)| **v <= 0.0)
            {
                self.poison = Some(PoisonInfo {
                    node: self.nodes.len(),
                    op: "log",
                    detail: format!("domain error: log of non-positive value[{i}] = {bad}"),
                });
            }
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary("cos", a, f64::cos, Op::Cos(a))
    }

    /// Clamp values to `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clamp bounds inverted: {lo} > {hi}");
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    // ── Binary elementwise (equal shapes, or scalar on either side) ──

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let out = if va.shape() == vb.shape() {
            Tensor::from_vec(
                va.shape().to_vec(),
                va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect(),
            )
        } else if vb.is_scalar() {
            let s = vb.item();
            Tensor::from_vec(va.shape().to_vec(), va.iter().map(|&x| f(x, s)).collect())
        } else if va.is_scalar() {
            let s = va.item();
            Tensor::from_vec(vb.shape().to_vec(), vb.iter().map(|&y| f(s, y)).collect())
        } else {
            panic!(
                "{name}: shapes {} and {} are not broadcast-compatible \
                 (equal shapes or scalar-with-tensor only)",
                fmt_shape(va.shape()),
                fmt_shape(vb.shape())
            );
        };
        self.push(name, op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary("add_const", a, |x| x + c, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        self.unary("mul_const", a, |x| x * c, Op::MulConst(a, c))
    }

    // ── Linear algebra and structure ─────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert!(
            va.shape().len() == 2 && vb.shape().len() == 2 && va.cols() == vb.rows(),
            "matmul: incompatible shapes {} and {}",
            fmt_shape(va.shape()),
            fmt_shape(vb.shape())
        );
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let out = Tensor::matrix(m, n, matmul_raw(va.data(), vb.data(), m, k, n));
        self.push("matmul", Op::Matmul(a, b), out)
    }

    /// Broadcast-add a length-k row vector to every row of an [n×k] matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        let vm = self.value(m);
        let vr = self.value(row);
        assert!(
            vm.shape().len() == 2 && vr.shape().len() == 1 && vm.cols() == vr.numel(),
            "add_row: shapes {} and {} do not align",
            fmt_shape(vm.shape()),
            fmt_shape(vr.shape())
        );
        let (rows, cols) = (vm.rows(), vm.cols());
        let mut data = vm.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vr.data()[c];
            }
        }
        self.push("add_row", Op::AddRow(m, row), Tensor::matrix(rows, cols, data))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(
                    v.rows(),
                    rows,
                    "concat_cols: row counts differ ({} vs {})",
                    v.rows(),
                    rows
                );
                v.cols()
            })
            .sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            "concat_cols",
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(rows, total, data),
        )
    }

    /// Stack matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(
                v.cols(),
                cols,
                "concat_rows: column counts differ ({} vs {})",
                v.cols(),
                cols
            );
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push(
            "concat_rows",
            Op::ConcatRows(parts.to_vec()),
            Tensor::matrix(rows, cols, data),
        )
    }

    /// Select matrix rows by index (repeats allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Var {
        let v = self.value(src);
        let n = v.rows();
        assert!(
            indices.iter().all(|&i| i < n),
            "gather_rows: index out of range for {} rows",
            n
        );
        let out = v.take_rows(indices);
        self.push("gather_rows", Op::GatherRows(src, indices.to_vec()), out)
    }

    /// Column `c` of an [n×k] matrix as a length-n vector.
    pub fn select_col(&mut self, src: Var, c: usize) -> Var {
        let v = self.value(src);
        assert!(
            v.shape().len() == 2 && c < v.cols(),
            "select_col: column {c} out of range for shape {}",
            fmt_shape(v.shape())
        );
        let rows = v.rows();
        let data = (0..rows).map(|r| v.get2(r, c)).collect();
        self.push("select_col", Op::SelectCol(src, c), Tensor::vector(data))
    }

    /// Repeat a length-n vector as every column of an [n×c] matrix.
    pub fn broadcast_col(&mut self, v: Var, c: usize) -> Var {
        let t = self.value(v);
        assert!(
            t.shape().len() == 1,
            "broadcast_col: expected a vector, got shape {}",
            fmt_shape(t.shape())
        );
        let n = t.numel();
        let mut data = Vec::with_capacity(n * c);
        for &x in t.data() {
            data.extend(std::iter::repeat_n(x, c));
        }
        self.push("broadcast_col", Op::BroadcastCol(v, c), Tensor::matrix(n, c, data))
    }

    // ── Reductions ───────────────────────────────────────────────────

    fn reduced_shape(value: &Tensor, axis: Option<usize>) -> Vec<usize> {
        match axis {
            None => vec![],
            Some(ax) => {
                assert!(
                    value.shape().len() == 2 && ax < 2,
                    "reduce: axis {ax} invalid for shape {}",
                    fmt_shape(value.shape())
                );
                if ax == 0 {
                    vec![value.cols()]
                } else {
                    vec![value.rows()]
                }
            }
        }
    }

    /// Sum along `axis`, or over all elements when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Var {
        let v = self.value(a);
        let shape = Self::reduced_shape(v, axis);
        let out = match axis {
            None => Tensor::from_vec(shape, vec![v.iter().sum()]),
            Some(0) => {
                let (rows, cols) = (v.rows(), v.cols());
                let mut acc = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        acc[c] += v.get2(r, c);
                    }
                }
                Tensor::from_vec(shape, acc)
            }
            Some(_) => {
                let rows = v.rows();
                let acc = (0..rows).map(|r| v.row(r).iter().sum()).collect();
                Tensor::from_vec(shape, acc)
            }
        };
        self.push("sum", Op::Sum(a, axis), out)
    }

    /// Arithmetic mean along `axis`, or over all elements.
    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Var {
        let v = self.value(a);
        let shape = Self::reduced_shape(v, axis);
        let out = match axis {
            None => {
                let n = v.numel() as f64;
                Tensor::from_vec(shape, vec![v.iter().sum::<f64>() / n])
            }
            Some(0) => {
                let (rows, cols) = (v.rows(), v.cols());
                let mut acc = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        acc[c] += v.get2(r, c);
                    }
                }
                for a in acc.iter_mut() {
                    *a /= rows as f64;
                }
                Tensor::from_vec(shape, acc)
            }
            Some(_) => {
                let (rows, cols) = (v.rows(), v.cols());
                let acc = (0..rows)
                    .map(|r| v.row(r).iter().sum::<f64>() / cols as f64)
                    .collect();
                Tensor::from_vec(shape, acc)
            }
        };
        self.push("mean", Op::Mean(a, axis), out)
    }

    /// Overflow-safe log-sum-exp (subtract-max form) along `axis` or overall.
    pub fn logsumexp(&mut self, a: Var, axis: Option<usize>) -> Var {
        let v = self.value(a);
        let shape = Self::reduced_shape(v, axis);
        let out = match axis {
            None => Tensor::from_vec(shape, vec![lse_slice(v.data())]),
            Some(0) => {
                let (rows, cols) = (v.rows(), v.cols());
                let acc = (0..cols)
                    .map(|c| {
                        let col: Vec<f64> = (0..rows).map(|r| v.get2(r, c)).collect();
                        lse_slice(&col)
                    })
                    .collect();
                Tensor::from_vec(shape, acc)
            }
            Some(_) => {
                let rows = v.rows();
                let acc = (0..rows).map(|r| lse_slice(v.row(r))).collect();
                Tensor::from_vec(shape, acc)
            }
        };
        self.push("logsumexp", Op::LogSumExp(a, axis), out)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients for every reachable
    /// parameter are accumulated into `params` (call `zero_grad` between
    /// steps). Errs if the loss is non-scalar or the tape is poisoned.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<(), TensorError> {
        self.healthy()?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(fmt_shape(lv.shape())));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Reverse index order guarantees every consumer of node i has
            // already deposited its contribution.
            self.backprop_node(i, &g, &mut adj, params);
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
        params: &mut ParamSet,
    ) {
        let op = &self.nodes[i].op;
        let val = |v: Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => {}
            Op::Param(id) => params.accumulate_grad(*id, g),
            Op::Neg(a) => {
                accumulate(adj, a.0, g.iter().map(|x| -x));
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.data();
                accumulate(adj, a.0, g.iter().zip(y).map(|(gi, yi)| gi * yi));
            }
            Op::Log(a) => {
                let x = val(*a).data();
                accumulate(adj, a.0, g.iter().zip(x).map(|(gi, xi)| gi / xi));
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                accumulate(adj, a.0, g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)));
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                accumulate(adj, a.0, g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)));
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                accumulate(
                    adj,
                    a.0,
                    g.iter().zip(x).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }),
                );
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                accumulate(adj, a.0, g.iter().zip(x).map(|(gi, xi)| gi * sigmoid(*xi)));
            }
            Op::Square(a) => {
                let x = val(*a).data();
                accumulate(adj, a.0, g.iter().zip(x).map(|(gi, xi)| 2.0 * xi * gi));
            }
            Op::Cos(a) => {
                let x = val(*a).data();
                accumulate(adj, a.0, g.iter().zip(x).map(|(gi, xi)| -xi.sin() * gi));
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                accumulate(
                    adj,
                    a.0,
                    g.iter().zip(x).map(
                        |(gi, xi)| if *xi >= *lo && *xi <= *hi { *gi } else { 0.0 },
                    ),
                );
            }
            Op::Add(a, b) => {
                self.binary_backprop(adj, *a, *b, g, |gi, _, _| gi, |gi, _, _| gi);
            }
            Op::Sub(a, b) => {
                self.binary_backprop(adj, *a, *b, g, |gi, _, _| gi, |gi, _, _| -gi);
            }
            Op::Mul(a, b) => {
                self.binary_backprop(adj, *a, *b, g, |gi, _, bi| gi * bi, |gi, ai, _| gi * ai);
            }
            Op::AddConst(a) => {
                accumulate(adj, a.0, g.iter().copied());
            }
            Op::MulConst(a, c) => {
                accumulate(adj, a.0, g.iter().map(|gi| gi * c));
            }
            Op::Matmul(a, b) => {
                let va = val(*a);
                let vb = val(*b);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                // dA = g·Bᵀ, dB = Aᵀ·g
                let da = matmul_nt(g, vb.data(), m, n, k);
                let db = matmul_tn(va.data(), g, m, k, n);
                accumulate(adj, a.0, da.into_iter());
                accumulate(adj, b.0, db.into_iter());
            }
            Op::AddRow(m, row) => {
                let cols = val(*m).cols();
                let rows = val(*m).rows();
                accumulate(adj, m.0, g.iter().copied());
                let mut rg = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        rg[c] += g[r * cols + c];
                    }
                }
                accumulate(adj, row.0, rg.into_iter());
            }
            Op::ConcatCols(parts) => {
                let rows = self.nodes[i].value.rows();
                let total = self.nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut pg = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        pg.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(adj, p.0, pg.into_iter());
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = self.nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = val(p).rows();
                    accumulate(adj, p.0, g[offset..offset + r * cols].iter().copied());
                    offset += r * cols;
                }
            }
            Op::GatherRows(src, indices) => {
                let cols = val(*src).cols();
                let mut sg = vec![0.0; val(*src).numel()];
                for (out_r, &src_r) in indices.iter().enumerate() {
                    for c in 0..cols {
                        sg[src_r * cols + c] += g[out_r * cols + c];
                    }
                }
                accumulate(adj, src.0, sg.into_iter());
            }
            Op::SelectCol(src, c) => {
                let (rows, cols) = (val(*src).rows(), val(*src).cols());
                let mut sg = vec![0.0; rows * cols];
                for r in 0..rows {
                    sg[r * cols + c] = g[r];
                }
                accumulate(adj, src.0, sg.into_iter());
            }
            Op::BroadcastCol(v, c) => {
                let n = val(*v).numel();
                let vg: Vec<f64> = (0..n).map(|r| g[r * c..(r + 1) * c].iter().sum()).collect();
                accumulate(adj, v.0, vg.into_iter());
            }
            Op::Sum(a, axis) => {
                let va = val(*a);
                accumulate(adj, a.0, spread(g, va, *axis, 1.0));
            }
            Op::Mean(a, axis) => {
                let va = val(*a);
                let scale = match axis {
                    None => 1.0 / va.numel() as f64,
                    Some(0) => 1.0 / va.rows() as f64,
                    Some(_) => 1.0 / va.cols() as f64,
                };
                accumulate(adj, a.0, spread(g, va, *axis, scale));
            }
            Op::LogSumExp(a, axis) => {
                // d/dx_j lse(x) = softmax(x)_j
                let va = val(*a);
                let y = self.nodes[i].value.data();
                let mut ag = vec![0.0; va.numel()];
                match axis {
                    None => {
                        for (j, xj) in va.data().iter().enumerate() {
                            ag[j] = g[0] * (xj - y[0]).exp();
                        }
                    }
                    Some(0) => {
                        let (rows, cols) = (va.rows(), va.cols());
                        for r in 0..rows {
                            for c in 0..cols {
                                ag[r * cols + c] = g[c] * (va.get2(r, c) - y[c]).exp();
                            }
                        }
                    }
                    Some(_) => {
                        let (rows, cols) = (va.rows(), va.cols());
                        for r in 0..rows {
                            for c in 0..cols {
                                ag[r * cols + c] = g[r] * (va.get2(r, c) - y[r]).exp();
                            }
                        }
                    }
                }
                accumulate(adj, a.0, ag.into_iter());
            }
        }
    }

    /// Backprop for binary elementwise ops, undoing scalar broadcast by
    /// summing the upstream gradient into the scalar side.
    fn binary_backprop(
        &self,
        adj: &mut [Option<Vec<f64>>],
        a: Var,
        b: Var,
        g: &[f64],
        da: impl Fn(f64, f64, f64) -> f64,
        db: impl Fn(f64, f64, f64) -> f64,
    ) {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let n = g.len();
        let read = |t: &Tensor, i: usize| {
            if t.numel() == 1 {
                t.data()[0]
            } else {
                t.data()[i]
            }
        };
        let mut ga = vec![0.0; va.numel()];
        let mut gb = vec![0.0; vb.numel()];
        for i in 0..n {
            let (x, y) = (read(va, i), read(vb, i));
            let gi = g[i];
            if va.numel() == 1 {
                ga[0] += da(gi, x, y);
            } else {
                ga[i] += da(gi, x, y);
            }
            if vb.numel() == 1 {
                gb[0] += db(gi, x, y);
            } else {
                gb[i] += db(gi, x, y);
            }
        }
        accumulate(adj, a.0, ga.into_iter());
        accumulate(adj, b.0, gb.into_iter());
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], idx: usize, grads: impl Iterator<Item = f64>) {
    match &mut adj[idx] {
        Some(buf) => {
            for (slot, g) in buf.iter_mut().zip(grads) {
                *slot += g;
            }
        }
        None => adj[idx] = Some(grads.collect()),
    }
}

/// Broadcast a reduced gradient back over the pre-reduction shape.
fn spread<'a>(
    g: &'a [f64],
    target: &Tensor,
    axis: Option<usize>,
    scale: f64,
) -> Box<dyn Iterator<Item = f64> + 'a> {
    match axis {
        None => {
            let v = g[0] * scale;
            Box::new(std::iter::repeat_n(v, target.numel()))
        }
        Some(0) => {
            let (rows, cols) = (target.rows(), target.cols());
            Box::new((0..rows * cols).map(move |i| g[i % cols] * scale))
        }
        Some(_) => {
            let cols = target.cols();
            Box::new((0..target.numel()).map(move |i| g[i / cols] * scale))
        }
    }
}

/// Overflow-safe log Σ e^{x_i} in subtract-max form.
fn lse_slice(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow for large |x|
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_set(values: &[(&str, Tensor)]) -> (ParamSet, Vec<ParamId>) {
        let mut ps = ParamSet::new();
        let ids = values.iter().map(|(n, t)| ps.add(n, t.clone())).collect();
        (ps, ids)
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1., 0., 0., 1.]));
        let b = tape.constant(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]));
        let out = tape.matmul(b, eye);
        assert_eq!(tape.value(out).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    #[should_panic(expected = "incompatible shapes [2x3] and [2x2]")]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]));
        tape.matmul(a, b);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data()[0], 0.5);
    }

    #[test]
    fn exp_log_inverse_pair() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.5, 1.0, 3.25]));
        let y = tape.log(x);
        let z = tape.exp(y);
        for (a, b) in tape.value(z).iter().zip([0.5, 1.0, 3.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn log_of_non_positive_poisons_tape() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0]));
        tape.log(x);
        let p = tape.poison().expect("domain violation must be recorded");
        assert!(p.detail.contains("non-positive"), "got: {}", p.detail);
        assert!(tape.healthy().is_err());
    }

    #[test]
    fn sum_and_logsumexp_values() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1., 2., 3.]));
        let s = tape.sum(v, None);
        assert_eq!(tape.scalar_value(s), 6.0);

        let big = tape.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let l = tape.logsumexp(big, None);
        let expect = 1000.0 + 2.0_f64.ln();
        assert!((tape.scalar_value(l) - expect).abs() < 1e-9);
        assert!(tape.healthy().is_ok(), "subtract-max form must not overflow");
    }

    #[test]
    fn backward_linear_loss_gives_ones() {
        let (mut ps, ids) = param_set(&[("p", Tensor::vector(vec![3.0, -1.0, 2.0]))]);
        let mut tape = Tape::new();
        let p = tape.param(&ps, ids[0]);
        let loss = tape.sum(p, None);
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(ids[0]), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_loss_gives_value() {
        let (mut ps, ids) = param_set(&[("p", Tensor::vector(vec![3.0, -1.0, 2.0]))]);
        let mut tape = Tape::new();
        let p = tape.param(&ps, ids[0]);
        let sq = tape.square(p);
        let half = tape.sum(sq, None);
        let loss = tape.mul_const(half, 0.5);
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(ids[0]), ps.value(ids[0]).data());
    }

    #[test]
    fn backward_twice_doubles_gradient() {
        let (mut ps, ids) = param_set(&[("p", Tensor::vector(vec![1.5, -0.5]))]);
        let mut tape = Tape::new();
        let p = tape.param(&ps, ids[0]);
        let sq = tape.square(p);
        let loss = tape.sum(sq, None);
        tape.backward(loss, &mut ps).unwrap();
        let once: Vec<f64> = ps.grad(ids[0]).to_vec();
        tape.backward(loss, &mut ps).unwrap();
        for (twice, one) in ps.grad(ids[0]).iter().zip(&once) {
            assert_eq!(*twice, 2.0 * one);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let (mut ps, ids) = param_set(&[("p", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::new();
        let p = tape.param(&ps, ids[0]);
        let err = tape.backward(p, &mut ps).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss(_)));
    }

    #[test]
    fn forward_values_reproducible() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(vec![0.3, -1.7, 2.2]));
            let h = tape.tanh(x);
            let s = tape.softplus(h);
            let out = tape.sum(s, None);
            tape.scalar_value(out)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn gather_rows_scatter_adds_on_backward() {
        let (mut ps, ids) = param_set(&[("m", Tensor::matrix(2, 2, vec![1., 2., 3., 4.]))]);
        let mut tape = Tape::new();
        let m = tape.param(&ps, ids[0]);
        // Row 0 used twice, row 1 never: gradient [2,2,0,0] for a sum loss.
        let g = tape.gather_rows(m, &[0, 0]);
        let loss = tape.sum(g, None);
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(ids[0]), &[2.0, 2.0, 0.0, 0.0]);
    }
}
