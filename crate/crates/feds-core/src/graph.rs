//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Nodes live in an arena owned by [`Graph`] and are addressed by [`Var`]
//! handles. A node only ever refers to nodes created before it, so arena
//! order is a topological order and node values never change after
//! creation.
//!
//! [`Graph::backward`] builds the adjoint computation out of the same
//! primitive ops. With `create_graph` set, the returned gradients are
//! ordinary differentiable nodes, so a loss may contain a gradient and be
//! differentiated again (double backprop). Derivatives of the piecewise
//! linear ops (`leaky_relu`, `abs`, `clamp_min`) are taken as constant
//! masks, which makes their second derivative zero.
//!
//! All tensors are 2-D. Sequences of `n` segments of length `seg` are
//! stored as `(n * seg) x channels` matrices, one row per position.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Epsilon inside square roots of sums of squares.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    SumAll(Var),
    BroadcastScalar(Var),
    SegmentSum(Var, usize),
    SegmentExpand(Var, usize),
    Unfold(Var, Window),
    Fold(Var, Window),
    LeakyRelu(Var, f64),
    Abs(Var),
    ClampMin(Var, f64),
    Square(Var),
    Sqrt(Var),
    Recip(Var),
    Log(Var),
    SoftmaxRows(Var),
}

/// Sliding window of a 1-D convolution over segments of `seg` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    seg: usize,
    kernel: usize,
    pad: usize,
}

impl Window {
    fn out_seg(self) -> usize {
        self.seg + 2 * self.pad + 1 - self.kernel
    }
}

impl Op {
    fn parents(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul { a, b, .. } => [Some(a), Some(b)],
            Scale(a, _)
            | Offset(a)
            | SumRows(a)
            | BroadcastRows(a)
            | SumCols(a)
            | BroadcastCols(a)
            | SumAll(a)
            | BroadcastScalar(a)
            | SegmentSum(a, _)
            | SegmentExpand(a, _)
            | Unfold(a, _)
            | Fold(a, _)
            | LeakyRelu(a, _)
            | Abs(a)
            | ClampMin(a, _)
            | Square(a)
            | Sqrt(a)
            | Recip(a)
            | Log(a)
            | SoftmaxRows(a) => [Some(a), None],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Offset(..) => "offset",
            MatMul { .. } => "matmul",
            SumRows(_) => "sum_rows",
            BroadcastRows(..) => "broadcast_rows",
            SumCols(_) => "sum_cols",
            BroadcastCols(..) => "broadcast_cols",
            SumAll(_) => "sum_all",
            BroadcastScalar(..) => "broadcast_scalar",
            SegmentSum(..) => "segment_sum",
            SegmentExpand(..) => "segment_expand",
            Unfold(..) => "unfold",
            Fold(..) => "fold",
            LeakyRelu(..) => "leaky_relu",
            Abs(_) => "abs",
            ClampMin(..) => "clamp_min",
            Square(_) => "square",
            Sqrt(_) => "sqrt",
            Recip(_) => "recip",
            Log(_) => "log",
            SoftmaxRows(_) => "softmax_rows",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of nodes for one forward/backward computation.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inserts an input tensor. Non-finite inputs are rejected.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push_raw(value, Op::Leaf, requires_grad))
    }

    /// Leaf that never requires a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Gradient-tracking leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = self.grad_enabled
            && op
                .parents()
                .iter()
                .flatten()
                .any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `ta`/`tb` select a transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if tensor::matmul_shape(sa, sb, ta, tb).is_none() {
            return Err(Error::shape("matmul", format!("{sa:?} (t={ta}) x {sb:?} (t={tb})")));
        }
        let v = tensor::matmul(self.value(a), self.value(b), ta, tb);
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    /// `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        self.push(Tensor::row(out), Op::SumRows(a))
    }

    /// `1 x c -> rows x c`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(Error::shape("broadcast_rows", format!("{:?} is not a row", t.shape())));
        }
        let mut data = Vec::with_capacity(rows * t.cols());
        for _ in 0..rows {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_vec(rows, t.cols(), data)?;
        self.push(v, Op::BroadcastRows(a))
    }

    /// `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        self.push(Tensor::column(out), Op::SumCols(a))
    }

    /// `r x 1 -> r x cols`.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 {
            return Err(Error::shape("broadcast_cols", format!("{:?} is not a column", t.shape())));
        }
        let data = t.data().iter().flat_map(|&v| core::iter::repeat_n(v, cols)).collect();
        let v = Tensor::from_vec(t.rows(), cols, data)?;
        self.push(v, Op::BroadcastCols(a))
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn broadcast_scalar(&mut self, a: Var, shape: [usize; 2]) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != [1, 1] {
            return Err(Error::shape("broadcast_scalar", format!("{:?} is not a scalar", t.shape())));
        }
        let v = Tensor::full(shape[0], shape[1], t.item());
        self.push(v, Op::BroadcastScalar(a))
    }

    /// Sums each run of `seg` consecutive rows: `(n * seg) x c -> n x c`.
    pub fn segment_sum(&mut self, a: Var, seg: usize) -> Result<Var> {
        let t = self.value(a);
        if seg == 0 || !t.rows().is_multiple_of(seg) {
            return Err(Error::shape("segment_sum", format!("{} rows, segment {seg}", t.rows())));
        }
        let (n, c) = (t.rows() / seg, t.cols());
        let mut out = Tensor::zeros(n, c);
        for r in 0..t.rows() {
            let dst = &mut out.data_mut()[(r / seg) * c..(r / seg + 1) * c];
            for (o, v) in dst.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum(a, seg))
    }

    /// Repeats each row `seg` times: `n x c -> (n * seg) x c`.
    pub fn segment_expand(&mut self, a: Var, seg: usize) -> Result<Var> {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len() * seg);
        for r in 0..t.rows() {
            for _ in 0..seg {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let v = Tensor::from_vec(t.rows() * seg, t.cols(), data)?;
        self.push(v, Op::SegmentExpand(a, seg))
    }

    /// Segment-wise mean: `(n * seg) x c -> n x c`.
    pub fn segment_mean(&mut self, a: Var, seg: usize) -> Result<Var> {
        let s = self.segment_sum(a, seg)?;
        self.scale(s, 1.0 / seg as f64)
    }

    /// Gathers a `kernel`-wide window around each position of every segment
    /// (zero padded by `pad` on both sides): `(n * seg) x c ->
    /// (n * seg_out) x (kernel * c)`, `seg_out = seg + 2 pad - kernel + 1`.
    pub fn unfold(&mut self, a: Var, seg: usize, kernel: usize, pad: usize) -> Result<Var> {
        let w = Window { seg, kernel, pad };
        let t = self.value(a);
        if seg == 0 || kernel == 0 || !t.rows().is_multiple_of(seg) || seg + 2 * pad < kernel {
            return Err(Error::shape(
                "unfold",
                format!("{} rows, segment {seg}, kernel {kernel}, pad {pad}", t.rows()),
            ));
        }
        let v = unfold_values(t, w);
        self.push(v, Op::Unfold(a, w))
    }

    fn fold(&mut self, a: Var, w: Window) -> Result<Var> {
        let v = fold_values(self.value(a), w);
        self.push(v, Op::Fold(a, w))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn clamp_min(&mut self, a: Var, min: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(min));
        self.push(v, Op::ClampMin(a, min))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(libm::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(libm::log);
        self.push(v, Op::Log(a))
    }

    /// Softmax over the entries of each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        let c = t.cols();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - m);
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    // Composite ops.

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let b = self.broadcast_scalar(s, self.shape(a))?;
        self.mul(a, b)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `x w + b`, with `b` a `1 x out` row broadcast over the rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let rows = self.shape(y)[0];
        let bb = self.broadcast_rows(b, rows)?;
        self.add(y, bb)
    }

    /// Stride-1 1-D convolution over segments of length `seg`.
    ///
    /// `x` is `(n * seg) x c_in`; `w` is `(kernel * c_in) x c_out` with rows
    /// ordered tap-major (`row = tap * c_in + channel`); `b` is `1 x c_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, seg: usize, pad: usize) -> Result<Var> {
        let c_in = self.shape(x)[1];
        let w_rows = self.shape(w)[0];
        if c_in == 0 || !w_rows.is_multiple_of(c_in) {
            return Err(Error::shape("conv1d", format!("weight rows {w_rows} for {c_in} channels")));
        }
        let u = self.unfold(x, seg, w_rows / c_in, pad)?;
        self.linear(u, w, b)
    }

    /// `sqrt(sum x^2 + eps)` as a `1 x 1` node.
    pub fn l2_norm_eps(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sq = self.square(x)?;
        let s = self.sum_all(sq)?;
        let s = self.offset(s, eps)?;
        self.sqrt(s)
    }

    /// Per-row `sqrt(sum x^2 + eps)`: `r x c -> r x 1`.
    pub fn row_l2_norm_eps(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sq = self.square(x)?;
        let s = self.sum_cols(sq)?;
        let s = self.offset(s, eps)?;
        self.sqrt(s)
    }

    /// `sqrt(x^2 + eps)` elementwise.
    pub fn abs_smooth(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sq = self.square(x)?;
        let s = self.offset(sq, eps)?;
        self.sqrt(s)
    }

    /// Gradients of the scalar `root` with respect to each node of `wrt`.
    ///
    /// A `wrt` node that `root` does not depend on gets an all-zero
    /// gradient. With `create_graph` the gradients are differentiable nodes
    /// of this graph; otherwise they are constants.
    pub fn backward(&mut self, root: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if self.shape(root) != [1, 1] {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got {:?}",
                self.shape(root)
            )));
        }
        if let Some(w) = wrt.iter().find(|w| !self.requires_grad(**w)) {
            return Err(Error::Usage(format!("node {} does not require grad", w.0)));
        }
        let saved = self.grad_enabled;
        self.grad_enabled = create_graph;
        let out = self.backward_inner(root, wrt);
        self.grad_enabled = saved;
        out
    }

    fn backward_inner(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let n = root.0 + 1;
        // needed[i]: some wrt node is reachable from i through parents
        let mut needed = vec![false; n];
        for w in wrt.iter().filter(|w| w.0 < n) {
            needed[w.0] = true;
        }
        for i in 0..n {
            if !needed[i] && self.nodes[i].requires_grad {
                needed[i] = self.nodes[i].op.parents().iter().flatten().any(|p| needed[p.0]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        if needed[root.0] {
            adj[root.0] = Some(self.constant(Tensor::scalar(1.0))?);
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !needed[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let [pa, pb] = op.parents();
            if let Some(a) = pa.filter(|a| needed[a.0]) {
                let ga = self.adjoint(&op, Var(i), g, 0)?;
                accumulate(self, &mut adj, a, ga)?;
            }
            if let Some(b) = pb.filter(|b| needed[b.0]) {
                let gb = self.adjoint(&op, Var(i), g, 1)?;
                accumulate(self, &mut adj, b, gb)?;
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let [r, c] = self.shape(w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect()
    }

    /// Contribution of output adjoint `g` of node `out` to parent number `which`.
    fn adjoint(&mut self, op: &Op, out: Var, g: Var, which: usize) -> Result<Var> {
        use Op::*;
        match *op {
            Leaf => unreachable!("leaves have no parents"),
            Add(..) => Ok(g),
            Sub(..) => {
                if which == 0 {
                    Ok(g)
                } else {
                    self.scale(g, -1.0)
                }
            }
            Mul(a, b) => {
                let other = if which == 0 { b } else { a };
                self.mul(g, other)
            }
            Scale(_, s) => self.scale(g, s),
            Offset(..) => Ok(g),
            MatMul { a, b, ta, tb } => match (which, ta, tb) {
                (0, false, _) => self.matmul_t(g, b, false, !tb),
                (0, true, _) => self.matmul_t(b, g, tb, true),
                (_, _, false) => self.matmul_t(a, g, !ta, false),
                (_, _, true) => self.matmul_t(g, a, true, ta),
            },
            SumRows(a) => self.broadcast_rows(g, self.shape(a)[0]),
            BroadcastRows(..) => self.sum_rows(g),
            SumCols(a) => self.broadcast_cols(g, self.shape(a)[1]),
            BroadcastCols(..) => self.sum_cols(g),
            SumAll(a) => self.broadcast_scalar(g, self.shape(a)),
            BroadcastScalar(..) => self.sum_all(g),
            SegmentSum(_, seg) => self.segment_expand(g, seg),
            SegmentExpand(_, seg) => self.segment_sum(g, seg),
            Unfold(_, w) => self.fold(g, w),
            Fold(_, w) => self.unfold(g, w.seg, w.kernel, w.pad),
            LeakyRelu(a, slope) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                let m = self.constant(mask)?;
                self.mul(g, m)
            }
            Abs(a) => {
                let mask = self.value(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let m = self.constant(mask)?;
                self.mul(g, m)
            }
            ClampMin(a, min) => {
                let mask = self.value(a).map(|x| if x > min { 1.0 } else { 0.0 });
                let m = self.constant(mask)?;
                self.mul(g, m)
            }
            Square(a) => {
                let two_a = self.scale(a, 2.0)?;
                self.mul(g, two_a)
            }
            Sqrt(_) => {
                let r = self.recip(out)?;
                let half = self.scale(r, 0.5)?;
                self.mul(g, half)
            }
            Recip(_) => {
                let sq = self.square(out)?;
                let neg = self.scale(sq, -1.0)?;
                self.mul(g, neg)
            }
            Log(a) => {
                let r = self.recip(a)?;
                self.mul(g, r)
            }
            SoftmaxRows(_) => {
                let cols = self.shape(out)[1];
                let gy = self.mul(g, out)?;
                let s = self.sum_cols(gy)?;
                let sb = self.broadcast_cols(s, cols)?;
                let d = self.sub(g, sb)?;
                self.mul(out, d)
            }
        }
    }
}

fn accumulate(graph: &mut Graph, adj: &mut [Option<Var>], at: Var, contrib: Var) -> Result<()> {
    adj[at.0] = Some(match adj[at.0] {
        None => contrib,
        Some(prev) => graph.add(prev, contrib)?,
    });
    Ok(())
}

fn unfold_values(t: &Tensor, w: Window) -> Tensor {
    let c = t.cols();
    let n = t.rows() / w.seg;
    let so = w.out_seg();
    let mut out = Tensor::zeros(n * so, w.kernel * c);
    let width = w.kernel * c;
    let data = out.data_mut();
    for s in 0..n {
        for pos in 0..so {
            let dst = &mut data[(s * so + pos) * width..(s * so + pos + 1) * width];
            for tap in 0..w.kernel {
                let src = pos + tap;
                if src < w.pad || src - w.pad >= w.seg {
                    continue;
                }
                let row = t.row_slice(s * w.seg + src - w.pad);
                dst[tap * c..(tap + 1) * c].copy_from_slice(row);
            }
        }
    }
    out
}

fn fold_values(t: &Tensor, w: Window) -> Tensor {
    let c = t.cols() / w.kernel;
    let so = w.out_seg();
    let n = t.rows() / so;
    let mut out = Tensor::zeros(n * w.seg, c);
    let data = out.data_mut();
    for s in 0..n {
        for pos in 0..so {
            let src = t.row_slice(s * so + pos);
            for tap in 0..w.kernel {
                let dst = pos + tap;
                if dst < w.pad || dst - w.pad >= w.seg {
                    continue;
                }
                let r = s * w.seg + dst - w.pad;
                for (o, v) in data[r * c..(r + 1) * c].iter_mut().zip(&src[tap * c..(tap + 1) * c]) {
                    *o += v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn square_first_and_second_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0)).unwrap();
        let y = g.square(x).unwrap();
        let dx = g.backward(y, &[x], true).unwrap()[0];
        assert_eq!(g.value(dx).item(), 6.0);
        let ddx = g.backward(dx, &[x], true).unwrap()[0];
        assert_eq!(g.value(ddx).item(), 2.0);
    }

    #[test]
    fn unreachable_gradient_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![1.0, 2.0])).unwrap();
        let z = g.param(Tensor::scalar(4.0)).unwrap();
        let y = g.square(z).unwrap();
        let dx = g.backward(y, &[x], false).unwrap()[0];
        assert_eq!(g.value(dx), &Tensor::zeros(1, 2));
    }

    #[test]
    fn leaky_relu_and_softmax_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![-1.0, 2.0])).unwrap();
        let y = g.leaky_relu(x, 0.01).unwrap();
        assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
        let z = g.constant(Tensor::zeros(2, 4)).unwrap();
        let s = g.softmax_rows(z).unwrap();
        assert!(g.value(s).data().iter().all(|&v| close(v, 0.25, 1e-15)));
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::new();
        let x = g
            .constant(Tensor::from_vec(4, 2, vec![1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]).unwrap())
            .unwrap();
        // kernel 3, centre tap is the 2x2 identity
        let mut w = Tensor::zeros(6, 2);
        w.data_mut()[2 * 2] = 1.0;
        w.data_mut()[3 * 2 + 1] = 1.0;
        let w = g.constant(w).unwrap();
        let b = g.constant(Tensor::zeros(1, 2)).unwrap();
        let y = g.conv1d(x, w, b, 4, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(2, 3)).unwrap();
        let b = g.param(Tensor::zeros(3, 2)).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(g.matmul(a, a), Err(Error::Shape { .. })));
        assert!(matches!(g.backward(a, &[a], false), Err(Error::Usage(_))));
        assert!(matches!(g.leaf(Tensor::scalar(f64::NAN), true), Err(Error::NonFinite(_))));
        let z = g.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.log(z), Err(Error::NonFinite("log"))));
        let c = g.constant(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g.backward(c, &[c], false), Err(Error::Usage(_))));
    }

    #[test]
    fn gradients_without_create_graph_are_constants() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0)).unwrap();
        let y = g.square(x).unwrap();
        let dx = g.backward(y, &[x], false).unwrap()[0];
        assert!(!g.requires_grad(dx));
        assert_eq!(g.value(dx).item(), 4.0);
    }
}
