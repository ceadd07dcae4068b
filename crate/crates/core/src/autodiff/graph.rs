//! Matrix-valued reverse-mode tape with differentiable backward passes.
//!
//! [`Graph::grad`] does not return numbers: it appends the adjoint computation
//! to the same tape and returns handles to the gradient nodes. Those nodes are
//! ordinary graph values, so a loss built from them (a score `-∇ₓE`, a Stein
//! divergence, a gradient penalty) can be differentiated again with respect to
//! network parameters.
//!
//! Values are computed eagerly when a node is created. Nodes are stored in
//! creation order, which is a topological order.

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// n×m plus a broadcast 1×m row
    AddRow(Var, Var),
    /// n×m → 1×m
    SumRows(Var),
    /// n×m → n×1
    SumCols(Var),
    /// 1×m → n×m
    BroadcastRows(Var),
    /// n×1 → n×m
    BroadcastCols(Var),
    /// → 1×1
    Sum(Var),
    BroadcastScalar(Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    /// derivative of leaky-relu: 1 where the input is positive, `slope` elsewhere
    LeakyMask(Var),
    Clamp(Var, f64, f64),
    /// derivative of clamp: 1 strictly inside the interval, 0 outside
    ClampMask(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Recip(Var),
    /// n×m → n×1, column j
    Column(Var, usize),
    /// n×1 → n×m, zeros except column j
    EmbedColumn(Var, usize),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => [Some(a), Some(b)],
            Scale(a, _)
            | AddScalar(a)
            | SumRows(a)
            | SumCols(a)
            | BroadcastRows(a)
            | BroadcastCols(a)
            | Sum(a)
            | BroadcastScalar(a)
            | Transpose(a)
            | Tanh(a)
            | Sigmoid(a)
            | Softplus(a)
            | LeakyRelu(a, _)
            | LeakyMask(a)
            | Clamp(a, _, _)
            | ClampMask(a)
            | Exp(a)
            | Log(a)
            | Sqrt(a)
            | Recip(a)
            | Column(a, _)
            | EmbedColumn(a, _) => [Some(a), None],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// How a backward pass treats derivatives of piecewise-constant masks
/// (the slope of leaky-relu and of clamp).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// Differentiating through a mask is an error.
    Strict,
    /// Masks are held constant, which is exact away from the kinks.
    PiecewiseConstant,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    smoothness: Smoothness,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow for large `x`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn shape_err(context: &'static str, expected: usize, found: usize) -> Error {
    Error::DimensionMismatch {
        context,
        expected,
        found,
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            smoothness: Smoothness::Strict,
        }
    }

    pub fn with_smoothness(smoothness: Smoothness) -> Self {
        Graph {
            nodes: Vec::new(),
            smoothness,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node. Whether it is differentiated is decided per call to [`Graph::grad`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b), ta, tb)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }))
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(if sa.0 != sb.0 {
                shape_err(context, sa.0, sb.0)
            } else {
                shape_err(context, sa.1, sb.1)
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "Graph::add")?;
        let value = self.value(a).add(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "Graph::sub")?;
        let value = self.value(a).sub(self.value(b));
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "Graph::mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    /// Adds a 1×m row to every row of an n×m matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 {
            return Err(shape_err("Graph::add_row rows", 1, rr));
        }
        if rc != c {
            return Err(shape_err("Graph::add_row cols", c, rc));
        }
        let mut value = self.value(a).clone();
        let b = self.value(row).data().to_vec();
        for i in 0..r {
            for (x, y) in value.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Column sums, n×m → 1×m.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = vec![0.0; m.cols()];
        for row in m.row_iter() {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push(Matrix::row_vector(&out), Op::SumRows(a))
    }

    /// Row sums, n×m → n×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out: Vec<f64> = if m.cols() == 0 {
            vec![0.0; m.rows()]
        } else {
            m.row_iter().map(|r| r.iter().sum()).collect()
        };
        self.push(Matrix::column(&out), Op::SumCols(a))
    }

    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let (rr, c) = self.shape(row);
        if rr != 1 {
            return Err(shape_err("Graph::broadcast_rows", 1, rr));
        }
        let src = self.value(row).data().to_vec();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(&src);
        }
        let value = Matrix::from_vec(n, c, data)?;
        Ok(self.push(value, Op::BroadcastRows(row)))
    }

    pub fn broadcast_cols(&mut self, col: Var, m: usize) -> Result<Var> {
        let (r, cc) = self.shape(col);
        if cc != 1 {
            return Err(shape_err("Graph::broadcast_cols", 1, cc));
        }
        let src = self.value(col).data().to_vec();
        let mut data = Vec::with_capacity(r * m);
        for x in src {
            data.extend(std::iter::repeat_n(x, m));
        }
        let value = Matrix::from_vec(r, m, data)?;
        Ok(self.push(value, Op::BroadcastCols(col)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn broadcast_scalar(&mut self, s: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("Graph::broadcast_scalar", 1, self.value(s).len()));
        }
        let value = Matrix::filled(rows, cols, self.value(s).item());
        Ok(self.push(value, Op::BroadcastScalar(s)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    fn leaky_mask(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
        self.push(value, Op::LeakyMask(a))
    }

    /// Elementwise clamp to `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    fn clamp_mask(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
        self.push(value, Op::ClampMask(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / x);
        self.push(value, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        // shapes trivially agree
        self.mul(a, a).expect("same node")
    }

    /// Column `j` as an n×1 matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let m = self.value(a);
        if j >= m.cols() {
            return Err(shape_err("Graph::column", m.cols(), j + 1));
        }
        let col: Vec<f64> = m.row_iter().map(|r| r[j]).collect();
        Ok(self.push(Matrix::column(&col), Op::Column(a, j)))
    }

    fn embed_column(&mut self, col: Var, j: usize, width: usize) -> Var {
        let c = self.value(col);
        let mut out = Matrix::zeros(c.rows(), width);
        for i in 0..c.rows() {
            out.set(i, j, c.get(i, 0));
        }
        self.push(out, Op::EmbedColumn(col, j))
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, contrib: Var) -> Result<()> {
        adj[target.0] = Some(match adj[target.0] {
            None => contrib,
            Some(prev) => self.add(prev, contrib)?,
        });
        Ok(())
    }

    /// Gradient of a scalar node with respect to each node in `wrt`.
    ///
    /// The returned handles are graph nodes themselves. A `wrt` node that the
    /// output does not depend on gets a zero matrix of its own shape.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(output) != (1, 1) {
            return Err(shape_err("Graph::grad output", 1, self.value(output).len()));
        }
        let n = output.0 + 1;
        let mut on_path = vec![false; n];
        let mut start = n;
        for w in wrt {
            if w.0 < n {
                on_path[w.0] = true;
                start = start.min(w.0);
            }
        }
        for i in start..n {
            if !on_path[i] {
                on_path[i] = self.nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|p| on_path[p.0]);
            }
        }
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if on_path[output.0] {
            adj[output.0] = Some(self.scalar(1.0));
        }
        for i in (start..n).rev() {
            if !on_path[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            self.backprop_node(i, g, &on_path, &mut adj)?;
        }
        wrt.iter()
            .map(|&w| {
                Ok(match adj.get(w.0).copied().flatten() {
                    Some(g) => g,
                    None => {
                        let (r, c) = self.shape(w);
                        self.leaf(Matrix::zeros(r, c))
                    }
                })
            })
            .collect()
    }

    fn backprop_node(
        &mut self,
        i: usize,
        g: Var,
        on_path: &[bool],
        adj: &mut [Option<Var>],
    ) -> Result<()> {
        let out = Var(i);
        let wants = |v: Var| on_path[v.0];
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                if wants(a) {
                    let ga = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    self.accumulate(adj, a, ga)?;
                }
                if wants(b) {
                    let gb = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    self.accumulate(adj, b, gb)?;
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    self.accumulate(adj, a, g)?;
                }
                if wants(b) {
                    self.accumulate(adj, b, g)?;
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    self.accumulate(adj, a, g)?;
                }
                if wants(b) {
                    let gb = self.neg(g);
                    self.accumulate(adj, b, gb)?;
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let ga = self.mul(g, b)?;
                    self.accumulate(adj, a, ga)?;
                }
                if wants(b) {
                    let gb = self.mul(g, a)?;
                    self.accumulate(adj, b, gb)?;
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    let ga = self.scale(g, c);
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::AddScalar(a) => {
                if wants(a) {
                    self.accumulate(adj, a, g)?;
                }
            }
            Op::AddRow(a, row) => {
                if wants(a) {
                    self.accumulate(adj, a, g)?;
                }
                if wants(row) {
                    let gr = self.sum_rows(g);
                    self.accumulate(adj, row, gr)?;
                }
            }
            Op::SumRows(a) => {
                if wants(a) {
                    let n = self.value(a).rows();
                    let ga = self.broadcast_rows(g, n)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::SumCols(a) => {
                if wants(a) {
                    let m = self.value(a).cols();
                    let ga = self.broadcast_cols(g, m)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::BroadcastRows(row) => {
                if wants(row) {
                    let gr = self.sum_rows(g);
                    self.accumulate(adj, row, gr)?;
                }
            }
            Op::BroadcastCols(col) => {
                if wants(col) {
                    let gc = self.sum_cols(g);
                    self.accumulate(adj, col, gc)?;
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let (r, c) = self.shape(a);
                    let ga = self.broadcast_scalar(g, r, c)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::BroadcastScalar(s) => {
                if wants(s) {
                    let gs = self.sum(g);
                    self.accumulate(adj, s, gs)?;
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let ga = self.transpose(g);
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    // 1 - y²
                    let y2 = self.square(out);
                    let neg = self.scale(y2, -1.0);
                    let d = self.add_scalar(neg, 1.0);
                    let ga = self.mul(g, d)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Sigmoid(a) => {
                if wants(a) {
                    // y (1 - y)
                    let neg = self.scale(out, -1.0);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let d = self.mul(out, one_minus)?;
                    let ga = self.mul(g, d)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Softplus(a) => {
                if wants(a) {
                    let d = self.sigmoid(a);
                    let ga = self.mul(g, d)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::LeakyRelu(a, slope) => {
                if wants(a) {
                    let d = self.leaky_mask(a, slope);
                    let ga = self.mul(g, d)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Clamp(a, lo, hi) => {
                if wants(a) {
                    let d = self.clamp_mask(a, lo, hi);
                    let ga = self.mul(g, d)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::LeakyMask(a) | Op::ClampMask(a) => {
                if wants(a) && self.smoothness == Smoothness::Strict {
                    return Err(Error::NonSmoothSecondOrder);
                }
            }
            Op::Exp(a) => {
                if wants(a) {
                    let ga = self.mul(g, out)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Log(a) => {
                if wants(a) {
                    let r = self.recip(a);
                    let ga = self.mul(g, r)?;
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Sqrt(a) => {
                if wants(a) {
                    let r = self.recip(out);
                    let gr = self.mul(g, r)?;
                    let ga = self.scale(gr, 0.5);
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Recip(a) => {
                if wants(a) {
                    // d(1/x) = -1/x²
                    let y2 = self.square(out);
                    let gy = self.mul(g, y2)?;
                    let ga = self.neg(gy);
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::Column(a, j) => {
                if wants(a) {
                    let width = self.value(a).cols();
                    let ga = self.embed_column(g, j, width);
                    self.accumulate(adj, a, ga)?;
                }
            }
            Op::EmbedColumn(col, j) => {
                if wants(col) {
                    let gc = self.column(g, j)?;
                    self.accumulate(adj, col, gc)?;
                }
            }
        }
        Ok(())
    }

    /// Errors if any entry of the node's value is NaN or infinite.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}
