use crate::{AutodiffError, Result, Tensor};

/// Handle to a node recorded on a [`Graph`].
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
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Elu(Var),
    Tanh(Var),
    Softplus(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    ClampMin(Var, f64),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ColSum(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    CumsumPad(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    Select(Vec<bool>, Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::Elu(_) => "elu",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::ClampMin(..) => "clamp_min",
            Op::MatMul(..) => "matmul",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::ColSum(_) => "col_sum",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LogSumExpRows(_) => "logsumexp_rows",
            Op::CumsumPad(_) => "cumsum_pad",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::Gather(..) => "gather",
            Op::Select(..) => "select",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

/// Define-by-run computation tape.
///
/// Nodes only reference earlier nodes, so the tape order is a topological
/// order and the graph is acyclic by construction. Shape errors while
/// building the graph are programming errors and panic.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for `vars` in order; unreachable nodes get zeros.
    pub fn collect(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .map(|&v| {
                self.grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
            })
            .collect()
    }
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> [usize; 2] {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast shapes {a:?} and {b:?}")
        }
    };
    [dim(a[0], b[0]), dim(a[1], b[1])]
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape(), values);
    }
    let out = broadcast_shape(a.shape(), b.shape());
    let mut values = Vec::with_capacity(out[0] * out[1]);
    for r in 0..out[0] {
        for c in 0..out[1] {
            values.push(f(
                a.values()[bidx(a.shape(), r, c)],
                b.values()[bidx(b.shape(), r, c)],
            ));
        }
    }
    Tensor::new(out, values)
}

/// Sums a gradient of broadcast shape back down to `target`.
fn reduce_to(grad: Tensor, target: [usize; 2]) -> Tensor {
    if grad.shape() == target {
        return grad;
    }
    let [r, c] = grad.shape();
    let mut out = Tensor::zeros(target);
    for i in 0..r {
        for j in 0..c {
            out.values_mut()[bidx(target, i, j)] += grad.values()[i * c + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => {
            assert_eq!(t.shape(), g.shape(), "gradient shape mismatch");
            for (a, b) in t.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Graph {
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

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let tracked = self.tracked(x);
        self.push(op, value, tracked)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), f);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(op, value, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Op::Neg(x), x, |v| -v)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(Op::Scale(x, k), x, |v| k * v)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(Op::AddScalar(x), x, |v| v + k)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Op::Exp(x), x, f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Op::Log(x), x, f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Op::Sqrt(x), x, f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Op::Square(x), x, |v| v * v)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(Op::Elu(x), x, |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Op::Tanh(x), x, f64::tanh)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Op::Softplus(x), x, softplus)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid(x), x, sigmoid)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::LogSigmoid(x), x, |v| -softplus(-v))
    }

    /// `max(x, k)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, k: f64) -> Var {
        self.unary(Op::ClampMin(x, k), x, |v| v.max(k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::MatMul(a, b), value, tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let tracked = self.tracked(x);
        self.push(Op::Sum(x), Tensor::scalar(s), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.values().iter().sum::<f64>() / t.len() as f64;
        let tracked = self.tracked(x);
        self.push(Op::Mean(x), Tensor::scalar(m), tracked)
    }

    /// Sum of each row: `[r, c] -> [r, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let values = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let tracked = self.tracked(x);
        self.push(Op::RowSum(x), Tensor::column(values), tracked)
    }

    /// Sum of each column: `[r, c] -> [1, c]`.
    pub fn col_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut values = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (acc, v) in values.iter_mut().zip(t.row_slice(r)) {
                *acc += v;
            }
        }
        let tracked = self.tracked(x);
        self.push(Op::ColSum(x), Tensor::row(values), tracked)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut values = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = values.len();
            let mut z = 0.0;
            for &v in row {
                let e = (v - m).exp();
                z += e;
                values.push(e);
            }
            for v in &mut values[start..] {
                *v /= z;
            }
        }
        let shape = t.shape();
        let tracked = self.tracked(x);
        self.push(Op::SoftmaxRows(x), Tensor::new(shape, values), tracked)
    }

    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let values = (0..t.rows())
            .map(|r| {
                let row = t.row_slice(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let tracked = self.tracked(x);
        self.push(Op::LogSumExpRows(x), Tensor::column(values), tracked)
    }

    /// Row-wise running sum with a leading zero: `[r, c] -> [r, c + 1]`.
    pub fn cumsum_pad(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut values = Vec::with_capacity(t.rows() * (c + 1));
        for r in 0..t.rows() {
            let mut acc = 0.0;
            values.push(0.0);
            for &v in t.row_slice(r) {
                acc += v;
                values.push(acc);
            }
        }
        let rows = t.rows();
        let tracked = self.tracked(x);
        self.push(
            Op::CumsumPad(x),
            Tensor::new([rows, c + 1], values),
            tracked,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice_cols(start, end);
        let tracked = self.tracked(x);
        self.push(Op::SliceCols(x, start), value, tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let value = {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_cols(&ts)
        };
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, tracked)
    }

    /// Picks `src[i, idx[i]]` for every output row `i`. A single-row `src`
    /// is shared by all rows.
    pub fn gather(&mut self, src: Var, idx: Vec<usize>) -> Var {
        let t = self.value(src);
        assert!(
            t.rows() == 1 || t.rows() == idx.len(),
            "gather: source has {} rows for {} indices",
            t.rows(),
            idx.len()
        );
        let values = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let r = if t.rows() == 1 { 0 } else { i };
                t.get(r, j)
            })
            .collect();
        let tracked = self.tracked(src);
        self.push(Op::Gather(src, idx), Tensor::column(values), tracked)
    }

    /// Elementwise `mask ? a : b` for same-shaped operands.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "select operands differ in shape");
        assert_eq!(mask.len(), ta.len(), "select mask length");
        let values = mask
            .iter()
            .zip(ta.values().iter().zip(tb.values()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let shape = ta.shape();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Op::Select(mask, a, b), Tensor::new(shape, values), tracked)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are summed over every path. A non-finite loss is reported
    /// together with the first node that produced a non-finite value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        if !self.value(loss).is_finite() {
            let node = self
                .nodes
                .iter()
                .position(|n| !n.value.is_finite())
                .unwrap_or(loss.0);
            return Err(AutodiffError::NonFinite {
                node,
                op: self.nodes[node].op.name(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn send(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if self.tracked(v) {
            accumulate(&mut grads[v.0], g);
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let xv = self.value(x);
            let values = g
                .values()
                .iter()
                .zip(xv.values().iter().zip(out.values()))
                .map(|(&gi, (&xi, &yi))| f(gi, xi, yi))
                .collect();
            Tensor::new(xv.shape(), values)
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send(grads, *a, reduce_to(g.clone(), self.value(*a).shape()));
                self.send(grads, *b, reduce_to(g.clone(), self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, reduce_to(g.clone(), self.value(*a).shape()));
                self.send(grads, *b, reduce_to(g.map(|v| -v), self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let ga = zip_broadcast(g, tb, |x, y| x * y);
                    self.send(grads, *a, reduce_to(ga, ta.shape()));
                }
                if self.tracked(*b) {
                    let gb = zip_broadcast(g, ta, |x, y| x * y);
                    self.send(grads, *b, reduce_to(gb, tb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let ga = zip_broadcast(g, tb, |x, y| x / y);
                    self.send(grads, *a, reduce_to(ga, ta.shape()));
                }
                if self.tracked(*b) {
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let q = zip_broadcast(out, tb, |o, y| -o / y);
                    let gb = zip_broadcast(g, &q, |x, y| x * y);
                    self.send(grads, *b, reduce_to(gb, tb.shape()));
                }
            }
            Op::Neg(x) => self.send(grads, *x, g.map(|v| -v)),
            Op::Scale(x, k) => {
                let k = *k;
                self.send(grads, *x, g.map(|v| k * v))
            }
            Op::AddScalar(x) => self.send(grads, *x, g.clone()),
            Op::Exp(x) => self.send(grads, *x, elementwise(*x, &|gi, _, yi| gi * yi)),
            Op::Log(x) => self.send(grads, *x, elementwise(*x, &|gi, xi, _| gi / xi)),
            Op::Sqrt(x) => self.send(grads, *x, elementwise(*x, &|gi, _, yi| 0.5 * gi / yi)),
            Op::Square(x) => self.send(grads, *x, elementwise(*x, &|gi, xi, _| 2.0 * gi * xi)),
            Op::Elu(x) => self.send(
                grads,
                *x,
                elementwise(*x, &|gi, xi, yi| {
                    if xi > 0.0 {
                        gi
                    } else {
                        gi * (yi + 1.0)
                    }
                }),
            ),
            Op::Tanh(x) => self.send(
                grads,
                *x,
                elementwise(*x, &|gi, _, yi| gi * (1.0 - yi * yi)),
            ),
            Op::Softplus(x) => self.send(grads, *x, elementwise(*x, &|gi, xi, _| gi * sigmoid(xi))),
            Op::Sigmoid(x) => self.send(
                grads,
                *x,
                elementwise(*x, &|gi, _, yi| gi * yi * (1.0 - yi)),
            ),
            Op::LogSigmoid(x) => {
                self.send(grads, *x, elementwise(*x, &|gi, xi, _| gi * sigmoid(-xi)))
            }
            Op::ClampMin(x, k) => {
                let k = *k;
                self.send(
                    grads,
                    *x,
                    elementwise(*x, &|gi, xi, _| if xi > k { gi } else { 0.0 }),
                )
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    self.send(grads, *a, g.matmul(&tb.transpose()));
                }
                if self.tracked(*b) {
                    self.send(grads, *b, ta.transpose().matmul(g));
                }
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape();
                self.send(grads, *x, Tensor::full(s, g.item()));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                self.send(
                    grads,
                    *x,
                    Tensor::full(t.shape(), g.item() / t.len() as f64),
                );
            }
            Op::RowSum(x) => {
                let s = self.value(*x).shape();
                self.send(grads, *x, reduce_to_broadcast(g, s));
            }
            Op::ColSum(x) => {
                let s = self.value(*x).shape();
                self.send(grads, *x, reduce_to_broadcast(g, s));
            }
            Op::SoftmaxRows(x) => {
                let [r, c] = out.shape();
                let mut values = vec![0.0; r * c];
                for i in 0..r {
                    let s = out.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        values[i * c + j] = s[j] * (gr[j] - dot);
                    }
                }
                self.send(grads, *x, Tensor::new([r, c], values));
            }
            Op::LogSumExpRows(x) => {
                let t = self.value(*x);
                let [r, c] = t.shape();
                let mut values = vec![0.0; r * c];
                for i in 0..r {
                    let lse = out.values()[i];
                    for j in 0..c {
                        values[i * c + j] = g.values()[i] * (t.get(i, j) - lse).exp();
                    }
                }
                self.send(grads, *x, Tensor::new([r, c], values));
            }
            Op::CumsumPad(x) => {
                let [r, c] = self.value(*x).shape();
                let mut values = vec![0.0; r * c];
                for i in 0..r {
                    let gr = g.row_slice(i);
                    let mut acc = 0.0;
                    for k in (0..c).rev() {
                        acc += gr[k + 1];
                        values[i * c + k] = acc;
                    }
                }
                self.send(grads, *x, Tensor::new([r, c], values));
            }
            Op::SliceCols(x, start) => {
                let s = self.value(*x).shape();
                let mut t = Tensor::zeros(s);
                let w = g.cols();
                for i in 0..s[0] {
                    for j in 0..w {
                        t.values_mut()[i * s[1] + start + j] = g.get(i, j);
                    }
                }
                self.send(grads, *x, t);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.tracked(*p) {
                        self.send(grads, *p, g.slice_cols(offset, offset + w));
                    }
                    offset += w;
                }
            }
            Op::Gather(src, idx) => {
                let s = self.value(*src).shape();
                let mut t = Tensor::zeros(s);
                for (i, &j) in idx.iter().enumerate() {
                    let r = if s[0] == 1 { 0 } else { i };
                    t.values_mut()[r * s[1] + j] += g.values()[i];
                }
                self.send(grads, *src, t);
            }
            Op::Select(mask, a, b) => {
                let ga = g
                    .values()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                let gb = g
                    .values()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { 0.0 } else { v })
                    .collect();
                self.send(grads, *a, Tensor::new(g.shape(), ga));
                self.send(grads, *b, Tensor::new(g.shape(), gb));
            }
        }
    }
}

/// Expands a row or column reduction gradient back to the input shape.
fn reduce_to_broadcast(g: &Tensor, target: [usize; 2]) -> Tensor {
    let mut t = Tensor::zeros(target);
    for i in 0..target[0] {
        for j in 0..target[1] {
            t.values_mut()[i * target[1] + j] = g.values()[bidx(g.shape(), i, j)];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn log_derivative_at_one() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.0));
        let y = g.log(x);
        assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::column(vec![1.0, 2.0]));
        let y = g.exp(x);
        assert!(matches!(
            g.backward(y),
            Err(AutodiffError::NonScalarLoss([2, 1]))
        ));
    }

    #[test]
    fn nan_is_flagged_with_origin() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-1.0));
        let y = g.log(x);
        let z = g.scale(y, 2.0);
        match g.backward(z) {
            Err(AutodiffError::NonFinite { node, op }) => {
                assert_eq!(node, y.index());
                assert_eq!(op, "log");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = x*y + x, df/dx = y + 1
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.param(Tensor::scalar(5.0));
        let xy = g.mul(x, y);
        let f = g.add(xy, x);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
        assert_eq!(grads.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ]));
        let b = g.param(Tensor::row(vec![0.5, -0.5]));
        let y = g.add(x, b);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().values(), &[3.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(4.0));
        let p = g.param(Tensor::scalar(1.0));
        let y = g.mul(c, p);
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().item(), 4.0);
        assert_eq!(grads.collect(&[c])[0].item(), 0.0);
    }

    #[test]
    fn cumsum_pad_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let c = g.cumsum_pad(x);
        assert_eq!(g.value(c).values(), &[0.0, 1.0, 3.0, 6.0]);
    }

    #[test]
    fn gather_from_shared_row() {
        let mut g = Graph::new();
        let src = g.param(Tensor::row(vec![10.0, 20.0, 30.0]));
        let out = g.gather(src, vec![2, 0, 2]);
        assert_eq!(g.value(out).values(), &[30.0, 10.0, 30.0]);
        let s = g.sum(out);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(src).unwrap().values(), &[1.0, 0.0, 2.0]);
    }
}
