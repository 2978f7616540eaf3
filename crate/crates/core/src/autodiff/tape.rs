//! Reverse-mode tape over dense 2-D `f64` arrays.
//!
//! Every value on the tape is a matrix; vectors are `1 × n` rows and scalars
//! are `1 × 1`. Elementwise binary ops broadcast along any axis of length 1.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use super::params::{ParamId, ParamStore};
use super::EngineError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Array2<f64>),
    Borrowed(&'p Array2<f64>),
}

impl Value<'_> {
    fn view(&self) -> ArrayView2<'_, f64> {
        match self {
            Value::Owned(a) => a.view(),
            Value::Borrowed(a) => a.view(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    MeanCols(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Arc<[usize]>),
    SegmentSum(usize, Arc<[usize]>),
    SegmentMean(usize, Arc<[usize]>, Arc<[f64]>),
    SegmentSoftmax(usize, Arc<[usize]>, usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Log1p(usize),
    Exp(usize),
    Sqrt(usize),
    Gelu(usize),
    L2NormRows(usize),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Parameter values are borrowed from a [`ParamStore`], never copied.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    first_nonfinite: Option<(Var, &'static str)>,
    zero_norm_rows: usize,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    by_node: Vec<Option<Array2<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`, if `v` required one.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every trainable parameter leaf, merged per parameter.
    pub fn into_param_grads(mut self) -> Vec<(ParamId, Array2<f64>)> {
        let mut out: Vec<(ParamId, Array2<f64>)> = Vec::new();
        for (pid, node) in std::mem::take(&mut self.params) {
            let Some(g) = self.by_node[node].take() else { continue };
            match out.iter_mut().find(|(p, _)| *p == pid) {
                Some((_, acc)) => *acc += &g,
                None => out.push((pid, g)),
            }
        }
        out
    }
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * INV_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * INV_SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize), EngineError> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(EngineError::ShapeMismatch { op, lhs: vec![a.0, a.1], rhs: vec![b.0, b.1] }),
    }
}

fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn dims(a: &ArrayView2<'_, f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn segment_counts(seg: &[usize], n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for &s in seg {
        counts[s] += 1.0;
    }
    counts
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), first_nonfinite: None, zero_norm_rows: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First op whose output contained a NaN or infinity, if any.
    pub fn first_nonfinite(&self) -> Option<(Var, &'static str)> {
        self.first_nonfinite
    }

    /// Number of all-zero rows seen by [`Tape::l2_normalize_rows`].
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let a = self.value(v);
        (a.nrows(), a.ncols())
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, name: &'static str) -> Var {
        let needs_grad = match &op {
            Op::Leaf | Op::Param(_) => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::ConcatCols(xs) => xs.iter().any(|&x| self.needs(x)),
            Op::Scale(a, _)
            | Op::Sum(a)
            | Op::MeanCols(a)
            | Op::Transpose(a)
            | Op::GatherRows(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentMean(a, _, _)
            | Op::SegmentSoftmax(a, _, _)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Log1p(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Gelu(a)
            | Op::L2NormRows(a) => self.needs(*a),
        };
        if self.first_nonfinite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_nonfinite = Some((Var(self.nodes.len()), name));
        }
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// An input that receives a gradient (used for inputs under test).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        let v = self.push(value, Op::Leaf, "leaf");
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Borrow a parameter from `store`. It requires a gradient iff the
    /// parameter is currently trainable.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node { value: Value::Borrowed(&p.value), op: Op::Param(id), needs_grad: p.trainable });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(EngineError::ShapeMismatch {
                op: "matmul",
                lhs: vec![av.nrows(), av.ncols()],
                rhs: vec![bv.nrows(), bv.ncols()],
            });
        }
        let out = av.dot(&bv);
        Ok(self.push(out, Op::MatMul(a.0, b.0), "matmul"))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, EngineError> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, dims(&av), dims(&bv))?;
        let ab = av.broadcast(shape).expect("checked broadcast");
        let bb = bv.broadcast(shape).expect("checked broadcast");
        let mut out = Array2::zeros(shape);
        ndarray::Zip::from(&mut out).and(&ab).and(&bb).for_each(|o, &x, &y| *o = f(x, y));
        Ok(self.push(out, op, name))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).mapv(|x| x * c);
        self.push(out, Op::Scale(a.0, c), "scale")
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a.0), "sum")
    }

    /// Row means: `n × d` to `n × 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = av.ncols().max(1) as f64;
        let out = av.sum_axis(Axis(1)).insert_axis(Axis(1)).mapv(|x| x / d);
        self.push(out, Op::MeanCols(a.0), "mean_cols")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a.0), "transpose")
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, EngineError> {
        let views: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ndarray::concatenate(Axis(1), &views).map_err(|_| EngineError::ShapeMismatch {
            op: "concat_cols",
            lhs: views.first().map(|v| vec![v.nrows(), v.ncols()]).unwrap_or_default(),
            rhs: views.iter().map(|v| v.nrows()).collect(),
        })?;
        Ok(self.push(out, Op::ConcatCols(xs.iter().map(|v| v.0).collect()), "concat_cols"))
    }

    /// `out[i] = x[idx[i]]`; with an embedding table as `x` this is an
    /// embedding lookup.
    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var, EngineError> {
        let idx = idx.into();
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.nrows()) {
            return Err(EngineError::IndexOutOfRange { op: "gather_rows", index: bad, len: xv.nrows() });
        }
        let mut out = Array2::zeros((idx.len(), xv.ncols()));
        for (o, &i) in out.rows_mut().into_iter().zip(idx.iter()) {
            let mut o = o;
            o.assign(&xv.row(i));
        }
        Ok(self.push(out, Op::GatherRows(x.0, idx), "gather_rows"))
    }

    fn check_segments(&self, op: &'static str, x: Var, seg: &[usize], n: usize) -> Result<(), EngineError> {
        let rows = self.value(x).nrows();
        if seg.len() != rows {
            return Err(EngineError::ShapeMismatch { op, lhs: vec![rows], rhs: vec![seg.len()] });
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= n) {
            return Err(EngineError::IndexOutOfRange { op, index: bad, len: n });
        }
        Ok(())
    }

    /// Sums rows of `x` into `n` buckets: `out[seg[i]] += x[i]`.
    pub fn segment_sum(&mut self, x: Var, seg: impl Into<Arc<[usize]>>, n: usize) -> Result<Var, EngineError> {
        let seg = seg.into();
        self.check_segments("segment_sum", x, &seg, n)?;
        let xv = self.value(x);
        let mut out = Array2::zeros((n, xv.ncols()));
        for (row, &s) in xv.rows().into_iter().zip(seg.iter()) {
            let mut o = out.row_mut(s);
            o += &row;
        }
        Ok(self.push(out, Op::SegmentSum(x.0, seg), "segment_sum"))
    }

    /// Per-bucket row mean; empty buckets are zero.
    pub fn segment_mean(&mut self, x: Var, seg: impl Into<Arc<[usize]>>, n: usize) -> Result<Var, EngineError> {
        let seg = seg.into();
        self.check_segments("segment_mean", x, &seg, n)?;
        let counts: Arc<[f64]> = segment_counts(&seg, n).into();
        let xv = self.value(x);
        let mut out = Array2::zeros((n, xv.ncols()));
        for (row, &s) in xv.rows().into_iter().zip(seg.iter()) {
            let mut o = out.row_mut(s);
            o.scaled_add(1.0 / counts[s], &row);
        }
        Ok(self.push(out, Op::SegmentMean(x.0, seg, counts), "segment_mean"))
    }

    /// Softmax over the rows belonging to each segment, independently per
    /// column.
    pub fn segment_softmax(&mut self, x: Var, seg: impl Into<Arc<[usize]>>, n: usize) -> Result<Var, EngineError> {
        let seg = seg.into();
        self.check_segments("segment_softmax", x, &seg, n)?;
        let xv = self.value(x);
        let cols = xv.ncols();
        let mut max = Array2::from_elem((n, cols), f64::NEG_INFINITY);
        for (row, &s) in xv.rows().into_iter().zip(seg.iter()) {
            for (m, &x) in max.row_mut(s).iter_mut().zip(row.iter()) {
                *m = m.max(x);
            }
        }
        let mut out = Array2::zeros(xv.raw_dim());
        let mut denom = Array2::<f64>::zeros((n, cols));
        for ((mut o, row), &s) in out.rows_mut().into_iter().zip(xv.rows()).zip(seg.iter()) {
            for j in 0..cols {
                let e = (row[j] - max[[s, j]]).exp();
                o[j] = e;
                denom[[s, j]] += e;
            }
        }
        for (mut o, &s) in out.rows_mut().into_iter().zip(seg.iter()) {
            for j in 0..cols {
                o[j] /= denom[[s, j]];
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(x.0, seg, n), "segment_softmax"))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).to_owned();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        self.push(out, Op::SoftmaxRows(x.0), "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).to_owned();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(out, Op::LogSoftmaxRows(x.0), "log_softmax_rows")
    }

    pub fn log1p(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::ln_1p);
        self.push(out, Op::Log1p(x.0), "log1p")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::exp);
        self.push(out, Op::Exp(x.0), "exp")
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::sqrt);
        self.push(out, Op::Sqrt(x.0), "sqrt")
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu_scalar);
        self.push(out, Op::Gelu(x.0), "gelu")
    }

    /// Scales each row to unit L2 norm. All-zero rows map to zero rows and
    /// bump [`Tape::zero_norm_rows`].
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).to_owned();
        let mut zero = 0;
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            } else {
                zero += 1;
            }
        }
        self.zero_norm_rows += zero;
        self.push(out, Op::L2NormRows(x.0), "l2_normalize_rows")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, EngineError> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(EngineError::NonScalarLoss { shape: vec![lv.nrows(), lv.ncols()] });
        }
        if !lv[[0, 0]].is_finite() {
            return Err(EngineError::NonFiniteLoss(lv[[0, 0]]));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            let send = |j: usize, gj: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                if !self.nodes[j].needs_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(acc) => *acc += &gj,
                    slot @ None => *slot = Some(gj),
                }
            };
            match op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        send(a, g.dot(&self.value(Var(b)).t()), &mut grads);
                    }
                    if self.needs(b) {
                        send(b, self.value(Var(a)).t().dot(&g), &mut grads);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.needs(a) {
                        send(a, reduce_to(g.clone(), self.shape(Var(a))), &mut grads);
                    }
                    if self.needs(b) {
                        send(b, reduce_to(g.mapv(|x| sign * x), self.shape(Var(b))), &mut grads);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(Var(a)), self.value(Var(b)));
                    if self.needs(a) {
                        send(a, reduce_to(&g * &bv, dims(&av)), &mut grads);
                    }
                    if self.needs(b) {
                        send(b, reduce_to(&g * &av, dims(&bv)), &mut grads);
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(Var(a)), self.value(Var(b)));
                    if self.needs(a) {
                        send(a, reduce_to(&g / &bv, dims(&av)), &mut grads);
                    }
                    if self.needs(b) {
                        let y = self.value(Var(i));
                        let gb = -(&g * &y) / bv;
                        send(b, reduce_to(gb, dims(&bv)), &mut grads);
                    }
                }
                Op::Scale(a, c) => send(a, g.mapv(|x| x * c), &mut grads),
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    send(a, Array2::from_elem(self.shape(Var(a)), s), &mut grads);
                }
                Op::MeanCols(a) => {
                    let (r, c) = self.shape(Var(a));
                    let inv = 1.0 / c.max(1) as f64;
                    let ga = Array2::from_shape_fn((r, c), |(row, _)| g[[row, 0]] * inv);
                    send(a, ga, &mut grads);
                }
                Op::Transpose(a) => send(a, g.t().to_owned(), &mut grads),
                Op::ConcatCols(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let c = self.shape(Var(x)).1;
                        if self.needs(x) {
                            send(x, g.slice(ndarray::s![.., off..off + c]).to_owned(), &mut grads);
                        }
                        off += c;
                    }
                }
                Op::GatherRows(x, idx) => {
                    let mut gx = Array2::zeros(self.shape(Var(x)));
                    for (row, &k) in g.rows().into_iter().zip(idx.iter()) {
                        let mut t = gx.row_mut(k);
                        t += &row;
                    }
                    send(x, gx, &mut grads);
                }
                Op::SegmentSum(x, seg) => {
                    let mut gx = Array2::zeros(self.shape(Var(x)));
                    for (mut row, &s) in gx.rows_mut().into_iter().zip(seg.iter()) {
                        row.assign(&g.row(s));
                    }
                    send(x, gx, &mut grads);
                }
                Op::SegmentMean(x, seg, counts) => {
                    let mut gx = Array2::zeros(self.shape(Var(x)));
                    for (mut row, &s) in gx.rows_mut().into_iter().zip(seg.iter()) {
                        row.assign(&g.row(s));
                        row.mapv_inplace(|v| v / counts[s]);
                    }
                    send(x, gx, &mut grads);
                }
                Op::SegmentSoftmax(x, seg, n) => {
                    let y = self.value(Var(i));
                    let cols = y.ncols();
                    let mut dot = Array2::<f64>::zeros((n, cols));
                    for ((yr, gr), &s) in y.rows().into_iter().zip(g.rows()).zip(seg.iter()) {
                        for j in 0..cols {
                            dot[[s, j]] += yr[j] * gr[j];
                        }
                    }
                    let mut gx = Array2::zeros(y.raw_dim());
                    for (((mut o, yr), gr), &s) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()).zip(seg.iter()) {
                        for j in 0..cols {
                            o[j] = yr[j] * (gr[j] - dot[[s, j]]);
                        }
                    }
                    send(x, gx, &mut grads);
                }
                Op::SoftmaxRows(x) => {
                    let y = self.value(Var(i));
                    let mut gx = &g * &y;
                    for (mut row, yr) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let s = row.sum();
                        row.zip_mut_with(&yr, |o, &yv| *o -= yv * s);
                    }
                    send(x, gx, &mut grads);
                }
                Op::LogSoftmaxRows(x) => {
                    let y = self.value(Var(i));
                    let mut gx = g.clone();
                    for ((mut row, yr), gr) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let s = gr.sum();
                        row.zip_mut_with(&yr, |o, &lv| *o -= lv.exp() * s);
                    }
                    send(x, gx, &mut grads);
                }
                Op::Log1p(x) => {
                    let xv = self.value(Var(x));
                    let mut gx = g;
                    gx.zip_mut_with(&xv, |o, &v| *o /= 1.0 + v);
                    send(x, gx, &mut grads);
                }
                Op::Exp(x) => {
                    let y = self.value(Var(i));
                    send(x, &g * &y, &mut grads);
                }
                Op::Sqrt(x) => {
                    let y = self.value(Var(i));
                    let mut gx = g;
                    gx.zip_mut_with(&y, |o, &v| *o /= 2.0 * v);
                    send(x, gx, &mut grads);
                }
                Op::Gelu(x) => {
                    let xv = self.value(Var(x));
                    let mut gx = g;
                    gx.zip_mut_with(&xv, |o, &v| *o *= gelu_grad_scalar(v));
                    send(x, gx, &mut grads);
                }
                Op::L2NormRows(x) => {
                    let xv = self.value(Var(x));
                    let y = self.value(Var(i));
                    let mut gx = Array2::zeros(xv.raw_dim());
                    for (((mut o, xr), yr), gr) in gx.rows_mut().into_iter().zip(xv.rows()).zip(y.rows()).zip(g.rows()) {
                        let n = xr.dot(&xr).sqrt();
                        if n > 0.0 {
                            let gy = gr.dot(&yr);
                            for j in 0..o.len() {
                                o[j] = (gr[j] - yr[j] * gy) / n;
                            }
                        }
                    }
                    send(x, gx, &mut grads);
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| match node.op {
                Op::Param(pid) if node.needs_grad => Some((pid, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { by_node: grads, params })
    }
}
