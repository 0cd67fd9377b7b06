//! A small reverse-mode automatic differentiation tape over [`Mat`] values.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only; parameters are leaves that
//! resolve to the store without copying. [`Graph::backward`] returns the
//! gradient of a seeded output with respect to every node and parameter.

use std::collections::BTreeMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, order_free_sum, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    ParamRows(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulOrderFree(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Softplus(Var),
    Gelu(Var),
    SmoothAbs(Var, f64),
    Ln(Var),
    MaskedSoftmax(Var, Vec<bool>),
    MaskedLogSoftmax(Var, Vec<bool>),
    LayerNorm(Var, f64),
    NormalizeRows(Var),
    SumAll(Var),
    SumSquares(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Pick(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Option<Mat>,
    op: Op,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    pub params: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(&id)
    }
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn softmax_row(x: &[f64], mask: &[bool], order_free: bool, out: &mut [f64]) {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(f64::NEG_INFINITY, |a, (&v, _)| a.max(v));
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    for ((o, &v), &m) in out.iter_mut().zip(x).zip(mask) {
        *o = if m { (v - max).exp() } else { 0.0 };
    }
    let denom = if order_free {
        let mut terms: Vec<f64> = out.iter().zip(mask).filter(|(_, &m)| m).map(|(&o, _)| o).collect();
        order_free_sum(&mut terms)
    } else {
        out.iter().sum()
    };
    out.iter_mut().for_each(|o| *o /= denom);
}

fn layer_norm_rows(x: &Mat, eps: f64) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    let n = x.cols as f64;
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for (o, v) in out.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
    }
    out
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::with_capacity(256), param_vars: BTreeMap::new() }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(m)) => m,
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is recorded but which is not a parameter.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self.store.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    /// Gathers rows of a parameter matrix (embedding lookup).
    pub fn param_rows(&mut self, id: ParamId, rows: &[usize]) -> Var {
        let value = self.store.value(id).select_rows(rows);
        self.push(value, Op::ParamRows(id, rows.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Matrix product whose inner reductions are independent of the order of
    /// the shared dimension.
    pub fn matmul_order_free(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows);
        let mut out = Mat::zeros(av.rows, bv.cols);
        let mut terms = vec![0.0; av.cols];
        for i in 0..av.rows {
            for j in 0..bv.cols {
                for (p, t) in terms.iter_mut().enumerate() {
                    *t = av.get(i, p) * bv.get(p, j);
                }
                out.set(i, j, order_free_sum(&mut terms));
            }
        }
        self.push(out, Op::MatMulOrderFree(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `a[m×n] + r[1×n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!((1, av.cols), rv.shape(), "add_row shape");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r))
    }

    /// `a[m×n] ⊙ r[1×n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!((1, av.cols), rv.shape(), "mul_row shape");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv.data) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, r))
    }

    /// `a[m×n] ⊙ c[m×1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        assert_eq!((av.rows, 1), cv.shape(), "mul_col shape");
        let mut out = av.clone();
        for i in 0..out.rows {
            let s = cv.data[i];
            out.row_mut(i).iter_mut().for_each(|o| *o *= s);
        }
        self.push(out, Op::MulCol(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// `sqrt(x² + eps) − sqrt(eps)`: non-negative, zero at zero, smooth.
    pub fn smooth_abs(&mut self, a: Var, eps: f64) -> Var {
        let se = eps.sqrt();
        let v = self.value(a).map(|x| (x * x + eps).sqrt() - se);
        self.push(v, Op::SmoothAbs(a, eps))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    /// Row-wise softmax restricted to columns where `col_mask` is true.
    /// Masked columns get exactly zero weight; rows with no valid column are
    /// all zero.
    pub fn masked_softmax(&mut self, a: Var, col_mask: &[bool]) -> Var {
        self.masked_softmax_impl(a, col_mask, false)
    }

    /// As [`Graph::masked_softmax`] with an order-independent normaliser.
    pub fn masked_softmax_order_free(&mut self, a: Var, col_mask: &[bool]) -> Var {
        self.masked_softmax_impl(a, col_mask, true)
    }

    fn masked_softmax_impl(&mut self, a: Var, col_mask: &[bool], order_free: bool) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols, col_mask.len(), "softmax mask length");
        let mut out = Mat::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            softmax_row(av.row(r), col_mask, order_free, out.row_mut(r));
        }
        self.push(out, Op::MaskedSoftmax(a, col_mask.to_vec()))
    }

    /// Row-wise log-softmax over valid columns; masked columns hold `-inf`.
    pub fn masked_log_softmax(&mut self, a: Var, col_mask: &[bool]) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols, col_mask.len());
        let mut out = Mat::filled(av.rows, av.cols, f64::NEG_INFINITY);
        for r in 0..av.rows {
            let row = av.row(r);
            let max = row.iter().zip(col_mask).filter(|(_, &m)| m).fold(f64::NEG_INFINITY, |a, (&v, _)| a.max(v));
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut terms: Vec<f64> =
                row.iter().zip(col_mask).filter(|(_, &m)| m).map(|(&v, _)| (v - max).exp()).collect();
            let lse = max + order_free_sum(&mut terms).ln();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                if col_mask[c] {
                    *o = row[c] - lse;
                }
            }
        }
        self.push(out, Op::MaskedLogSoftmax(a, col_mask.to_vec()))
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let v = layer_norm_rows(self.value(a), eps);
        self.push(v, Op::LayerNorm(a, eps))
    }

    /// Rows scaled to unit L2 norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows {
            let n = dot(av.row(r), av.row(r)).sqrt();
            if n > 0.0 {
                out.row_mut(r).iter_mut().for_each(|x| *x /= n);
            }
        }
        self.push(out, Op::NormalizeRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).sum_squares());
        self.push(v, Op::SumSquares(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols);
        let mut out = Mat::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select_rows(idx);
        self.push(v, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = Mat::scalar(self.value(a).get(r, c));
        self.push(v, Op::Pick(a, r, c))
    }

    /// Affine map `x·W + b` with parameters looked up by name.
    pub fn linear(&mut self, x: Var, weight: &str, bias: Option<&str>) -> Var {
        let w = self.param_named(weight);
        let y = self.matmul(x, w);
        match bias {
            Some(b) => {
                let b = self.param_named(b);
                self.add_row(y, b)
            }
            None => y,
        }
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape as the
    /// output value).
    pub fn backward_with(&self, output: Var, seed: Mat) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut params: BTreeMap<ParamId, Mat> = BTreeMap::new();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Param(id) => accumulate_param(&mut params, *id, self.store.value(*id), g.clone()),
                Op::ParamRows(id, rows) => {
                    let full = self.store.value(*id);
                    let entry = params.entry(*id).or_insert_with(|| Mat::zeros(full.rows, full.cols));
                    for (gr, &r) in rows.iter().enumerate() {
                        for (e, v) in entry.row_mut(r).iter_mut().zip(g.row(gr)) {
                            *e += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_t(bv));
                    acc(&mut grads, *b, av.t_matmul(&g));
                }
                Op::MatMulOrderFree(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_t(bv));
                    acc(&mut grads, *b, av.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(bv));
                    acc(&mut grads, *b, g.t_matmul(av));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.zip_map(bv, |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(av, |x, y| x * y));
                }
                Op::AddRow(a, r) => {
                    let mut gr = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let (av, rv) = (self.value(*a), self.value(*r));
                    let mut gr = Mat::zeros(1, g.cols);
                    let mut ga = g.clone();
                    for i in 0..g.rows {
                        for c in 0..g.cols {
                            gr.data[c] += g.get(i, c) * av.get(i, c);
                            ga.data[i * g.cols + c] *= rv.data[c];
                        }
                    }
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (self.value(*a), self.value(*c));
                    let mut gc = Mat::zeros(g.rows, 1);
                    let mut ga = g.clone();
                    for i in 0..g.rows {
                        gc.data[i] = dot(g.row(i), av.row(i));
                        let s = cv.data[i];
                        ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(&mut grads, *c, gc);
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s)));
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gv, xv| gv * sigmoid(xv)));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gv, xv| gv * gelu_grad(xv)));
                }
                Op::SmoothAbs(a, eps) => {
                    let x = self.value(*a);
                    let eps = *eps;
                    acc(&mut grads, *a, g.zip_map(x, |gv, xv| gv * xv / (xv * xv + eps).sqrt()));
                }
                Op::Ln(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gv, xv| gv / xv));
                }
                Op::MaskedSoftmax(a, mask) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = yr.iter().zip(gr).zip(mask).filter(|(_, &m)| m).map(|((y, g), _)| y * g).sum();
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            if mask[c] {
                                *o = yr[c] * (gr[c] - s);
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaskedLogSoftmax(a, mask) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = gr.iter().zip(mask).filter(|(_, &m)| m).map(|(g, _)| g).sum();
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            if mask[c] {
                                *o = gr[c] - yr[c].exp() * s;
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, eps) => {
                    let x = self.value(*a);
                    let n = x.cols as f64;
                    let mut ga = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let row = x.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gr = g.row(r);
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gx_mean = dot(gr, &xhat) / n;
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = inv * (gr[c] - g_mean - xhat[c] * gx_mean);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().unwrap();
                    let mut ga = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let n = dot(x.row(r), x.row(r)).sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let yg = dot(y.row(r), g.row(r));
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = (g.get(r, c) - y.get(r, c) * yg) / n;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Mat::filled(r, c, g.item()));
                }
                Op::SumSquares(a) => {
                    let gv = g.item();
                    acc(&mut grads, *a, self.value(*a).scale(2.0 * gv));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let mut gp = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        let gp = Mat::from_vec(rows, cols, g.data[off * cols..(off + rows) * cols].to_vec());
                        off += rows;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::SelectRows(a, idx) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Mat::zeros(rows, cols);
                    for (gr, &r) in idx.iter().enumerate() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(gr)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Pick(a, r, c) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Mat::zeros(rows, cols);
                    ga.set(*r, *c, g.item());
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Gradients { nodes: grads, params }
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        self.backward_with(output, Mat::scalar(1.0))
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_param(params: &mut BTreeMap<ParamId, Mat>, id: ParamId, value: &Mat, g: Mat) {
    debug_assert_eq!(value.shape(), g.shape());
    match params.get_mut(&id) {
        Some(existing) => existing.add_assign(&g),
        None => {
            params.insert(id, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    /// Central differences of a scalar function of one input matrix.
    fn numeric_grad(x: &Mat, f: &dyn Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut g = Mat::zeros(x.rows, x.cols);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            g.data[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(x: Mat, build: &dyn Fn(&mut Graph, Var) -> Var) {
        let store = ParamStore::default();
        let f = |xv: &Mat| {
            let mut g = Graph::new(&store);
            let xi = g.input(xv.clone());
            let y = build(&mut g, xi);
            g.value(y).item()
        };
        let mut g = Graph::new(&store);
        let xi = g.input(x.clone());
        let y = build(&mut g, xi);
        let grads = g.backward(y);
        let analytic = grads.wrt(xi).cloned().unwrap_or_else(|| Mat::zeros(x.rows, x.cols));
        let numeric = numeric_grad(&x, &f);
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn elementwise_ops() {
        check(sample(3, 4, 1), &|g, x| {
            let a = g.sigmoid(x);
            let b = g.gelu(x);
            let c = g.mul(a, b);
            let d = g.softplus(c);
            let e = g.smooth_abs(d, 1e-3);
            let f = g.scale(e, 1.7);
            let h = g.add_scalar(f, 0.3);
            g.sum_squares(h)
        });
    }

    #[test]
    fn matrix_ops() {
        let w = sample(4, 2, 9);
        check(sample(3, 4, 2), &|g, x| {
            let wv = g.input(w.clone());
            let y = g.matmul(x, wv);
            let t = g.transpose(y);
            let z = g.matmul_t(t, t);
            let o = g.matmul_order_free(x, wv);
            let s1 = g.sum_squares(z);
            let s2 = g.sum_squares(o);
            g.add(s1, s2)
        });
    }

    #[test]
    fn softmax_layernorm_normalize() {
        let mask = vec![true, false, true, true];
        check(sample(3, 4, 3), &|g, x| {
            let s = g.masked_softmax(x, &mask);
            let l = g.layer_norm(x, 1e-5);
            let n = g.normalize_rows(x);
            let m = g.mul(s, l);
            let p = g.add(m, n);
            let ls = g.masked_log_softmax(x, &mask);
            let q = g.pick(ls, 1, 2);
            let r = g.sum_squares(p);
            g.add(q, r)
        });
    }

    #[test]
    fn structural_ops() {
        check(sample(4, 3, 4), &|g, x| {
            let a = g.slice_cols(x, 1, 2);
            let b = g.select_rows(x, &[0, 2, 2]);
            let bc = g.slice_cols(b, 0, 2);
            let c = g.concat_rows(&[a, bc]);
            let d = g.concat_cols(&[c, c]);
            let r = g.slice_cols(d, 0, 4);
            let rr = g.select_rows(r, &[1]);
            let e = g.mul_row(d, rr);
            let col = g.slice_cols(x, 0, 1);
            let col7 = g.concat_rows(&[col, col]);
            let col7 = g.select_rows(col7, &[0, 1, 2, 3, 4, 5, 6]);
            let f = g.mul_col(e, col7);
            let h = g.add_row(f, rr);
            g.sum_squares(h)
        });
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let x = g.input(Mat::from_rows(&[vec![1.0, 2.0]]));
        let s = g.masked_softmax(x, &[false, false]);
        assert_eq!(g.value(s).data, vec![0.0, 0.0]);
    }
}
