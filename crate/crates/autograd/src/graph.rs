//! Tape of matrix operations recorded during a forward pass.
//!
//! Every value is a 2-d `f64` matrix; scalars are `1×1`. A fresh [`Graph`] is
//! built for each optimisation step, the loss node is handed to
//! [`Graph::backward`], and the resulting [`Grads`] are indexed by parameter.

use std::rc::Rc;

use ndarray::{s, Array1, Array2, Axis};

use crate::params::{Grads, ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse matrix in coordinate form, used for graph propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Self { rows, cols, entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// `self · dense`
    pub fn matmul(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, dense.nrows(), "sparse matmul shape mismatch");
        let mut out = Array2::zeros((self.rows, dense.ncols()));
        for &(r, c, w) in &self.entries {
            let src = dense.row(c);
            let mut dst = out.row_mut(r);
            dst.scaled_add(w, &src);
        }
        out
    }

    /// `selfᵀ · dense`
    pub fn t_matmul(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, dense.nrows(), "sparse matmul shape mismatch");
        let mut out = Array2::zeros((self.cols, dense.ncols()));
        for &(r, c, w) in &self.entries {
            let src = dense.row(r);
            let mut dst = out.row_mut(c);
            dst.scaled_add(w, &src);
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for &(r, c, w) in &self.entries {
            out[[r, c]] += w;
        }
        out
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    ParamRows { id: ParamId, rows: Vec<Option<usize>> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Rc<Array2<f64>>),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    SpMM(Rc<SparseMatrix>, Var),
    ClampMin(Var, f64),
    Pick(Var, Vec<(usize, usize)>),
    BceWithLogits(Var, Rc<Array2<f64>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Recorded computation. Not `Send`; build one per step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant with no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Gathers rows of a parameter table. `None` rows are filled from
    /// `fallback` and receive no gradient.
    pub fn param_rows(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        rows: &[Option<usize>],
        mut fallback: impl FnMut(usize) -> Array1<f64>,
    ) -> Var {
        let table = store.get(id);
        let width = table.ncols();
        let mut value = Array2::zeros((rows.len(), width));
        for (i, r) in rows.iter().enumerate() {
            match r {
                Some(r) => value.row_mut(i).assign(&table.row(*r)),
                None => {
                    let fb = fallback(i);
                    assert_eq!(fb.len(), width, "fallback row width mismatch");
                    value.row_mut(i).assign(&fb);
                }
            }
        }
        self.push(value, Op::ParamRows { id, rows: rows.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a[m,n] + row[1,n]`, broadcasting the row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row width mismatch");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        assert_eq!(self.shape(a), c.dim(), "mul_const shape mismatch");
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, Rc::new(c)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Row-wise layer normalisation with affine `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std[i] = is;
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows width mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols height mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Column means as a single row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.nrows() > 0, "mean_rows of empty matrix");
        let v = av.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Array2::from_elem((1, 1), av.sum() / av.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    pub fn spmm(&mut self, adj: Rc<SparseMatrix>, x: Var) -> Var {
        let v = adj.matmul(self.value(x));
        self.push(v, Op::SpMM(adj, x))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(floor));
        self.push(v, Op::ClampMin(a, floor))
    }

    /// Gathers individual elements into a `k×1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let av = self.value(a);
        let v = Array2::from_shape_fn((at.len(), 1), |(i, _)| av[at[i]]);
        self.push(v, Op::Pick(a, at.to_vec()))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Array2<f64>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), targets.dim(), "bce target shape mismatch");
        let total: f64 = z
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let v = Array2::from_elem((1, 1), total / z.len() as f64);
        self.push(v, Op::BceWithLogits(logits, Rc::new(targets)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads::zeros(store.len());

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::ParamRows { id, rows } => {
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            out.accumulate_row(*id, store.get(*id).dim(), *r, g.row(i));
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c.as_ref()),
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *gv *= d;
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gv, &y| *gv *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = y * &(&g - &dot);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let p = node.value.mapv(f64::exp);
                    let sum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g - &(&p * &sum);
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gamma_v = self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let dxhat = &g * gamma_v;
                    let mut gx = Array2::zeros(xhat.dim());
                    for i in 0..xhat.nrows() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = (&dh * &xh).sum();
                        let mut row = gx.row_mut(i);
                        for j in 0..xhat.ncols() {
                            row[j] = inv_std[i] / n * (n * dh[j] - sum_dh - xh[j] * sum_dh_xh);
                        }
                    }
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + cols]).to_owned());
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let row = g.row(0).mapv(|v| v / rows as f64);
                    let ga = Array2::from_shape_fn((rows, cols), |(_, j)| row[j]);
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::MeanAll(a) => {
                    let av = self.value(*a);
                    let ga = Array2::from_elem(av.dim(), g[[0, 0]] / av.len() as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::SpMM(adj, x) => acc(&mut grads, *x, adj.t_matmul(&g)),
                Op::ClampMin(a, floor) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x <= *floor {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Pick(a, at) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (i, pos) in at.iter().enumerate() {
                        ga[*pos] += g[[i, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = g[[0, 0]] / z.len() as f64;
                    let mut ga = z.mapv(sigmoid);
                    ga.zip_mut_with(targets.as_ref(), |p, &t| *p = (*p - t) * scale);
                    acc(&mut grads, *logits, ga);
                }
            }
        }
        out
    }
}
