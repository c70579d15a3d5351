//! A small reverse-mode automatic differentiation tape over dense matrices.
//!
//! Parameters live in a [`ParamStore`] and are referenced, not copied, by the
//! graph. After [`Graph::backward`] the gradients of every parameter touched
//! by the forward pass are accumulated into a [`ParamGrads`] of the same
//! layout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, m)| TensorRecord::from_mat(n, m))
            .collect()
    }
}

/// Serialized tensor: row-major data with its declared shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn from_mat(name: &str, m: &Mat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            name: name.to_owned(),
            shape: [m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        let [r, c] = self.shape;
        if r * c != self.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` declares {r}x{c} but holds {} values",
                self.name,
                self.data.len()
            )));
        }
        Ok(Mat::from_row_slice(r, c, &self.data))
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Mat>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .values
                .iter()
                .map(|m| Mat::zeros(m.nrows(), m.ncols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            *g *= k;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.grads.iter().map(|g| g.norm_squared()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a (n x m) + b (1 x m)` with `b` broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// `a (n x m) * c (n x 1)` with `c` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    /// Rows of a parameter table.
    Gather(ParamId, Vec<usize>),
    /// Rows of another node; `None` yields a zero row.
    SelectRows(Var, Vec<Option<usize>>),
    SoftmaxRows(Var),
    MeanRows(Var),
}

struct Node {
    op: Op,
    value: Mat,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Mat::zeros(0, 0))
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Op::Const, m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let mut v = self.value(a).clone();
        for mut vr in v.row_iter_mut() {
            vr += r;
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(Op::Mul(a, b), v)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let c = self.value(col);
        debug_assert_eq!(c.ncols(), 1);
        let mut v = self.value(a).clone();
        for j in 0..v.ncols() {
            v.column_mut(j).component_mul_assign(c);
        }
        self.push(Op::MulCol(a, col), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(Op::Scale(a, k), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            v.view_mut((0, off), (rows, m.ncols())).copy_from(m);
            off += m.ncols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        let v = m.columns(start, len).into_owned();
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        let v = m.rows(start, len).into_owned();
        self.push(Op::SliceRows(a, start, len), v)
    }

    pub fn gather(&mut self, table: ParamId, rows: Vec<usize>) -> Var {
        let t = self.params.get(table);
        let mut v = Mat::zeros(rows.len(), t.ncols());
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).copy_from(&t.row(r));
        }
        self.push(Op::Gather(table, rows), v)
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<Option<usize>>) -> Var {
        let m = self.value(a);
        let mut v = Mat::zeros(rows.len(), m.ncols());
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                v.row_mut(i).copy_from(&m.row(*r));
            }
        }
        self.push(Op::SelectRows(a, rows), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.row_iter_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.apply(|x| *x = (*x - max).exp());
            let s = row.sum();
            row /= s;
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = m.row_mean();
        let v = Mat::from_row_slice(1, m.ncols(), v.as_slice());
        self.push(Op::MeanRows(a), v)
    }

    /// Backpropagates from `out` seeded with `seed` (same shape as `out`),
    /// accumulating parameter gradients into `grads`.
    pub fn backward(&self, out: Var, seed: Mat, grads: &mut ParamGrads) {
        let mut adj: Vec<Option<Mat>> = (0..=out.0).map(|_| None).collect();
        adj[out.0] = Some(seed);

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(a) => *a += g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => grads.grads[id.0] += g,
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).tr_mul(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.row_sum();
                    acc(&mut adj, *row, Mat::from_row_slice(1, g.ncols(), gr.as_slice()));
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.component_mul(self.value(*b));
                    let gb = g.component_mul(self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulCol(a, col) => {
                    let c = self.value(*col);
                    let av = self.value(*a);
                    let gc = g.component_mul(av).column_sum();
                    let mut ga = g;
                    for j in 0..ga.ncols() {
                        ga.column_mut(j).component_mul_assign(c);
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *col, Mat::from_column_slice(gc.len(), 1, gc.as_slice()));
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = g.zip_map(y, |g, y| g * y * (1.0 - y));
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = g.zip_map(y, |g, y| g * (1.0 - y * y));
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut adj, p, g.columns(off, w).into_owned());
                        off += w;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.nrows(), src.ncols());
                    ga.columns_mut(*start, *len).copy_from(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::SliceRows(a, start, len) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.nrows(), src.ncols());
                    ga.rows_mut(*start, *len).copy_from(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::Gather(table, rows) => {
                    let gt = &mut grads.grads[table.0];
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(r);
                        dst += g.row(i);
                    }
                }
                Op::SelectRows(a, rows) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.nrows(), src.ncols());
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            let mut dst = ga.row_mut(*r);
                            dst += g.row(i);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.nrows(), y.ncols());
                    for r in 0..y.nrows() {
                        let dot = y.row(r).dot(&g.row(r));
                        for c in 0..y.ncols() {
                            ga[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let mut ga = Mat::zeros(n, g.ncols());
                    for r in 0..n {
                        ga.row_mut(r).copy_from(&(g.row(0) / n as f64));
                    }
                    acc(&mut adj, *a, ga);
                }
            }
        }
    }
}

/// Worst relative error between analytic and central-difference gradients
/// within one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` on up to
/// `per_group` randomly chosen entries of every tensor.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    analytic: &ParamGrads,
    mut loss: F,
    eps: f64,
    per_group: usize,
    seed: u64,
) -> Vec<GroupCheck>
where
    F: FnMut(&ParamStore) -> f64,
{
    use rand::seq::index::sample;
    let mut rng = crate::seed::rng(seed, "finite-difference", 0);
    let mut out = Vec::with_capacity(store.len());
    for id in 0..store.len() {
        let id = ParamId(id);
        let n = store.get(id).len();
        let picks = sample(&mut rng, n, per_group.min(n));
        let mut worst: f64 = 0.0;
        for k in picks.iter() {
            let orig = store.get(id)[k];
            store.get_mut(id)[k] = orig + eps;
            let fp = loss(store);
            store.get_mut(id)[k] = orig - eps;
            let fm = loss(store);
            store.get_mut(id)[k] = orig;
            worst = worst.max(relative_error(analytic.get(id)[k], (fp - fm) / (2.0 * eps)));
        }
        out.push(GroupCheck {
            name: store.name(id).to_owned(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    out
}
