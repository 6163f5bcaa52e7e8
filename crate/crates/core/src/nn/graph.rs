//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation eagerly (values are computed when the
//! node is created) and [`Graph::backward`] walks the record in reverse.
//! Everything is two-dimensional; scalars are `1 x 1` matrices.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddScalar(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softplus(Var),
    Min(Var, Var),
    SumAll(Var),
    RowSum(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Vec<(Var, usize)>),
    SoftmaxRows(Var, f64),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentWeightedSum(Var, Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Gradients of a scalar root with respect to every parameter leaf, keyed by parameter id.
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<usize, Mat>,
    nodes: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn param(&self, id: usize) -> Option<&Mat> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &HashMap<usize, Mat> {
        &self.params
    }

    pub fn into_params(self) -> HashMap<usize, Mat> {
        self.params
    }

    /// Gradient with respect to any node that depends on a parameter.
    pub fn node(&self, v: Var) -> Option<&Mat> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: usize, value: Mat) -> Var {
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `x (r x c) + row (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x c row");
        let v = self.value(x) + self.value(row);
        let rg = self.rg(&[x, row]);
        self.push(v, Op::AddRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x) * k;
        let rg = self.rg(&[x]);
        self.push(v, Op::Scale(x, k), rg)
    }

    /// Multiplies every entry of `x` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(x) * k;
        let rg = self.rg(&[x, s]);
        self.push(v, Op::ScaleBy(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x) + k;
        let rg = self.rg(&[x]);
        self.push(v, Op::AddScalar(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(gelu_scalar);
        let rg = self.rg(&[x]);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        let rg = self.rg(&[x]);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a * a);
        let rg = self.rg(&[x]);
        self.push(v, Op::Square(x), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).mapv(|a| a.clamp(lo, hi));
        let rg = self.rg(&[x]);
        self.push(v, Op::Clamp(x, lo, hi), rg)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0) + (-a.abs()).exp().ln_1p());
        let rg = self.rg(&[x]);
        self.push(v, Op::Softplus(x), rg)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(self.value(b)).for_each(|x, &y| *x = x.min(y));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Min(a, b), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum across columns, giving an `r x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[x]);
        self.push(v, Op::RowSum(x), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(x);
        assert_eq!(src.len(), rows * cols, "reshape must preserve element count");
        let data: Vec<f64> = src.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), data).expect("shape checked");
        let rg = self.rg(&[x]);
        self.push(v, Op::Reshape(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[x]);
        self.push(v, Op::SliceCols(x, start), rg)
    }

    /// Builds a matrix whose row `k` is row `rows[k].1` of node `rows[k].0`.
    pub fn gather_rows(&mut self, rows: &[(Var, usize)]) -> Var {
        assert!(!rows.is_empty(), "gather_rows needs at least one row");
        let cols = self.value(rows[0].0).ncols();
        let mut v = Array2::zeros((rows.len(), cols));
        for (k, (src, r)) in rows.iter().enumerate() {
            v.row_mut(k).assign(&self.value(*src).row(*r));
        }
        let vars: Vec<Var> = rows.iter().map(|(x, _)| *x).collect();
        let rg = self.rg(&vars);
        self.push(v, Op::GatherRows(rows.to_vec()), rg)
    }

    /// Row-wise `softmax(x / temperature)` with max subtraction.
    pub fn softmax_rows(&mut self, x: Var, temperature: f64) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let soft = crate::agent::re_weight_unchecked(row.as_slice().unwrap(), temperature);
            for (dst, src) in row.iter_mut().zip(soft) {
                *dst = src;
            }
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::SoftmaxRows(x, temperature), rg)
    }

    /// Softmax of a column vector within consecutive segments of the given lengths.
    pub fn segment_softmax(&mut self, col: Var, segments: &[usize]) -> Var {
        let x = self.value(col);
        assert_eq!(x.ncols(), 1);
        assert_eq!(segments.iter().sum::<usize>(), x.nrows());
        let mut v = Array2::zeros(x.dim());
        let mut start = 0;
        for &len in segments {
            let vals: Vec<f64> = (start..start + len).map(|r| x[[r, 0]]).collect();
            for (k, w) in crate::agent::re_weight_unchecked(&vals, 1.0).into_iter().enumerate() {
                v[[start + k, 0]] = w;
            }
            start += len;
        }
        let rg = self.rg(&[col]);
        self.push(v, Op::SegmentSoftmax(col, segments.to_vec()), rg)
    }

    /// Per segment, the weighted sum of rows of `rows` with weights from the column `weights`.
    pub fn segment_weighted_sum(&mut self, weights: Var, rows: Var, segments: &[usize]) -> Var {
        let w = self.value(weights);
        let z = self.value(rows);
        assert_eq!(w.nrows(), z.nrows());
        let mut v = Array2::zeros((segments.len(), z.ncols()));
        let mut start = 0;
        for (k, &len) in segments.iter().enumerate() {
            for r in start..start + len {
                v.row_mut(k).scaled_add(w[[r, 0]], &z.row(r));
            }
            start += len;
        }
        let rg = self.rg(&[weights, rows]);
        self.push(v, Op::SegmentWeightedSum(weights, rows, segments.to_vec()), rg)
    }

    /// Back-propagates from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut params: HashMap<usize, Mat> = HashMap::new();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Gradients { params, nodes: grads }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>], params: &mut HashMap<usize, Mat>) {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: Mat| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => match params.get_mut(id) {
                Some(existing) => *existing += g,
                None => {
                    params.insert(*id, g.clone());
                }
            },
            Op::MatMul(a, b) => {
                if needs(a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if needs(b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    acc(*a, g * self.value(*b));
                }
                if needs(b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                if needs(row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(x, k) => acc(*x, g * *k),
            Op::ScaleBy(x, s) => {
                if needs(x) {
                    acc(*x, g * self.scalar(*s));
                }
                if needs(s) {
                    acc(*s, Array2::from_elem((1, 1), (g * self.value(*x)).sum()));
                }
            }
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Gelu(x) => {
                let mut d = self.value(*x).mapv(gelu_grad_scalar);
                d *= g;
                acc(*x, d);
            }
            Op::Exp(x) => acc(*x, g * &node.value),
            Op::Square(x) => acc(*x, g * &(self.value(*x) * 2.0)),
            Op::Clamp(x, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                    if v < *lo || v > *hi {
                        *d = 0.0;
                    }
                });
                acc(*x, d);
            }
            Op::Softplus(x) => {
                let mut d = self.value(*x).mapv(|a| 1.0 / (1.0 + (-a).exp()));
                d *= g;
                acc(*x, d);
            }
            Op::Min(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = g.clone();
                let mut db = g.clone();
                Zip::from(&mut da).and(&mut db).and(av).and(bv).for_each(|da, db, &x, &y| {
                    if x <= y {
                        *db = 0.0;
                    } else {
                        *da = 0.0;
                    }
                });
                acc(*a, da);
                acc(*b, db);
            }
            Op::SumAll(x) => {
                let dim = self.value(*x).dim();
                acc(*x, Array2::from_elem(dim, g[[0, 0]]));
            }
            Op::RowSum(x) => {
                let dim = self.value(*x).dim();
                let mut d = Array2::zeros(dim);
                for (mut row, gv) in d.rows_mut().into_iter().zip(g.column(0)) {
                    row.fill(*gv);
                }
                acc(*x, d);
            }
            Op::Reshape(x) => {
                let dim = self.value(*x).dim();
                let data: Vec<f64> = g.iter().copied().collect();
                acc(*x, Array2::from_shape_vec(dim, data).expect("same element count"));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.value(*p).ncols();
                    if needs(p) {
                        acc(*p, g.slice(s![.., start..start + c]).to_owned());
                    }
                    start += c;
                }
            }
            Op::SliceCols(x, start) => {
                if needs(x) {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    acc(*x, d);
                }
            }
            Op::GatherRows(rows) => {
                let mut per_src: Vec<(Var, Mat)> = Vec::new();
                for (k, (src, r)) in rows.iter().enumerate() {
                    if !needs(src) {
                        continue;
                    }
                    let pos = match per_src.iter().position(|(v, _)| v == src) {
                        Some(p) => p,
                        None => {
                            per_src.push((*src, Array2::zeros(self.value(*src).dim())));
                            per_src.len() - 1
                        }
                    };
                    let mut row = per_src[pos].1.row_mut(*r);
                    row += &g.row(k);
                }
                for (v, d) in per_src {
                    acc(v, d);
                }
            }
            Op::SoftmaxRows(x, t) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                for ((mut drow, yrow), grow) in d.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                    let dot: f64 = yrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                    for ((dv, yv), gv) in drow.iter_mut().zip(yrow.iter()).zip(grow.iter()) {
                        *dv = yv * (gv - dot) / t;
                    }
                }
                acc(*x, d);
            }
            Op::SegmentSoftmax(x, segments) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                let mut start = 0;
                for &len in segments {
                    let dot: f64 = (start..start + len).map(|r| y[[r, 0]] * g[[r, 0]]).sum();
                    for r in start..start + len {
                        d[[r, 0]] = y[[r, 0]] * (g[[r, 0]] - dot);
                    }
                    start += len;
                }
                acc(*x, d);
            }
            Op::SegmentWeightedSum(w, z, segments) => {
                let wv = self.value(*w);
                let zv = self.value(*z);
                let mut dw = Array2::zeros(wv.dim());
                let mut dz = Array2::zeros(zv.dim());
                let mut start = 0;
                for (k, &len) in segments.iter().enumerate() {
                    let gk = g.row(k);
                    for r in start..start + len {
                        dw[[r, 0]] = gk.dot(&zv.row(r));
                        dz.row_mut(r).scaled_add(wv[[r, 0]], &gk);
                    }
                    start += len;
                }
                if needs(w) {
                    acc(*w, dw);
                }
                if needs(z) {
                    acc(*z, dz);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of d(root)/d(param) for a closure that builds the graph.
    fn check(build: impl Fn(&mut Graph, Var) -> Var, x0: Mat) {
        let mut g = Graph::new();
        let p = g.param(0, x0.clone());
        let root = build(&mut g, p);
        let grads = g.backward(root);
        let analytic = grads.param(0).unwrap().clone();
        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |delta: f64| {
                let mut x = x0.clone();
                x[[r, c]] += delta;
                let mut g = Graph::new();
                let p = g.constant(x);
                let root = build(&mut g, p);
                g.scalar(root)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "entry ({r},{c}): analytic {a} vs numeric {numeric}"
            );
        }
    }

    fn probe() -> Mat {
        array![[0.3, -1.2, 0.7], [1.5, 0.1, -0.4]]
    }

    #[test]
    fn matmul_add_row_gelu() {
        let w = array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.6]];
        let b = array![[0.05, -0.02]];
        check(
            |g, x| {
                let w = g.constant(w.clone());
                let b = g.constant(b.clone());
                let h = g.matmul(x, w);
                let h = g.add_row(h, b);
                let h = g.gelu(h);
                let s = g.square(h);
                g.sum(s)
            },
            probe(),
        );
    }

    #[test]
    fn softplus_matches_differences() {
        check(
            |g, x| {
                let y = g.scale(x, 8.0);
                let y = g.softplus(y);
                g.sum(y)
            },
            probe(),
        );
    }

    #[test]
    fn softmax_rows_with_temperature() {
        let weights = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        check(
            |g, x| {
                let y = g.softmax_rows(x, 0.7);
                let w = g.constant(weights.clone());
                let z = g.mul(y, w);
                g.sum(z)
            },
            probe(),
        );
    }

    #[test]
    fn reshape_slice_concat_gather() {
        check(
            |g, x| {
                let r = g.reshape(x, 3, 2);
                let a = g.slice_cols(r, 1, 1);
                let e = g.exp(a);
                let c = g.concat_cols(&[r, e]);
                let rows = g.gather_rows(&[(c, 2), (c, 0), (c, 2)]);
                let sq = g.square(rows);
                let rs = g.row_sum(sq);
                g.mean(rs)
            },
            probe(),
        );
    }

    #[test]
    fn segment_attention() {
        let z = array![[0.1, 0.2], [0.3, -0.1], [0.5, 0.5], [-0.2, 0.4], [0.0, 1.0], [0.7, -0.3]];
        check(
            |g, x| {
                let col = g.reshape(x, 6, 1);
                let a = g.segment_softmax(col, &[2, 4]);
                let zc = g.constant(z.clone());
                let zz = g.mul(zc, zc);
                let zx = g.add(zz, zc);
                let out = g.segment_weighted_sum(a, zx, &[2, 4]);
                let sq = g.square(out);
                g.sum(sq)
            },
            probe(),
        );
        // gradient with respect to the weighted rows too
        check(
            |g, x| {
                let rows = g.reshape(x, 3, 2);
                let w = g.constant(array![[0.2], [0.3], [0.5]]);
                let out = g.segment_weighted_sum(w, rows, &[1, 2]);
                let sq = g.square(out);
                g.sum(sq)
            },
            probe(),
        );
    }

    #[test]
    fn min_clamp_scale_by() {
        let other = array![[0.0, 0.0, 1.0], [2.0, -1.0, 0.0]];
        check(
            |g, x| {
                let o = g.constant(other.clone());
                let m = g.min(x, o);
                let c = g.clamp(m, -1.0, 1.0);
                let s = g.slice_cols(x, 0, 1);
                let s = g.gather_rows(&[(s, 0)]);
                let y = g.scale_by(c, s);
                let y = g.add_scalar(y, 0.5);
                let y = g.sub(y, x);
                let y = g.square(y);
                g.sum(y)
            },
            probe(),
        );
    }

    #[test]
    fn shared_param_accumulates() {
        let mut g = Graph::new();
        let a = g.param(7, array![[2.0]]);
        let b = g.param(7, array![[2.0]]);
        let prod = g.mul(a, b);
        let grads = g.backward(prod);
        assert_eq!(grads.param(7).unwrap()[[0, 0]], 4.0);
    }
}
