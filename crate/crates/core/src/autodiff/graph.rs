//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Every value is a 2-D
//! matrix; vectors are `1 × n` rows. Parameters enter the graph through
//! [`Graph::param`] and their gradients are collected after
//! [`Graph::backward`] with [`Gradients::param_grads`].

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, ParamStore};

pub type Matrix = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows { input: Var, inv_std: Vec<f64> },
    MeanAll(Var),
    SumAll(Var),
    MeanRows(Var),
    IndexRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::AddRow(a, b) | Op::MulRow(a, b) => self.needs(*a) || self.needs(*b),
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::MeanAll(a)
            | Op::SumAll(a)
            | Op::MeanRows(a)
            | Op::IndexRows(a, _)
            | Op::SliceCols(a, _, _) => self.needs(*a),
            Op::LayerNormRows { input, .. } => self.needs(*input),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(|v| self.needs(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let m = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(m)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + row` with `row` (`1 × c`) broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: shape mismatch");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// `a ⊙ row` with `row` (`1 × c`) broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row: shape mismatch");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).0, "matmul: inner dimension mismatch");
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * is);
            inv_std.push(is);
        }
        self.push(v, Op::LayerNormRows { input: a, inv_std })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Array2::from_elem((1, 1), m.sum() / m.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Column-wise mean over rows: `r × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows on empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Gathers rows by index; indices may repeat or be omitted.
    pub fn index_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &indices);
        self.push(v, Op::IndexRows(a, indices))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |v: Var, d: Matrix| {
                if !self.needs(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(_) => {
                    // keep the gradient on the leaf
                    acc(Var(idx), g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, &g * self.value(*r));
                    acc(*r, dr);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::Relu(a) => {
                    let mut d = g;
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d *= 1.0 - y * y);
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d *= y * (1.0 - y));
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, g * &node.value),
                Op::Abs(a) => {
                    let mut d = g;
                    d.zip_mut_with(self.value(*a), |d, &x| *d *= signum0(x));
                    acc(*a, d);
                }
                Op::Square(a) => {
                    let mut d = g;
                    d.zip_mut_with(self.value(*a), |d, &x| *d *= 2.0 * x);
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                    }
                    acc(*a, d);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let total = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv.exp() * total);
                    }
                    acc(*a, d);
                }
                Op::LayerNormRows { input, inv_std } => {
                    let y = &node.value;
                    let mut d = g;
                    for ((mut drow, yrow), &is) in
                        d.rows_mut().into_iter().zip(y.rows()).zip(inv_std.iter())
                    {
                        let n = drow.len() as f64;
                        let mean_d = drow.sum() / n;
                        let mean_dy = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv = is * (*dv - mean_d - yv * mean_dy));
                    }
                    acc(*input, d);
                }
                Op::MeanAll(a) => {
                    let shape = self.shape(*a);
                    let k = g[[0, 0]] / (shape.0 * shape.1) as f64;
                    acc(*a, Array2::from_elem(shape, k));
                }
                Op::SumAll(a) => {
                    let shape = self.shape(*a);
                    acc(*a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let row = g.row(0).to_owned() / r as f64;
                    let d = row.broadcast((r, c)).expect("broadcast").to_owned();
                    acc(*a, d);
                }
                Op::IndexRows(a, indices) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (out_row, &src) in indices.iter().enumerate() {
                        let mut target = d.row_mut(src);
                        target += &g.row(out_row);
                    }
                    acc(*a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        acc(*p, g.slice(s![offset..offset + rows, ..]).to_owned());
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.shape(*p).1;
                        acc(*p, g.slice(s![.., offset..offset + cols]).to_owned());
                        offset += cols;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(*a, d);
                }
            }
        }

        Gradients { grads }
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut v = x.clone();
    for mut row in v.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    v
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient per parameter leaf. A parameter used several times in one graph
    /// appears several times; callers sum them.
    pub fn param_grads<'a>(&'a self, graph: &'a Graph) -> impl Iterator<Item = (ParamId, &'a Matrix)> + 'a {
        graph.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param(id) => self.grads[i].as_ref().map(|g| (id, g)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-6;
        let mut out = Array2::zeros(x.dim());
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                out[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
            }
        }
        out
    }

    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Matrix) {
        let mut store = ParamStore::new();
        let id = store.add("x", x.clone());
        let mut g = Graph::new();
        let xv = g.param(&store, id);
        let out = build(&mut g, xv);
        let grads = g.backward(out);
        let analytic = grads.get(xv).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        let numeric = numeric_grad(
            |m| {
                let mut s = ParamStore::new();
                let id = s.add("x", m.clone());
                let mut g = Graph::new();
                let xv = g.param(&s, id);
                let out = build(&mut g, xv);
                g.scalar(out)
            },
            &x,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    fn sample() -> Matrix {
        array![[0.3, -1.2, 0.7], [1.5, 0.2, -0.4]]
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        check(|g, x| { let y = g.tanh(x); g.sum_all(y) }, sample());
        check(|g, x| { let y = g.sigmoid(x); g.sum_all(y) }, sample());
        check(|g, x| { let y = g.exp(x); g.mean_all(y) }, sample());
        check(|g, x| { let y = g.square(x); g.sum_all(y) }, sample());
        check(|g, x| { let y = g.abs(x); g.sum_all(y) }, sample());
        check(|g, x| { let y = g.relu(x); let z = g.mul(y, x); g.sum_all(z) }, sample());
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let w = array![[0.5, -0.3], [0.1, 0.9], [-0.7, 0.2]];
        check(
            |g, x| {
                let wv = g.constant(w.clone());
                let y = g.matmul(x, wv);
                let t = g.transpose(y);
                let sq = g.square(t);
                g.sum_all(sq)
            },
            sample(),
        );
        check(
            |g, x| {
                let y = g.index_rows(x, vec![1, 0, 1, 1]);
                let c = g.concat_rows(&[y, x]);
                let s = g.slice_cols(c, 1, 3);
                let sq = g.square(s);
                let a = g.mean_all(sq);
                let x2 = g.scale(x, 0.5);
                let cc = g.concat_cols(&[x, x2]);
                let cc2 = g.square(cc);
                let b = g.sum_all(cc2);
                g.add(a, b)
            },
            sample(),
        );
        check(
            |g, x| {
                let m = g.mean_rows(x);
                let r = g.add_row(x, m);
                let p = g.mul_row(r, m);
                let sq = g.square(p);
                g.sum_all(sq)
            },
            sample(),
        );
    }

    #[test]
    fn normalizing_ops_match_finite_differences() {
        let w = array![[0.2, -1.0, 0.4], [0.3, 0.8, -0.6]];
        check(
            |g, x| {
                let y = g.softmax_rows(x);
                let wv = g.constant(w.clone());
                let z = g.mul(y, wv);
                g.sum_all(z)
            },
            sample(),
        );
        check(
            |g, x| {
                let y = g.log_softmax_rows(x);
                let wv = g.constant(w.clone());
                let z = g.mul(y, wv);
                g.sum_all(z)
            },
            sample(),
        );
        check(
            |g, x| {
                let y = g.layer_norm_rows(x, 1e-5);
                let wv = g.constant(w.clone());
                let z = g.mul(y, wv);
                g.sum_all(z)
            },
            sample(),
        );
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let p = softmax_rows(&array![[1000.0, 1000.0], [-5.0, 3.0]]);
        assert_eq!(p[[0, 0]], 0.5);
        assert!((p.row(1).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn repeated_param_use_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[2.0]]);
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        let y = g.mul(a, b);
        let grads = g.backward(y);
        let total: f64 = grads.param_grads(&g).map(|(_, m)| m[[0, 0]]).sum();
        assert_eq!(total, 4.0);
    }
}
