//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`], which remembers their flat offset inside
//! [`ModelParams`](super::ModelParams) so that [`Tape::backward`] can return a
//! gradient vector aligned with the flat parameter buffer.

use std::f64::consts::PI;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Mat { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Mat::from_vec(1, 1, vec![v])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`
fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`
fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(arow, b.row(j));
        }
    }
    out
}

/// `aᵀ · b`
fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
    let mut out = Mat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let brow = b.row(k);
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { offset: usize },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Normalize { x: Var, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, rows: Vec<usize> },
    MeanRows { x: Var, start: usize, end: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Mat },
    Cosine { a: Var, b: Var },
    Softplus(Var),
    Dropout { x: Var, keep: Vec<f64> },
    Sum(Vec<Var>),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!((m.rows, m.cols), (1, 1), "not a scalar");
        m.data[0]
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    /// Trainable leaf whose gradient lands at `offset..offset + rows*cols`.
    pub fn param(&mut self, m: Mat, offset: usize) -> Var {
        self.push(m, Op::Param { offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    /// Broadcast-add a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, r.cols);
        let r = r.data.clone();
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Broadcast-multiply every row of `a` by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, r.cols);
        let r = r.data.clone();
        for i in 0..v.rows {
            for (x, g) in v.row_mut(i).iter_mut().zip(&r) {
                *x *= g;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = gelu(*x));
        self.push(v, Op::Gelu(a))
    }

    /// Per-row standardization (zero mean, unit variance), no affine part.
    pub fn normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        let n = x.cols as f64;
        for i in 0..x.rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, y) in v.row_mut(i).iter_mut().zip(row) {
                *o = (y - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(v, Op::Normalize { x: a, inv_std })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let p = softmax(x.row(i));
            v.row_mut(i).copy_from_slice(&p);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.cols);
        let w = end - start;
        let mut v = Mat::zeros(x.rows, w);
        for i in 0..x.rows {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..end]);
        }
        self.push(v, Op::SliceCols { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.data[i * cols + c0..i * cols + c0 + x.cols].copy_from_slice(x.row(i));
            }
            c0 += x.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Select rows by index (embedding lookup, masked-position gather).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(rows.len(), x.cols);
        for (o, &r) in rows.iter().enumerate() {
            v.row_mut(o).copy_from_slice(x.row(r));
        }
        self.push(
            v,
            Op::GatherRows {
                x: a,
                rows: rows.to_vec(),
            },
        )
    }

    /// Mean of rows `start..end` as a `1 × cols` matrix.
    pub fn mean_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.rows, "mean_rows range out of bounds");
        let mut v = Mat::zeros(1, x.cols);
        for i in start..end {
            for (o, y) in v.data.iter_mut().zip(x.row(i)) {
                *o += y;
            }
        }
        let inv = 1.0 / (end - start) as f64;
        v.data.iter_mut().for_each(|o| *o *= inv);
        self.push(v, Op::MeanRows { x: a, start, end })
    }

    /// Summed negative log-likelihood `Σ_i −log softmax(logits_i)[target_i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "one target per row");
        let mut probs = Mat::zeros(x.rows, x.cols);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let lse = log_sum_exp(row);
            total += lse - row[t];
            for (p, y) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (y - lse).exp();
            }
        }
        self.push(
            Mat::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Cosine similarity of two `1 × n` rows. Both norms must be nonzero.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.data.len(), y.data.len());
        let na = dot(&x.data, &x.data).sqrt();
        let nb = dot(&y.data, &y.data).sqrt();
        let c = dot(&x.data, &y.data) / (na * nb);
        self.push(Mat::scalar(c), Op::Cosine { a, b })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = softplus(*x));
        self.push(v, Op::Softplus(a))
    }

    /// Inverted dropout with a precomputed keep mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, a: Var, keep: Vec<f64>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.data.len(), keep.len());
        for (x, k) in v.data.iter_mut().zip(&keep) {
            *x *= k;
        }
        self.push(v, Op::Dropout { x: a, keep })
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut v = self.value(parts[0]).clone();
        for p in &parts[1..] {
            v.add_assign(self.value(*p));
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    /// Back-propagate from the scalar `root`; returns a gradient buffer of
    /// length `n_params` indexed like the flat parameter vector.
    pub fn backward(&self, root: Var, n_params: usize) -> Vec<f64> {
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        let r = self.value(root);
        assert_eq!((r.rows, r.cols), (1, 1), "backward root must be scalar");
        grads[root.0] = Some(Mat::scalar(1.0));
        let mut out = vec![0.0; n_params];

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (o, x) in out[*offset..*offset + g.data.len()].iter_mut().zip(&g.data) {
                        *o += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, matmul_nt(&g, bv));
                    acc(&mut grads, *b, matmul_tn(av, &g));
                }
                Op::MatMulNT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, matmul(&g, bv));
                    acc(&mut grads, *b, matmul_tn(&g, av));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.data.iter_mut().for_each(|x| *x = -*x);
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, neg);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let mut ga = g.clone();
                    let mut gr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        let arow = av.row(r);
                        for c in 0..g.cols {
                            gr.data[c] += grow[c] * arow[c];
                            ga.data[r * g.cols + c] = grow[c] * rv.data[c];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, c) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= c);
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let mut ga = g;
                    for (x, y) in ga.data.iter_mut().zip(&av.data) {
                        *x *= gelu_grad(*y);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Normalize { x, inv_std } => {
                    // dx = inv_std * (g - mean(g) - y * mean(g * y))
                    let y = &node.value;
                    let n = y.cols as f64;
                    let mut gx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let grow = g.row(r);
                        let yrow = y.row(r);
                        let mg = grow.iter().sum::<f64>() / n;
                        let mgy = dot(grow, yrow) / n;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (grow[c] - mg - yrow[c] * mgy);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yrow = y.row(r);
                        let grow = g.row(r);
                        let s = dot(grow, yrow);
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = yrow[c] * (grow[c] - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        gx.data[r * xv.cols + start..r * xv.cols + start + g.cols]
                            .copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        let mut gp = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        acc(&mut grads, *p, gp);
                        c0 += w;
                    }
                }
                Op::GatherRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for (o, &r) in rows.iter().enumerate() {
                        for (d, s) in gx.row_mut(r).iter_mut().zip(g.row(o)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MeanRows { x, start, end } => {
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    let inv = 1.0 / (end - start) as f64;
                    for r in *start..*end {
                        for (d, s) in gx.row_mut(r).iter_mut().zip(&g.data) {
                            *d = s * inv;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.data[0];
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl.data[r * gl.cols + t] -= 1.0;
                    }
                    gl.data.iter_mut().for_each(|x| *x *= s);
                    acc(&mut grads, *logits, gl);
                }
                Op::Cosine { a, b } => {
                    let s = g.data[0];
                    let c = node.value.data[0];
                    let (x, y) = (self.value(*a), self.value(*b));
                    let na = dot(&x.data, &x.data).sqrt();
                    let nb = dot(&y.data, &y.data).sqrt();
                    let ga: Vec<f64> = x
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(xi, yi)| s * (yi / (na * nb) - c * xi / (na * na)))
                        .collect();
                    let gb: Vec<f64> = x
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(xi, yi)| s * (xi / (na * nb) - c * yi / (nb * nb)))
                        .collect();
                    acc(&mut grads, *a, Mat::from_vec(x.rows, x.cols, ga));
                    acc(&mut grads, *b, Mat::from_vec(y.rows, y.cols, gb));
                }
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    let mut ga = g;
                    for (x, y) in ga.data.iter_mut().zip(&av.data) {
                        *x *= sigmoid(*y);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Dropout { x, keep } => {
                    let mut gx = g;
                    for (v, k) in gx.data.iter_mut().zip(keep) {
                        *v *= k;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, g.clone());
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Finite-difference check of d(root)/d(param) for a closure building a
    /// graph from a single parameter matrix.
    fn check<F>(init: Mat, build: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let n = init.data.len();
        let mut tape = Tape::new();
        let p = tape.param(init.clone(), 0);
        let root = build(&mut tape, p);
        let analytic = tape.backward(root, n);
        for i in 0..n {
            let h = 1e-5 * init.data[i].abs().max(1.0);
            let eval = |delta: f64| {
                let mut m = init.clone();
                m.data[i] += delta;
                let mut t = Tape::new();
                let p = t.param(m, 0);
                let r = build(&mut t, p);
                t.scalar(r)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-5, "param {i}: analytic {} vs fd {fd}", analytic[i]);
        }
    }

    fn sample_mat(rows: usize, cols: usize, salt: f64) -> Mat {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + salt) * 0.7391).sin() * 0.9)
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    fn reduce(t: &mut Tape, x: Var) -> Var {
        // weighted sum so every entry has a distinct upstream gradient
        let (r, c) = (t.value(x).rows, t.value(x).cols);
        let w = t.input(sample_mat(c, 1, 3.0));
        let y = t.matmul(x, w);
        let ones = t.input(Mat::from_vec(1, r, vec![1.0; r]));
        t.matmul(ones, y)
    }

    #[test]
    fn matmul_grads() {
        let b = sample_mat(4, 3, 1.0);
        check(sample_mat(2, 4, 0.0), |t, p| {
            let bv = t.input(b.clone());
            let y = t.matmul(p, bv);
            reduce(t, y)
        });
        check(sample_mat(3, 4, 0.0), |t, p| {
            let a = t.input(sample_mat(2, 4, 5.0));
            let y = t.matmul_nt(a, p);
            reduce(t, y)
        });
    }

    #[test]
    fn layer_ops_grads() {
        check(sample_mat(3, 5, 0.5), |t, p| {
            let y = t.normalize(p);
            let y = t.gelu(y);
            reduce(t, y)
        });
        check(sample_mat(3, 4, 0.2), |t, p| {
            let y = t.softmax_rows(p);
            reduce(t, y)
        });
        check(sample_mat(1, 4, 0.1), |t, p| {
            let a = t.input(sample_mat(3, 4, 2.0));
            let y = t.mul_row(a, p);
            let y = t.add_row(y, p);
            reduce(t, y)
        });
    }

    #[test]
    fn structural_ops_grads() {
        check(sample_mat(4, 6, 0.3), |t, p| {
            let a = t.slice_cols(p, 0, 3);
            let b = t.slice_cols(p, 3, 6);
            let c = t.concat_cols(&[b, a]);
            let g = t.gather_rows(c, &[2, 0, 2]);
            let m = t.mean_rows(g, 1, 3);
            reduce(t, m)
        });
    }

    #[test]
    fn loss_ops_grads() {
        check(sample_mat(3, 5, 0.9), |t, p| t.cross_entropy(p, &[1, 4, 0]));
        check(sample_mat(1, 5, 0.4), |t, p| {
            let other = t.input(sample_mat(1, 5, 7.0));
            let c1 = t.cosine(p, other);
            let c2 = t.cosine(other, p);
            let d = t.sub(c1, c2);
            let d = t.scale(d, 3.0);
            let s = t.add(d, c1);
            let s = t.sum(&[s, c2]);
            t.softplus(s)
        });
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
