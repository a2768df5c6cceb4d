//! Reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are bound
//! by name once per tape, so a parameter shared across a batch accumulates a
//! single gradient.

use std::collections::{BTreeMap, HashMap};

use super::matrix::DenseMatrix;
use super::ParamBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    MulConst(Var, DenseMatrix),
    ScaleRows(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: DenseMatrix, inv_std: Vec<f64> },
    Softmax(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    MeanAll(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: DenseMatrix },
    LogSigmoid(Var),
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked to 0.
pub fn softmax_rows(x: &DenseMatrix, causal: bool) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let width = if causal { (i + 1).min(x.cols()) } else { x.cols() };
        let row = &x.row(i)[..width];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let out_row = out.row_mut(i);
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in &mut out_row[..width] {
            *o /= total;
        }
    }
    out
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds parameter `name` from `bank`, once per tape.
    pub fn param(&mut self, bank: &ParamBank, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = bank.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`")).clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((1, self.value(a).cols()), r.shape(), "add_row shape");
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.row(0)) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// `alpha · a + beta`
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let v = self.value(a).map(|x| alpha * x + beta);
        self.push(v, Op::Affine(a, alpha))
    }

    pub fn mul_const(&mut self, a: Var, mask: DenseMatrix) -> Var {
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(v, Op::MulConst(a, mask))
    }

    /// Scales row i of `a` by entry i of the column vector `c`.
    pub fn scale_rows(&mut self, a: Var, c: Var) -> Var {
        let cv = self.value(c);
        assert_eq!(cv.shape(), (self.value(a).rows(), 1), "scale_rows shape");
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let s = cv[(i, 0)];
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        self.push(v, Op::ScaleRows(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let mut xhat = DenseMatrix::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, x) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut y = xhat.clone();
        for i in 0..n {
            for ((o, gv), bv) in y.row_mut(i).iter_mut().zip(g.row(0)).zip(b.row(0)) {
                *o = *o * gv + bv;
            }
        }
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let v = softmax_rows(self.value(a), causal);
        self.push(v, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut v = DenseMatrix::zeros(av.rows(), len);
        for i in 0..av.rows() {
            v.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let v = DenseMatrix::from_vec(len, cols, av.data()[start * cols..(start + len) * cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                v.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
                off += pv.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            assert_eq!(self.value(p).cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        self.push(DenseMatrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = DenseMatrix::zeros(idx.len(), t.cols());
        for (i, &k) in idx.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(k));
        }
        self.push(v, Op::GatherRows(table, idx.to_vec()))
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = DenseMatrix::zeros(1, av.cols());
        for i in 0..av.rows() {
            for (o, x) in v.row_mut(0).iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let n = av.rows() as f64;
        v.data_mut().iter_mut().for_each(|x| *x /= n);
        self.push(v, Op::MeanRows(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = DenseMatrix::filled(1, 1, av.sum() / av.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let probs = softmax_rows(lv, false);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = DenseMatrix::filled(1, 1, total / targets.len() as f64);
        self.push(v, Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(log_sigmoid);
        self.push(v, Op::LogSigmoid(a))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, g.matmul(self.value(*b)));
                    acc(&mut grads, *b, g.t_matmul(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::AddRow(a, row) => {
                    let mut gr = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Affine(a, alpha) => acc(&mut grads, *a, g.map(|x| alpha * x)),
                Op::MulConst(a, mask) => acc(&mut grads, *a, g.zip_map(mask, |x, m| x * m)),
                Op::ScaleRows(a, c) => {
                    let (av, cv) = (self.value(*a), self.value(*c));
                    let mut ga = g.clone();
                    let mut gc = DenseMatrix::zeros(cv.rows(), 1);
                    for i in 0..g.rows() {
                        let s = cv[(i, 0)];
                        gc[(i, 0)] = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                        ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *c, gc);
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = self.value(*gamma);
                    let (n, d) = xhat.shape();
                    let mut gg = DenseMatrix::zeros(1, d);
                    let mut gb = DenseMatrix::zeros(1, d);
                    let mut gx = DenseMatrix::zeros(n, d);
                    for i in 0..n {
                        let (gr, xr) = (g.row(i), xhat.row(i));
                        let mut sum_dx = 0.0;
                        let mut sum_dx_x = 0.0;
                        for j in 0..d {
                            gg[(0, j)] += gr[j] * xr[j];
                            gb[(0, j)] += gr[j];
                            let dxhat = gr[j] * gam[(0, j)];
                            sum_dx += dxhat;
                            sum_dx_x += dxhat * xr[j];
                        }
                        let scale = inv_std[i] / d as f64;
                        for j in 0..d {
                            let dxhat = gr[j] * gam[(0, j)];
                            gx[(i, j)] = scale * (d as f64 * dxhat - sum_dx - xr[j] * sum_dx_x);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = DenseMatrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                    let cols = av.cols();
                    ga.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = DenseMatrix::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        acc(&mut grads, p, gp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let data = g.data()[off * cols..(off + r) * cols].to_vec();
                        acc(&mut grads, p, DenseMatrix::from_vec(r, cols, data));
                        off += r;
                    }
                }
                Op::GatherRows(table, idx) => {
                    let tv = self.value(*table);
                    let mut gt = DenseMatrix::zeros(tv.rows(), tv.cols());
                    for (i, &k) in idx.iter().enumerate() {
                        for (o, x) in gt.row_mut(k).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = av.rows() as f64;
                    let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                            *o = x / n;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanAll(a) => {
                    let av = self.value(*a);
                    let s = g[(0, 0)] / av.len() as f64;
                    acc(&mut grads, *a, DenseMatrix::filled(av.rows(), av.cols(), s));
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let s = g[(0, 0)] / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[(i, t)] -= 1.0;
                    }
                    gl.data_mut().iter_mut().for_each(|x| *x *= s);
                    acc(&mut grads, *logits, gl);
                }
                Op::LogSigmoid(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(-x));
                    acc(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Parameter gradients by name. Bound parameters that received no
    /// gradient get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, DenseMatrix> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = self.value(v).shape();
                    DenseMatrix::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect()
    }
}

pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
