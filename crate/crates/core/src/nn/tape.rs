//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] borrows the parameter values of one model, records every
//! operation of a forward pass, and replays them backwards to produce one
//! gradient matrix per parameter that took part in the computation.

use std::sync::Arc;

use super::tensor::{Matrix, Scalar};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// `keep[r * cols + c] == false` forces an exact zero weight.
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        normalized: Matrix<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix<T>,
        count: usize,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Matrix<T>>,
}

/// Gradients indexed by parameter position in the model's store.
pub struct Gradients<T> {
    pub grads: Vec<Option<Matrix<T>>>,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p [Matrix<T>],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [Matrix<T>]) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        match (&self.nodes[v.0].op, &self.nodes[v.0].value) {
            (Op::Param(i), _) => &self.params[*i],
            (_, Some(m)) => m,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Which ReLU inputs are positive, in recording order. Two evaluations
    /// with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.value(a).data().iter().map(|v| *v > T::zero()));
            }
        }
        out
    }

    pub fn constant(&mut self, m: Matrix<T>) -> Var {
        self.push(Op::Constant, m)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_transb(self.value(b));
        self.push(Op::MatMulTransB(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let bias = self.value(row);
        assert_eq!(bias.rows(), 1, "add_row expects a 1xN bias");
        assert_eq!(bias.cols(), self.value(a).cols(), "add_row width");
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *o += *b;
            }
        }
        self.push(Op::AddRow(a, row), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
        let out = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        self.push(Op::Tanh(a), out)
    }

    /// Row-wise softmax. Entries with `keep == false` get weight exactly 0
    /// and are excluded from the normalizer; a fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: Var, keep: Option<Arc<Vec<bool>>>) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        if let Some(k) = &keep {
            assert_eq!(k.len(), rows * cols, "softmax mask size");
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let kept = |c: usize| keep.as_ref().is_none_or(|k| k[r * cols + c]);
            let row = x.row(r);
            let mut max = T::neg_infinity();
            for (c, v) in row.iter().enumerate() {
                if kept(c) && *v > max {
                    max = *v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut sum = T::zero();
            let o = out.row_mut(r);
            for c in 0..cols {
                if kept(c) {
                    let e = (row[c] - max).exp();
                    o[c] = e;
                    sum += e;
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        self.push(Op::Softmax(a), out)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gain);
        let b = self.value(shift);
        assert_eq!(g.shape(), (1, cols), "layer_norm gain");
        assert_eq!(b.shape(), (1, cols), "layer_norm shift");
        let n = T::of(cols as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                normalized.set(r, c, h);
                out.set(r, c, h * g.data()[c] + b.data()[c]);
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gain,
                shift,
                normalized,
                inv_std,
            },
            out,
        )
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            out,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols range");
        let out = Matrix::from_fn(x.rows(), len, |r, c| x.get(r, start + c));
        self.push(Op::SliceCols(a, start), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows(), rows, "concat_cols rows");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows(), "slice_rows range");
        let out = Matrix::from_vec(len, x.cols(), x.data()[start * x.cols()..(start + len) * x.cols()].to_vec());
        self.push(Op::SliceRows(a, start), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols(), cols, "concat_rows cols");
            data.extend_from_slice(m.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(Op::ConcatRows(parts.to_vec()), Matrix::from_vec(rows, cols, data))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; `None` targets are ignored. Returns `None` when every
    /// target is masked.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Option<Var> {
        let x = self.value(logits);
        assert_eq!(x.rows(), targets.len(), "cross_entropy targets");
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return None;
        }
        let (rows, cols) = x.shape();
        let mut probs = Matrix::zeros(rows, cols);
        let mut total = T::zero();
        for r in 0..rows {
            let Some(t) = targets[r] else { continue };
            assert!(t < cols, "cross_entropy target out of range");
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|v| (*v - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (*v - log_z).exp();
            }
        }
        let loss = Matrix::from_vec(1, 1, vec![total / T::of(count as f64)]);
        Some(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            loss,
        ))
    }

    /// Backpropagates from a 1x1 `output`, returning parameter gradients.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.shape(output), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Matrix::filled(1, 1, T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        let mut param_grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(self.params.len());
        param_grads.resize_with(self.params.len(), || None);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = || node.value.as_ref().expect("computed node");
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => param_grads[*p] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transb(self.value(*b));
                    let gb = self.value(*a).transa_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulTransB(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.transa_matmul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *s += *v;
                        }
                    }
                    acc(&mut grads, *row, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(y.data()).map(|(d, v)| *d * *v).collect(),
                    );
                    let gb = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(x.data()).map(|(d, v)| *d * *v).collect(),
                    );
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|v| v * s));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(d, v)| if *v > T::zero() { *d } else { T::zero() })
                        .collect();
                    acc(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Sigmoid(a) => {
                    let y = out();
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(d, s)| *d * *s * (T::one() - *s))
                        .collect();
                    acc(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Tanh(a) => {
                    let y = out();
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(d, t)| *d * (T::one() - *t * *t))
                        .collect();
                    acc(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Softmax(a) => {
                    let y = out();
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                        for (o, (p, q)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = *p * (*q - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    normalized,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let n = T::of(cols as f64);
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gshift = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        let (gr, hr) = (g.row(r), normalized.row(r));
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for c in 0..cols {
                            let dh = gr[c] * gv.data()[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                            ggain.data_mut()[c] += gr[c] * hr[c];
                            gshift.data_mut()[c] += gr[c];
                        }
                        let inv = inv_std[r];
                        for c in 0..cols {
                            let dh = gr[c] * gv.data()[c];
                            gx.set(r, c, inv / n * (n * dh - sum_dh - hr[c] * sum_dh_h));
                        }
                    }
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *shift, gshift);
                    acc(&mut grads, *x, gx);
                }
                Op::Embedding { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += *v;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        let gp = Matrix::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        offset += w;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    ga.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.shape(*p);
                        let gp = Matrix::from_vec(rows, cols, g.data()[offset * cols..(offset + rows) * cols].to_vec());
                        offset += rows;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let scale = g.get(0, 0) / T::of(*count as f64);
                    let mut gl = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for (o, p) in gl.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *o = *p * scale;
                        }
                        let cur = gl.get(r, *t);
                        gl.set(r, *t, cur - scale);
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }
        Gradients { grads: param_grads }
    }
}
