//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] borrows the [`ParamStore`] for the duration of one forward pass.
//! Every op appends a node; [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because an op
//! can only reference nodes that already exist.
//!
//! [`Tape::stop_gradient`] is the only non-mathematical op: forward identity,
//! backward zero. Anything upstream of it receives no contribution through it.

use std::rc::Rc;

use super::fft;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{FimError, Result};

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Gather { table: ParamId, rows: Vec<Option<usize>> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RepeatRows(Var),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var, Vec<usize>),
    SumAll(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SpectralFilter { x: Var, gains: Rc<Vec<f64>> },
    StopGradient,
    Bce { probs: Var, labels: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> FimError {
    FimError::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Rows of an embedding table; `None` yields a zero row that no gradient
    /// reaches (padding).
    pub fn gather(&mut self, table: ParamId, rows: Vec<Option<usize>>) -> Result<Var> {
        let t = self.params.get(table);
        let (vocab, d) = (t.rows(), t.cols());
        let mut out = vec![0.0; rows.len() * d];
        for (r, idx) in rows.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= vocab {
                    return Err(FimError::invalid(format!(
                        "row {i} out of range for `{}` ({vocab} rows)",
                        self.params.name(table)
                    )));
                }
                out[r * d..(r + 1) * d].copy_from_slice(t.row_slice(i));
            }
        }
        let value = Tensor::matrix(rows.len(), d, out)?;
        Ok(self.push(value, Op::Gather { table, rows }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip_same(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// `x (m x n) + row (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(shape_err("add_row", tx.shape(), tr.shape()));
        }
        let mut value = tx.clone();
        let c = tx.cols();
        for r in 0..tx.rows() {
            for (v, b) in value.data_mut()[r * c..(r + 1) * c].iter_mut().zip(tr.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, row)))
    }

    /// Multiplies every entry of `x` by the `1 x 1` value `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(shape_err("scale_by", self.value(x).shape(), ts.shape()));
        }
        let k = ts.item();
        let mut value = self.value(x).clone();
        value.scale_assign(k);
        Ok(self.push(value, Op::ScaleBy(x, s)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut value = self.value(x).clone();
        value.scale_assign(c);
        self.push(value, Op::Scale(x, c))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut value = t.clone();
        for r in 0..t.rows() {
            softmax_in_place(value.row_slice_mut(r));
        }
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(value, Op::Transpose(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(FimError::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first).shape(), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(FimError::EmptyInput("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Repeats a `1 x n` row `times` times.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != 1 {
            return Err(FimError::Shape(format!("repeat_rows needs a row, got {:?}", t.shape())));
        }
        let data = t.data().repeat(times);
        let value = Tensor::matrix(times, t.cols(), data)?;
        Ok(self.push(value, Op::RepeatRows(x)))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(FimError::invalid(format!("row {bad} out of {} rows", t.rows())));
        }
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in &rows {
            data.extend_from_slice(t.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), t.cols(), data)?;
        Ok(self.push(value, Op::SelectRows(x, rows)))
    }

    /// Mean over the listed rows, giving a `1 x n` row.
    pub fn mean_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        if rows.is_empty() {
            return Err(FimError::EmptyInput("mean over zero rows"));
        }
        let t = self.value(x);
        let c = t.cols();
        let mut acc = vec![0.0; c];
        for &r in &rows {
            if r >= t.rows() {
                return Err(FimError::invalid(format!("row {r} out of {} rows", t.rows())));
            }
            for (a, v) in acc.iter_mut().zip(t.row_slice(r)) {
                *a += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(self.push(Tensor::row(acc), Op::MeanRows(x, rows)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (both `1 x n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.len() != c || tb.len() != c {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * c];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let (h, inv) = normalize_row(tx.row_slice(r), eps);
            for j in 0..c {
                out[r * c + j] = tg.data()[j] * h[j] + tb.data()[j];
            }
            xhat[r * c..(r + 1) * c].copy_from_slice(&h);
            inv_std[r] = inv;
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Column-wise spectral filtering of an `n x d` matrix by a real symmetric
    /// full-length multiplier (see [`fft::symmetric_gains`]).
    pub fn spectral_filter(&mut self, x: Var, gains: Rc<Vec<f64>>) -> Result<Var> {
        let t = self.value(x);
        let (n, d) = (t.rows(), t.cols());
        if gains.len() != n {
            return Err(FimError::Shape(format!("{} gains for {n} rows", gains.len())));
        }
        let data = fft::filter_columns(t.data(), n, d, &gains);
        let value = Tensor::matrix(n, d, data)?;
        Ok(self.push(value, Op::SpectralFilter { x, gains }))
    }

    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient)
    }

    /// Summed binary cross-entropy of a row of probabilities against labels.
    pub fn bce(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != labels.len() {
            return Err(FimError::Shape(format!("{} probs vs {} labels", p.len(), labels.len())));
        }
        let loss = p.data().iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum();
        Ok(self.push(Tensor::scalar(loss), Op::Bce { probs, labels: labels.to_vec() }))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(output, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but accumulates into existing gradients.
    pub fn backward_into(&self, output: Var, param_grads: &mut Gradients) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(FimError::Shape(format!("backward needs a scalar, got {:?}", self.value(output).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, g, &mut grads, param_grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>], param_grads: &mut Gradients) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Const | Op::StopGradient => {}
            Op::Param(id) => param_grads.accumulate(*id, g.shape(), &g),
            Op::Gather { table, rows } => {
                let shape = self.params.get(*table).shape().to_vec();
                let slot = param_grads.slot(*table, &shape);
                let d = g.cols();
                for (r, idx) in rows.iter().enumerate() {
                    if let Some(k) = idx {
                        for (a, b) in slot.row_slice_mut(*k).iter_mut().zip(&g.data()[r * d..]) {
                            *a += b;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut ga = vec![0.0; m * k];
                matmul_nt_into(g.data(), tb.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_tn_into(ta.data(), g.data(), &mut gb, m, k, n);
                add_grad(grads, *a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                add_grad(grads, *b, Tensor::new(tb.shape().to_vec(), gb).unwrap());
            }
            Op::Add(a, b) => {
                add_grad(grads, *a, g.clone());
                add_grad(grads, *b, g);
            }
            Op::Sub(a, b) => {
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                add_grad(grads, *a, g);
                add_grad(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let ga = elementwise(&g, self.value(*b), |x, y| x * y);
                let gb = elementwise(&g, self.value(*a), |x, y| x * y);
                add_grad(grads, *a, ga);
                add_grad(grads, *b, gb);
            }
            Op::AddRow(x, row) => {
                let tr = self.value(*row);
                add_grad(grads, *row, column_sums(&g, tr.shape()));
                add_grad(grads, *x, g);
            }
            Op::ScaleBy(x, s) => {
                let k = self.value(*s).item();
                let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                let mut gx = g;
                gx.scale_assign(k);
                add_grad(grads, *x, gx);
                add_grad(grads, *s, Tensor::new(self.value(*s).shape().to_vec(), vec![ds]).unwrap());
            }
            Op::Scale(x, c) => {
                let mut gx = g;
                gx.scale_assign(*c);
                add_grad(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = elementwise(&g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                add_grad(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = elementwise(&g, out.unwrap(), |gv, y| gv * y * (1.0 - y));
                add_grad(grads, *x, gx);
            }
            Op::Square(x) => {
                let gx = elementwise(&g, self.value(*x), |gv, xv| 2.0 * xv * gv);
                add_grad(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let y = out.unwrap();
                let mut gx = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in gx.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                add_grad(grads, *x, gx);
            }
            Op::Transpose(x) => add_grad(grads, *x, g.transpose()),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let c = tp.cols();
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + c]);
                    }
                    offset += c;
                    add_grad(grads, *p, Tensor::new(tp.shape().to_vec(), data).unwrap());
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let n = tp.rows() * c;
                    let data = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    add_grad(grads, *p, Tensor::new(tp.shape().to_vec(), data).unwrap());
                }
            }
            Op::RepeatRows(x) => {
                add_grad(grads, *x, column_sums(&g, self.value(*x).shape()));
            }
            Op::SelectRows(x, rows) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.shape());
                for (i, &r) in rows.iter().enumerate() {
                    for (a, b) in gx.row_slice_mut(r).iter_mut().zip(g.row_slice(i)) {
                        *a += b;
                    }
                }
                add_grad(grads, *x, gx);
            }
            Op::MeanRows(x, rows) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.shape());
                let inv = 1.0 / rows.len() as f64;
                for &r in rows {
                    for (a, b) in gx.row_slice_mut(r).iter_mut().zip(g.data()) {
                        *a += b * inv;
                    }
                }
                add_grad(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let tx = self.value(*x);
                add_grad(grads, *x, Tensor::full(tx.shape(), g.item()));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let tg = self.value(*gamma);
                let c = g.cols();
                let rows = g.rows();
                let mut g_gamma = vec![0.0; c];
                let mut g_beta = vec![0.0; c];
                let mut gx = vec![0.0; rows * c];
                for r in 0..rows {
                    let gr = g.row_slice(r);
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut mean_gh = 0.0;
                    let mut mean_ghh = 0.0;
                    for j in 0..c {
                        g_gamma[j] += gr[j] * hr[j];
                        g_beta[j] += gr[j];
                        let gh = gr[j] * tg.data()[j];
                        mean_gh += gh;
                        mean_ghh += gh * hr[j];
                    }
                    mean_gh /= c as f64;
                    mean_ghh /= c as f64;
                    for j in 0..c {
                        let gh = gr[j] * tg.data()[j];
                        gx[r * c + j] = inv_std[r] * (gh - mean_gh - hr[j] * mean_ghh);
                    }
                }
                let gshape = tg.shape().to_vec();
                let bshape = self.value(*beta).shape().to_vec();
                add_grad(grads, *gamma, Tensor::new(gshape, g_gamma).unwrap());
                add_grad(grads, *beta, Tensor::new(bshape, g_beta).unwrap());
                add_grad(grads, *x, Tensor::new(g.shape().to_vec(), gx).unwrap());
            }
            Op::SpectralFilter { x, gains } => {
                // The filter is a symmetric linear map: its adjoint is itself.
                let (n, d) = (g.rows(), g.cols());
                let data = fft::filter_columns(g.data(), n, d, gains);
                add_grad(grads, *x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Bce { probs, labels } => {
                let tp = self.value(*probs);
                let up = g.item();
                let data =
                    tp.data()
                        .iter()
                        .zip(labels)
                        .map(|(&p, &y)| {
                            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                                0.0
                            } else {
                                up * (-y / p + (1.0 - y) / (1.0 - p))
                            }
                        })
                        .collect();
                add_grad(grads, *probs, Tensor::new(tp.shape().to_vec(), data).unwrap());
            }
        }
    }
}

fn add_grad(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn column_sums(g: &Tensor, shape: &[usize]) -> Tensor {
    let c = g.cols();
    let mut acc = vec![0.0; c];
    for r in 0..g.rows() {
        for (a, v) in acc.iter_mut().zip(g.row_slice(r)) {
            *a += v;
        }
    }
    Tensor::new(shape.to_vec(), acc).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Binary cross-entropy of one probability with clamping.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Zero-mean unit-variance normalisation of one row; returns the normalised
/// row and `1 / sqrt(var + eps)`.
pub fn normalize_row(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) * inv).collect(), inv)
}

/// Plain (untracked) layer normalisation of a single vector.
pub fn layer_norm(x: &[f64], gamma: &[f64], shift: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(FimError::EmptyInput("layer_norm input"));
    }
    if gamma.len() != x.len() || shift.len() != x.len() {
        return Err(FimError::Shape(format!(
            "layer_norm dim {} with gamma {} / shift {}",
            x.len(),
            gamma.len(),
            shift.len()
        )));
    }
    if eps <= 0.0 {
        return Err(FimError::invalid("layer_norm eps must be positive"));
    }
    let (h, _) = normalize_row(x, eps);
    Ok(h.iter().zip(gamma).zip(shift).map(|((h, g), b)| g * h + b).collect())
}
