//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape through [`Graph::param`]; [`Graph::backward`] walks the tape in
//! reverse and accumulates one gradient per parameter.

use std::collections::HashMap;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

/// Deliberate backward-pass faults, used to check that the gradient checker
/// notices a broken derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Softmax backward returns zero, cutting the gradient through attention scores.
    DropAttentionScoreGrad,
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow { a: Var, row: Var },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Gelu(Var),
    Dropout { a: Var, mask: Vec<f64> },
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SelectRows { a: Var, idx: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    Sum(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<Fault>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new(), fault: None }
    }

    pub fn with_fault(store: &'p ParamStore, fault: Option<Fault>) -> Self {
        Self { fault, ..Self::new(store) }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// The tape node of a parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Broadcast-add a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(r.row(0)) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow { a, row })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Row-wise softmax. With `causal`, entry (i, j) for j > i is excluded.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let width = if causal { (i + 1).min(x.cols()) } else { x.cols() };
            let row = &x.row(i)[..width];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (o, v) in out.row_mut(i)[..width].iter_mut().zip(row) {
                *o = (v - m).exp() / z;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let x = self.value(a);
        let (n, d) = x.shape();
        let g = self.value(gain).row(0).to_vec();
        let b = self.value(bias).row(0).to_vec();
        let mut xhat = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat.row_mut(i)[j] = h;
                out.row_mut(i)[j] = h * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNorm { a, gain, bias, xhat, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    /// Inverted dropout with a precomputed keep mask (`true` = keep).
    pub fn dropout(&mut self, a: Var, keep: &[bool], rate: f64) -> Var {
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let x = self.value(a);
        assert_eq!(mask.len(), x.len());
        let out = Tensor::from_vec(x.rows(), x.cols(), x.data().iter().zip(&mask).map(|(v, m)| v * m).collect());
        self.push(out, Op::Dropout { a, mask })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        self.push(out, Op::MeanRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            assert_eq!(self.value(p).cols(), cols);
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { a, start })
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(idx.len(), x.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(x.row(i));
        }
        self.push(out, Op::SelectRows { a, idx: idx.to_vec() })
    }

    /// Mean negative log-likelihood of `targets` (one per row) under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows(), targets.len());
        let mut probs = Tensor::zeros(x.rows(), x.cols());
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let n = targets.len() as f64;
        self.push(Tensor::scalar(loss / n), Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Mean binary cross-entropy of logits (one per row, single column).
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        let loss: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
            .sum::<f64>()
            / targets.len() as f64;
        self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.to_vec() })
    }

    /// Element-wise sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::zeros_like(self.store);

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&dy),
                Op::Gather { table, ids } => {
                    // Embedding tables are parameters: scatter straight into
                    // their gradient instead of materializing a dense table.
                    let scatter = |g: &mut Tensor| {
                        for (r, &id) in ids.iter().enumerate() {
                            for (o, v) in g.row_mut(id).iter_mut().zip(dy.row(r)) {
                                *o += v;
                            }
                        }
                    };
                    if let Op::Param(id) = &self.nodes[table.0].op {
                        scatter(out.get_mut(*id));
                    } else {
                        let t = self.value(*table);
                        let mut g = Tensor::zeros(t.rows(), t.cols());
                        scatter(&mut g);
                        acc(&mut grads, *table, g);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::AddRow { a, row } => {
                    acc(&mut grads, *row, dy.mean_rows().map(|v| v * dy.rows() as f64));
                    acc(&mut grads, *a, dy);
                }
                Op::MatMul(a, b) => {
                    let ga = dy.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&dy);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = dy.matmul(self.value(*b));
                    let gb = dy.matmul_tn(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, dy.map(|v| v * s)),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut g = Tensor::zeros(y.rows(), y.cols());
                    if self.fault != Some(Fault::DropAttentionScoreGrad) {
                        for r in 0..y.rows() {
                            let yr = y.row(r);
                            let dr = dy.row(r);
                            let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                            for ((o, &yv), &dv) in g.row_mut(r).iter_mut().zip(yr).zip(dr) {
                                *o = yv * (dv - dot);
                            }
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                    let (n, d) = xhat.shape();
                    let gv = self.value(*gain).row(0);
                    let mut dgain = Tensor::zeros(1, d);
                    let mut dbias = Tensor::zeros(1, d);
                    let mut dx = Tensor::zeros(n, d);
                    for r in 0..n {
                        let dr = dy.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            dgain.row_mut(0)[j] += dr[j] * hr[j];
                            dbias.row_mut(0)[j] += dr[j];
                            let dh = dr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let k = inv_std[r] / d as f64;
                        for j in 0..d {
                            let dh = dr[j] * gv[j];
                            dx.row_mut(r)[j] = k * (d as f64 * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    acc(&mut grads, *a, dx);
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let g = Tensor::from_vec(
                        x.rows(),
                        x.cols(),
                        x.data()
                            .iter()
                            .zip(dy.data())
                            .map(|(&x, &d)| {
                                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                                let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                                d * (0.5 * (1.0 + t) + 0.5 * x * dt)
                            })
                            .collect(),
                    );
                    acc(&mut grads, *a, g);
                }
                Op::Dropout { a, mask } => {
                    let g = Tensor::from_vec(dy.rows(), dy.cols(), dy.data().iter().zip(mask).map(|(d, m)| d * m).collect());
                    acc(&mut grads, *a, g);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let mut g = Tensor::zeros(n, dy.cols());
                    for r in 0..n {
                        for (o, v) in g.row_mut(r).iter_mut().zip(dy.row(0)) {
                            *o = v / n as f64;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let cols = dy.cols();
                        let g = Tensor::from_vec(rows, cols, dy.data()[off * cols..(off + rows) * cols].to_vec());
                        acc(&mut grads, p, g);
                        off += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut g = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            g.row_mut(r).copy_from_slice(&dy.row(r)[off..off + cols]);
                        }
                        acc(&mut grads, p, g);
                        off += cols;
                    }
                }
                Op::SliceCols { a, start } => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut g = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        g.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::SelectRows { a, idx } => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut g = Tensor::zeros(rows, cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in g.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = dy.item() / targets.len() as f64;
                    let mut g = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        g.row_mut(r)[t] -= 1.0;
                    }
                    g.scale_assign(scale);
                    acc(&mut grads, *logits, g);
                }
                Op::BceWithLogits { logits, targets } => {
                    let z = self.value(*logits);
                    let scale = dy.item() / targets.len() as f64;
                    let g = Tensor::from_vec(
                        z.rows(),
                        z.cols(),
                        z.data().iter().zip(targets).map(|(&z, &y)| scale * (1.0 / (1.0 + (-z).exp()) - y)).collect(),
                    );
                    acc(&mut grads, *logits, g);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, dy.clone());
                    }
                }
            }
        }
        out
    }
}
