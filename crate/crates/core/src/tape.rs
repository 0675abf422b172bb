//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node in a
//! Wengert list. Node ids are creation-ordered, so the list itself is a
//! topological order of the DAG and a single reverse sweep computes all
//! vector-Jacobian products. Tapes are rebuilt per forward pass and confined
//! to one thread.
//!
//! Trainable tensors live outside the tape in a [`Parameters`] collection and
//! are bound onto the tape as leaves. [`Tape::backward`] accumulates this
//! call's gradient contribution both into the tape nodes and into the bound
//! parameters, so repeated calls without a reset add up exactly.

use crate::error::{Error, Result};
use crate::tensor::{Parameters, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    MatVec { a: usize, v: usize },
    Dot { a: usize, b: usize },
    Tanh { x: usize },
    Sigmoid { x: usize },
    LogSigmoid { x: usize },
    Log { x: usize },
    Neg { x: usize },
    Sqrt { x: usize },
    Add { a: usize, b: usize },
    ScaleByScalar { x: usize, s: usize },
    ScaleConst { x: usize, c: f64 },
    ScaleRows { x: usize, coeffs: usize },
    AddRowBroadcast { x: usize, row: usize },
    MaskedSoftmax { x: usize, mask: Vec<bool> },
    RowSoftmax { x: usize },
    SumRows { x: usize },
    MeanRows { x: usize },
    GatherRows { table: usize, ids: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    SliceRows { x: usize, start: usize, end: usize },
    SliceElem { x: usize, index: usize },
    Transpose { x: usize },
    WeightedSum { x: usize, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    values: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient across all `backward` calls on this tape.
    grad: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Leaves bound to named external parameters, for gradient write-back.
    bindings: Vec<(usize, String)>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Softmax over the unmasked entries of one row, stabilized by subtracting
/// the max of the support. Masked entries come out exactly 0.
fn masked_softmax_raw(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; scores.len()];
    let mut total = 0.0;
    for i in 0..scores.len() {
        if mask[i] {
            let e = (scores[i] - max).exp();
            out[i] = e;
            total += e;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient accumulated on a node across `backward` calls.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!("expected a 2-D operand, got shape {other:?}"))),
        }
    }

    fn dims1(&self, v: Var) -> Result<usize> {
        match self.nodes[v.0].shape.as_slice() {
            [n] => Ok(*n),
            other => Err(Error::Dimension(format!("expected a 1-D operand, got shape {other:?}"))),
        }
    }

    fn push(&mut self, values: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            values,
            shape,
            op,
            requires_grad,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    // ── leaves ──────────────────────────────────────────────────────

    /// Record a tensor as a leaf. Gradient flows to it iff `requires_grad`
    /// is set on the tensor.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.values().to_vec(), t.shape().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Constant leaf that never receives gradient.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    /// Bind a named parameter as a leaf; `backward` writes its gradient back
    /// into the collection.
    pub fn param(&mut self, params: &Parameters, name: &str) -> Result<Var> {
        let t = params.get(name)?;
        let v = self.leaf(t);
        self.bindings.push((v.0, name.to_string()));
        Ok(v)
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// `a[m,k] @ b[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.dims2(a)?;
        let (kb, n) = self.dims2(b)?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = matmul_raw(&self.nodes[a.0].values, &self.nodes[b.0].values, m, ka, n);
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(values, vec![m, n], Op::Matmul { a: a.0, b: b.0 }, rg))
    }

    /// `a[m,k] @ v[k] -> [m]`.
    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let kv = self.dims1(v)?;
        if k != kv {
            return Err(Error::Dimension(format!(
                "matvec dimensions differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(v)
            )));
        }
        let av = &self.nodes[a.0].values;
        let vv = &self.nodes[v.0].values;
        let values = (0..m)
            .map(|i| av[i * k..(i + 1) * k].iter().zip(vv).map(|(x, y)| x * y).sum())
            .collect();
        let rg = self.needs(a.0) || self.needs(v.0);
        Ok(self.push(values, vec![m], Op::MatVec { a: a.0, v: v.0 }, rg))
    }

    /// Sum of the elementwise product of two equal-shape tensors, as `[1]`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "dot operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let s: f64 = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .sum();
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(vec![s], vec![1], Op::Dot { a: a.0, b: b.0 }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        let values = transpose_raw(&self.nodes[x.0].values, r, c);
        let rg = self.needs(x.0);
        Ok(self.push(values, vec![c, r], Op::Transpose { x: x.0 }, rg))
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| f(*v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs(x.0);
        self.push(values, shape, op, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh { x: x.0 }, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x: x.0 }, |v| 1.0 / (1.0 + (-v).exp()))
    }

    /// `log(sigmoid(x))` in the overflow-safe form `min(x, 0) - ln(1 + e^{-|x|})`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::LogSigmoid { x: x.0 }, |v| v.min(0.0) - (-v.abs()).exp().ln_1p())
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg { x: x.0 }, |v| -v)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[x.0].values.iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(x, Op::Log { x: x.0 }, f64::ln))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[x.0].values.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        Ok(self.unary(x, Op::Sqrt { x: x.0 }, f64::sqrt))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(values, shape, Op::Add { a: a.0, b: b.0 }, rg))
    }

    /// Multiply every element of `x` by the differentiable scalar node `s`.
    pub fn scale_by_scalar(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.nodes[s.0].values.len() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by_scalar expects a scalar, got shape {:?}",
                self.shape(s)
            )));
        }
        let sv = self.nodes[s.0].values[0];
        let values = self.nodes[x.0].values.iter().map(|v| sv * v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs(x.0) || self.needs(s.0);
        Ok(self.push(values, shape, Op::ScaleByScalar { x: x.0, s: s.0 }, rg))
    }

    /// Multiply every element by a fixed constant.
    pub fn scale_const(&mut self, x: Var, c: f64) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| c * v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.needs(x.0);
        self.push(values, shape, Op::ScaleConst { x: x.0, c }, rg)
    }

    /// Scale row `t` of `x[n,d]` by `coeffs[t]`.
    pub fn scale_rows(&mut self, x: Var, coeffs: Var) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        let nc = self.dims1(coeffs)?;
        if n != nc {
            return Err(Error::Dimension(format!(
                "scale_rows: {n} rows vs {nc} coefficients"
            )));
        }
        let cv = &self.nodes[coeffs.0].values;
        let mut values = self.nodes[x.0].values.clone();
        for t in 0..n {
            for v in values[t * d..(t + 1) * d].iter_mut() {
                *v *= cv[t];
            }
        }
        let rg = self.needs(x.0) || self.needs(coeffs.0);
        Ok(self.push(values, vec![n, d], Op::ScaleRows { x: x.0, coeffs: coeffs.0 }, rg))
    }

    /// Add a 1-D `row[d]` to every row of `x[n,d]`.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        let dr = self.dims1(row)?;
        if d != dr {
            return Err(Error::Dimension(format!(
                "add_row_broadcast: {d} columns vs row of length {dr}"
            )));
        }
        let rv = &self.nodes[row.0].values;
        let mut values = self.nodes[x.0].values.clone();
        for t in 0..n {
            for (v, r) in values[t * d..(t + 1) * d].iter_mut().zip(rv) {
                *v += r;
            }
        }
        let rg = self.needs(x.0) || self.needs(row.0);
        Ok(self.push(values, vec![n, d], Op::AddRowBroadcast { x: x.0, row: row.0 }, rg))
    }

    // ── softmax ─────────────────────────────────────────────────────

    /// Softmax over the unmasked positions of a 1-D score vector. Masked
    /// positions are exactly 0 in the output.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let n = self.dims1(scores)?;
        if mask.len() != n {
            return Err(Error::Dimension(format!(
                "mask length {} vs {} scores",
                mask.len(),
                n
            )));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::EmptySupport);
        }
        let values = masked_softmax_raw(&self.nodes[scores.0].values, mask);
        let rg = self.needs(scores.0);
        Ok(self.push(
            values,
            vec![n],
            Op::MaskedSoftmax { x: scores.0, mask: mask.to_vec() },
            rg,
        ))
    }

    /// Independent full-support softmax over each row of a 2-D tensor.
    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if d == 0 {
            return Err(Error::EmptyReduction("row_softmax over zero columns".into()));
        }
        let xv = &self.nodes[x.0].values;
        let mask = vec![true; d];
        let mut values = Vec::with_capacity(n * d);
        for t in 0..n {
            values.extend(masked_softmax_raw(&xv[t * d..(t + 1) * d], &mask));
        }
        let rg = self.needs(x.0);
        Ok(self.push(values, vec![n, d], Op::RowSoftmax { x: x.0 }, rg))
    }

    // ── reductions ──────────────────────────────────────────────────

    fn reduce_rows(&mut self, x: Var, mean: bool) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if n == 0 {
            return Err(Error::EmptyReduction(format!(
                "{} over a 0-row matrix",
                if mean { "mean_rows" } else { "sum_rows" }
            )));
        }
        let xv = &self.nodes[x.0].values;
        let mut values = vec![0.0; d];
        for t in 0..n {
            for (acc, v) in values.iter_mut().zip(&xv[t * d..(t + 1) * d]) {
                *acc += v;
            }
        }
        if mean {
            for v in values.iter_mut() {
                *v /= n as f64;
            }
        }
        let rg = self.needs(x.0);
        let op = if mean { Op::MeanRows { x: x.0 } } else { Op::SumRows { x: x.0 } };
        Ok(self.push(values, vec![d], op, rg))
    }

    /// Column-wise sum of a 2-D tensor, as `[d]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_rows(x, false)
    }

    /// Column-wise mean of a 2-D tensor, as `[d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_rows(x, true)
    }

    /// Total sum of `x` weighted elementwise by fixed constants, as `[1]`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.nodes[x.0].values.len() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} weights vs {} elements",
                weights.len(),
                self.nodes[x.0].values.len()
            )));
        }
        let s: f64 = self.nodes[x.0].values.iter().zip(weights).map(|(v, w)| v * w).sum();
        let rg = self.needs(x.0);
        Ok(self.push(vec![s], vec![1], Op::WeightedSum { x: x.0, weights: weights.to_vec() }, rg))
    }

    // ── structure ───────────────────────────────────────────────────

    /// Gather rows of `table[r,d]` by index; the backward rule scatter-adds.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, d) = self.dims2(table)?;
        if let Some(bad) = ids.iter().find(|i| **i >= r) {
            return Err(Error::Capacity(format!(
                "row index {bad} out of range for a {r}-row table"
            )));
        }
        let tv = &self.nodes[table.0].values;
        let mut values = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            values.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.needs(table.0);
        Ok(self.push(
            values,
            vec![ids.len(), d],
            Op::GatherRows { table: table.0, ids: ids.to_vec() },
            rg,
        ))
    }

    /// Stack parts on top of each other. A 1-D part contributes one row; a
    /// 2-D part contributes its rows. All parts must agree on the width.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyReduction("concat_rows of no parts".into()));
        }
        let width = |shape: &[usize]| -> usize {
            match shape {
                [_, c] => *c,
                [c] => *c,
                _ => 0,
            }
        };
        let d = width(self.shape(parts[0]));
        let mut total_rows = 0;
        for p in parts {
            let shape = self.shape(*p);
            if width(shape) != d || shape.is_empty() || shape.len() > 2 {
                return Err(Error::Dimension(format!(
                    "concat_rows: incompatible part shape {shape:?}, expected width {d}"
                )));
            }
            total_rows += if shape.len() == 2 { shape[0] } else { 1 };
        }
        let mut values = Vec::with_capacity(total_rows * d);
        for p in parts {
            values.extend_from_slice(&self.nodes[p.0].values);
        }
        let rg = parts.iter().any(|p| self.needs(p.0));
        Ok(self.push(
            values,
            vec![total_rows, d],
            Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() },
            rg,
        ))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "slice_rows {start}..{end} out of range for {n} rows"
            )));
        }
        let values = self.nodes[x.0].values[start * d..end * d].to_vec();
        let rg = self.needs(x.0);
        Ok(self.push(values, vec![end - start, d], Op::SliceRows { x: x.0, start, end }, rg))
    }

    /// Element `index` of a 1-D tensor, as a scalar node.
    pub fn slice_elem(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.dims1(x)?;
        if index >= n {
            return Err(Error::Dimension(format!(
                "slice_elem index {index} out of range for length {n}"
            )));
        }
        let values = vec![self.nodes[x.0].values[index]];
        let rg = self.needs(x.0);
        Ok(self.push(values, vec![1], Op::SliceElem { x: x.0, index }, rg))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of this call are added to
    /// each node's accumulated gradient and written back into every bound
    /// parameter, so two backward calls without a reset double every
    /// gradient exactly.
    pub fn backward(&mut self, loss: Var, params: &mut Parameters) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut delta: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.values.len()]).collect();
        delta[loss.0][0] = 1.0;

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || delta[id].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut delta[id]);
            self.propagate(id, &g, &mut delta);
            delta[id] = g;
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            for (acc, d) in node.grad.iter_mut().zip(&delta[id]) {
                *acc += d;
            }
        }
        for (id, name) in &self.bindings {
            let t = params.get_mut(name)?;
            if t.numel() != delta[*id].len() {
                return Err(Error::Dimension(format!(
                    "parameter `{name}` changed size since it was bound"
                )));
            }
            t.accumulate_grad(&delta[*id]);
        }
        Ok(())
    }

    /// Push the upstream gradient `g` of node `id` into its inputs.
    fn propagate(&self, id: usize, g: &[f64], delta: &mut [Vec<f64>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = match self.nodes[*a].shape.as_slice() {
                    [m, k] => (*m, *k),
                    _ => unreachable!(),
                };
                let n = self.nodes[*b].shape[1];
                if self.needs(*a) {
                    // dA = g @ B^T
                    let bt = transpose_raw(&self.nodes[*b].values, k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    axpy(&mut delta[*a], &da);
                }
                if self.needs(*b) {
                    // dB = A^T @ g
                    let at = transpose_raw(&self.nodes[*a].values, m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    axpy(&mut delta[*b], &db);
                }
            }
            Op::MatVec { a, v } => {
                let (m, k) = match self.nodes[*a].shape.as_slice() {
                    [m, k] => (*m, *k),
                    _ => unreachable!(),
                };
                let av = &self.nodes[*a].values;
                let vv = &self.nodes[*v].values;
                if self.needs(*a) {
                    // dA[i,j] = g[i] * v[j]
                    let da = &mut delta[*a];
                    for i in 0..m {
                        for j in 0..k {
                            da[i * k + j] += g[i] * vv[j];
                        }
                    }
                }
                if self.needs(*v) {
                    let dv = &mut delta[*v];
                    for i in 0..m {
                        for j in 0..k {
                            dv[j] += g[i] * av[i * k + j];
                        }
                    }
                }
            }
            Op::Dot { a, b } => {
                let g0 = g[0];
                if self.needs(*a) {
                    let bv = self.nodes[*b].values.clone();
                    for (d, b) in delta[*a].iter_mut().zip(&bv) {
                        *d += g0 * b;
                    }
                }
                if self.needs(*b) {
                    let av = self.nodes[*a].values.clone();
                    for (d, a) in delta[*b].iter_mut().zip(&av) {
                        *d += g0 * a;
                    }
                }
            }
            Op::Tanh { x } => {
                for ((d, y), gi) in delta[*x].iter_mut().zip(&node.values).zip(g) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::Sigmoid { x } => {
                for ((d, y), gi) in delta[*x].iter_mut().zip(&node.values).zip(g) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::LogSigmoid { x } => {
                // d/dx log(sigmoid(x)) = 1 - sigmoid(x)
                let xv = &self.nodes[*x].values;
                for ((d, xi), gi) in delta[*x].iter_mut().zip(xv).zip(g) {
                    let sig = 1.0 / (1.0 + (-xi).exp());
                    *d += gi * (1.0 - sig);
                }
            }
            Op::Log { x } => {
                let xv = &self.nodes[*x].values;
                for ((d, xi), gi) in delta[*x].iter_mut().zip(xv).zip(g) {
                    *d += gi / xi;
                }
            }
            Op::Neg { x } => {
                for (d, gi) in delta[*x].iter_mut().zip(g) {
                    *d -= gi;
                }
            }
            Op::Sqrt { x } => {
                for ((d, y), gi) in delta[*x].iter_mut().zip(&node.values).zip(g) {
                    *d += gi / (2.0 * y);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    axpy(&mut delta[*a], g);
                }
                if self.needs(*b) {
                    axpy(&mut delta[*b], g);
                }
            }
            Op::ScaleByScalar { x, s } => {
                let sv = self.nodes[*s].values[0];
                if self.needs(*x) {
                    for (d, gi) in delta[*x].iter_mut().zip(g) {
                        *d += sv * gi;
                    }
                }
                if self.needs(*s) {
                    let xv = &self.nodes[*x].values;
                    delta[*s][0] += g.iter().zip(xv).map(|(gi, xi)| gi * xi).sum::<f64>();
                }
            }
            Op::ScaleConst { x, c } => {
                for (d, gi) in delta[*x].iter_mut().zip(g) {
                    *d += c * gi;
                }
            }
            Op::ScaleRows { x, coeffs } => {
                let d_cols = node.shape[1];
                let n = node.shape[0];
                let cv = &self.nodes[*coeffs].values;
                if self.needs(*x) {
                    let dx = &mut delta[*x];
                    for t in 0..n {
                        for j in 0..d_cols {
                            dx[t * d_cols + j] += cv[t] * g[t * d_cols + j];
                        }
                    }
                }
                if self.needs(*coeffs) {
                    let xv = &self.nodes[*x].values;
                    let dc = &mut delta[*coeffs];
                    for t in 0..n {
                        let mut s = 0.0;
                        for j in 0..d_cols {
                            s += g[t * d_cols + j] * xv[t * d_cols + j];
                        }
                        dc[t] += s;
                    }
                }
            }
            Op::AddRowBroadcast { x, row } => {
                let d_cols = node.shape[1];
                let n = node.shape[0];
                if self.needs(*x) {
                    axpy(&mut delta[*x], g);
                }
                if self.needs(*row) {
                    let dr = &mut delta[*row];
                    for t in 0..n {
                        for j in 0..d_cols {
                            dr[j] += g[t * d_cols + j];
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                // dx_i = y_i * (g_i - sum_j g_j y_j) on the support, 0 elsewhere
                let y = &node.values;
                let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let dx = &mut delta[*x];
                for i in 0..y.len() {
                    if mask[i] {
                        dx[i] += y[i] * (g[i] - inner);
                    }
                }
            }
            Op::RowSoftmax { x } => {
                let (n, d_cols) = (node.shape[0], node.shape[1]);
                let y = &node.values;
                let dx = &mut delta[*x];
                for t in 0..n {
                    let row = t * d_cols;
                    let inner: f64 = (0..d_cols).map(|j| g[row + j] * y[row + j]).sum();
                    for j in 0..d_cols {
                        dx[row + j] += y[row + j] * (g[row + j] - inner);
                    }
                }
            }
            Op::SumRows { x } => {
                let (n, d_cols) = match self.nodes[*x].shape.as_slice() {
                    [n, d] => (*n, *d),
                    _ => unreachable!(),
                };
                let dx = &mut delta[*x];
                for t in 0..n {
                    for j in 0..d_cols {
                        dx[t * d_cols + j] += g[j];
                    }
                }
            }
            Op::MeanRows { x } => {
                let (n, d_cols) = match self.nodes[*x].shape.as_slice() {
                    [n, d] => (*n, *d),
                    _ => unreachable!(),
                };
                let inv = 1.0 / n as f64;
                let dx = &mut delta[*x];
                for t in 0..n {
                    for j in 0..d_cols {
                        dx[t * d_cols + j] += g[j] * inv;
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let d_cols = node.shape[1];
                let dt = &mut delta[*table];
                for (t, &i) in ids.iter().enumerate() {
                    for j in 0..d_cols {
                        dt[i * d_cols + j] += g[t * d_cols + j];
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[*p].values.len();
                    if self.needs(*p) {
                        axpy(&mut delta[*p], &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start, end } => {
                let d_cols = node.shape[1];
                let dx = &mut delta[*x];
                dx[start * d_cols..end * d_cols]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, gi)| *d += gi);
            }
            Op::SliceElem { x, index } => {
                delta[*x][*index] += g[0];
            }
            Op::Transpose { x } => {
                let (c, r) = (node.shape[0], node.shape[1]);
                // node is [c,r]; input was [r,c]
                let dx = &mut delta[*x];
                for i in 0..c {
                    for j in 0..r {
                        dx[j * c + i] += g[i * r + j];
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                let g0 = g[0];
                for (d, w) in delta[*x].iter_mut().zip(weights) {
                    *d += g0 * w;
                }
            }
        }
    }
}

fn axpy(acc: &mut [f64], g: &[f64]) {
    for (a, gi) in acc.iter_mut().zip(g) {
        *a += gi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = tape.constant(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.values(out), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2]] @ [[3],[4]] = [[11]]
        let mut tape = Tape::new();
        let a = tape.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(out), &[11.0]);
    }

    #[test]
    fn matmul_zeros_annihilate() {
        let mut tape = Tape::new();
        let z = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let m = tape.constant(vec![2, 2], vec![1.5, -2.0, 0.25, 9.0]).unwrap();
        let out = tape.matmul(z, m).unwrap();
        assert_eq!(tape.values(out), &[0.0; 4]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn tanh_values() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2], vec![0.0, 1.0]).unwrap();
        let y = tape.tanh(x);
        assert_eq!(tape.values(y)[0], 0.0);
        assert!(close(tape.values(y)[1], 0.761_594_155_955_764_9, 1e-15));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(tape.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2], vec![0.0; 2]).unwrap();
        let b = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn scale_by_zero_scalar_annihilates() {
        let mut tape = Tape::new();
        let s = tape.constant(vec![1], vec![0.0]).unwrap();
        let h = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = tape.scale_by_scalar(s, h).unwrap();
        assert_eq!(tape.values(out), &[0.0; 4]);
    }

    #[test]
    fn masked_softmax_uniform_on_equal_scores() {
        let mut tape = Tape::new();
        let s = tape.constant(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let p = tape.masked_softmax(s, &[true, true, true]).unwrap();
        for v in tape.values(p) {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn masked_softmax_single_element() {
        for x in [-1e6, 0.0, 3.25, 700.0] {
            let mut tape = Tape::new();
            let s = tape.constant(vec![1], vec![x]).unwrap();
            let p = tape.masked_softmax(s, &[true]).unwrap();
            assert_eq!(tape.values(p), &[1.0]);
        }
    }

    #[test]
    fn masked_softmax_two_element_oracle() {
        // softmax over {1, 3}: 1/(1+e^2) and its complement
        let mut tape = Tape::new();
        let s = tape.constant(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = tape.masked_softmax(s, &[true, false, true]).unwrap();
        let v = tape.values(p);
        assert!(close(v[0], 0.119_202_922_022_117_55, 1e-12));
        assert_eq!(v[1], 0.0);
        assert!(close(v[2], 0.880_797_077_977_882_3, 1e-12));
    }

    #[test]
    fn masked_softmax_all_false_mask_errors() {
        let mut tape = Tape::new();
        let s = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            tape.masked_softmax(s, &[false, false]),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn mean_rows_hand_case() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
        let m = tape.mean_rows(x).unwrap();
        assert_eq!(tape.values(m), &[2.0, 4.0]);
    }

    #[test]
    fn sum_rows_of_single_row_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 3], vec![7.0, -1.0, 2.5]).unwrap();
        let s = tape.sum_rows(x).unwrap();
        assert_eq!(tape.values(s), &[7.0, -1.0, 2.5]);
    }

    #[test]
    fn mean_rows_of_repeated_row_is_that_row() {
        let mut tape = Tape::new();
        let x = tape
            .constant(vec![4, 2], vec![0.5, -2.0, 0.5, -2.0, 0.5, -2.0, 0.5, -2.0])
            .unwrap();
        let m = tape.mean_rows(x).unwrap();
        assert_eq!(tape.values(m), &[0.5, -2.0]);
    }

    #[test]
    fn reduce_of_empty_matrix_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0, 3], vec![]).unwrap();
        assert!(matches!(tape.sum_rows(x), Err(Error::EmptyReduction(_))));
        assert!(matches!(tape.mean_rows(x), Err(Error::EmptyReduction(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut params = Parameters::new();
        params.insert("x", Tensor::vector(vec![4.0, -2.0, 0.5]).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&params, "x").unwrap();
        let loss = tape.weighted_sum(x, &[1.0, 1.0, 1.0]).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get("x").unwrap().grad().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_scaled_tanh_at_zero() {
        // loss = 2 * tanh(w) at w = 0 has gradient 2
        let mut params = Parameters::new();
        params.insert("w", Tensor::scalar(0.0).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let t = tape.tanh(w);
        let loss = tape.scale_const(t, 2.0);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get("w").unwrap().grad().unwrap(), &[2.0]);
    }

    #[test]
    fn backward_disconnected_param_gets_zeros() {
        let mut params = Parameters::new();
        params.insert("used", Tensor::scalar(1.0).unwrap());
        params.insert("unused", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let u = tape.param(&params, "used").unwrap();
        let _also_bound = tape.param(&params, "unused").unwrap();
        let loss = tape.tanh(u);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get("unused").unwrap().grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_doubles_grads_exactly() {
        let mut params = Parameters::new();
        params.insert("w", Tensor::vector(vec![0.3, -0.7]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let t = tape.tanh(w);
        let loss = tape.weighted_sum(t, &[1.0, 2.0]).unwrap();
        tape.backward(loss, &mut params).unwrap();
        let once = params.get("w").unwrap().grad().unwrap().to_vec();
        tape.backward(loss, &mut params).unwrap();
        let twice = params.get("w").unwrap().grad().unwrap().to_vec();
        assert_eq!(twice[0], 2.0 * once[0]);
        assert_eq!(twice[1], 2.0 * once[1]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut params = Parameters::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let t = tape.tanh(w);
        assert!(matches!(tape.backward(t, &mut params), Err(Error::Dimension(_))));
    }

    #[test]
    fn gather_rows_out_of_range_errors() {
        let mut tape = Tape::new();
        let t = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(tape.gather_rows(t, &[0, 2]), Err(Error::Capacity(_))));
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
        let c = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 2]);
        let back = tape.slice_rows(c, 1, 2).unwrap();
        assert_eq!(tape.values(back), &[3.0, 4.0]);
    }
}
