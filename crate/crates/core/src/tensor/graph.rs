use rand::Rng;

use super::kernels;
use super::{Real, Tensor};
use crate::error::{contract, shape_err, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SmoothL1Mean(Var, Var),
    Sum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Dropout(Var, Vec<T>),
    MeanOf(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A computation tape. Nodes are appended in evaluation order, so the tape is
/// topologically sorted by construction and backward is a single reverse sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.wrt(v)?;
        Tensor::new(self.shapes[v.0].clone(), g.to_vec()).ok()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value.detached(), Op::Leaf, false)
    }

    /// Records a leaf whose gradient will be computed by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value.detached(), Op::Leaf, true)
    }

    pub(crate) fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = kernels::matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let what = match op {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            _ => "div",
        };
        self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a vector along the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.value(a).last_dim();
        if self.value(bias).len() != n {
            return Err(shape_err(format!(
                "bias of {} for last axis {n}",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x * c).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| x.max(T::zero())).collect(),
        )
        .expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Softmax over the last axis; a row whose entries are all masked is an error.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).softmax_rows()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Layer normalization over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.value(gamma).len() != d || self.value(beta).len() != d || d == 0 {
            return Err(shape_err(format!("layer_norm over last axis {d}")));
        }
        let (out, xhat, inv_std) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean SmoothL1 of `pred - target` as a scalar.
    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "smooth_l1")?;
        let v = kernels::smooth_l1_mean(self.value(pred).data(), self.value(target).data());
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(v), Op::SmoothL1Mean(pred, target), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .copied()
            .fold(T::zero(), |x, y| x + y);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 2 || start > end || end > v.cols() {
            return Err(shape_err(format!(
                "slice_cols {start}..{end} of {:?}",
                v.shape()
            )));
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let t = Tensor::new([rows, end - start], data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts
            .iter()
            .any(|&p| self.value(p).rank() != 2 || self.value(p).rows() != rows)
        {
            return Err(shape_err("concat_cols needs matrices with equal rows"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new([rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(shape_err("concat_rows needs equal column counts"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let t = Tensor::new([rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows of a matrix by index (embedding lookup, last-token pick).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let rows = v.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!("row {bad} out of {rows}")));
        }
        let cols = v.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        let t = Tensor::new([idx.len(), cols], data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let v = self.value(a);
        let mask: Vec<T> = (0..v.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Dropout(a, mask), rg)
    }

    /// Elementwise mean of equally shaped values.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let shape = self.shape(parts[0]).to_vec();
        if parts.iter().any(|&p| self.shape(p) != shape.as_slice()) {
            return Err(shape_err("mean_of needs equal shapes"));
        }
        let mut acc = self.value(parts[0]).data().to_vec();
        for &p in &parts[1..] {
            for (a, &x) in acc.iter_mut().zip(self.value(p).data()) {
                *a += x;
            }
        }
        let k = T::from_usize(parts.len()).unwrap();
        acc.iter_mut().for_each(|a| *a /= k);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, acc)?, Op::MeanOf(parts.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..=loss.0]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.value(v).len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                // dA = G · Bᵀ, dB = Aᵀ · G
                self.accumulate(grads, *a, |ga| {
                    let bt = kernels::transpose(self.value(*b).data(), k, n);
                    kernels::matmul(g, &bt, ga, m, n, k);
                });
                self.accumulate(grads, *b, |gb| {
                    let at = kernels::transpose(self.value(*a).data(), m, k);
                    kernels::matmul(&at, g, gb, k, m, n);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                self.accumulate(grads, *a, |ga| {
                    // g has shape c×r
                    for (x, y) in ga.iter_mut().zip(kernels::transpose(g, c, r)) {
                        *x += y;
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * vb[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] / vb[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                let n = self.value(*bias).len();
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y * *c;
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if va[i] > T::zero() {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let w = node.value.last_dim();
                self.accumulate(grads, *a, |ga| {
                    for ((gr, yr), gar) in g.chunks(w).zip(y.chunks(w)).zip(ga.chunks_mut(w)) {
                        let dot = gr
                            .iter()
                            .zip(yr)
                            .fold(T::zero(), |acc, (&gi, &yi)| acc + gi * yi);
                        for j in 0..w {
                            gar[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gamma).len();
                let gm = self.value(*gamma).data();
                let n = T::from_usize(d).unwrap();
                self.accumulate(grads, *x, |gx| {
                    for r in 0..inv_std.len() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dy = gr[j] * gm[j];
                            m1 += dy;
                            m2 += dy * hr[j];
                        }
                        m1 /= n;
                        m2 /= n;
                        for j in 0..d {
                            let dy = gr[j] * gm[j];
                            gx[r * d + j] += inv_std[r] * (dy - m1 - hr[j] * m2);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::SmoothL1Mean(p, t) => {
                let (vp, vt) = (self.value(*p).data(), self.value(*t).data());
                let scale = g[0] / T::from_usize(vp.len().max(1)).unwrap();
                self.accumulate(grads, *p, |gp| {
                    for i in 0..gp.len() {
                        gp[i] += scale * kernels::smooth_l1_grad(vp[i] - vt[i]);
                    }
                });
                self.accumulate(grads, *t, |gt| {
                    for i in 0..gt.len() {
                        gt[i] -= scale * kernels::smooth_l1_grad(vp[i] - vt[i]);
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::SliceCols(a, start) => {
                let cols = self.value(*a).cols();
                let w = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        add_into(&mut ga[r * cols + start..r * cols + start + w], gr);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |gp| {
                        for (r, gr) in gp.chunks_mut(w).enumerate() {
                            add_into(gr, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let cols = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        add_into(&mut ga[i * cols..(i + 1) * cols], &g[k * cols..(k + 1) * cols]);
                    }
                });
            }
            Op::Dropout(a, mask) => {
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * mask[i];
                    }
                });
            }
            Op::MeanOf(parts) => {
                let k = T::from_usize(parts.len()).unwrap();
                for &p in parts {
                    self.accumulate(grads, p, |gp| {
                        for (x, &y) in gp.iter_mut().zip(g) {
                            *x += y / k;
                        }
                    });
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
