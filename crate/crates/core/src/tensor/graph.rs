use std::rc::Rc;

use super::{gemm, AttentionMask, Float, MatRef, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    /// `a * b (+ bias row)`, with `b` optionally stored transposed.
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        bias: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        keep: Vec<T>,
    },
    SoftmaxRows {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention(Box<AttentionSaved<T>>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: T,
        probs: Vec<T>,
        count: usize,
    },
    Sum {
        x: Var,
    },
}

struct AttentionSaved<T> {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Rc<AttentionMask>,
    /// Softmax weights laid out `[head][nnz]`.
    probs: Vec<T>,
    /// Scaled keep-mask applied to the weights (inverted dropout), same layout.
    keep: Option<Vec<T>>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Tape of operations recorded during one forward pass.
///
/// Values are computed eagerly; [`Graph::backward`] replays the tape in reverse
/// once. Nodes only record gradients when some input requires them.
pub struct Graph<T: Float = f32> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn accumulate<T: Float>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { values: Vec::new(), ops: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.values[v.0].requires_grad);
        let t = Tensor { shape, data, requires_grad, grad: None };
        self.push(t, op)
    }

    /// Record a leaf; gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad())
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.values[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Copy of the node value with its gradient attached.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor<T> {
        let mut t = self.values[v.0].clone();
        t.grad = self.grads[v.0].clone();
        t
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.values[v.0].dims2(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, None)
    }

    /// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, None)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool, bias: Option<Var>) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(shape_err("matmul", self.values[a.0].shape(), self.values[b.0].shape()));
        }
        let (out, beta) = match bias {
            Some(bias) => {
                if self.values[bias.0].numel() != n {
                    return Err(shape_err("linear", &[m, n], self.values[bias.0].shape()));
                }
                (self.values[bias.0].data().repeat(m), T::one())
            }
            None => (vec![T::zero(); m * n], T::zero()),
        };
        let mut out = out;
        {
            let av = MatRef::new(self.values[a.0].data(), m, k);
            let bd = self.values[b.0].data();
            let bv = if trans_b { MatRef::t(bd, n, k) } else { MatRef::new(bd, k, n) };
            gemm(av, bv, beta, &mut out);
        }
        let inputs: &[Var] = match bias {
            Some(bias) => &[a, b, bias],
            None => &[a, b],
        };
        Ok(self.derived(vec![m, n], out, inputs, Op::MatMul { a, b, trans_b, bias }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let shape = sa.to_vec();
        let data = self.values[a.0].data().iter().zip(self.values[b.0].data()).map(|(&x, &y)| x + y).collect();
        Ok(self.derived(shape, data, &[a, b], Op::Add { a, b }))
    }

    /// Add a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_row")?;
        if self.values[bias.0].numel() != n {
            return Err(shape_err("add_row", self.values[x.0].shape(), self.values[bias.0].shape()));
        }
        let b = self.values[bias.0].data();
        let mut data = self.values[x.0].data().to_vec();
        for r in data.chunks_mut(n) {
            r.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        let shape = self.values[x.0].shape().to_vec();
        Ok(self.derived(shape, data, &[x, bias], Op::AddRow { x, bias }))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.matmul_impl(x, w, false, Some(b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let shape = self.values[x.0].shape().to_vec();
        let data = self.values[x.0].data().iter().map(|&v| v * s).collect();
        self.derived(shape, data, &[x], Op::Scale { x, s })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.values[x.0].shape().to_vec();
        let data = self.values[x.0].data().iter().map(|&v| v.max(T::zero())).collect();
        self.derived(shape, data, &[x], Op::Relu { x })
    }

    /// Multiply elementwise by a fixed keep-mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, keep: Vec<T>) -> Result<Var> {
        if keep.len() != self.values[x.0].numel() {
            return Err(shape_err("dropout", self.values[x.0].shape(), &[keep.len()]));
        }
        let shape = self.values[x.0].shape().to_vec();
        let data = self.values[x.0].data().iter().zip(&keep).map(|(&v, &m)| v * m).collect();
        Ok(self.derived(shape, data, &[x], Op::Dropout { x, keep }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "softmax_rows")?;
        let mut data = self.values[x.0].data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let shape = self.values[x.0].shape().to_vec();
        Ok(self.derived(shape, data, &[x], Op::SoftmaxRows { x }))
    }

    /// Normalize each row to zero mean and unit variance, then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = self.dims2(x, "layer_norm")?;
        for p in [gain, bias] {
            if self.values[p.0].numel() != d {
                return Err(shape_err("layer_norm", self.values[x.0].shape(), self.values[p.0].shape()));
            }
        }
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of(d as f64);
        let (g, b) = (self.values[gain.0].data(), self.values[bias.0].data());
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for (r, row) in self.values[x.0].data().chunks(d).enumerate() {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let shape = self.values[x.0].shape().to_vec();
        Ok(self.derived(shape, out, &[x, gain, bias], Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Multi-head scaled dot-product attention over a sparse mask.
    ///
    /// `q: [nq, d]`, `k, v: [nk, d]`; head `h` uses feature columns
    /// `h*d/heads .. (h+1)*d/heads`. Each query row takes a softmax over its
    /// allowed keys only; a row with no allowed keys yields zeros. `keep`, when
    /// given, is an inverted-dropout mask on the weights laid out `[head][nnz]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Rc<AttentionMask>,
        keep: Option<Vec<T>>,
    ) -> Result<Var> {
        let (nq, d) = self.dims2(q, "attention")?;
        let (nk, dk_) = self.dims2(k, "attention")?;
        let (nv, dv) = self.dims2(v, "attention")?;
        if d != dk_ || nk != nv || dv != d {
            return Err(shape_err("attention", self.values[q.0].shape(), self.values[k.0].shape()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(shape_err("attention heads", &[d], &[heads]));
        }
        if mask.n_queries() != nq || mask.n_keys() != nk {
            return Err(TensorError::Mask { mask: (mask.n_queries(), mask.n_keys()), expected: (nq, nk) });
        }
        let nnz = mask.nnz();
        if let Some(keep) = &keep {
            if keep.len() != heads * nnz {
                return Err(shape_err("attention dropout", &[heads * nnz], &[keep.len()]));
            }
        }
        let hd = d / heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let (qd, kd, vd) = (self.values[q.0].data(), self.values[k.0].data(), self.values[v.0].data());
        let mut probs = vec![T::zero(); heads * nnz];
        let mut out = vec![T::zero(); nq * d];
        for i in 0..nq {
            let range = mask.row_range(i);
            if range.is_empty() {
                continue;
            }
            let keys = mask.row(i);
            for h in 0..heads {
                let off = h * hd;
                let qi = &qd[i * d + off..i * d + off + hd];
                let p = &mut probs[h * nnz + range.start..h * nnz + range.end];
                for (slot, &j) in p.iter_mut().zip(keys) {
                    let kj = &kd[j as usize * d + off..j as usize * d + off + hd];
                    *slot = dot(qi, kj) * scale;
                }
                softmax_in_place(p);
                let o = &mut out[i * d + off..i * d + off + hd];
                for (idx, &j) in keys.iter().enumerate() {
                    let mut w = p[idx];
                    if let Some(keep) = &keep {
                        w *= keep[h * nnz + range.start + idx];
                    }
                    let vj = &vd[j as usize * d + off..j as usize * d + off + hd];
                    for (o, &x) in o.iter_mut().zip(vj) {
                        *o += w * x;
                    }
                }
            }
        }
        let saved = AttentionSaved { q, k, v, heads, mask, probs, keep };
        Ok(self.derived(vec![nq, d], out, &[q, k, v], Op::Attention(Box::new(saved))))
    }

    /// Attention weights `[head][nnz]` recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.ops[v.0] {
            Op::Attention(s) => Some(&s.probs),
            _ => None,
        }
    }

    /// Select rows of a `[rows, d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims2(table, "gather")?;
        let td = self.values[table.0].data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= rows {
                return Err(TensorError::Index { index: i, len: rows });
            }
            data.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        Ok(self.derived(vec![ids.len(), d], data, &[table], Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Mean label-smoothed cross-entropy over rows with a target.
    ///
    /// The smoothed target puts `1 - smoothing` on the gold class and spreads
    /// `smoothing` uniformly over all classes. Rows with `None` are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], smoothing: T) -> Result<Var> {
        let (n, classes) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(shape_err("cross_entropy", &[n, classes], &[targets.len()]));
        }
        let mut probs = self.values[logits.0].data().to_vec();
        let mut total = T::zero();
        let mut count = 0usize;
        let uniform = smoothing / T::of(classes as f64);
        for (row, tgt) in probs.chunks_mut(classes).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            if let Some(t) = *tgt {
                if t >= classes {
                    return Err(TensorError::Index { index: t, len: classes });
                }
                let sum_logp = row.iter().map(|&x| x - lse).sum::<T>();
                total += -(T::one() - smoothing) * (row[t] - lse) - uniform * sum_logp;
                count += 1;
            }
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let loss = if count > 0 { total / T::of(count as f64) } else { T::zero() };
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing, probs, count };
        Ok(self.derived(vec![], vec![loss], &[logits], op))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].data().iter().copied().sum();
        self.derived(vec![], vec![s], &[x], Op::Sum { x })
    }

    /// Populate gradients of `loss` with respect to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if self.values[loss.0].numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.values[loss.0].shape().to_vec()));
        }
        self.consumed = true;
        if !self.values[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.values[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let values = &self.values;
        let grads = &mut self.grads;
        let wants = |v: Var| values[v.0].requires_grad;
        match &self.ops[i] {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b, bias } => {
                if let Some(bias) = bias.filter(|&v| wants(v)) {
                    let n = values[bias.0].numel();
                    let gb = accumulate(&mut grads[bias.0], n);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                    }
                }
                let (m, k) = values[a.0].dims2("").unwrap();
                let n = values[i].shape()[1];
                let (ad, bd) = (values[a.0].data(), values[b.0].data());
                let gm = MatRef::new(g, m, n);
                if wants(a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    // dA = dC B^T (or dC B when b is stored transposed)
                    let bv = if trans_b { MatRef::new(bd, n, k) } else { MatRef::t(bd, k, n) };
                    gemm(gm, bv, T::one(), ga);
                }
                if wants(b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    if trans_b {
                        gemm(MatRef::t(g, m, n), MatRef::new(ad, m, k), T::one(), gb);
                    } else {
                        gemm(MatRef::t(ad, m, k), gm, T::one(), gb);
                    }
                }
            }
            &Op::Add { a, b } => {
                for x in [a, b] {
                    if wants(x) {
                        let gx = accumulate(&mut grads[x.0], g.len());
                        gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            &Op::AddRow { x, bias } => {
                if wants(x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
                if wants(bias) {
                    let n = values[bias.0].numel();
                    let gb = accumulate(&mut grads[bias.0], n);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            &Op::Scale { x, s } => {
                if wants(x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * s);
                }
            }
            &Op::Relu { x } => {
                if wants(x) {
                    let xd = values[x.0].data();
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for ((o, &v), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *o += v;
                        }
                    }
                }
            }
            Op::Dropout { x, keep } => {
                if wants(*x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for ((o, &v), &m) in gx.iter_mut().zip(g).zip(keep) {
                        *o += v * m;
                    }
                }
            }
            &Op::SoftmaxRows { x } => {
                if wants(x) {
                    let n = values[i].shape()[1];
                    let y = values[i].data();
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for ((gr, yr), ox) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let s = dot(gr, yr);
                        for j in 0..n {
                            ox[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = values[gain.0].numel();
                let gd = values[gain.0].data();
                if wants(*gain) {
                    let gg = accumulate(&mut grads[gain.0], d);
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = accumulate(&mut grads[bias.0], d);
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(o, &v)| *o += v);
                    }
                }
                if wants(*x) {
                    let dn = T::of(d as f64);
                    let gx = accumulate(&mut grads[x.0], g.len());
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rstd.len() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gd[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dx = dot(&dxhat, xr) / dn;
                        let ox = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            ox[j] += rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Attention(s) => backprop_attention(values, grads, s, g),
            Op::Gather { table, ids } => {
                if wants(*table) {
                    let d = values[table.0].shape()[1];
                    let gt = accumulate(&mut grads[table.0], values[table.0].numel());
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, smoothing, probs, count } => {
                if wants(*logits) && *count > 0 {
                    let classes = values[logits.0].shape()[1];
                    let uniform = *smoothing / T::of(classes as f64);
                    let s = g[0] / T::of(*count as f64);
                    let gl = accumulate(&mut grads[logits.0], probs.len());
                    for (r, tgt) in targets.iter().enumerate() {
                        let Some(t) = *tgt else { continue };
                        let p = &probs[r * classes..(r + 1) * classes];
                        let o = &mut gl[r * classes..(r + 1) * classes];
                        for j in 0..classes {
                            let mut q = uniform;
                            if j == t {
                                q += T::one() - *smoothing;
                            }
                            o[j] += (p[j] - q) * s;
                        }
                    }
                }
            }
            &Op::Sum { x } => {
                if wants(x) {
                    let n = values[x.0].numel();
                    let gx = accumulate(&mut grads[x.0], n);
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
        }
    }
}

fn backprop_attention<T: Float>(values: &[Tensor<T>], grads: &mut [Option<Vec<T>>], s: &AttentionSaved<T>, g: &[T]) {
    let (q, k, v) = (s.q, s.k, s.v);
    let (nq, d) = (values[q.0].shape()[0], values[q.0].shape()[1]);
    let nk = values[k.0].shape()[0];
    let heads = s.heads;
    let hd = d / heads;
    let nnz = s.mask.nnz();
    let scale = T::one() / T::of(hd as f64).sqrt();
    let (qd, kd, vd) = (values[q.0].data(), values[k.0].data(), values[v.0].data());
    let (wq, wk, wv) = (values[q.0].requires_grad, values[k.0].requires_grad, values[v.0].requires_grad);
    let mut gq = if wq { vec![T::zero(); nq * d] } else { Vec::new() };
    let mut gk = if wk { vec![T::zero(); nk * d] } else { Vec::new() };
    let mut gv = if wv { vec![T::zero(); nk * d] } else { Vec::new() };
    let mut dp = Vec::new();
    for i in 0..nq {
        let range = s.mask.row_range(i);
        if range.is_empty() {
            continue;
        }
        let keys = s.mask.row(i);
        for h in 0..heads {
            let off = h * hd;
            let gi = &g[i * d + off..i * d + off + hd];
            let base = h * nnz + range.start;
            let p = &s.probs[base..base + keys.len()];
            dp.clear();
            for (idx, &j) in keys.iter().enumerate() {
                let j = j as usize;
                let m = s.keep.as_ref().map_or(T::one(), |keep| keep[base + idx]);
                let vj = &vd[j * d + off..j * d + off + hd];
                dp.push(dot(gi, vj) * m);
                if wv {
                    let w = p[idx] * m;
                    let o = &mut gv[j * d + off..j * d + off + hd];
                    o.iter_mut().zip(gi).for_each(|(o, &x)| *o += w * x);
                }
            }
            if !(wq || wk) {
                continue;
            }
            let avg = dot(p, &dp);
            for (idx, &j) in keys.iter().enumerate() {
                let j = j as usize;
                let ds = p[idx] * (dp[idx] - avg) * scale;
                if ds == T::zero() {
                    continue;
                }
                if wq {
                    let kj = &kd[j * d + off..j * d + off + hd];
                    let o = &mut gq[i * d + off..i * d + off + hd];
                    o.iter_mut().zip(kj).for_each(|(o, &x)| *o += ds * x);
                }
                if wk {
                    let qi = &qd[i * d + off..i * d + off + hd];
                    let o = &mut gk[j * d + off..j * d + off + hd];
                    o.iter_mut().zip(qi).for_each(|(o, &x)| *o += ds * x);
                }
            }
        }
    }
    for (var, local) in [(q, gq), (k, gk), (v, gv)] {
        if local.is_empty() {
            continue;
        }
        let dst = accumulate(&mut grads[var.0], local.len());
        dst.iter_mut().zip(&local).for_each(|(o, &x)| *o += x);
    }
}

#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().fold(tail, |acc, &l| acc + l)
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut g = Graph::<f64>::new();
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let x = g.constant(t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let a = g.constant(t(&[1, 1], &[2.]));
        let b = g.constant(t(&[1, 1], &[3.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[6.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn softmax_analytic_rows() {
        let ln2 = 2f64.ln();
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 2], &[0., 0., 0., ln2, 5., 5. + ln2]));
        let y = g.softmax_rows(x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.5).abs() < 1e-12);
        for r in 1..3 {
            assert!((v[2 * r] - 1. / 3.).abs() < 1e-12);
            assert!((v[2 * r + 1] - 2. / 3.).abs() < 1e-12);
        }
        let x3 = g.constant(t(&[1, 3], &[0., 0., 0.]));
        let y3 = g.softmax_rows(x3).unwrap();
        assert!(g.value(y3).data().iter().all(|&p| (p - 1. / 3.).abs() < 1e-12));
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::<f64>::new();
        let gain = g.constant(t(&[2], &[1., 1.]));
        let bias = g.constant(t(&[2], &[0., 0.]));
        let x = g.constant(t(&[2, 2], &[3., 3., 1., -1.]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        let v = g.value(y).data();
        assert_eq!(&v[..2], &[0., 0.]);
        assert!((v[2] - 1.).abs() < 1e-4 && (v[3] + 1.).abs() < 1e-4);
    }

    #[test]
    fn backward_sum_and_independent() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.; 4]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let y = g.param(t(&[2], &[1., 2.]));
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none_or(|gx| gx.iter().all(|&v| v == 0.)));
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1., 2.]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(TensorError::GraphConsumed));
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let k = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let v = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let mask = Rc::new(AttentionMask::from_rows(2, vec![vec![1], vec![]]));
        let o = g.attention(q, k, v, 1, mask, None).unwrap();
        assert_eq!(g.value(o).data(), &[7., 8., 0., 0.]);
    }
}
