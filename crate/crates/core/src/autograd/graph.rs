use std::sync::Arc;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, permute_data};
use super::{AutogradError, Tensor};

/// Additive value used by [`Graph::masked_fill`].
pub const MASK_VALUE: f64 = -1e9;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, broadcast_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Relu { a: Var },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Sum { a: Var },
    Mean { a: Var },
    SmoothedNll { logp: Var, weights: Vec<(usize, Vec<f64>)>, count: usize },
}

/// Reverse-mode tape. Nodes are appended in creation order, so the node list
/// is already a topological order and the graph is acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Arc<Tensor>>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn mismatch(msg: impl Into<String>) -> AutogradError {
    AutogradError::ShapeMismatch(msg.into())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push_shared(value.into(), Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push_shared(value.into(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Accumulated gradient, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad[v.0])
    }

    /// Batched matrix product. `a` is `[..., m, k]`; `b` is either `[..., k, n]`
    /// with the same leading axes or a plain `[k, n]` matrix shared by every batch entry.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch(format!("matmul needs rank >= 2, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let broadcast_b = sb.len() == 2;
        if k != k2 || (!broadcast_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(mismatch(format!("matmul {sa:?} x {sb:?}")));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for bi in 0..batch {
                let b_off = if broadcast_b { 0 } else { bi * k * n };
                gemm_acc(
                    &da[bi * m * k..(bi + 1) * m * k],
                    &db[b_off..b_off + k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, broadcast_b }, rg))
    }

    /// Elementwise sum; `b`'s shape must be a suffix of `a`'s and is repeated over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(format!("add {sa:?} + {sb:?}")));
        }
        let inner = self.value(b).numel();
        let out: Vec<f64> = {
            let db = self.value(b).data();
            self.value(a).data().chunks(inner).flat_map(|chunk| chunk.iter().zip(db).map(|(x, y)| x + y)).collect()
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!("mul {:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, out).expect("same numel"), Op::Scale { a, factor }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, out).expect("same numel"), Op::Relu { a }, rg)
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let d = self.value(a).last_dim();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, out).expect("same numel"), Op::Softmax { a }, rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let d = self.value(a).last_dim();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, out).expect("same numel"), Op::LogSoftmax { a }, rg)
    }

    /// Layer normalization over the last axis with learned `gain` and `bias` of size `d`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutogradError> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch(format!(
                "layer_norm over {:?} with gain {:?}, bias {:?}",
                self.shape(x),
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xs.len() / d;
        let mut xhat = Vec::with_capacity(xs.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Row lookup in a `[vocab, d]` table; output shape is `id_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], id_shape: &[usize]) -> Result<Var, AutogradError> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(mismatch(format!("embedding table must be 2-d, got {st:?}")));
        }
        let (vocab, d) = (st[0], st[1]);
        if id_shape.iter().product::<usize>() != ids.len() {
            return Err(mismatch(format!("{} ids for shape {id_shape:?}", ids.len())));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(mismatch(format!("id {bad} outside vocabulary of {vocab}")));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let mut shape = id_shape.to_vec();
        shape.push(d);
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutogradError> {
        let first = inputs.first().ok_or_else(|| mismatch("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &x)| i != axis && x != base[i]) {
                return Err(mismatch(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutogradError> {
        let data = self.value(a).data().to_vec();
        let t = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, AutogradError> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(mismatch(format!("permutation {perm:?} for shape {shape:?}")));
        }
        let (s, d) = permute_data(self.value(a).data(), shape, perm);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(s, d)?, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutogradError> {
        let n = self.shape(a).len();
        if n < 2 {
            return Err(mismatch("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(a, &perm)
    }

    /// Adds [`MASK_VALUE`] wherever `mask` is true.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var, AutogradError> {
        if mask.len() != self.value(a).numel() {
            return Err(mismatch(format!("mask of {} for {:?}", mask.len(), self.shape(a))));
        }
        let shape = self.shape(a).to_vec();
        let add = Tensor::new(shape, mask.iter().map(|&m| if m { MASK_VALUE } else { 0.0 }).collect())?;
        let c = self.constant(add);
        self.add(a, c)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean { a }, rg)
    }

    /// Mean label-smoothed negative log-likelihood.
    ///
    /// `logp` holds log-probabilities with the vocabulary on the last axis; `targets`
    /// has one id per row. Rows whose target is `pad` are skipped. The target
    /// distribution puts `1 - eps` on the gold id and spreads `eps` evenly over every
    /// id except `pad`.
    pub fn smoothed_nll(&mut self, logp: Var, targets: &[usize], eps: f64, pad: usize) -> Result<Var, AutogradError> {
        let v = self.value(logp).last_dim();
        let rows = self.value(logp).numel() / v;
        if targets.len() != rows {
            return Err(mismatch(format!("{} targets for {rows} rows", targets.len())));
        }
        if v < 2 || pad >= v {
            return Err(mismatch(format!("vocabulary of {v} with pad {pad}")));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= v) {
            return Err(mismatch(format!("target {bad} outside vocabulary of {v}")));
        }
        let lp = self.value(logp).data();
        let spread = eps / (v - 1) as f64;
        let mut total = 0.0;
        let mut weights = Vec::new();
        for (r, &t) in targets.iter().enumerate() {
            if t == pad {
                continue;
            }
            let mut q = vec![spread; v];
            q[pad] = 0.0;
            q[t] += 1.0 - eps;
            let row = &lp[r * v..(r + 1) * v];
            total -= q.iter().zip(row).filter(|(w, _)| **w != 0.0).map(|(w, l)| w * l).sum::<f64>();
            weights.push((r, q));
        }
        let count = weights.len();
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[logp]);
        Ok(self.push(Tensor::scalar(value), Op::SmoothedNll { logp, weights, count }, rg))
    }

    /// Back-propagate from a scalar `loss`. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        if self.backward_done {
            return Err(AutogradError::GraphReuse);
        }
        if self.value(loss).numel() != 1 {
            return Err(AutogradError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        if !self.requires_grad[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] || matches!(self.ops[i], Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            // interior gradients are kept so callers can inspect them
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: impl FnOnce(&mut [f64])) {
        if !self.requires_grad[v.0] {
            return;
        }
        let n = self.values[v.0].numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        contribution(slot);
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Ops are temporarily swapped out so parent values can be read while gradients are written.
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, broadcast_b } => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let va = Arc::clone(&self.values[a.0]);
                let vb = Arc::clone(&self.values[b.0]);
                let bb = *broadcast_b;
                self.accumulate(*a, |ga| {
                    for bi in 0..batch {
                        let b_off = if bb { 0 } else { bi * k * n };
                        gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &vb.data()[b_off..b_off + k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.accumulate(*b, |gb| {
                    for bi in 0..batch {
                        let b_off = if bb { 0 } else { bi * k * n };
                        gemm_tn_acc(
                            &va.data()[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[b_off..b_off + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let inner = self.values[b.0].numel();
                self.accumulate(*b, |gb| {
                    for chunk in g.chunks(inner) {
                        gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul { a, b } => {
                let va = Arc::clone(&self.values[a.0]);
                let vb = Arc::clone(&self.values[b.0]);
                self.accumulate(*a, |ga| {
                    for ((x, gy), bv) in ga.iter_mut().zip(g).zip(vb.data()) {
                        *x += gy * bv;
                    }
                });
                self.accumulate(*b, |gb| {
                    for ((x, gy), av) in gb.iter_mut().zip(g).zip(va.data()) {
                        *x += gy * av;
                    }
                });
            }
            Op::Scale { a, factor } => {
                let f = *factor;
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += f * y));
            }
            Op::Relu { a } => {
                let va = Arc::clone(&self.values[a.0]);
                self.accumulate(*a, |ga| {
                    for ((x, gy), v) in ga.iter_mut().zip(g).zip(va.data()) {
                        if *v > 0.0 {
                            *x += gy;
                        }
                    }
                });
            }
            Op::Softmax { a } => {
                let y = Arc::clone(&self.values[i]);
                let d = y.last_dim();
                self.accumulate(*a, |ga| {
                    for ((gx, gy), yr) in ga.chunks_mut(d).zip(g.chunks(d)).zip(y.data().chunks(d)) {
                        let dot: f64 = gy.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            gx[j] += yr[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax { a } => {
                let y = Arc::clone(&self.values[i]);
                let d = y.last_dim();
                self.accumulate(*a, |ga| {
                    for ((gx, gy), yr) in ga.chunks_mut(d).zip(g.chunks(d)).zip(y.data().chunks(d)) {
                        let total: f64 = gy.iter().sum();
                        for j in 0..d {
                            gx[j] += gy[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = xhat.len() / rstd.len();
                let gv = Arc::clone(&self.values[gain.0]);
                self.accumulate(*gain, |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(*bias, |gb| {
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                });
                self.accumulate(*x, |gx| {
                    let gain = gv.data();
                    let mut dh = vec![0.0; d];
                    for (r, ((gxr, gr), hr)) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gain[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dhh = dh.iter().zip(hr).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gxr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.values[table.0].last_dim();
                self.accumulate(*table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let row = &mut gt[id * d..(id + 1) * d];
                        row.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let base = self.shape(inputs[0]).to_vec();
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total: usize = inputs.iter().map(|v| self.shape(*v)[*axis]).sum::<usize>() * inner;
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis] * inner;
                    self.accumulate(*v, |gv| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + len];
                            gv[o * len..(o + 1) * len].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape { a } => {
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Permute { a, perm } => {
                let out_shape = self.shape(Var(i)).to_vec();
                let mut inverse = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inverse[p] = k;
                }
                let (_, back) = permute_data(g, &out_shape, &inverse);
                self.accumulate(*a, |ga| ga.iter_mut().zip(&back).for_each(|(x, y)| *x += y));
            }
            Op::Sum { a } => {
                self.accumulate(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Mean { a } => {
                let n = self.values[a.0].numel().max(1) as f64;
                self.accumulate(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::SmoothedNll { logp, weights, count } => {
                if *count > 0 {
                    let v = self.values[logp.0].last_dim();
                    let scale = g[0] / *count as f64;
                    self.accumulate(*logp, |gl| {
                        for (r, q) in weights {
                            for (x, w) in gl[r * v..(r + 1) * v].iter_mut().zip(q) {
                                *x -= scale * w;
                            }
                        }
                    });
                }
            }
        }
        self.ops[i] = op;
    }
}
