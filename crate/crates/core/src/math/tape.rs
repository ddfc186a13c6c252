use serde::{Deserialize, Serialize};

use super::{affine_into, dot_slices, mismatch, parallel_component, relu, sigmoid, DenseMatrix, MathError, Result};

/// Which learning-rate group a parameter block trains under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateGroup {
    /// Token encoder and feature embedders.
    Lower,
    /// Pair-model feedforward networks.
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: RateGroup,
    pub value: DenseMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Registry of every trainable block, in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: RateGroup, value: DenseMatrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.values().len()).sum()
    }
}

/// One gradient buffer per registered parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.params.iter().map(|p| vec![0.0; p.value.values().len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Row { param: ParamId, row: usize },
    Affine { w: ParamId, b: ParamId, x: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Parallel { t: NodeId, h: NodeId, threshold: f64 },
    GateMix { gate: NodeId, on: NodeId, off: NodeId },
    LogSumExp(NodeId),
    Sum(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
///
/// Values are computed eagerly as nodes are pushed; `backward` walks the
/// record once in reverse. Parameters are read from the borrowed store, so
/// the store cannot change while a tape is alive.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    recording: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that keeps values but records no operations, for inference.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            recording: false,
            ..Self::new(params)
        }
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn width(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        let needs_grad = self.recording
            && match &op {
                Op::Leaf => false,
                Op::Row { .. } | Op::Affine { .. } => true,
                Op::Relu(x) | Op::Sigmoid(x) | Op::Scale(x, _) | Op::LogSumExp(x) | Op::Sum(x) => {
                    self.nodes[x.0].needs_grad
                }
                Op::Mul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Dot(a, b) => {
                    self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
                }
                Op::Parallel { t, h, .. } => self.nodes[t.0].needs_grad || self.nodes[h.0].needs_grad,
                Op::GateMix { gate, on, off } => [gate, on, off].iter().any(|n| self.nodes[n.0].needs_grad),
                Op::Concat(xs) | Op::Mean(xs) => xs.iter().any(|n| self.nodes[n.0].needs_grad),
            };
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn same_width(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.width(a) != self.width(b) {
            return mismatch(op, format!("[{}]", self.width(a)), format!("[{}]", self.width(b)));
        }
        Ok(())
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Row `row` of a parameter matrix (an embedding lookup).
    pub fn row(&mut self, param: ParamId, row: usize) -> Result<NodeId> {
        let value = self.params.get(param).value.row(row)?.to_vec();
        Ok(self.push(value, Op::Row { param, row }))
    }

    /// `W x + b` where `b` is stored as an `out x 1` block.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let wm = &self.params.get(w).value;
        let bm = &self.params.get(b).value;
        if wm.cols() != self.width(x) {
            return mismatch("affine", wm.shape(), format!("[{}]", self.width(x)));
        }
        if bm.values().len() != wm.rows() {
            return mismatch("affine", wm.shape(), format!("bias {}", bm.shape()));
        }
        let mut out = bm.values().to_vec();
        affine_into(wm.values(), wm.cols(), &self.nodes[x.0].value, &mut out);
        Ok(self.push(out, Op::Affine { w, b, x }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).iter().map(|&v| relu(v)).collect();
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(value, Op::Sigmoid(x))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width("sub", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width("dot", a, b)?;
        let value = vec![dot_slices(self.value(a), self.value(b))];
        Ok(self.push(value, Op::Dot(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).iter().map(|v| v * factor).collect();
        self.push(value, Op::Scale(x, factor))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.width(p)).sum());
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Elementwise arithmetic mean of equally sized nodes.
    pub fn mean(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return mismatch("mean", "[]", "at least one operand");
        };
        let mut value = vec![0.0; self.width(first)];
        for &p in parts {
            self.same_width("mean", first, p)?;
            for (acc, v) in value.iter_mut().zip(self.value(p)) {
                *acc += v;
            }
        }
        let n = parts.len() as f64;
        value.iter_mut().for_each(|v| *v /= n);
        Ok(self.push(value, Op::Mean(parts.to_vec())))
    }

    /// Projection of `h` onto `t`; zero when `t·t < threshold`.
    pub fn parallel(&mut self, t: NodeId, h: NodeId, threshold: f64) -> Result<NodeId> {
        self.same_width("project_decompose", t, h)?;
        let value = parallel_component(self.value(t), self.value(h), threshold);
        Ok(self.push(value, Op::Parallel { t, h, threshold }))
    }

    /// Returns `(parallel, orthogonal)` components of `h` relative to `t`.
    pub fn decompose(&mut self, t: NodeId, h: NodeId, threshold: f64) -> Result<(NodeId, NodeId)> {
        let parallel = self.parallel(t, h, threshold)?;
        let orthogonal = self.sub(h, parallel)?;
        Ok((parallel, orthogonal))
    }

    /// `gate ∘ on + (1 − gate) ∘ off`.
    pub fn gate_mix(&mut self, gate: NodeId, on: NodeId, off: NodeId) -> Result<NodeId> {
        self.same_width("gate_mix", gate, on)?;
        self.same_width("gate_mix", gate, off)?;
        let value = self
            .value(gate)
            .iter()
            .zip(self.value(on))
            .zip(self.value(off))
            .map(|((g, a), b)| g * a + (1.0 - g) * b)
            .collect();
        Ok(self.push(value, Op::GateMix { gate, on, off }))
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        if self.width(x) == 0 {
            return mismatch("log_sum_exp", "[0]", "non-empty vector");
        }
        let value = vec![log_sum_exp(self.value(x))];
        Ok(self.push(value, Op::LogSumExp(x)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = vec![self.value(x).iter().sum()];
        self.push(value, Op::Sum(x))
    }

    /// Reverse pass from a scalar node; returns fresh (zero-initialized)
    /// gradients for every registered parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.params);
        if self.nodes.is_empty() {
            return Ok(grads);
        }
        let loss_node = self.nodes.get(loss.0).ok_or(MathError::UnknownNode(loss.0))?;
        if loss_node.value.len() != 1 {
            return Err(MathError::NonScalarLoss(loss_node.value.len()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Row { param, row } => {
                    let cols = self.params.get(*param).value.cols();
                    let dst = &mut grads.get_mut(*param)[row * cols..(row + 1) * cols];
                    add_into(dst, &g);
                }
                Op::Affine { w, b, x } => {
                    let wm = &self.params.get(*w).value;
                    let cols = wm.cols();
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = grads.get_mut(*w);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (dst, &xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *dst += gr * xc;
                            }
                        }
                    }
                    add_into(grads.get_mut(*b), &g);
                    if self.nodes[x.0].needs_grad {
                        let gx = slot(&mut adj, *x, cols);
                        for (row, &gr) in wm.values().chunks_exact(cols).zip(&g) {
                            if gr == 0.0 {
                                continue;
                            }
                            for (dst, &wv) in gx.iter_mut().zip(row) {
                                *dst += gr * wv;
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = slot(&mut adj, *x, g.len());
                    for ((dst, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *dst += gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let yv = &node.value;
                    let gx = slot(&mut adj, *x, g.len());
                    for ((dst, &gi), &yi) in gx.iter_mut().zip(&g).zip(yv) {
                        *dst += gi * yi * (1.0 - yi);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].needs_grad {
                        let ga = slot(&mut adj, *a, g.len());
                        for ((dst, &gi), &bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *dst += gi * bi;
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = slot(&mut adj, *b, g.len());
                        for ((dst, &gi), &ai) in gb.iter_mut().zip(&g).zip(av) {
                            *dst += gi * ai;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.pass_through(&mut adj, *a, &g, 1.0);
                    self.pass_through(&mut adj, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.pass_through(&mut adj, *a, &g, 1.0);
                    self.pass_through(&mut adj, *b, &g, -1.0);
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].needs_grad {
                        let ga = slot(&mut adj, *a, bv.len());
                        for (dst, &bi) in ga.iter_mut().zip(bv) {
                            *dst += g0 * bi;
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = slot(&mut adj, *b, av.len());
                        for (dst, &ai) in gb.iter_mut().zip(av) {
                            *dst += g0 * ai;
                        }
                    }
                }
                Op::Scale(x, factor) => self.pass_through(&mut adj, *x, &g, *factor),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.width(p);
                        if self.nodes[p.0].needs_grad {
                            let gp = slot(&mut adj, p, w);
                            add_into(gp, &g[offset..offset + w]);
                        }
                        offset += w;
                    }
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for &p in parts {
                        self.pass_through(&mut adj, p, &g, inv);
                    }
                }
                Op::Parallel { t, h, threshold } => {
                    let (tv, hv) = (&self.nodes[t.0].value, &self.nodes[h.0].value);
                    let tt = dot_slices(tv, tv);
                    if tt < *threshold {
                        continue;
                    }
                    // p = c t with c = (h·t)/(t·t)
                    let ht = dot_slices(hv, tv);
                    let c = ht / tt;
                    let gc = dot_slices(&g, tv);
                    if self.nodes[h.0].needs_grad {
                        let gh = slot(&mut adj, *h, tv.len());
                        for (dst, &ti) in gh.iter_mut().zip(tv) {
                            *dst += gc * ti / tt;
                        }
                    }
                    if self.nodes[t.0].needs_grad {
                        let gt = slot(&mut adj, *t, tv.len());
                        for i in 0..tv.len() {
                            let dc_dt = hv[i] / tt - 2.0 * ht * tv[i] / (tt * tt);
                            gt[i] += c * g[i] + gc * dc_dt;
                        }
                    }
                }
                Op::GateMix { gate, on, off } => {
                    let gv = &self.nodes[gate.0].value;
                    let onv = &self.nodes[on.0].value;
                    let offv = &self.nodes[off.0].value;
                    if self.nodes[gate.0].needs_grad {
                        let gg = slot(&mut adj, *gate, g.len());
                        for i in 0..g.len() {
                            gg[i] += g[i] * (onv[i] - offv[i]);
                        }
                    }
                    if self.nodes[on.0].needs_grad {
                        let go = slot(&mut adj, *on, g.len());
                        for i in 0..g.len() {
                            go[i] += g[i] * gv[i];
                        }
                    }
                    if self.nodes[off.0].needs_grad {
                        let gf = slot(&mut adj, *off, g.len());
                        for i in 0..g.len() {
                            gf[i] += g[i] * (1.0 - gv[i]);
                        }
                    }
                }
                Op::LogSumExp(x) => {
                    let xv = &self.nodes[x.0].value;
                    let lse = node.value[0];
                    let gx = slot(&mut adj, *x, xv.len());
                    for (dst, &xi) in gx.iter_mut().zip(xv) {
                        *dst += g[0] * (xi - lse).exp();
                    }
                }
                Op::Sum(x) => {
                    let w = self.width(*x);
                    let gx = slot(&mut adj, *x, w);
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
        }
        Ok(grads)
    }

    fn pass_through(&self, adj: &mut [Option<Vec<f64>>], x: NodeId, g: &[f64], factor: f64) {
        if !self.nodes[x.0].needs_grad {
            return;
        }
        let gx = slot(adj, x, g.len());
        for (dst, &gi) in gx.iter_mut().zip(g) {
            *dst += factor * gi;
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], id: NodeId, width: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; width])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable `log Σ exp(x)`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
