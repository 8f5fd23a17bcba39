//! Reverse-mode gradient tape over [`Tensor2`] values.
//!
//! Every differentiable step of a training iteration is recorded as a
//! primitive application; [`Tape::backward`] replays the record in reverse
//! and accumulates gradients for all registered parameters.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::tensor::{matmul, relu, softmax_rows, Tensor2};

pub type NodeId = usize;

/// Per-node incidence used by the neighbor-mean primitive: for each node,
/// the (neighbor node id, edge id) pairs in ascending edge-id order.
#[derive(Debug, Clone)]
pub struct AdjacencyPlan {
    pub incidence: Vec<Vec<(usize, usize)>>,
    pub num_edges: usize,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// x (n×d) plus a 1×d bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    /// Elementwise multiply by a fixed mask (dropout keep/scale values).
    MulMask(NodeId, Vec<f64>),
    ConcatCols(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    /// Mean over each node's incident (neighbor state ‖ edge feature) rows.
    NeighborMean {
        states: NodeId,
        edge_feats: NodeId,
        plan: Arc<AdjacencyPlan>,
    },
    SoftmaxRows(NodeId),
    /// Mean binary cross-entropy over masked rows of a 2-column
    /// probability matrix, reading the class-1 column, clamped at 1e-12.
    MaskedBce {
        probs: NodeId,
        labels: Vec<f64>,
        mask: Vec<usize>,
    },
    /// InfoNCE over embedding rows with dot-product similarity.
    InfoNce {
        emb: NodeId,
        anchors: Vec<usize>,
        positives: Vec<usize>,
        negatives: Vec<Vec<usize>>,
    },
    /// a + s·b on scalars.
    AddScaled(NodeId, NodeId, f64),
}

struct TapeNode {
    op: Op,
    value: Tensor2,
}

pub const BCE_CLAMP: f64 = 1e-12;

/// Records a computation over tensors and computes reverse-mode gradients.
pub struct Tape {
    nodes: Vec<TapeNode>,
    params: Vec<NodeId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor2) -> NodeId {
        self.nodes.push(TapeNode { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].value.data[0]
    }

    /// Registers a trainable parameter; gradients are reported in
    /// registration order.
    pub fn param(&mut self, value: Tensor2) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.params.push(id);
        id
    }

    /// A non-trainable input (edge features, initial node states).
    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (&self.nodes[x].value, &self.nodes[bias].value);
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(Error::Shape(format!(
                "add_bias: x is {}x{}, bias is {}x{}",
                xv.rows, xv.cols, bv.rows, bv.cols
            )));
        }
        let mut out = xv.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += bv.data[c];
            }
        }
        Ok(self.push(Op::AddBias(x, bias), out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = relu(&self.nodes[x].value);
        self.push(Op::Relu(x), v)
    }

    /// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
    /// Identity when not training or p = 0.
    pub fn dropout<R: Rng>(
        &mut self,
        x: NodeId,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p must be in [0,1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let n = self.nodes[x].value.len();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_mask(x, mask)
    }

    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if mask.len() != xv.len() {
            return Err(Error::Shape("mask length mismatch".into()));
        }
        let mut out = xv.clone();
        for (o, m) in out.data.iter_mut().zip(mask.iter()) {
            *o *= m;
        }
        Ok(self.push(Op::MulMask(x, mask), out))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.rows != bv.rows {
            return Err(Error::Shape(format!(
                "concat_cols: {} vs {} rows",
                av.rows, bv.rows
            )));
        }
        let mut out = Tensor2::zeros(av.rows, av.cols + bv.cols);
        for r in 0..av.rows {
            out.row_mut(r)[..av.cols].copy_from_slice(av.row(r));
            out.row_mut(r)[av.cols..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(Op::ConcatCols(a, b), out))
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let mut out = Tensor2::zeros(indices.len(), xv.cols);
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= xv.rows {
                return Err(Error::Shape(format!("gather_rows: row {idx} out of range")));
            }
            out.row_mut(i).copy_from_slice(xv.row(idx));
        }
        Ok(self.push(Op::GatherRows(x, indices), out))
    }

    /// For each node v: mean over incident edges, in ascending edge-id
    /// order, of concat(h_u, e_uv). Isolated nodes yield zero rows.
    pub fn neighbor_mean(
        &mut self,
        states: NodeId,
        edge_feats: NodeId,
        plan: Arc<AdjacencyPlan>,
    ) -> Result<NodeId> {
        let hv = &self.nodes[states].value;
        let ev = &self.nodes[edge_feats].value;
        if hv.rows != plan.incidence.len() || ev.rows != plan.num_edges {
            return Err(Error::Shape(format!(
                "neighbor_mean: {} states / {} incidence, {} edge rows / {} plan edges",
                hv.rows,
                plan.incidence.len(),
                ev.rows,
                plan.num_edges
            )));
        }
        let (dh, de) = (hv.cols, ev.cols);
        let mut out = Tensor2::zeros(hv.rows, dh + de);
        for (v, pairs) in plan.incidence.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let inv = 1.0 / pairs.len() as f64;
            let orow = out.row_mut(v);
            for &(u, e) in pairs {
                for (c, val) in hv.row(u).iter().enumerate() {
                    orow[c] += val;
                }
                for (c, val) in ev.row(e).iter().enumerate() {
                    orow[dh + c] += val;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        Ok(self.push(
            Op::NeighborMean {
                states,
                edge_feats,
                plan,
            },
            out,
        ))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = softmax_rows(&self.nodes[x].value);
        self.push(Op::SoftmaxRows(x), v)
    }

    /// Mean BCE over masked rows, with p = clamped class-1 probability.
    pub fn masked_bce(&mut self, probs: NodeId, labels: Vec<f64>, mask: Vec<usize>) -> Result<NodeId> {
        let pv = &self.nodes[probs].value;
        if pv.cols != 2 || labels.len() != pv.rows {
            return Err(Error::Shape("masked_bce expects Nx2 probs with N labels".into()));
        }
        if mask.is_empty() {
            return Err(Error::Empty("masked_bce: empty edge mask".into()));
        }
        let mut total = 0.0;
        for &i in &mask {
            let p = pv.get(i, 1).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = labels[i];
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let v = Tensor2::scalar(total / mask.len() as f64);
        Ok(self.push(Op::MaskedBce { probs, labels, mask }, v))
    }

    /// InfoNCE loss over rows of an embedding matrix, log-sum-exp form.
    pub fn infonce(
        &mut self,
        emb: NodeId,
        anchors: Vec<usize>,
        positives: Vec<usize>,
        negatives: Vec<Vec<usize>>,
    ) -> Result<NodeId> {
        if anchors.is_empty() {
            return Err(Error::Empty("infonce: zero anchors".into()));
        }
        if anchors.len() != positives.len() || anchors.len() != negatives.len() {
            return Err(Error::Shape("infonce: anchor/positive/negative count mismatch".into()));
        }
        let z = &self.nodes[emb].value;
        let dot = |a: usize, b: usize| -> f64 {
            z.row(a).iter().zip(z.row(b).iter()).map(|(x, y)| x * y).sum()
        };
        let mut total = 0.0;
        for (i, &a) in anchors.iter().enumerate() {
            let sp = dot(a, positives[i]);
            let sns: Vec<f64> = negatives[i].iter().map(|&n| dot(a, n)).collect();
            let m = sns.iter().cloned().fold(sp, f64::max);
            let lse = m
                + ((sp - m).exp() + sns.iter().map(|s| (s - m).exp()).sum::<f64>()).ln();
            total += lse - sp;
        }
        let v = Tensor2::scalar(total / anchors.len() as f64);
        Ok(self.push(
            Op::InfoNce {
                emb,
                anchors,
                positives,
                negatives,
            },
            v,
        ))
    }

    /// a + s·b on 1×1 tensors.
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, s: f64) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.len() != 1 || bv.len() != 1 {
            return Err(Error::Shape("add_scaled expects scalars".into()));
        }
        let v = Tensor2::scalar(av.data[0] + s * bv.data[0]);
        Ok(self.push(Op::AddScaled(a, b, s), v))
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// registered parameter, in registration order. Parameters the loss
    /// does not reach get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Tensor2>> {
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::Shape("backward: loss must be scalar".into()));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor2::scalar(1.0));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da = matmul(&g, &bv.transpose())?;
                    let db = matmul(&av.transpose(), &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(x, bias) => {
                    let mut db = Tensor2::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            db.data[c] += g.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = g;
                    for (d, v) in dx.data.iter_mut().zip(xv.data.iter()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MulMask(x, mask) => {
                    let mut dx = g;
                    for (d, m) in dx.data.iter_mut().zip(mask.iter()) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let (ac, bc) = (self.nodes[*a].value.cols, self.nodes[*b].value.cols);
                    let mut da = Tensor2::zeros(g.rows, ac);
                    let mut db = Tensor2::zeros(g.rows, bc);
                    for r in 0..g.rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::GatherRows(x, indices) => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor2::zeros(xv.rows, xv.cols);
                    for (i, &idx) in indices.iter().enumerate() {
                        let row = dx.row_mut(idx);
                        for (d, v) in row.iter_mut().zip(g.row(i).iter()) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::NeighborMean {
                    states,
                    edge_feats,
                    plan,
                } => {
                    let hv = &self.nodes[*states].value;
                    let ev = &self.nodes[*edge_feats].value;
                    let (dh_cols, de_cols) = (hv.cols, ev.cols);
                    let mut dh = Tensor2::zeros(hv.rows, dh_cols);
                    let mut de = Tensor2::zeros(ev.rows, de_cols);
                    for (v, pairs) in plan.incidence.iter().enumerate() {
                        if pairs.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / pairs.len() as f64;
                        let grow = g.row(v);
                        for &(u, e) in pairs {
                            let drow = dh.row_mut(u);
                            for (c, d) in drow.iter_mut().enumerate() {
                                *d += grow[c] * inv;
                            }
                            let erow = de.row_mut(e);
                            for (c, d) in erow.iter_mut().enumerate() {
                                *d += grow[dh_cols + c] * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *states, dh);
                    accumulate(&mut grads, *edge_feats, de);
                }
                Op::SoftmaxRows(x) => {
                    let s = &self.nodes[id].value;
                    let mut dx = Tensor2::zeros(s.rows, s.cols);
                    for r in 0..s.rows {
                        let srow = s.row(r);
                        let grow = g.row(r);
                        let inner: f64 = srow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        let drow = dx.row_mut(r);
                        for c in 0..s.cols {
                            drow[c] = srow[c] * (grow[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaskedBce { probs, labels, mask } => {
                    let pv = &self.nodes[*probs].value;
                    let scale = g.data[0] / mask.len() as f64;
                    let mut dp = Tensor2::zeros(pv.rows, pv.cols);
                    for &i in mask {
                        let raw = pv.get(i, 1);
                        // zero gradient where the clamp is active
                        if raw <= BCE_CLAMP || raw >= 1.0 - BCE_CLAMP {
                            continue;
                        }
                        let y = labels[i];
                        dp.set(i, 1, scale * (-y / raw + (1.0 - y) / (1.0 - raw)));
                    }
                    accumulate(&mut grads, *probs, dp);
                }
                Op::InfoNce {
                    emb,
                    anchors,
                    positives,
                    negatives,
                } => {
                    let z = &self.nodes[*emb].value;
                    let mut dz = Tensor2::zeros(z.rows, z.cols);
                    let scale = g.data[0] / anchors.len() as f64;
                    let dot = |a: usize, b: usize| -> f64 {
                        z.row(a).iter().zip(z.row(b).iter()).map(|(x, y)| x * y).sum()
                    };
                    for (i, &a) in anchors.iter().enumerate() {
                        let p = positives[i];
                        let sp = dot(a, p);
                        let sns: Vec<f64> = negatives[i].iter().map(|&n| dot(a, n)).collect();
                        let m = sns.iter().cloned().fold(sp, f64::max);
                        let ep = (sp - m).exp();
                        let ens: Vec<f64> = sns.iter().map(|s| (s - m).exp()).collect();
                        let denom = ep + ens.iter().sum::<f64>();
                        // d loss_i / d s+ = w+ - 1; d loss_i / d s-_j = w_j
                        let dsp = scale * (ep / denom - 1.0);
                        axpy(dz.row_mut(a), dsp, z.row(p));
                        axpy(dz.row_mut(p), dsp, z.row(a));
                        for (j, &n) in negatives[i].iter().enumerate() {
                            let dsn = scale * (ens[j] / denom);
                            axpy(dz.row_mut(a), dsn, z.row(n));
                            axpy(dz.row_mut(n), dsn, z.row(a));
                        }
                    }
                    accumulate(&mut grads, *emb, dz);
                }
                Op::AddScaled(a, b, s) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.scale(*s));
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|&p| {
                grads[p].clone().unwrap_or_else(|| {
                    let v = &self.nodes[p].value;
                    Tensor2::zeros(v.rows, v.cols)
                })
            })
            .collect())
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += a * s;
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, g: Tensor2) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Plain inverted dropout on a tensor value (no tape).
pub fn dropout<R: Rng>(x: &Tensor2, p: f64, training: bool, rng: &mut R) -> Result<Tensor2> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout p must be in [0,1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        if rng.gen::<f64>() < p {
            *v = 0.0;
        } else {
            *v *= keep;
        }
    }
    Ok(out)
}
