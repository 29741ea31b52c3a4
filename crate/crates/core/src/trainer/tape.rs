//! Reverse-mode differentiation over the fixed set of operations the
//! network uses. Parameters never become tape nodes: ops refer to them by
//! id and the backward pass accumulates straight into [`Grads`].

use crate::distributions::numeric::{log_sigmoid_diff, logsumexp, sigmoid, softplus};
use crate::distributions::LOG_SCALE_FLOOR;
use crate::error::{Error, Result};
use crate::model::graph::Graph;
use crate::model::linalg::{affine, axpy, matvec_t_add, outer_add};
use crate::model::ops::{self, GruAux};
use crate::model::{DmolHead, GruLayer, Linear, ModelParams, ParamId};

use super::loss::LossGraph;

pub type NodeId = usize;

/// Gradient buffers shaped like the model's tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros(params: &ModelParams) -> Self {
        Grads {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &Grads) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(x, y)| x * y)
            .sum()
    }

    /// Fails naming the first tensor holding a NaN or infinity.
    pub fn check_finite(&self, params: &ModelParams) -> Result<()> {
        for (t, g) in params.tensors.iter().zip(&self.tensors) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(t.name.clone()));
            }
        }
        Ok(())
    }
}

enum Op {
    Constant,
    Param(ParamId),
    Embed { table: ParamId, row: usize },
    Linear { w: ParamId, b: ParamId, x: NodeId },
    Add(NodeId, NodeId),
    LayerNorm { x: NodeId, inv_std: f64 },
    Glu { x: NodeId },
    Mask { x: NodeId, mask: Vec<f64> },
    Gru { layer: GruLayer, x: NodeId, h: NodeId, aux: GruAux },
    CategoricalNll { logits: NodeId, target: usize },
    DmolNll { raw: NodeId, head: DmolHead, x: f64 },
    Bce { logit: NodeId, target: f64 },
    Sum(Vec<NodeId>),
}

pub struct Tape<'p> {
    params: &'p ModelParams,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Tape {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        self.values[n][0]
    }

    /// Gradients of the scalar node `root` with respect to every parameter.
    pub fn backward(&self, root: NodeId) -> Grads {
        let mut grads = Grads::zeros(self.params);
        self.backward_into(root, 1.0, &mut grads);
        grads
    }

    /// Accumulate `seed · ∂root/∂θ` into `grads`.
    pub fn backward_into(&self, root: NodeId, seed: f64, grads: &mut Grads) {
        let p = self.params;
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.values.len()).map(|_| None).collect();
        adj[root] = Some(vec![seed; self.values[root].len()]);

        fn acc(adj: &mut [Option<Vec<f64>>], n: NodeId, g: &[f64]) {
            match &mut adj[n] {
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                slot @ None => *slot = Some(g.to_vec()),
            }
        }

        for i in (0..=root).rev() {
            let Some(dy) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Constant => {}
                Op::Param(id) => {
                    axpy(1.0, &dy, &mut grads.tensors[id.0]);
                }
                Op::Embed { table, row } => {
                    let w = dy.len();
                    axpy(1.0, &dy, &mut grads.tensors[table.0][row * w..(row + 1) * w]);
                }
                Op::Linear { w, b, x } => {
                    let xv = &self.values[*x];
                    outer_add(&mut grads.tensors[w.0], &dy, xv);
                    axpy(1.0, &dy, &mut grads.tensors[b.0]);
                    if !matches!(self.ops[*x], Op::Constant) {
                        let mut dx = vec![0.0; xv.len()];
                        matvec_t_add(p.data(*w), &dy, &mut dx);
                        acc(&mut adj, *x, &dx);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, &dy);
                    acc(&mut adj, *b, &dy);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &self.values[i];
                    let n = y.len() as f64;
                    let mean_dy = dy.iter().sum::<f64>() / n;
                    let mean_dyy = dy.iter().zip(y).map(|(g, v)| g * v).sum::<f64>() / n;
                    let dx: Vec<f64> = dy
                        .iter()
                        .zip(y)
                        .map(|(g, v)| inv_std * (g - mean_dy - v * mean_dyy))
                        .collect();
                    acc(&mut adj, *x, &dx);
                }
                Op::Glu { x } => {
                    let xv = &self.values[*x];
                    let half = xv.len() / 2;
                    let mut dx = vec![0.0; xv.len()];
                    for j in 0..half {
                        let s = sigmoid(xv[half + j]);
                        dx[j] = dy[j] * s;
                        dx[half + j] = dy[j] * xv[j] * s * (1.0 - s);
                    }
                    acc(&mut adj, *x, &dx);
                }
                Op::Mask { x, mask } => {
                    let dx: Vec<f64> = dy.iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(&mut adj, *x, &dx);
                }
                Op::Gru { layer, x, h, aux } => {
                    let hd = layer.hidden;
                    let hv = &self.values[*h];
                    let xv = &self.values[*x];
                    let mut dgi = vec![0.0; 3 * hd];
                    let mut dgh = vec![0.0; 3 * hd];
                    let mut dh = vec![0.0; hd];
                    for j in 0..hd {
                        let (r, z, n) = (aux.r[j], aux.z[j], aux.n[j]);
                        let dz = dy[j] * (hv[j] - n);
                        let dn = dy[j] * (1.0 - z);
                        dh[j] = dy[j] * z;
                        let dn_pre = dn * (1.0 - n * n);
                        let dr_pre = dn_pre * aux.gh_n[j] * r * (1.0 - r);
                        let dz_pre = dz * z * (1.0 - z);
                        dgi[j] = dr_pre;
                        dgi[hd + j] = dz_pre;
                        dgi[2 * hd + j] = dn_pre;
                        dgh[j] = dr_pre;
                        dgh[hd + j] = dz_pre;
                        dgh[2 * hd + j] = dn_pre * r;
                    }
                    outer_add(&mut grads.tensors[layer.w_ih.0], &dgi, xv);
                    axpy(1.0, &dgi, &mut grads.tensors[layer.b_ih.0]);
                    outer_add(&mut grads.tensors[layer.w_hh.0], &dgh, hv);
                    axpy(1.0, &dgh, &mut grads.tensors[layer.b_hh.0]);
                    let mut dx = vec![0.0; xv.len()];
                    matvec_t_add(p.data(layer.w_ih), &dgi, &mut dx);
                    matvec_t_add(p.data(layer.w_hh), &dgh, &mut dh);
                    acc(&mut adj, *x, &dx);
                    acc(&mut adj, *h, &dh);
                }
                Op::CategoricalNll { logits, target } => {
                    let l = &self.values[*logits];
                    let z = logsumexp(l);
                    let mut dl: Vec<f64> = l.iter().map(|v| dy[0] * (v - z).exp()).collect();
                    dl[*target] -= dy[0];
                    acc(&mut adj, *logits, &dl);
                }
                Op::DmolNll { raw, head, x } => {
                    let dr = dmol_nll_grad(&self.values[*raw], head, *x);
                    let dr: Vec<f64> = dr.into_iter().map(|v| v * dy[0]).collect();
                    acc(&mut adj, *raw, &dr);
                }
                Op::Bce { logit, target } => {
                    let l = self.values[*logit][0];
                    acc(&mut adj, *logit, &[dy[0] * (sigmoid(l) - target)]);
                }
                Op::Sum(nodes) => {
                    for n in nodes {
                        acc(&mut adj, *n, &dy);
                    }
                }
            }
        }
    }
}

struct DmolTerms {
    locs: Vec<f64>,
    log_scales: Vec<f64>,
    inv_scales: Vec<f64>,
    /// Log-softmax of the weights.
    log_weights: Vec<f64>,
    /// Log bin mass per component.
    masses: Vec<f64>,
}

fn dmol_terms(raw: &[f64], head: &DmolHead, x: f64) -> DmolTerms {
    let k = head.k;
    let w = &raw[..k];
    let z = logsumexp(w);
    let log_weights: Vec<f64> = w.iter().map(|v| v - z).collect();
    let locs: Vec<f64> = raw[k..2 * k]
        .iter()
        .map(|r| head.loc_offset + head.loc_unit * r)
        .collect();
    let unit_log = head.loc_unit.ln();
    let log_scales: Vec<f64> = raw[2 * k..]
        .iter()
        .map(|r| (unit_log + r).max(LOG_SCALE_FLOOR))
        .collect();
    let inv_scales: Vec<f64> = log_scales.iter().map(|s| (-s).exp()).collect();
    let masses = (0..k)
        .map(|j| {
            let (a, b) = head.disc.standardized_edges(x, locs[j], inv_scales[j]);
            log_sigmoid_diff(a, b)
        })
        .collect();
    DmolTerms {
        locs,
        log_scales,
        inv_scales,
        log_weights,
        masses,
    }
}

fn dmol_nll_value(raw: &[f64], head: &DmolHead, x: f64) -> f64 {
    let t = dmol_terms(raw, head, x);
    let terms: Vec<f64> = t.log_weights.iter().zip(&t.masses).map(|(a, b)| a + b).collect();
    -logsumexp(&terms)
}

fn dmol_nll_grad(raw: &[f64], head: &DmolHead, x: f64) -> Vec<f64> {
    let k = head.k;
    let t = dmol_terms(raw, head, x);
    let terms: Vec<f64> = t.log_weights.iter().zip(&t.masses).map(|(a, b)| a + b).collect();
    let total = logsumexp(&terms);
    let mut g = vec![0.0; 3 * k];
    let unit_log = head.loc_unit.ln();
    for j in 0..k {
        let post = (terms[j] - total).exp();
        let prior = t.log_weights[j].exp();
        g[j] = -(post - prior);
        if post == 0.0 {
            continue;
        }
        let (a, b) = head.disc.standardized_edges(x, t.locs[j], t.inv_scales[j]);
        let (da, db) = match (a.is_finite(), b.is_finite()) {
            (false, false) => (0.0, 0.0),
            (true, false) => (sigmoid(-a), 0.0),
            (false, true) => (0.0, -sigmoid(b)),
            (true, true) => {
                let e = 1.0 / (a - b).exp_m1();
                (sigmoid(-a) + e, -sigmoid(b) - e)
            }
        };
        // a = (edge - loc) / s, so ∂a/∂loc = -1/s and ∂a/∂ln s = -a
        let mut dloc = 0.0;
        let mut dls = 0.0;
        if a.is_finite() {
            dloc -= da * t.inv_scales[j];
            dls -= da * a;
        }
        if b.is_finite() {
            dloc -= db * t.inv_scales[j];
            dls -= db * b;
        }
        g[k + j] = -post * dloc * head.loc_unit;
        if unit_log + raw[2 * k + j] > LOG_SCALE_FLOOR {
            g[2 * k + j] = -post * dls;
        }
        debug_assert!(t.log_scales[j] >= LOG_SCALE_FLOOR);
    }
    g
}

impl Graph for Tape<'_> {
    type Node = NodeId;

    fn params(&self) -> &ModelParams {
        self.params
    }

    fn value<'s>(&'s self, n: &'s NodeId) -> &'s [f64] {
        &self.values[*n]
    }

    fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(v, Op::Constant)
    }

    fn param(&mut self, id: ParamId) -> NodeId {
        let v = self.params.data(id).to_vec();
        self.push(v, Op::Param(id))
    }

    fn embed(&mut self, table: ParamId, row: usize) -> NodeId {
        let t = self.params.tensor(table);
        let w = t.shape[1];
        let v = t.data[row * w..(row + 1) * w].to_vec();
        self.push(v, Op::Embed { table, row })
    }

    fn linear(&mut self, l: &Linear, x: &NodeId) -> NodeId {
        let v = affine(self.params.data(l.w), self.params.data(l.b), &self.values[*x]);
        self.push(v, Op::Linear { w: l.w, b: l.b, x: *x })
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.values[*a].iter().zip(&self.values[*b]).map(|(x, y)| x + y).collect();
        self.push(v, Op::Add(*a, *b))
    }

    fn layer_norm(&mut self, x: &NodeId) -> NodeId {
        let (v, inv_std) = ops::layer_norm(&self.values[*x]);
        self.push(v, Op::LayerNorm { x: *x, inv_std })
    }

    fn glu(&mut self, x: &NodeId) -> NodeId {
        let v = ops::glu(&self.values[*x]);
        self.push(v, Op::Glu { x: *x })
    }

    fn mask(&mut self, x: &NodeId, mask: Vec<f64>) -> NodeId {
        let v = self.values[*x].iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(v, Op::Mask { x: *x, mask })
    }

    fn gru_cell(&mut self, layer: &GruLayer, x: &NodeId, h: &NodeId) -> NodeId {
        let (v, aux) = ops::gru_cell(self.params, layer, &self.values[*x], &self.values[*h]);
        self.push(
            v,
            Op::Gru {
                layer: layer.clone(),
                x: *x,
                h: *h,
                aux,
            },
        )
    }

    fn sum(&mut self, nodes: &[NodeId]) -> NodeId {
        let mut v = self.values[nodes[0]].clone();
        for n in &nodes[1..] {
            for (a, b) in v.iter_mut().zip(&self.values[*n]) {
                *a += b;
            }
        }
        self.push(v, Op::Sum(nodes.to_vec()))
    }
}

impl LossGraph for Tape<'_> {
    fn categorical_nll(&mut self, logits: &NodeId, target: usize) -> NodeId {
        let l = &self.values[*logits];
        let v = logsumexp(l) - l[target];
        self.push(vec![v], Op::CategoricalNll { logits: *logits, target })
    }

    fn dmol_nll(&mut self, raw: &NodeId, head: &DmolHead, x: f64) -> NodeId {
        let v = dmol_nll_value(&self.values[*raw], head, x);
        self.push(vec![v], Op::DmolNll { raw: *raw, head: *head, x })
    }

    fn bce(&mut self, logit: &NodeId, target: f64) -> NodeId {
        let l = self.values[*logit][0];
        self.push(vec![softplus(l) - target * l], Op::Bce { logit: *logit, target })
    }
}

pub(crate) fn dmol_nll_eval(raw: &[f64], head: &DmolHead, x: f64) -> f64 {
    dmol_nll_value(raw, head, x)
}
