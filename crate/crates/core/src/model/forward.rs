//! Network structure, generic over the evaluation backend.

use rand::Rng;

use super::graph::{Dropout, Graph};
use super::ops::sinusoids;
use super::params::Mlp;
use crate::distributions::{TIME_DISCRETIZATION, VELOCITY_DISCRETIZATION};
use crate::events::{Event, Modality};

/// Raw values of the four sub-events of one event.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SubEvents {
    /// Zero-based instrument row.
    pub instrument: usize,
    pub pitch: usize,
    pub time: f64,
    pub velocity: f64,
}

impl From<&Event> for SubEvents {
    fn from(e: &Event) -> Self {
        SubEvents {
            instrument: e.instrument.index(),
            pitch: e.pitch as usize,
            time: TIME_DISCRETIZATION.clamp(e.time_delta as f64),
            velocity: VELOCITY_DISCRETIZATION.clamp(e.velocity as f64),
        }
    }
}

/// Embedding of a continuous scalar: sinusoid features then an affine map.
pub fn embed_continuous<G: Graph>(g: &mut G, m: Modality, x: f64) -> G::Node {
    let p = g.params();
    let (freqs, proj) = match m {
        Modality::Time => (&p.time_freqs, p.layout.time_proj.clone()),
        Modality::Velocity => (&p.velocity_freqs, p.layout.velocity_proj.clone()),
        _ => panic!("{} is categorical", m.name()),
    };
    let feats = sinusoids(x, freqs);
    let c = g.constant(feats);
    g.linear(&proj, &c)
}

pub fn embed_modality<G: Graph>(g: &mut G, m: Modality, v: &SubEvents) -> G::Node {
    let lay = &g.params().layout;
    match m {
        Modality::Instrument => {
            let t = lay.instrument_table;
            g.embed(t, v.instrument)
        }
        Modality::Pitch => {
            let t = lay.pitch_table;
            g.embed(t, v.pitch)
        }
        Modality::Time => embed_continuous(g, m, v.time),
        Modality::Velocity => embed_continuous(g, m, v.velocity),
    }
}

/// Per-modality embeddings, indexed by [`Modality::index`].
pub fn embed_sub_events<G: Graph>(g: &mut G, v: &SubEvents) -> [G::Node; 4] {
    Modality::ALL.map(|m| embed_modality(g, m, v))
}

pub fn initial_state<G: Graph>(g: &mut G) -> Vec<G::Node> {
    let ids = g.params().layout.initial_state.clone();
    ids.into_iter().map(|p| g.param(p)).collect()
}

/// Advance every GRU layer by one step; the last entry is the top state.
pub fn gru_step<G: Graph>(g: &mut G, state: &[G::Node], input: &G::Node) -> Vec<G::Node> {
    let layers = g.params().layout.gru.clone();
    let mut x = input.clone();
    let mut next = Vec::with_capacity(layers.len());
    for (layer, h) in layers.iter().zip(state) {
        let h2 = g.gru_cell(layer, &x, h);
        x = h2.clone();
        next.push(h2);
    }
    next
}

pub fn dropout_mask(len: usize, p: f64, rng: &mut dyn rand::RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub fn mlp<G: Graph>(g: &mut G, mlp: &Mlp, x: &G::Node, mut dropout: Dropout<'_>) -> G::Node {
    let mut h = x.clone();
    for blk in &mlp.blocks {
        let n = g.layer_norm(&h);
        let a = g.linear(blk, &n);
        h = g.glu(&a);
        if let Some((p, rng)) = dropout.as_mut() {
            if *p > 0.0 {
                let mask = dropout_mask(blk.out / 2, *p, &mut **rng);
                h = g.mask(&h, mask);
            }
        }
    }
    g.linear(&mlp.out, &h)
}

/// `f_m(context + Σ cond)` where `context = f_h(h)`.
pub fn conditioned_head<G: Graph>(
    g: &mut G,
    m: Modality,
    context: &G::Node,
    cond: &[G::Node],
    dropout: Dropout<'_>,
) -> G::Node {
    let mut z = context.clone();
    for c in cond {
        z = g.add(&z, c);
    }
    let head = g.params().layout.heads[m.index()].clone();
    mlp(g, &head, &z, dropout)
}

pub fn hidden_context<G: Graph>(g: &mut G, top: &G::Node, dropout: Dropout<'_>) -> G::Node {
    let f_h = g.params().layout.f_h.clone();
    mlp(g, &f_h, top, dropout)
}

pub fn eos_logit<G: Graph>(g: &mut G, top: &G::Node) -> G::Node {
    let eos = g.params().layout.eos.clone();
    g.linear(&eos, top)
}
