//! The any-order objective. For each event and each target sub-event the
//! head sees `f_h(h)` plus the embeddings of whichever other sub-events the
//! mask admits; the loss is the sum of the four negative log-likelihoods and
//! the end-of-sequence Bernoulli term.

use crate::distributions::numeric::{logsumexp, softplus};
use crate::events::{Event, Modality};
use crate::model::forward::{self, embed_sub_events, SubEvents};
use crate::model::graph::{Dropout, Eval, Graph};
use crate::model::{DmolHead, ModelParams};

use super::masks::PermutationMask;
use super::tape::dmol_nll_eval;

/// Loss terms on top of the network graph.
pub trait LossGraph: Graph {
    fn categorical_nll(&mut self, logits: &Self::Node, target: usize) -> Self::Node;
    fn dmol_nll(&mut self, raw: &Self::Node, head: &DmolHead, x: f64) -> Self::Node;
    /// Binary cross-entropy against a logit.
    fn bce(&mut self, logit: &Self::Node, target: f64) -> Self::Node;
}

impl LossGraph for Eval<'_> {
    fn categorical_nll(&mut self, logits: &Vec<f64>, target: usize) -> Vec<f64> {
        vec![logsumexp(logits) - logits[target]]
    }

    fn dmol_nll(&mut self, raw: &Vec<f64>, head: &DmolHead, x: f64) -> Vec<f64> {
        vec![dmol_nll_eval(raw, head, x)]
    }

    fn bce(&mut self, logit: &Vec<f64>, target: f64) -> Vec<f64> {
        vec![softplus(logit[0]) - target * logit[0]]
    }
}

/// Loss nodes for one event.
#[derive(Clone, Debug)]
pub struct EventTerms<N> {
    /// Indexed by [`Modality::index`].
    pub modalities: [N; 4],
    pub eos: N,
}

/// Per-modality NLL values in nats.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct EventNll {
    pub modalities: [f64; 4],
    pub eos: f64,
}

impl EventNll {
    pub fn total(&self) -> f64 {
        self.modalities.iter().sum::<f64>() + self.eos
    }
}

/// NLL terms for one event given the top hidden state node.
pub fn record_event<G: LossGraph>(
    g: &mut G,
    top: &G::Node,
    e: &SubEvents,
    embeddings: &[G::Node; 4],
    mask: &PermutationMask,
    eos_target: f64,
    mut dropout: Dropout<'_>,
) -> EventTerms<G::Node> {
    let ctx = forward::hidden_context(g, top, reborrow(&mut dropout));
    let modalities = Modality::ALL.map(|m| {
        let cond: Vec<G::Node> = mask
            .conditioning(m)
            .map(|c| embeddings[c.index()].clone())
            .collect();
        let raw = forward::conditioned_head(g, m, &ctx, &cond, reborrow(&mut dropout));
        match m {
            Modality::Instrument => g.categorical_nll(&raw, e.instrument),
            Modality::Pitch => g.categorical_nll(&raw, e.pitch),
            Modality::Time => {
                let head = g.params().dmol_head(m);
                g.dmol_nll(&raw, &head, e.time)
            }
            Modality::Velocity => {
                let head = g.params().dmol_head(m);
                g.dmol_nll(&raw, &head, e.velocity)
            }
        }
    });
    let logit = forward::eos_logit(g, top);
    let eos = g.bce(&logit, eos_target);
    EventTerms { modalities, eos }
}

fn reborrow<'a>(d: &'a mut Dropout<'_>) -> Dropout<'a> {
    d.as_mut().map(|(p, r)| (*p, &mut **r as &mut dyn rand::RngCore))
}

/// Every loss node of one training sequence.
#[derive(Clone, Debug)]
pub struct SequenceTerms<N> {
    pub events: Vec<EventTerms<N>>,
    /// End-of-sequence target after the last event, when the crop reaches
    /// the end of a terminated stream.
    pub final_eos: Option<N>,
    pub total: N,
}

/// Run the recurrence over `events` from the initial state and record the
/// loss of every event. `masks` holds one mask per event.
pub fn record_sequence<G: LossGraph>(
    g: &mut G,
    events: &[Event],
    masks: &[PermutationMask],
    eos_at_end: bool,
    mut dropout: Dropout<'_>,
) -> SequenceTerms<G::Node> {
    assert!(!events.is_empty(), "empty training sequence");
    assert_eq!(events.len(), masks.len());
    let mut state = forward::initial_state(g);
    let mut terms = Vec::with_capacity(events.len());
    let mut all = Vec::with_capacity(5 * events.len() + 1);
    for (i, (e, mask)) in events.iter().zip(masks).enumerate() {
        let sub = SubEvents::from(e);
        let emb = embed_sub_events(g, &sub);
        let top = state.last().unwrap().clone();
        let t = record_event(g, &top, &sub, &emb, mask, 0.0, reborrow(&mut dropout));
        all.extend(t.modalities.iter().cloned());
        all.push(t.eos.clone());
        terms.push(t);
        if i + 1 < events.len() || eos_at_end {
            let input = g.sum(&emb);
            state = forward::gru_step(g, &state, &input);
        }
    }
    let final_eos = eos_at_end.then(|| {
        let top = state.last().unwrap().clone();
        let logit = forward::eos_logit(g, &top);
        let n = g.bce(&logit, 1.0);
        all.push(n.clone());
        n
    });
    let total = g.sum(&all);
    SequenceTerms {
        events: terms,
        final_eos,
        total,
    }
}

/// NLL of one event given the top-layer hidden state, in inference mode.
pub fn event_nll(params: &ModelParams, h: &[f64], e: &Event, mask: &PermutationMask) -> EventNll {
    let mut g = Eval::new(params);
    let sub = SubEvents::from(e);
    let emb = embed_sub_events(&mut g, &sub);
    let t = record_event(&mut g, &h.to_vec(), &sub, &emb, mask, 0.0, None);
    EventNll {
        modalities: t.modalities.map(|v| v[0]),
        eos: t.eos[0],
    }
}

/// Sequence NLL values without recording, for validation.
pub fn sequence_nll(
    params: &ModelParams,
    events: &[Event],
    masks: &[PermutationMask],
    eos_at_end: bool,
) -> (Vec<EventNll>, Option<f64>) {
    let mut g = Eval::new(params);
    let s = record_sequence(&mut g, events, masks, eos_at_end, None);
    let per = s
        .events
        .iter()
        .map(|t| EventNll {
            modalities: t.modalities.clone().map(|v| v[0]),
            eos: t.eos[0],
        })
        .collect();
    (per, s.final_eos.map(|v| v[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{categorical_log_prob, dmol_bin_log_prob, CategoricalParams};
    use crate::model::{dmol_from_raw, ConditioningSet, Model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ModelParams {
        ModelParams::init(&ModelConfig::micro(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn uniform_pitch_logits_give_ln_128() {
        let mut p = params(1);
        let out = p.layout.heads[Modality::Pitch.index()].out.clone();
        p.data_mut(out.w).fill(0.0);
        p.data_mut(out.b).fill(0.0);
        let e = Event::new(1, 60, 0.1, 70.0).unwrap();
        let n = event_nll(&p, &[0.2; 16], &e, &PermutationMask::full());
        assert!((n.modalities[1] - 128f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn collapsed_time_mixture_gives_zero_nll() {
        let mut p = params(2);
        let out = p.layout.heads[Modality::Time.index()].out.clone();
        let k = p.config.mixture_k;
        p.data_mut(out.w).fill(0.0);
        let b = p.data_mut(out.b);
        b.fill(0.0);
        for j in 0..k {
            b[k + j] = 0.37;
            b[2 * k + j] = -50.0;
        }
        let e = Event::new(1, 60, 0.37, 70.0).unwrap();
        let n = event_nll(&p, &[0.0; 16], &e, &PermutationMask::empty());
        assert!(n.modalities[2].abs() < 1e-9, "{}", n.modalities[2]);
    }

    #[test]
    fn total_matches_recomputation_from_raw_heads() {
        let p = params(3);
        let model = Model::new(p.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = Event::new(140, 38, 0.23, 91.4).unwrap();
        let h: Vec<f64> = (0..16).map(|i| ((i * 7) as f64).sin()).collect();
        let mask = PermutationMask::sample(&mut rng);
        let got = event_nll(&p, &h, &e, &mask);

        let ctx = model.context(&h);
        let sub = SubEvents::from(&e);
        let mut expect = 0.0;
        for m in Modality::ALL {
            let mut cond = ConditioningSet::new();
            for c in mask.conditioning(m) {
                let v = match c {
                    Modality::Instrument => sub.instrument as f64,
                    Modality::Pitch => sub.pitch as f64,
                    Modality::Time => sub.time,
                    Modality::Velocity => sub.velocity,
                };
                cond.insert(c, model.embed_value(c, v).unwrap());
            }
            let raw = model.head_raw(&ctx, m, &cond).unwrap();
            expect -= match m {
                Modality::Instrument => categorical_log_prob(&CategoricalParams::new(raw.clone()), sub.instrument).unwrap(),
                Modality::Pitch => categorical_log_prob(&CategoricalParams::new(raw.clone()), sub.pitch).unwrap(),
                Modality::Time => dmol_bin_log_prob(&dmol_from_raw(&p.dmol_head(m), &raw), sub.time).unwrap(),
                Modality::Velocity => {
                    dmol_bin_log_prob(&dmol_from_raw(&p.dmol_head(m), &raw), sub.velocity).unwrap()
                }
            };
        }
        let eos = model.eos_logit(&h);
        expect += softplus(eos);
        assert!((got.total() - expect).abs() < 1e-6, "{} vs {}", got.total(), expect);
    }

    #[test]
    fn dropping_a_mask_column_leaves_that_modality_unchanged() {
        let p = params(4);
        let e = Event::new(3, 64, 0.5, 40.0).unwrap();
        let h = vec![0.1; 16];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mask = PermutationMask::sample(&mut rng);
            let a = event_nll(&p, &h, &e, &mask);
            for m in Modality::ALL {
                // removing m as a conditioner of others cannot touch m's own term
                let mut other = mask;
                for t in Modality::ALL {
                    other.set(t, m, false);
                }
                let b = event_nll(&p, &h, &e, &other);
                assert_eq!(a.modalities[m.index()].to_bits(), b.modalities[m.index()].to_bits());
            }
        }
    }
}
