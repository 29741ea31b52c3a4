//! The network: embeddings, a GRU backbone, the hidden-state MLP, one MLP
//! head per sub-event and a linear end-of-sequence predictor.
//!
//! Conditioning works by addition. To predict sub-event `m` the model
//! computes `f_m(f_h(h) + Σ e_c)`, where `e_c` are the embeddings of the
//! sub-events already known. The embedding tables are the same ones that
//! feed the GRU.

pub mod checkpoint;
mod config;
pub mod forward;
pub mod graph;
pub(crate) mod linalg;
pub mod ops;
mod params;

pub use config::ModelConfig;
pub use forward::SubEvents;
pub use params::{
    head_output_dim, DmolHead, GruLayer, Layout, Linear, Mlp, ModelParams, ParamId, Tensor,
};

use rand::RngCore;

use crate::distributions::numeric::sigmoid;
use crate::distributions::{CategoricalParams, DmolParams};
use crate::error::{Error, Result};
use crate::events::{Event, Modality};
use graph::{Eval, Graph};

/// Distribution parameters produced by one head.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    Categorical(CategoricalParams),
    Dmol(DmolParams),
}

impl HeadOutput {
    /// Log-probability of a sub-event value: log-softmax for categorical
    /// heads, bin mass for continuous ones.
    pub fn log_prob(&self, value: f64) -> Result<f64> {
        match self {
            HeadOutput::Categorical(c) => c.log_prob(value as usize),
            HeadOutput::Dmol(d) => d.bin_log_prob(d.disc.clamp(value)),
        }
    }

    pub fn categorical(&self) -> Option<&CategoricalParams> {
        match self {
            HeadOutput::Categorical(c) => Some(c),
            _ => None,
        }
    }

    pub fn dmol(&self) -> Option<&DmolParams> {
        match self {
            HeadOutput::Dmol(d) => Some(d),
            _ => None,
        }
    }
}

/// Map a raw continuous-head output `[weights | locations | log scales]`
/// to mixture parameters.
pub fn dmol_from_raw(head: &DmolHead, raw: &[f64]) -> DmolParams {
    let k = head.k;
    let unit_log = head.loc_unit.ln();
    DmolParams::new(
        raw[..k].to_vec(),
        raw[k..2 * k].iter().map(|r| head.loc_offset + head.loc_unit * r).collect(),
        raw[2 * k..3 * k].iter().map(|r| unit_log + r).collect(),
        head.disc,
    )
    .expect("head output has 3k entries")
}

pub fn head_from_raw(params: &ModelParams, m: Modality, raw: Vec<f64>) -> HeadOutput {
    match m {
        Modality::Instrument | Modality::Pitch => HeadOutput::Categorical(CategoricalParams::new(raw)),
        Modality::Time | Modality::Velocity => HeadOutput::Dmol(dmol_from_raw(&params.dmol_head(m), &raw)),
    }
}

/// Per-layer GRU state.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn top(&self) -> &[f64] {
        self.layers.last().expect("at least one layer")
    }
}

/// Embeddings of the sub-events already known when predicting a target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditioningSet {
    slots: [Option<Vec<f64>>; 4],
}

impl ConditioningSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, m: Modality, embedding: Vec<f64>) {
        self.slots[m.index()] = Some(embedding);
    }

    pub fn remove(&mut self, m: Modality) {
        self.slots[m.index()] = None;
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.slots[m.index()].is_some()
    }

    pub fn members(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|m| self.contains(*m))
    }

    fn embeddings_except(&self, target: Modality) -> Result<Vec<Vec<f64>>> {
        if self.contains(target) {
            return Err(Error::InvalidQuery(format!(
                "{} cannot condition on itself",
                target.name()
            )));
        }
        Ok(self.slots.iter().flatten().cloned().collect())
    }
}

/// Row `id` of an embedding table.
pub fn embed_categorical(table: &Tensor, id: usize) -> Result<Vec<f64>> {
    let rows = table.shape[0];
    if id >= rows {
        return Err(Error::ClassOutOfRange { index: id, len: rows });
    }
    let w = table.shape[1];
    Ok(table.data[id * w..(id + 1) * w].to_vec())
}

/// Read-only inference over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct Model {
    params: ModelParams,
}

impl Model {
    pub fn new(params: ModelParams) -> Self {
        Model { params }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn eval(&self) -> Eval<'_> {
        Eval::new(&self.params)
    }

    pub fn embed_categorical(&self, m: Modality, id: usize) -> Result<Vec<f64>> {
        let t = match m {
            Modality::Instrument => self.params.layout.instrument_table,
            Modality::Pitch => self.params.layout.pitch_table,
            _ => return Err(Error::InvalidQuery(format!("{} is continuous", m.name()))),
        };
        embed_categorical(self.params.tensor(t), id)
    }

    pub fn embed_continuous(&self, x: f64, m: Modality) -> Vec<f64> {
        forward::embed_continuous(&mut self.eval(), m, x)
    }

    /// Embedding of one sub-event value (instrument/pitch as zero-based rows).
    pub fn embed_value(&self, m: Modality, value: f64) -> Result<Vec<f64>> {
        match m {
            Modality::Instrument | Modality::Pitch => self.embed_categorical(m, value as usize),
            Modality::Time | Modality::Velocity => Ok(self.embed_continuous(value, m)),
        }
    }

    pub fn sub_event_embeddings(&self, e: &Event) -> [Vec<f64>; 4] {
        forward::embed_sub_events(&mut self.eval(), &SubEvents::from(e))
    }

    /// Sum of the four sub-event embeddings.
    pub fn event_embedding(&self, e: &Event) -> Vec<f64> {
        let parts = self.sub_event_embeddings(e);
        self.eval().sum(&parts)
    }

    pub fn initial_state(&self) -> HiddenState {
        HiddenState {
            layers: forward::initial_state(&mut self.eval()),
        }
    }

    /// Returns the new state and the top-layer output.
    pub fn gru_step(&self, state: &HiddenState, input: &[f64]) -> (HiddenState, Vec<f64>) {
        let layers = forward::gru_step(&mut self.eval(), &state.layers, &input.to_vec());
        let top = layers.last().unwrap().clone();
        (HiddenState { layers }, top)
    }

    pub fn mlp_forward(&self, mlp: &Mlp, x: &[f64], train_mode: bool, rng: &mut dyn RngCore) -> Vec<f64> {
        let p = self.params.config.dropout_p;
        let dropout = if train_mode { Some((p, rng)) } else { None };
        self.eval().mlp(mlp, x, dropout)
    }

    /// `f_h(h)` at inference time.
    pub fn context(&self, h: &[f64]) -> Vec<f64> {
        forward::hidden_context(&mut self.eval(), &h.to_vec(), None)
    }

    pub fn predict_head(
        &self,
        h: &[f64],
        m: Modality,
        cond: &ConditioningSet,
        train_mode: bool,
        rng: &mut dyn RngCore,
    ) -> Result<HeadOutput> {
        let cond = cond.embeddings_except(m)?;
        let p = self.params.config.dropout_p;
        let mut g = self.eval();
        let raw = if train_mode {
            let ctx = forward::hidden_context(&mut g, &h.to_vec(), Some((p, &mut *rng)));
            forward::conditioned_head(&mut g, m, &ctx, &cond, Some((p, rng)))
        } else {
            let ctx = forward::hidden_context(&mut g, &h.to_vec(), None);
            forward::conditioned_head(&mut g, m, &ctx, &cond, None)
        };
        Ok(head_from_raw(&self.params, m, raw))
    }

    /// Inference-time head given a precomputed `f_h(h)`.
    pub fn predict_from_context(&self, context: &[f64], m: Modality, cond: &ConditioningSet) -> Result<HeadOutput> {
        let cond = cond.embeddings_except(m)?;
        let raw = forward::conditioned_head(&mut self.eval(), m, &context.to_vec(), &cond, None);
        Ok(head_from_raw(&self.params, m, raw))
    }

    /// Raw head output before it is shaped into distribution parameters.
    pub fn head_raw(&self, context: &[f64], m: Modality, cond: &ConditioningSet) -> Result<Vec<f64>> {
        let cond = cond.embeddings_except(m)?;
        Ok(forward::conditioned_head(&mut self.eval(), m, &context.to_vec(), &cond, None))
    }

    pub fn eos_logit(&self, h: &[f64]) -> f64 {
        forward::eos_logit(&mut self.eval(), &h.to_vec())[0]
    }

    pub fn eos_prob(&self, h: &[f64]) -> f64 {
        sigmoid(self.eos_logit(h))
    }
}
