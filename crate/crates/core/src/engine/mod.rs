//! The stateful real-time core. `feed` advances the recurrence by one
//! observed event; `query`, `event_log_prob` and `pitch_ranking` read the
//! current state without changing it.

mod bench;
mod query;

pub use bench::{latency_benchmark, LatencyReport, Percentiles};
pub use query::{parse_order, EventLogProb, PartialEvent, Prediction, QuerySpec, Temperatures, AUTO_ORDER};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::numeric::log_softmax;
use crate::distributions::{SamplingControls, TIME_DISCRETIZATION};
use crate::error::{Error, Result};
use crate::events::{Event, Modality};
use crate::model::{checkpoint, ConditioningSet, HeadOutput, HiddenState, Model, ModelParams};

/// Everything that `feed` changes.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineState {
    pub hidden: HiddenState,
    /// `f_h` of the top layer, shared by every head until the next feed.
    pub context: Vec<f64>,
    pub eos_prob: f64,
    /// Sounding `(instrument, pitch)` pairs.
    pub held: BTreeSet<(u16, u8)>,
    pub events_fed: u64,
    pub last_feed: Option<Instant>,
}

#[derive(Clone, Debug)]
pub struct Engine {
    model: Model,
    state: EngineState,
    snapshots: HashMap<u64, EngineState>,
    next_token: u64,
}

/// Round a sampled continuous value to the `f32` carried by events while
/// staying inside `[lo, hi]`.
fn f32_within(x: f64, lo: f64, hi: f64) -> f32 {
    let mut y = x as f32;
    while y as f64 > hi {
        y = y.next_down();
    }
    while (y as f64) < lo {
        y = y.next_up();
    }
    y
}

fn class_of(m: Modality, value: f64) -> f64 {
    match m {
        Modality::Instrument => value - 1.0,
        _ => value,
    }
}

impl Engine {
    pub fn new(params: ModelParams) -> Self {
        let model = Model::new(params);
        let state = Self::fresh_state(&model);
        Engine {
            model,
            state,
            snapshots: HashMap::new(),
            next_token: 0,
        }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        Ok(Engine::new(checkpoint::load(path)?))
    }

    fn fresh_state(model: &Model) -> EngineState {
        let hidden = model.initial_state();
        let top = hidden.top().to_vec();
        EngineState {
            context: model.context(&top),
            eos_prob: model.eos_prob(&top),
            hidden,
            held: BTreeSet::new(),
            events_fed: 0,
            last_feed: None,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn held(&self) -> &BTreeSet<(u16, u8)> {
        &self.state.held
    }

    pub fn is_held(&self, instrument: u16, pitch: u8) -> bool {
        self.state.held.contains(&(instrument, pitch))
    }

    pub fn events_fed(&self) -> u64 {
        self.state.events_fed
    }

    /// Probability that the stream ends before the next event.
    pub fn eos_prob(&self) -> f64 {
        self.state.eos_prob
    }

    /// Advance the recurrence by one observed event.
    pub fn feed(&mut self, e: &Event) -> Result<()> {
        e.validate()?;
        if !TIME_DISCRETIZATION.contains(e.time_delta as f64) {
            log::warn!("time delta {} clamped to [0, {}]", e.time_delta, TIME_DISCRETIZATION.hi);
        }
        let input = self.model.event_embedding(e);
        let (hidden, top) = self.model.gru_step(&self.state.hidden, &input);
        self.state.context = self.model.context(&top);
        self.state.eos_prob = self.model.eos_prob(&top);
        self.state.hidden = hidden;
        let key = (e.instrument.get(), e.pitch);
        if e.is_noteoff() {
            if !self.state.held.remove(&key) {
                log::debug!("note-off for silent note {key:?}");
            }
        } else {
            self.state.held.insert(key);
        }
        self.state.events_fed += 1;
        self.state.last_feed = Some(Instant::now());
        Ok(())
    }

    /// Return to the initial state. Snapshots stay valid.
    pub fn reset(&mut self) {
        self.state = Self::fresh_state(&self.model);
    }

    pub fn snapshot(&mut self) -> u64 {
        let token = self.next_token;
        self.next_token += 1;
        self.snapshots.insert(token, self.state.clone());
        token
    }

    pub fn restore(&mut self, token: u64) -> Result<()> {
        let s = self.snapshots.get(&token).ok_or(Error::UnknownToken(token))?;
        self.state = s.clone();
        Ok(())
    }

    pub fn forget(&mut self, token: u64) -> Result<()> {
        self.snapshots.remove(&token).map(|_| ()).ok_or(Error::UnknownToken(token))
    }

    fn conditioning(&self, known: &PartialEvent, except: Modality) -> Result<ConditioningSet> {
        let mut cond = ConditioningSet::new();
        for m in Modality::ALL {
            if m == except {
                continue;
            }
            if let Some(v) = known.get(m) {
                cond.insert(m, self.model.embed_value(m, class_of(m, v))?);
            }
        }
        Ok(cond)
    }

    /// Distribution of sub-event `m` given the known values of the others.
    pub fn distribution(&self, m: Modality, known: &PartialEvent) -> Result<HeadOutput> {
        known.validate()?;
        let cond = self.conditioning(known, m)?;
        self.model.predict_from_context(&self.state.context, m, &cond)
    }

    fn sample_value<R: Rng + ?Sized>(m: Modality, head: &HeadOutput, c: &SamplingControls, rng: &mut R) -> Result<f64> {
        let map = |e: Error| match e {
            Error::EmptySupport(_) => Error::empty_support(m),
            e => e,
        };
        Ok(match head {
            HeadOutput::Categorical(p) => {
                let k = p.sample(c, rng).map_err(map)? as f64;
                if m == Modality::Instrument {
                    k + 1.0
                } else {
                    k
                }
            }
            HeadOutput::Dmol(p) => {
                let x = p.sample(c, rng).map_err(map)?;
                let (lo, hi) = c.truncation.unwrap_or((p.disc.lo, p.disc.hi));
                let (lo, hi) = (lo.max(p.disc.lo), hi.min(p.disc.hi));
                if m == Modality::Velocity && x < 0.5 {
                    0.0
                } else {
                    f32_within(x, lo, hi) as f64
                }
            }
        })
    }

    /// Walk `order`, sampling unknown sub-events and scoring every value
    /// under the chain rule.
    fn chain<R: Rng + ?Sized>(
        &self,
        spec: &QuerySpec,
        order: &[Modality],
        rng: &mut R,
    ) -> Result<(PartialEvent, [f64; 4])> {
        let held: Vec<(u16, u8)> = if spec.end_held || spec.start_silent {
            self.state.held.iter().copied().collect()
        } else {
            Vec::new()
        };
        let mut known = spec.effective_fixed();
        // the values carried by the returned event, not the requested ones
        known.time = known.time.map(|t| t as f32 as f64);
        known.velocity = known.velocity.map(|v| v as f32 as f64);
        let mut cond = ConditioningSet::new();
        let mut log_probs = [0.0; 4];
        for &m in order {
            let head = self.model.predict_from_context(&self.state.context, m, &cond)?;
            let value = match known.get(m) {
                Some(v) => v,
                None => {
                    let c = spec.controls(m, &known, &held);
                    if matches!(&c.whitelist, Some(w) if w.is_empty()) {
                        return Err(Error::empty_support(m));
                    }
                    let v = Self::sample_value(m, &head, &c, rng)?;
                    known.set(m, v);
                    v
                }
            };
            let class = class_of(m, value);
            log_probs[m.index()] = head.log_prob(class)?;
            cond.insert(m, self.model.embed_value(m, class)?);
        }
        Ok((known, log_probs))
    }

    /// Sample (or complete) the next event. Does not change the state.
    pub fn query<R: Rng + ?Sized>(&self, spec: &QuerySpec, rng: &mut R) -> Result<Prediction> {
        let order = spec.resolve()?;
        let (known, log_probs) = self.chain(spec, &order, rng)?;
        let event = known
            .to_event()
            .ok_or_else(|| Error::InvalidQuery(format!("query produced an invalid event {known:?}")))?;
        Ok(Prediction {
            event,
            total: log_probs.iter().sum(),
            log_probs,
            eos_prob: spec.include_eos.then_some(self.state.eos_prob),
            order,
        })
    }

    /// Chain-rule log-likelihood of `e` as the next event, scored in
    /// `order`.
    pub fn event_log_prob(&self, e: &Event, order: &[Modality]) -> Result<EventLogProb> {
        e.validate()?;
        if order.len() != 4 {
            return Err(Error::InvalidQuery("order must list all four sub-events".into()));
        }
        let spec = QuerySpec::new().fix_event(e).with_order(order.iter().copied());
        let order = spec.resolve()?;
        let (_, log_probs) = self.chain(&spec, &order, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(EventLogProb {
            total: log_probs.iter().sum(),
            log_probs,
            order,
        })
    }

    /// Every pitch with its log-probability given the spec's fixed values,
    /// best first, ties broken by pitch number. Constraints are ignored.
    pub fn pitch_ranking(&self, spec: &QuerySpec) -> Result<Vec<(u8, f64)>> {
        if spec.fixed.pitch.is_some() {
            return Err(Error::InvalidQuery("pitch ranking with pitch fixed".into()));
        }
        let head = self.distribution(Modality::Pitch, &spec.effective_fixed())?;
        let logits = &head.categorical().expect("pitch head is categorical").logits;
        let mut ranked: Vec<(u8, f64)> = log_softmax(logits).into_iter().enumerate().map(|(p, l)| (p as u8, l)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

#[cfg(test)]
mod tests;
