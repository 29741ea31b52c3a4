//! Interactive schedulers built on `feed` and `query`.

mod generate;
mod harmonizer;
mod improviser;

pub use generate::{generate, GenerateConfig};
pub use harmonizer::{HarmonyMap, Harmonizer};
pub use improviser::{Action, Improviser, PendingEvent};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Prediction, QuerySpec, AUTO_ORDER};
use crate::error::{Error, Result};
use crate::events::Event;

/// Whether feeding `e` next keeps the stream well paired.
pub fn is_legal_next(engine: &Engine, e: &Event) -> bool {
    let held = engine.is_held(e.instrument.get(), e.pitch);
    if e.is_noteoff() {
        held
    } else {
        !held
    }
}

/// Query, and if the sample would break note pairing ask again with the
/// pairing rule imposed: an orphan note-off becomes an off of a sounding
/// note (or a fresh note-on when none is allowed), a repeated note-on
/// becomes a note-on of a silent note.
pub fn query_legal<R: Rng + ?Sized>(engine: &Engine, spec: &QuerySpec, rng: &mut R) -> Result<Prediction> {
    let p = engine.query(spec, rng)?;
    if is_legal_next(engine, &p.event) || spec.fixed.to_event().is_some() {
        return Ok(p);
    }
    if p.event.is_noteoff() {
        let off = QuerySpec { end_held: true, ..spec.clone() };
        match engine.query(&off, rng) {
            Err(Error::EmptySupport(_)) => {}
            r => return r,
        }
    }
    let on = QuerySpec { start_silent: true, ..spec.clone() };
    engine.query(&on, rng)
}

/// Pick a pitch for a note whose instrument, timing and velocity come from
/// outside, then feed the completed event.
pub fn autopitch<R: Rng + ?Sized>(
    engine: &mut Engine,
    instrument: u16,
    time_delta: f64,
    velocity: f64,
    template: &QuerySpec,
    rng: &mut R,
) -> Result<Event> {
    if !(velocity > 0.0) {
        return Err(Error::InvalidQuery("autopitch needs a note-on".into()));
    }
    let spec = QuerySpec {
        start_silent: true,
        ..template.clone().fix_instrument(instrument).fix_time(time_delta).fix_velocity(velocity)
    };
    let p = engine.query(&spec, rng)?;
    engine.feed(&p.event)?;
    Ok(p.event)
}

/// Controller-driven auto-pitch: remembers which pitch each physical key
/// was given so its release ends the right note.
#[derive(Clone, Debug, Default)]
pub struct AutoPitch {
    pub template: QuerySpec,
    keys: HashMap<(u16, u8), u8>,
}

impl AutoPitch {
    pub fn new(template: QuerySpec) -> Self {
        AutoPitch { template, keys: HashMap::new() }
    }

    pub fn press<R: Rng + ?Sized>(
        &mut self,
        engine: &mut Engine,
        key: (u16, u8),
        time_delta: f64,
        velocity: f64,
        rng: &mut R,
    ) -> Result<Vec<Event>> {
        let mut out = self.release(engine, key, time_delta)?;
        let dt = if out.is_empty() { time_delta } else { 0.0 };
        let e = autopitch(engine, key.0, dt, velocity, &self.template, rng)?;
        self.keys.insert(key, e.pitch);
        out.push(e);
        Ok(out)
    }

    pub fn release(&mut self, engine: &mut Engine, key: (u16, u8), time_delta: f64) -> Result<Vec<Event>> {
        let Some(pitch) = self.keys.remove(&key) else {
            return Ok(Vec::new());
        };
        let off = Event::new(key.0, pitch, time_delta as f32, 0.0)?;
        engine.feed(&off)?;
        Ok(vec![off])
    }
}

/// Negative log-likelihood of an observed event, per sub-event and total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surprise {
    /// Indexed by modality.
    pub nll: [f64; 4],
    pub total: f64,
}

/// Score `e` against the current state in the automatic order, then feed
/// it.
pub fn surprise(engine: &mut Engine, e: &Event) -> Result<Surprise> {
    let lp = engine.event_log_prob(e, &AUTO_ORDER)?;
    engine.feed(e)?;
    Ok(Surprise {
        nll: lp.log_probs.map(|l| -l),
        total: -lp.total,
    })
}
