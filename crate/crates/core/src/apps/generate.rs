use rand::Rng;
use serde::{Deserialize, Serialize};

use super::query_legal;
use crate::engine::{Engine, QuerySpec};
use crate::error::Result;
use crate::events::{Event, EventStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub max_events: usize,
    pub stop_on_eos: bool,
    /// Applied to every query.
    pub steering: QuerySpec,
    /// Draw the first event's instrument uniformly from the 128 melodic
    /// programs instead of from the model.
    pub uniform_first_instrument: bool,
    /// Re-query samples that would break note pairing.
    pub keep_pairing: bool,
    /// Append note-offs for notes still sounding at the end.
    pub close_notes: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            max_events: 256,
            stop_on_eos: true,
            steering: QuerySpec::default(),
            uniform_first_instrument: false,
            keep_pairing: true,
            close_notes: true,
        }
    }
}

/// Sample a stream one event at a time from a reset engine.
pub fn generate<R: Rng + ?Sized>(engine: &mut Engine, cfg: &GenerateConfig, rng: &mut R) -> Result<EventStream> {
    engine.reset();
    let mut events = Vec::with_capacity(cfg.max_events);
    let mut terminated = false;
    while events.len() < cfg.max_events {
        if cfg.stop_on_eos && rng.gen::<f64>() < engine.eos_prob() {
            terminated = true;
            break;
        }
        let mut spec = cfg.steering.clone();
        if events.is_empty() && cfg.uniform_first_instrument {
            spec.fixed.instrument = Some(rng.gen_range(1..=128));
        }
        let p = if cfg.keep_pairing {
            query_legal(engine, &spec, rng)?
        } else {
            engine.query(&spec, rng)?
        };
        engine.feed(&p.event)?;
        events.push(p.event);
    }
    if cfg.close_notes {
        let held: Vec<(u16, u8)> = engine.held().iter().copied().collect();
        for (i, p) in held {
            events.push(Event::new(i, p, 0.0, 0.0)?);
        }
    }
    Ok(EventStream::new(events, terminated))
}
