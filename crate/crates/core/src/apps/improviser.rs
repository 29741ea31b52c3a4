use rand::Rng;
use serde::{Deserialize, Serialize};

use super::query_legal;
use crate::engine::{Engine, QuerySpec};
use crate::error::Result;
use crate::events::Event;

/// A model event waiting for its time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingEvent {
    pub event: Event,
    /// Seconds on the caller's monotonic clock.
    pub due: f64,
    pub token: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Emit(Event),
    Schedule(PendingEvent),
    Cancel(u64),
}

/// Plays alongside a performer: keeps one planned event and throws it away
/// whenever the performer plays first.
#[derive(Clone, Debug)]
pub struct Improviser {
    /// Extra constraints on model events. The player's instruments are
    /// excluded on top of these.
    pub template: QuerySpec,
    player_instruments: Vec<u16>,
    pending: Option<PendingEvent>,
    last_time: Option<f64>,
    next_token: u64,
}

impl Improviser {
    pub fn new(player_instruments: Vec<u16>, template: QuerySpec) -> Self {
        Improviser {
            template,
            player_instruments,
            pending: None,
            last_time: None,
            next_token: 0,
        }
    }

    pub fn pending(&self) -> Option<&PendingEvent> {
        self.pending.as_ref()
    }

    pub fn player_instruments(&self) -> &[u16] {
        &self.player_instruments
    }

    fn elapsed(&self, now: f64) -> f32 {
        self.last_time.map_or(0.0, |t| (now - t).max(0.0)) as f32
    }

    fn plan<R: Rng + ?Sized>(&mut self, engine: &Engine, now: f64, rng: &mut R) -> Result<PendingEvent> {
        let mut spec = self.template.clone();
        spec.exclude_instruments.extend(&self.player_instruments);
        let p = query_legal(engine, &spec, rng)?;
        let pending = PendingEvent {
            event: p.event,
            due: self.last_time.unwrap_or(now) + p.event.time_delta as f64,
            token: self.next_token,
        };
        self.next_token += 1;
        self.pending = Some(pending);
        Ok(pending)
    }

    /// Advance to time `now` (seconds, monotonic), optionally with an event
    /// the player just played. A player event's time delta is re-measured
    /// from the clock.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        engine: &mut Engine,
        player: Option<Event>,
        now: f64,
        rng: &mut R,
    ) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        self.last_time.get_or_insert(now);
        match player {
            Some(e) => {
                if let Some(p) = self.pending.take() {
                    actions.push(Action::Cancel(p.token));
                }
                let e = Event { time_delta: self.elapsed(now), ..e };
                engine.feed(&e)?;
                self.last_time = Some(now);
            }
            None => match self.pending {
                Some(p) if now >= p.due => {
                    self.pending = None;
                    // late timers play immediately with the true gap
                    let e = Event { time_delta: self.elapsed(now), ..p.event };
                    engine.feed(&e)?;
                    self.last_time = Some(now);
                    actions.push(Action::Emit(e));
                }
                Some(_) => return Ok(actions),
                None => {}
            },
        }
        let p = self.plan(engine, now, rng)?;
        actions.push(Action::Schedule(p));
        Ok(actions)
    }
}
