use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AppParams, Mode};
use crate::apps::{self, Action, AutoPitch, Harmonizer, Improviser, Surprise};
use crate::engine::{Engine, Prediction, QuerySpec};
use crate::error::{Error, Result};
use crate::events::Event;

/// Longest gap a live event can report, in seconds.
pub const MAX_LIVE_DT: f64 = 10.0;

/// One request to the session. Every transport produces these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Command {
    /// A performed or fed note. Without `dt` the gap is measured from the
    /// arrival times.
    Play {
        instrument: u16,
        pitch: u8,
        velocity: f32,
        dt: Option<f32>,
    },
    Query(QuerySpec),
    Ranking(QuerySpec),
    Reset,
    SetMode(Mode),
    /// Let timers fire.
    Tick,
    Shutdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Reply {
    Prediction(Prediction),
    Ranking(Vec<(u8, f64)>),
    Surprise(Surprise),
    /// An event for the outside world: app output or a flushing note-off.
    Event(Event),
    Ack(String),
    Error(String),
}

impl Reply {
    /// Whether every listener should see this, not just the requester.
    pub fn is_broadcast(&self) -> bool {
        matches!(self, Reply::Event(_) | Reply::Surprise(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub seq: u64,
    pub reply: Reply,
}

enum App {
    Raw,
    Surprise,
    AutoPitch(AutoPitch),
    Harmonize(Harmonizer),
    /// Generation is an improviser without a player.
    Improvise(Improviser),
}

/// The single-writer state machine behind the server. Each call takes the
/// arrival time of its command in seconds on a monotonic clock.
pub struct Session {
    engine: Engine,
    params: AppParams,
    mode: Mode,
    app: App,
    rng: ChaCha8Rng,
    seq: u64,
    last_arrival: Option<f64>,
    last_now: f64,
    closed: bool,
}

impl Session {
    pub fn new(engine: Engine, mode: Mode, params: AppParams, seed: u64) -> Self {
        let mut s = Session {
            engine,
            params,
            mode,
            app: App::Raw,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: 0,
            last_arrival: None,
            last_now: 0.0,
            closed: false,
        };
        s.app = s.make_app(mode);
        s
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// When the next timer is due, in the caller's clock.
    pub fn next_deadline(&self) -> Option<f64> {
        match &self.app {
            App::Improvise(imp) => imp.pending().map(|p| p.due),
            _ => None,
        }
    }

    fn make_app(&self, mode: Mode) -> App {
        let t = self.params.template.clone();
        match mode {
            Mode::Raw => App::Raw,
            Mode::Surprise => App::Surprise,
            Mode::Autopitch => App::AutoPitch(AutoPitch::new(t)),
            Mode::Harmonize => App::Harmonize(Harmonizer::new(t, self.params.fan_out.max(1))),
            Mode::Generate => App::Improvise(Improviser::new(Vec::new(), t)),
            Mode::Improvise => App::Improvise(Improviser::new(self.params.player_instruments.clone(), t)),
        }
    }

    fn push(&mut self, out: &mut Vec<Output>, reply: Reply) {
        out.push(Output { seq: self.seq, reply });
        self.seq += 1;
    }

    fn measured_dt(&self, now: f64) -> f32 {
        self.last_arrival.map_or(0.0, |t| (now - t).clamp(0.0, MAX_LIVE_DT)) as f32
    }

    /// Apply one command and return what it produced, in order.
    pub fn handle(&mut self, cmd: Command, now: f64) -> Vec<Output> {
        // arrival order wins over small clock disagreements between threads
        let now = now.max(self.last_now);
        self.last_now = now;
        let mut out = Vec::new();
        if self.closed {
            self.push(&mut out, Reply::Error("session is shut down".into()));
            return out;
        }
        if let Err(e) = self.dispatch(cmd, now, &mut out) {
            self.push(&mut out, Reply::Error(e.to_string()));
        }
        out
    }

    /// Report input that never became a command.
    pub fn reject(&mut self, reason: String) -> Output {
        let o = Output {
            seq: self.seq,
            reply: Reply::Error(reason),
        };
        self.seq += 1;
        o
    }

    fn dispatch(&mut self, cmd: Command, now: f64, out: &mut Vec<Output>) -> Result<()> {
        match cmd {
            Command::Play {
                instrument,
                pitch,
                velocity,
                dt,
            } => {
                let dt = match dt {
                    Some(d) if d.is_finite() => d.clamp(0.0, MAX_LIVE_DT as f32),
                    Some(d) => return Err(Error::InvalidEvent(format!("time delta {d}"))),
                    None => self.measured_dt(now),
                };
                let e = Event::new(instrument, pitch, dt, velocity)?;
                self.play(e, now, out)?;
                self.last_arrival = Some(now);
            }
            Command::Query(spec) => {
                let p = apps::query_legal(&self.engine, &spec, &mut self.rng)?;
                self.push(out, Reply::Prediction(p));
            }
            Command::Ranking(spec) => {
                let r = self.engine.pitch_ranking(&spec)?;
                self.push(out, Reply::Ranking(r));
            }
            Command::Reset => {
                self.silence(out);
                self.engine.reset();
                self.app = self.make_app(self.mode);
                self.last_arrival = None;
                self.start_timers(now, out)?;
                self.push(out, Reply::Ack("reset".into()));
            }
            Command::SetMode(mode) => {
                self.flush(out)?;
                self.mode = mode;
                self.app = self.make_app(mode);
                self.start_timers(now, out)?;
                self.push(out, Reply::Ack(format!("mode {}", mode.name())));
            }
            Command::Tick => {
                if let App::Improvise(imp) = &mut self.app {
                    let actions = imp.step(&mut self.engine, None, now, &mut self.rng)?;
                    self.actions(actions, now, out);
                }
            }
            Command::Shutdown => {
                self.flush(out)?;
                self.closed = true;
                self.push(out, Reply::Ack("shutdown".into()));
            }
        }
        Ok(())
    }

    fn play(&mut self, e: Event, now: f64, out: &mut Vec<Output>) -> Result<()> {
        match &mut self.app {
            App::Raw => self.engine.feed(&e)?,
            App::Surprise => {
                let s = apps::surprise(&mut self.engine, &e)?;
                self.push(out, Reply::Surprise(s));
            }
            App::AutoPitch(ap) => {
                let key = (e.instrument.get(), e.pitch);
                let evs = if e.is_noteoff() {
                    ap.release(&mut self.engine, key, e.time_delta as f64)?
                } else {
                    ap.press(&mut self.engine, key, e.time_delta as f64, e.velocity as f64, &mut self.rng)?
                };
                for x in evs {
                    self.push(out, Reply::Event(x));
                }
            }
            App::Harmonize(h) => {
                let evs = h.perform(&mut self.engine, &e, &mut self.rng)?;
                // the performer's own notes are already sounding
                for x in evs.into_iter().filter(|x| x.key() != e.key()) {
                    self.push(out, Reply::Event(x));
                }
            }
            App::Improvise(imp) => {
                let actions = imp.step(&mut self.engine, Some(e), now, &mut self.rng)?;
                self.actions(actions, now, out);
            }
        }
        Ok(())
    }

    fn actions(&mut self, actions: Vec<Action>, now: f64, out: &mut Vec<Output>) {
        for a in actions {
            match a {
                Action::Emit(e) => {
                    self.last_arrival = Some(now);
                    self.push(out, Reply::Event(e));
                }
                Action::Schedule(p) => log::trace!("scheduled {:?} at {:.3}", p.event, p.due),
                Action::Cancel(t) => log::trace!("cancelled {t}"),
            }
        }
    }

    fn start_timers(&mut self, now: f64, out: &mut Vec<Output>) -> Result<()> {
        if let App::Improvise(imp) = &mut self.app {
            let actions = imp.step(&mut self.engine, None, now, &mut self.rng)?;
            self.actions(actions, now, out);
        }
        Ok(())
    }

    /// Note-offs for every sounding note without touching the engine.
    fn silence(&mut self, out: &mut Vec<Output>) {
        let held: Vec<(u16, u8)> = self.engine.held().iter().copied().collect();
        for (i, p) in held {
            let off = Event::new(i, p, 0.0, 0.0).expect("held notes are valid");
            self.push(out, Reply::Event(off));
        }
    }

    /// Feed and emit note-offs for every sounding note.
    fn flush(&mut self, out: &mut Vec<Output>) -> Result<()> {
        let held: Vec<(u16, u8)> = self.engine.held().iter().copied().collect();
        for (i, p) in held {
            let off = Event::new(i, p, 0.0, 0.0)?;
            self.engine.feed(&off)?;
            self.push(out, Reply::Event(off));
        }
        Ok(())
    }
}
