//! WebSocket text frames: JSON objects tagged by `type`, mirroring the OSC
//! messages.
//!
//! Client to server: `feed` (`instrument`, `pitch`, `velocity`, optional
//! `dt`), `query` and `ranking` (optional `spec`, a [`QuerySpec`] object),
//! `reset`, `mode` (`mode`). Server to client: `event`, `prediction`,
//! `ranking`, `surprise`, `ack`, `error`, each with a `seq` number that
//! increases across all clients.

use serde::{Deserialize, Serialize};

use super::{Command, Mode, Output, Reply};
use crate::engine::QuerySpec;
use crate::events::Event;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientFrame {
    Feed {
        instrument: u16,
        pitch: u8,
        velocity: f32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt: Option<f32>,
    },
    Query {
        #[serde(default)]
        spec: QuerySpec,
    },
    Ranking {
        #[serde(default)]
        spec: QuerySpec,
    },
    Reset,
    Mode {
        mode: Mode,
    },
}

impl From<ClientFrame> for Command {
    fn from(f: ClientFrame) -> Command {
        match f {
            ClientFrame::Feed {
                instrument,
                pitch,
                velocity,
                dt,
            } => Command::Play {
                instrument,
                pitch,
                velocity,
                dt,
            },
            ClientFrame::Query { spec } => Command::Query(spec),
            ClientFrame::Ranking { spec } => Command::Ranking(spec),
            ClientFrame::Reset => Command::Reset,
            ClientFrame::Mode { mode } => Command::SetMode(mode),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireEvent {
    pub instrument: u16,
    pub pitch: u8,
    pub dt: f32,
    pub velocity: f32,
}

impl From<&Event> for WireEvent {
    fn from(e: &Event) -> Self {
        WireEvent {
            instrument: e.instrument.get(),
            pitch: e.pitch,
            dt: e.time_delta,
            velocity: e.velocity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub pitch: u8,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerFrame {
    Event {
        seq: u64,
        event: WireEvent,
    },
    Prediction {
        seq: u64,
        event: WireEvent,
        /// Indexed instrument, pitch, time, velocity.
        log_probs: [f64; 4],
        total: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eos_prob: Option<f64>,
        order: String,
    },
    Ranking {
        seq: u64,
        ranking: Vec<RankEntry>,
    },
    Surprise {
        seq: u64,
        nll: [f64; 4],
        total: f64,
    },
    Ack {
        seq: u64,
        what: String,
    },
    Error {
        seq: u64,
        message: String,
    },
}

impl From<&Output> for ServerFrame {
    fn from(o: &Output) -> Self {
        let seq = o.seq;
        match &o.reply {
            Reply::Event(e) => ServerFrame::Event { seq, event: e.into() },
            Reply::Prediction(p) => ServerFrame::Prediction {
                seq,
                event: (&p.event).into(),
                log_probs: p.log_probs,
                total: p.total,
                eos_prob: p.eos_prob,
                order: p.order.iter().map(|m| m.short()).collect(),
            },
            Reply::Ranking(r) => ServerFrame::Ranking {
                seq,
                ranking: r.iter().map(|&(pitch, log_prob)| RankEntry { pitch, log_prob }).collect(),
            },
            Reply::Surprise(s) => ServerFrame::Surprise {
                seq,
                nll: s.nll,
                total: s.total,
            },
            Reply::Ack(w) => ServerFrame::Ack { seq, what: w.clone() },
            Reply::Error(m) => ServerFrame::Error { seq, message: m.clone() },
        }
    }
}

impl ServerFrame {
    pub fn seq(&self) -> u64 {
        match self {
            ServerFrame::Event { seq, .. }
            | ServerFrame::Prediction { seq, .. }
            | ServerFrame::Ranking { seq, .. }
            | ServerFrame::Surprise { seq, .. }
            | ServerFrame::Ack { seq, .. }
            | ServerFrame::Error { seq, .. } => *seq,
        }
    }
}

pub fn encode(o: &Output) -> String {
    serde_json::to_string(&ServerFrame::from(o)).expect("frames always serialize")
}

pub fn decode(text: &str) -> Result<Command, String> {
    serde_json::from_str::<ClientFrame>(text)
        .map(Command::from)
        .map_err(|e| format!("malformed frame: {e}"))
}
