//! Event representation shared by every other module.
//!
//! An event carries an instrument identity instead of a MIDI channel, a
//! pitch, the time in seconds since the previous event, and a velocity.
//! A velocity of exactly zero marks a note-off.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_INSTRUMENTS: usize = 272;
pub const NUM_PITCHES: usize = 128;

/// First id of the drum range (General MIDI program + 128).
pub const DRUM_BASE: u16 = 129;
pub const ANON_MELODIC_BASE: u16 = 257;
pub const ANON_DRUM_BASE: u16 = 265;
pub const NUM_ANON_PER_KIND: u16 = 8;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct InstrumentId(u16);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum InstrumentKind {
    Melodic,
    Drum,
    AnonMelodic,
    AnonDrum,
}

impl InstrumentKind {
    pub fn is_drum(self) -> bool {
        matches!(self, InstrumentKind::Drum | InstrumentKind::AnonDrum)
    }
}

impl InstrumentId {
    pub fn new(id: u16) -> Result<Self> {
        if (1..=NUM_INSTRUMENTS as u16).contains(&id) {
            Ok(InstrumentId(id))
        } else {
            Err(Error::InvalidInstrument(id as u32))
        }
    }

    /// Melodic instrument for a zero-based General MIDI program.
    pub fn melodic(program: u8) -> Self {
        InstrumentId(program as u16 % 128 + 1)
    }

    /// Drum kit for a zero-based General MIDI program.
    pub fn drum(program: u8) -> Self {
        InstrumentId(program as u16 % 128 + DRUM_BASE)
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Zero-based row in the instrument table.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        InstrumentId::new(index as u16 + 1)
    }

    pub fn kind(self) -> InstrumentKind {
        match self.0 {
            1..=128 => InstrumentKind::Melodic,
            129..=256 => InstrumentKind::Drum,
            257..=264 => InstrumentKind::AnonMelodic,
            _ => InstrumentKind::AnonDrum,
        }
    }

    pub fn is_drum(self) -> bool {
        self.kind().is_drum()
    }
}

impl TryFrom<u16> for InstrumentId {
    type Error = Error;
    fn try_from(v: u16) -> Result<Self> {
        InstrumentId::new(v)
    }
}

impl From<InstrumentId> for u16 {
    fn from(v: InstrumentId) -> u16 {
        v.0
    }
}

impl fmt::Display for InstrumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Classify a raw instrument id, rejecting ids outside `[1, 272]`.
pub fn instrument_kind(id: u16) -> Result<InstrumentKind> {
    InstrumentId::new(id).map(InstrumentId::kind)
}

/// The four parts of an event.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Instrument,
    Pitch,
    Time,
    Velocity,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Instrument,
        Modality::Pitch,
        Modality::Time,
        Modality::Velocity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Modality {
        Modality::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Instrument => "instrument",
            Modality::Pitch => "pitch",
            Modality::Time => "time",
            Modality::Velocity => "velocity",
        }
    }

    pub fn short(self) -> char {
        match self {
            Modality::Instrument => 'i',
            Modality::Pitch => 'p',
            Modality::Time => 't',
            Modality::Velocity => 'v',
        }
    }

    pub fn from_short(c: char) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.short() == c)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub instrument: InstrumentId,
    pub pitch: u8,
    /// Seconds since the previous event.
    pub time_delta: f32,
    pub velocity: f32,
}

impl Event {
    pub fn new(instrument: u16, pitch: u8, time_delta: f32, velocity: f32) -> Result<Self> {
        let e = Event {
            instrument: InstrumentId::new(instrument)?,
            pitch,
            time_delta,
            velocity,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitch > 127 {
            return Err(Error::InvalidPitch(self.pitch as u32));
        }
        if !(self.time_delta.is_finite() && self.time_delta >= 0.0) {
            return Err(Error::InvalidEvent(format!("time delta {}", self.time_delta)));
        }
        if !(self.velocity.is_finite() && (0.0..=127.0).contains(&self.velocity)) {
            return Err(Error::InvalidEvent(format!("velocity {}", self.velocity)));
        }
        Ok(())
    }

    pub fn is_noteoff(&self) -> bool {
        is_noteoff(self)
    }

    pub fn key(&self) -> (InstrumentId, u8) {
        (self.instrument, self.pitch)
    }
}

pub fn is_noteoff(e: &Event) -> bool {
    e.velocity == 0.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// End of sequence was observed after the last event.
    pub terminated: bool,
}

impl EventStream {
    pub fn new(events: Vec<Event>, terminated: bool) -> Self {
        EventStream { events, terminated }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn absolute_times(&self) -> Vec<f64> {
        absolute_times(self)
    }
}

/// Prefix sums of the time deltas, accumulated in double precision.
pub fn absolute_times(s: &EventStream) -> Vec<f64> {
    s.events
        .iter()
        .scan(0.0f64, |t, e| {
            *t += e.time_delta as f64;
            Some(*t)
        })
        .collect()
}
