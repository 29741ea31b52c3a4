use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{
    Event, EventStream, InstrumentId, InstrumentKind, ANON_DRUM_BASE, ANON_MELODIC_BASE, NUM_ANON_PER_KIND,
};

/// Minimum silence between a note-off and the next note-on of the same key.
pub const MIN_GAP: f64 = 0.001;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub instrument: InstrumentId,
    pub pitch: u8,
    pub onset: f64,
    pub offset: f64,
    pub velocity: f64,
}

impl NoteRecord {
    pub fn key(&self) -> (InstrumentId, u8) {
        (self.instrument, self.pitch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Tempo scale drawn from `1 ± tempo_range`.
    pub tempo_range: f64,
    /// Transposition drawn uniformly from `-transpose_range..=transpose_range`.
    pub transpose_range: i32,
    /// Standard deviation of `ln γ` for the velocity curve `127 (v/127)^γ`.
    pub velocity_curve_sigma: f64,
    pub jitter: f64,
    pub anonymize_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            tempo_range: 0.1,
            transpose_range: 5,
            velocity_curve_sigma: 1.0 / 3.0,
            jitter: 0.001,
            anonymize_prob: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.tempo_range)
            && self.transpose_range >= 0
            && self.velocity_curve_sigma >= 0.0
            && self.jitter >= 0.0
            && (0.0..=1.0).contains(&self.anonymize_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation settings {self:?}")))
        }
    }
}

fn sort_by_onset(notes: &mut [NoteRecord]) {
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset));
}

/// Largest `t ≤ onset - MIN_GAP` that actually leaves the full gap in
/// floating point.
fn gap_before(onset: f64) -> f64 {
    let mut t = onset - MIN_GAP;
    while onset - t < MIN_GAP {
        t = next_down(t);
    }
    t
}

fn next_down(x: f64) -> f64 {
    if x == 0.0 {
        -f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// End each note at least [`MIN_GAP`] before the next onset of the same
/// instrument and pitch; notes left with no duration are dropped.
pub fn trim_overlaps(notes: &[NoteRecord]) -> Vec<NoteRecord> {
    let mut notes = notes.to_vec();
    sort_by_onset(&mut notes);
    let mut next_onset: HashMap<(InstrumentId, u8), f64> = HashMap::new();
    let mut keep = vec![true; notes.len()];
    for i in (0..notes.len()).rev() {
        let n = &mut notes[i];
        if let Some(&next) = next_onset.get(&n.key()) {
            if n.offset > next - MIN_GAP || next - n.offset < MIN_GAP {
                n.offset = gap_before(next);
            }
        }
        if n.offset <= n.onset {
            keep[i] = false;
        } else {
            next_onset.insert(n.key(), n.onset);
        }
    }
    let mut it = keep.iter();
    notes.retain(|_| *it.next().unwrap());
    notes
}

/// Multiply every onset and offset by `s`.
pub fn scale_tempo(notes: &mut [NoteRecord], s: f64) {
    for n in notes {
        n.onset *= s;
        n.offset *= s;
    }
}

/// Shift melodic pitches by `k` semitones, clamped to the MIDI range.
/// Drum pitches select a sound rather than a frequency and stay put.
pub fn transpose(notes: &mut [NoteRecord], k: i32) {
    for n in notes.iter_mut().filter(|n| !n.instrument.is_drum()) {
        n.pitch = (n.pitch as i32 + k).clamp(0, 127) as u8;
    }
}

pub fn velocity_curve(v: f64, gamma: f64) -> f64 {
    127.0 * (v / 127.0).powf(gamma)
}

/// Keep `onset ≤ offset ≤ next onset` per key after independent jitter so
/// that flattening still pairs every note-on with its own note-off.
fn repair_order(notes: &mut Vec<NoteRecord>) {
    for n in notes.iter_mut() {
        n.onset = n.onset.max(0.0);
        n.offset = n.offset.max(n.onset);
    }
    sort_by_onset(notes);
    let mut next_onset: HashMap<(InstrumentId, u8), f64> = HashMap::new();
    for n in notes.iter_mut().rev() {
        if let Some(&next) = next_onset.get(&n.key()) {
            n.offset = n.offset.min(next);
        }
        next_onset.insert(n.key(), n.onset);
    }
}

/// Tempo scale, transposition, velocity curve, timing jitter and velocity
/// dequantization, in that order. Note count is preserved.
pub fn augment<R: Rng + ?Sized>(notes: &[NoteRecord], cfg: &AugmentConfig, rng: &mut R) -> Vec<NoteRecord> {
    let mut notes = notes.to_vec();
    let s = 1.0 + rng.gen_range(-cfg.tempo_range..=cfg.tempo_range);
    scale_tempo(&mut notes, s);
    let k = rng.gen_range(-cfg.transpose_range..=cfg.transpose_range);
    transpose(&mut notes, k);
    let z = Normal::new(0.0, cfg.velocity_curve_sigma).unwrap().sample(rng);
    let gamma = z.exp();
    for n in &mut notes {
        n.velocity = velocity_curve(n.velocity, gamma);
    }
    if cfg.jitter > 0.0 {
        for n in &mut notes {
            n.onset += rng.gen_range(-cfg.jitter..=cfg.jitter);
            n.offset += rng.gen_range(-cfg.jitter..=cfg.jitter);
        }
    }
    for n in &mut notes {
        if n.velocity > 0.0 && n.velocity < 127.0 {
            n.velocity += rng.gen_range(-0.5..0.5);
        }
        // zero is reserved for note-offs
        n.velocity = n.velocity.clamp(0.5, 127.0);
    }
    repair_order(&mut notes);
    notes
}

/// With probability `p` per distinct instrument, replace it by an unused
/// anonymous identity of the same kind, consistently across the sequence.
pub fn anonymize<R: Rng + ?Sized>(notes: &[NoteRecord], p: f64, rng: &mut R) -> Vec<NoteRecord> {
    let distinct: Vec<InstrumentId> = notes
        .iter()
        .map(|n| n.instrument)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut free_melodic: Vec<u16> = (0..NUM_ANON_PER_KIND).map(|i| ANON_MELODIC_BASE + i).collect();
    let mut free_drum: Vec<u16> = (0..NUM_ANON_PER_KIND).map(|i| ANON_DRUM_BASE + i).collect();
    let in_use: Vec<u16> = distinct.iter().map(|i| i.get()).collect();
    free_melodic.retain(|i| !in_use.contains(i));
    free_drum.retain(|i| !in_use.contains(i));
    let mut map = BTreeMap::new();
    for id in distinct {
        let pool = match id.kind() {
            InstrumentKind::Melodic => &mut free_melodic,
            InstrumentKind::Drum => &mut free_drum,
            _ => continue,
        };
        if rng.gen_bool(p) && !pool.is_empty() {
            let j = rng.gen_range(0..pool.len());
            let anon = pool.swap_remove(j);
            map.insert(id, InstrumentId::new(anon).unwrap());
        }
    }
    notes
        .iter()
        .map(|n| NoteRecord {
            instrument: *map.get(&n.instrument).unwrap_or(&n.instrument),
            ..*n
        })
        .collect()
}

/// An event with its absolute time.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TimedEvent {
    pub time: f64,
    pub instrument: InstrumentId,
    pub pitch: u8,
    pub velocity: f64,
}

/// Note-on and note-off events in time order. Notes are emitted in onset
/// order and the time sort is stable, so a note-off at the same instant as
/// the next onset of its key comes first.
pub fn flatten_timed(notes: &[NoteRecord]) -> Vec<TimedEvent> {
    let mut notes = notes.to_vec();
    sort_by_onset(&mut notes);
    let mut out = Vec::with_capacity(2 * notes.len());
    for n in &notes {
        out.push(TimedEvent {
            time: n.onset,
            instrument: n.instrument,
            pitch: n.pitch,
            velocity: n.velocity,
        });
        out.push(TimedEvent {
            time: n.offset,
            instrument: n.instrument,
            pitch: n.pitch,
            velocity: 0.0,
        });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

pub fn timed_to_stream(events: &[TimedEvent], terminated: bool) -> EventStream {
    let mut prev = 0.0;
    let events = events
        .iter()
        .map(|e| {
            let dt = (e.time - prev).max(0.0);
            prev = e.time;
            Event {
                instrument: e.instrument,
                pitch: e.pitch,
                time_delta: dt as f32,
                velocity: e.velocity as f32,
            }
        })
        .collect();
    EventStream { events, terminated }
}

/// The first event gets `Δt = 0`: times are measured from the first onset.
pub fn flatten(notes: &[NoteRecord]) -> EventStream {
    let mut timed = flatten_timed(notes);
    if let Some(t0) = timed.first().map(|e| e.time) {
        for e in &mut timed {
            e.time -= t0;
        }
    }
    timed_to_stream(&timed, true)
}

/// Pair note-ons with the next note-off of the same key. Unmatched
/// note-offs are reported; notes still open at the end close at the last
/// event time.
pub fn pair_events(events: &[TimedEvent]) -> (Vec<NoteRecord>, usize) {
    let mut open: HashMap<(InstrumentId, u8), VecDeque<(f64, f64)>> = HashMap::new();
    let mut notes = Vec::new();
    let mut unmatched = 0;
    for e in events {
        let key = (e.instrument, e.pitch);
        if e.velocity == 0.0 {
            match open.get_mut(&key).and_then(VecDeque::pop_front) {
                Some((onset, velocity)) => notes.push(NoteRecord {
                    instrument: e.instrument,
                    pitch: e.pitch,
                    onset,
                    offset: e.time,
                    velocity,
                }),
                None => unmatched += 1,
            }
        } else {
            open.entry(key).or_default().push_back((e.time, e.velocity));
        }
    }
    let end = events.last().map_or(0.0, |e| e.time);
    let mut rest: Vec<_> = open.into_iter().collect();
    rest.sort_by_key(|(k, _)| *k);
    for ((instrument, pitch), q) in rest {
        for (onset, velocity) in q {
            notes.push(NoteRecord {
                instrument,
                pitch,
                onset,
                offset: end,
                velocity,
            });
        }
    }
    sort_by_onset(&mut notes);
    (notes, unmatched)
}

pub fn stream_to_timed(stream: &EventStream) -> Vec<TimedEvent> {
    let times = stream.absolute_times();
    stream
        .events
        .iter()
        .zip(times)
        .map(|(e, t)| TimedEvent {
            time: t,
            instrument: e.instrument,
            pitch: e.pitch,
            velocity: e.velocity as f64,
        })
        .collect()
}

/// Recover notes from a flattened stream.
pub fn unflatten(stream: &EventStream) -> Vec<NoteRecord> {
    pair_events(&stream_to_timed(stream)).0
}

/// Training-time augmentation of an already flattened stream.
pub fn augment_stream<R: Rng + ?Sized>(stream: &EventStream, cfg: &AugmentConfig, rng: &mut R) -> EventStream {
    let notes = unflatten(stream);
    let notes = augment(&notes, cfg, rng);
    let notes = if cfg.anonymize_prob > 0.0 {
        anonymize(&notes, cfg.anonymize_prob, rng)
    } else {
        notes
    };
    let mut s = flatten(&notes);
    s.terminated = stream.terminated;
    s
}

/// Whether every note-off closes an open note and no key is switched on
/// twice without a note-off in between.
pub fn is_legal(stream: &EventStream) -> bool {
    let mut open = std::collections::HashSet::new();
    for e in &stream.events {
        let ok = if e.is_noteoff() {
            open.remove(&e.key())
        } else {
            open.insert(e.key())
        };
        if !ok {
            return false;
        }
    }
    true
}
