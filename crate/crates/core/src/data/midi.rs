//! Standard MIDI File reading into notes and writing of event streams.

use std::collections::{HashMap, VecDeque};

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

use super::notes::NoteRecord;
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, InstrumentId, InstrumentKind};

pub const DRUM_CHANNEL: u8 = 9;
const DEFAULT_TEMPO: u32 = 500_000;

/// Seconds at any tick under a piecewise-constant tempo.
#[derive(Clone, Debug)]
pub struct TempoMap {
    ticks_per_beat: Option<f64>,
    seconds_per_tick_timecode: f64,
    /// `(tick, µs per beat, seconds at that tick)`, sorted by tick.
    segments: Vec<(u64, u32, f64)>,
}

impl TempoMap {
    pub fn new(timing: Timing, mut changes: Vec<(u64, u32)>) -> Self {
        match timing {
            Timing::Metrical(tpb) => {
                changes.sort_by_key(|c| c.0);
                let tpb = tpb.as_int().max(1) as f64;
                let mut segments = vec![(0u64, DEFAULT_TEMPO, 0.0)];
                for (tick, tempo) in changes {
                    let (t0, us, s0) = *segments.last().unwrap();
                    let s = s0 + (tick - t0) as f64 * us as f64 / (tpb * 1e6);
                    if tick == t0 {
                        segments.last_mut().unwrap().1 = tempo;
                    } else {
                        segments.push((tick, tempo, s));
                    }
                }
                TempoMap {
                    ticks_per_beat: Some(tpb),
                    seconds_per_tick_timecode: 0.0,
                    segments,
                }
            }
            Timing::Timecode(fps, sub) => TempoMap {
                ticks_per_beat: None,
                seconds_per_tick_timecode: 1.0 / (f32::from(fps) as f64 * sub.max(1) as f64),
                segments: Vec::new(),
            },
        }
    }

    pub fn seconds(&self, tick: u64) -> f64 {
        let Some(tpb) = self.ticks_per_beat else {
            return tick as f64 * self.seconds_per_tick_timecode;
        };
        let i = self.segments.partition_point(|s| s.0 <= tick) - 1;
        let (t0, us, s0) = self.segments[i];
        s0 + (tick - t0) as f64 * us as f64 / (tpb * 1e6)
    }
}

/// Instrument of a note on `channel` under `program`.
pub fn instrument_for(channel: u8, program: u8) -> InstrumentId {
    if channel == DRUM_CHANNEL {
        InstrumentId::drum(program)
    } else {
        InstrumentId::melodic(program)
    }
}

/// Notes of every track of a format 0 or 1 file, in seconds.
///
/// Program state is per channel across tracks, a note-on with velocity 0
/// is a note-off, and a note-off closes the earliest open note of its
/// channel and key. Notes still sounding at the end close at the last
/// event of the file.
pub fn parse_midi(bytes: &[u8]) -> Result<Vec<NoteRecord>> {
    let smf = Smf::parse(bytes).map_err(|e| Error::Midi(e.to_string()))?;
    if smf.header.format == Format::Sequential {
        return Err(Error::Midi("format 2 files are not supported".into()));
    }
    // (tick, track, position) orders simultaneous events deterministically
    let mut merged = Vec::new();
    let mut tempos = Vec::new();
    for (ti, track) in smf.tracks.iter().enumerate() {
        let mut tick = 0u64;
        for (pos, ev) in track.iter().enumerate() {
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::Tempo(t)) => tempos.push((tick, t.as_int())),
                TrackEventKind::Midi { channel, message } => merged.push((tick, ti, pos, channel.as_int(), message)),
                _ => {}
            }
        }
    }
    merged.sort_by_key(|m| (m.0, m.1, m.2));
    let map = TempoMap::new(smf.header.timing, tempos);
    let mut program = [0u8; 16];
    let mut open: HashMap<(u8, u8), VecDeque<(f64, u8, InstrumentId)>> = HashMap::new();
    let mut notes = Vec::new();
    let mut last = 0.0f64;
    for (tick, _, _, ch, msg) in merged {
        let t = map.seconds(tick);
        last = last.max(t);
        let (key, vel, on) = match msg {
            MidiMessage::ProgramChange { program: p } => {
                program[ch as usize] = p.as_int();
                continue;
            }
            MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => (key.as_int(), vel.as_int(), true),
            MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => (key.as_int(), 0, false),
            _ => continue,
        };
        if on {
            let inst = instrument_for(ch, program[ch as usize]);
            open.entry((ch, key)).or_default().push_back((t, vel, inst));
        } else if let Some((onset, v, inst)) = open.get_mut(&(ch, key)).and_then(VecDeque::pop_front) {
            notes.push(NoteRecord {
                instrument: inst,
                pitch: key,
                onset,
                offset: t,
                velocity: v as f64,
            });
        }
    }
    let mut rest: Vec<_> = open.into_iter().collect();
    rest.sort_by_key(|(k, _)| *k);
    for ((_, key), q) in rest {
        for (onset, v, inst) in q {
            if last > onset {
                notes.push(NoteRecord {
                    instrument: inst,
                    pitch: key,
                    onset,
                    offset: last,
                    velocity: v as f64,
                });
            }
        }
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    Ok(notes)
}

/// A General MIDI channel and program for an instrument.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ChannelSlot {
    pub channel: u8,
    pub program: u8,
}

/// Assigns the 15 melodic channels to instruments as they appear, reusing
/// the least recently used channel when all are taken. Every drum identity
/// plays on channel 10.
#[derive(Clone, Debug, Default)]
pub struct ChannelMap {
    /// `(instrument, last use)` per melodic channel.
    melodic: Vec<(u8, InstrumentId, u64)>,
    drum_program: Option<u8>,
    clock: u64,
}

impl ChannelMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Channel for `inst`, plus whether a program change must be sent first.
    pub fn assign(&mut self, inst: InstrumentId) -> (ChannelSlot, bool) {
        self.clock += 1;
        let program = match inst.kind() {
            InstrumentKind::Melodic => (inst.get() - 1) as u8,
            InstrumentKind::Drum => (inst.get() - 129) as u8,
            InstrumentKind::AnonMelodic | InstrumentKind::AnonDrum => 0,
        };
        if inst.is_drum() {
            let changed = self.drum_program != Some(program);
            self.drum_program = Some(program);
            return (
                ChannelSlot {
                    channel: DRUM_CHANNEL,
                    program,
                },
                changed,
            );
        }
        if let Some(slot) = self.melodic.iter_mut().find(|s| s.1 == inst) {
            slot.2 = self.clock;
            return (ChannelSlot { channel: slot.0, program }, false);
        }
        let channel = if self.melodic.len() < 15 {
            let ch = self.melodic.len() as u8;
            let ch = if ch >= DRUM_CHANNEL { ch + 1 } else { ch };
            self.melodic.push((ch, inst, self.clock));
            ch
        } else {
            let lru = self.melodic.iter_mut().min_by_key(|s| s.2).unwrap();
            *lru = (lru.0, inst, self.clock);
            lru.0
        };
        (ChannelSlot { channel, program }, true)
    }
}

/// Routes outgoing events to channels and remembers where each sounding
/// note went so its note-off follows it even after the channel is reused.
#[derive(Clone, Debug, Default)]
pub struct OutboundMap {
    channels: ChannelMap,
    sounding: HashMap<(InstrumentId, u8), u8>,
}

impl OutboundMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Channel messages for one event: an optional program change, then
    /// the note message.
    pub fn map(&mut self, e: &Event) -> Vec<(u8, MidiMessage)> {
        let key = u7::new(e.pitch);
        if e.is_noteoff() {
            let channel = match self.sounding.remove(&e.key()) {
                Some(c) => c,
                None => self.channels.assign(e.instrument).0.channel,
            };
            return vec![(channel, MidiMessage::NoteOff { key, vel: u7::new(0) })];
        }
        let (slot, change) = self.channels.assign(e.instrument);
        let mut out = Vec::with_capacity(2);
        if change {
            out.push((slot.channel, MidiMessage::ProgramChange { program: u7::new(slot.program) }));
        }
        let vel = u7::new((e.velocity.round() as u8).clamp(1, 127));
        out.push((slot.channel, MidiMessage::NoteOn { key, vel }));
        self.sounding.insert(e.key(), slot.channel);
        out
    }
}

pub const SMF_TICKS_PER_BEAT: u16 = 480;
pub const SMF_TEMPO: u32 = 500_000;

/// Format 0 file at 480 ticks per beat and a fixed 120 beats per minute.
pub fn write_smf(stream: &EventStream) -> Result<Vec<u8>> {
    let ticks_per_second = SMF_TICKS_PER_BEAT as f64 * 1e6 / SMF_TEMPO as f64;
    let mut track: Vec<TrackEvent<'static>> = vec![TrackEvent {
        delta: u28::new(0),
        kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(SMF_TEMPO))),
    }];
    let mut router = OutboundMap::new();
    let mut last_tick = 0u64;
    for (e, t) in stream.events.iter().zip(stream.absolute_times()) {
        let tick = (t * ticks_per_second).round() as u64;
        let mut delta = tick.saturating_sub(last_tick);
        last_tick = last_tick.max(tick);
        for (channel, message) in router.map(e) {
            track.push(TrackEvent {
                delta: u28::new(delta as u32),
                kind: TrackEventKind::Midi {
                    channel: u4::new(channel),
                    message,
                },
            });
            delta = 0;
        }
    }
    track.push(TrackEvent {
        delta: u28::new(0),
        kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
    });
    let smf = Smf {
        header: Header::new(Format::SingleTrack, Timing::Metrical(u15::new(SMF_TICKS_PER_BEAT))),
        tracks: vec![track],
    };
    let mut out = Vec::new();
    smf.write_std(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn midi_event(delta: u32, channel: u8, message: MidiMessage) -> TrackEvent<'static> {
        TrackEvent {
            delta: u28::new(delta),
            kind: TrackEventKind::Midi {
                channel: u4::new(channel),
                message,
            },
        }
    }

    fn meta(delta: u32, m: MetaMessage<'static>) -> TrackEvent<'static> {
        TrackEvent {
            delta: u28::new(delta),
            kind: TrackEventKind::Meta(m),
        }
    }

    fn on(key: u8, vel: u8) -> MidiMessage {
        MidiMessage::NoteOn {
            key: u7::new(key),
            vel: u7::new(vel),
        }
    }

    fn file(tracks: Vec<Vec<TrackEvent<'static>>>) -> Vec<u8> {
        let fmt = if tracks.len() == 1 { Format::SingleTrack } else { Format::Parallel };
        let smf = Smf {
            header: Header::new(fmt, Timing::Metrical(u15::new(480))),
            tracks,
        };
        let mut v = Vec::new();
        smf.write_std(&mut v).unwrap();
        v
    }

    #[test]
    fn single_note() {
        let bytes = file(vec![vec![
            midi_event(0, 0, MidiMessage::ProgramChange { program: u7::new(0) }),
            midi_event(0, 0, on(60, 64)),
            midi_event(960, 0, on(60, 0)),
            meta(0, MetaMessage::EndOfTrack),
        ]]);
        let n = parse_midi(&bytes).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].instrument.get(), 1);
        assert_eq!((n[0].pitch, n[0].onset, n[0].offset, n[0].velocity), (60, 0.0, 1.0, 64.0));
    }

    /// Seconds at `tick` summed one tick at a time.
    fn integrate(changes: &[(u64, u32)], tpb: f64, tick: u64) -> f64 {
        let mut tempo = 500_000u32;
        let mut s = 0.0;
        for t in 0..tick {
            for (ct, v) in changes {
                if *ct == t {
                    tempo = *v;
                }
            }
            s += tempo as f64 / (tpb * 1e6);
        }
        s
    }

    #[test]
    fn tempo_change_mid_note() {
        let bytes = file(vec![
            vec![
                meta(0, MetaMessage::Tempo(u24::new(500_000))),
                meta(480, MetaMessage::Tempo(u24::new(1_000_000))),
                meta(0, MetaMessage::EndOfTrack),
            ],
            vec![
                midi_event(240, 0, on(64, 90)),
                midi_event(720, 0, MidiMessage::NoteOff { key: u7::new(64), vel: u7::new(0) }),
                meta(0, MetaMessage::EndOfTrack),
            ],
        ]);
        let n = parse_midi(&bytes).unwrap();
        let changes = [(0, 500_000), (480, 1_000_000)];
        assert!((n[0].onset - integrate(&changes, 480.0, 240)).abs() < 1e-9);
        assert!((n[0].offset - integrate(&changes, 480.0, 960)).abs() < 1e-9);
        assert!((n[0].offset - 1.5).abs() < 1e-12);
    }

    #[test]
    fn drum_channel_maps_to_drum_ids() {
        let bytes = file(vec![vec![
            midi_event(0, 9, on(38, 100)),
            midi_event(10, 9, on(38, 0)),
            meta(0, MetaMessage::EndOfTrack),
        ]]);
        assert_eq!(parse_midi(&bytes).unwrap()[0].instrument.get(), 129);
    }

    #[test]
    fn malformed_file_is_an_error() {
        assert!(matches!(parse_midi(b"MThd\0\0"), Err(Error::Midi(_))));
    }

    #[test]
    fn written_files_parse_back() {
        let s = EventStream {
            events: vec![
                Event::new(1, 60, 0.0, 80.0).unwrap(),
                Event::new(130, 38, 0.25, 100.0).unwrap(),
                Event::new(1, 60, 0.25, 0.0).unwrap(),
                Event::new(130, 38, 0.5, 0.0).unwrap(),
            ],
            terminated: true,
        };
        let n = parse_midi(&write_smf(&s).unwrap()).unwrap();
        assert_eq!(n.len(), 2);
        assert_eq!((n[0].instrument.get(), n[0].onset, n[0].offset), (1, 0.0, 0.5));
        assert_eq!((n[1].instrument.get(), n[1].onset, n[1].offset), (130, 0.25, 1.0));
    }

    #[test]
    fn channel_map_skips_drum_channel() {
        let mut m = ChannelMap::new();
        let chans: Vec<u8> = (1..=16).map(|i| m.assign(InstrumentId::melodic(i)).0.channel).collect();
        assert!(!chans[..15].contains(&DRUM_CHANNEL));
        // the 16th instrument evicts the least recently used
        assert_eq!(chans[15], 0);
        assert_eq!(m.assign(InstrumentId::drum(0)).0.channel, DRUM_CHANNEL);
    }

    #[test]
    fn note_off_survives_channel_reuse() {
        // seventeen melodic instruments sounding at once force channel reuse
        let mut events = vec![Event::new(1, 60, 0.0, 90.0).unwrap()];
        for i in 2..18 {
            events.push(Event::new(i, 40, 0.01, 90.0).unwrap());
        }
        events.push(Event::new(1, 60, 0.5, 0.0).unwrap());
        for i in 2..18 {
            events.push(Event::new(i, 40, 0.0, 0.0).unwrap());
        }
        let notes = parse_midi(&write_smf(&EventStream::new(events, true)).unwrap()).unwrap();
        let first = notes.iter().find(|n| n.pitch == 60).unwrap();
        assert_eq!(first.instrument.get(), 1);
        assert!((first.offset - 0.66).abs() < 2e-3, "{first:?}");
    }

}
