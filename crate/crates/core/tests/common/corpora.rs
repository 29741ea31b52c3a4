//! Small corpora and schedules shared by the training tests.

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use ncrd::events::{Event, EventStream};
use ncrd::model::ModelConfig;
use ncrd::trainer::{AdamWConfig, TrainSchedule};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_INSTRUMENTS: [u16; 4] = [1, 25, 41, 74];

/// Four monophonic melodies of eight notes, one instrument each.
pub fn toy_corpus() -> Vec<EventStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    TOY_INSTRUMENTS
        .iter()
        .map(|&inst| {
            let mut events = Vec::new();
            for j in 0..8 {
                let p: u8 = rng.gen_range(48..84);
                let dt = if j == 0 { 0.0 } else { 0.25 };
                events.push(Event::new(inst, p, dt, 96.0).unwrap());
                events.push(Event::new(inst, p, 0.25, 0.0).unwrap());
            }
            EventStream::new(events, true)
        })
        .collect()
}

pub const SYNTH_INSTRUMENTS: [u16; 8] = [1, 9, 17, 25, 33, 41, 49, 57];

pub fn synth_pitch(instrument: u16) -> u8 {
    let k = SYNTH_INSTRUMENTS.iter().position(|&i| i == instrument).unwrap();
    40 + 5 * k as u8
}

/// Note-ons of uniformly random instruments whose pitch is a function of
/// the instrument. Without the instrument the pitch carries ln 8 nats.
pub fn synthetic_corpus(streams: usize, len: usize, seed: u64) -> Vec<EventStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..streams)
        .map(|_| {
            let events = (0..len)
                .map(|j| {
                    let inst = *SYNTH_INSTRUMENTS.choose(&mut rng).unwrap();
                    let dt = if j == 0 { 0.0 } else { 0.125 };
                    Event::new(inst, synth_pitch(inst), dt, 80.0).unwrap()
                })
                .collect();
            EventStream::new(events, true)
        })
        .collect()
}

/// Fixed-length schedule without augmentation or validation split,
/// annealing from `lr` over `steps`.
pub fn short_schedule(batch_size: usize, steps: u64, lr: f64) -> TrainSchedule {
    TrainSchedule {
        batch_size,
        initial_batch_length: 32,
        length_increment_per_epoch: 0,
        validation_fraction: 0.0,
        max_steps: Some(steps),
        augment: None,
        optimizer: AdamWConfig { lr, ..Default::default() },
        final_lr: Some(1e-5),
        ..Default::default()
    }
}

pub fn no_dropout(c: ModelConfig) -> ModelConfig {
    ModelConfig { dropout_p: 0.0, ..c }
}

fn midi(delta: u32, channel: u8, message: MidiMessage) -> TrackEvent<'static> {
    TrackEvent {
        delta: u28::new(delta),
        kind: TrackEventKind::Midi {
            channel: u4::new(channel),
            message,
        },
    }
}

/// A random format 0 or 1 file: tempo changes, program changes, drums on
/// channel 10, overlapping notes of the same key, both note-off spellings.
pub fn random_smf<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let n_tracks = rng.gen_range(1..=4);
    let tpb = *[96u16, 240, 480, 960].choose(rng).unwrap();
    let mut tracks = Vec::new();
    for t in 0..n_tracks {
        // (tick, order, event) with absolute ticks, sorted before writing
        let mut evs: Vec<(u32, u32, TrackEventKind<'static>)> = Vec::new();
        let mut seq = 0;
        let mut push = |tick: u32, kind| {
            evs.push((tick, seq, kind));
            seq += 1;
        };
        if t == 0 {
            for _ in 0..rng.gen_range(0..4) {
                let tempo = rng.gen_range(250_000..1_200_000);
                push(rng.gen_range(0..tpb as u32 * 16), TrackEventKind::Meta(MetaMessage::Tempo(u24::new(tempo))));
            }
        }
        let channel = if rng.gen_bool(0.25) { 9 } else { rng.gen_range(0..9) };
        push(
            0,
            TrackEventKind::Midi {
                channel: u4::new(channel),
                message: MidiMessage::ProgramChange { program: u7::new(rng.gen_range(0..128)) },
            },
        );
        let keys: Vec<u8> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(24..100)).collect();
        for _ in 0..rng.gen_range(0..40) {
            let key = *keys.choose(rng).unwrap();
            let on = rng.gen_range(0..tpb as u32 * 16);
            let off = on + rng.gen_range(1..tpb as u32 * 2);
            let vel = rng.gen_range(1..128);
            push(on, midi(0, channel, MidiMessage::NoteOn { key: u7::new(key), vel: u7::new(vel) }).kind);
            let release = if rng.gen_bool(0.5) {
                MidiMessage::NoteOff { key: u7::new(key), vel: u7::new(64) }
            } else {
                MidiMessage::NoteOn { key: u7::new(key), vel: u7::new(0) }
            };
            push(off, midi(0, channel, release).kind);
        }
        evs.sort_by_key(|e| (e.0, e.1));
        let mut track = Vec::with_capacity(evs.len() + 1);
        let mut prev = 0;
        for (tick, _, kind) in evs {
            track.push(TrackEvent { delta: u28::new(tick - prev), kind });
            prev = tick;
        }
        track.push(TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });
        tracks.push(track);
    }
    let format = if n_tracks == 1 { Format::SingleTrack } else { Format::Parallel };
    let smf = Smf {
        header: Header::new(format, Timing::Metrical(u15::new(tpb))),
        tracks,
    };
    let mut out = Vec::new();
    smf.write_std(&mut out).unwrap();
    out
}
