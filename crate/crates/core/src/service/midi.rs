//! Mapping between live MIDI messages and events, and raw MIDI device
//! ports (byte streams such as `/dev/snd/midiC1D0`).

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use midly::live::LiveEvent;
use midly::num::{u4, u7};
use midly::stream::MidiStream;
use midly::MidiMessage;

use crate::data::midi::instrument_for;
use crate::data::OutboundMap;
use crate::error::Result;
use crate::events::{Event, InstrumentId};

/// A note event read from a controller, before its time delta is known.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoteInput {
    pub instrument: InstrumentId,
    pub pitch: u8,
    pub velocity: f32,
}

/// Tracks program changes per channel and turns note messages into
/// instrument-tagged notes. Everything except notes and program changes is
/// dropped.
#[derive(Clone, Debug, Default)]
pub struct InboundMap {
    programs: [u8; 16],
}

impl InboundMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn map(&mut self, ev: &LiveEvent<'_>) -> Option<NoteInput> {
        let LiveEvent::Midi { channel, message } = ev else {
            return None;
        };
        let ch = channel.as_int();
        let note = |key: u7, vel: f32| NoteInput {
            instrument: instrument_for(ch, self.programs[ch as usize]),
            pitch: key.as_int(),
            velocity: vel,
        };
        match *message {
            MidiMessage::NoteOn { key, vel } => Some(note(key, vel.as_int() as f32)),
            MidiMessage::NoteOff { key, .. } => Some(note(key, 0.0)),
            MidiMessage::ProgramChange { program } => {
                self.programs[ch as usize] = program.as_int();
                None
            }
            _ => None,
        }
    }

    /// Map raw bytes holding one complete message.
    pub fn map_bytes(&mut self, raw: &[u8]) -> Option<NoteInput> {
        LiveEvent::parse(raw).ok().and_then(|ev| self.map(&ev))
    }
}

fn encode(channel: u8, message: MidiMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(3);
    LiveEvent::Midi {
        channel: u4::new(channel),
        message,
    }
    .write_std(&mut out)
    .expect("writing to a vec");
    out
}

/// Raw messages for one outgoing event.
pub fn event_bytes(map: &mut OutboundMap, e: &Event) -> Vec<Vec<u8>> {
    map.map(e).into_iter().map(|(c, m)| encode(c, m)).collect()
}

/// Read a raw MIDI device, reopening it with backoff when it goes away, and
/// pass every mapped note to `on_note` until `stop` is set.
pub fn spawn_input(
    path: PathBuf,
    stop: Arc<AtomicBool>,
    mut on_note: impl FnMut(NoteInput) + Send + 'static,
) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut backoff = Duration::from_millis(100);
        let mut map = InboundMap::new();
        while !stop.load(Ordering::Relaxed) {
            let mut file = match File::open(&path) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("midi input {}: {e}; retrying in {backoff:?}", path.display());
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(5));
                    continue;
                }
            };
            backoff = Duration::from_millis(100);
            let mut stream = MidiStream::new();
            let mut buf = [0u8; 256];
            loop {
                if stop.load(Ordering::Relaxed) {
                    return;
                }
                match file.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => stream.feed(&buf[..n], |ev| {
                        if let Some(note) = map.map(&ev) {
                            on_note(note);
                        }
                    }),
                    Err(e) => {
                        log::warn!("midi input {}: {e}", path.display());
                        break;
                    }
                }
            }
        }
    })
}

/// A raw MIDI output device. Writes after a failure reopen the device.
pub struct MidiOutput {
    path: PathBuf,
    file: Option<File>,
    map: OutboundMap,
}

impl MidiOutput {
    pub fn new(path: PathBuf) -> Self {
        MidiOutput {
            path,
            file: None,
            map: OutboundMap::new(),
        }
    }

    pub fn send(&mut self, e: &Event) -> Result<()> {
        let msgs = event_bytes(&mut self.map, e);
        if self.file.is_none() {
            self.file = Some(OpenOptions::new().write(true).open(&self.path)?);
        }
        let f = self.file.as_mut().unwrap();
        let r = msgs.iter().try_for_each(|m| f.write_all(m)).and_then(|_| f.flush());
        if r.is_err() {
            self.file = None;
        }
        Ok(r?)
    }
}
