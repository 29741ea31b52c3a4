//! Binary event stream files.
//!
//! ```text
//! magic    4 bytes  "NCRD"
//! version  u8       1
//! flags    u8       bit 0: stream terminated
//! count    u64      number of events
//! count × { instrument u16, pitch u8, Δt f32 seconds, velocity f32 }
//! ```
//! Little-endian throughout, 11 bytes per event.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, InstrumentId};

pub const MAGIC: &[u8; 4] = b"NCRD";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 14;
const EVENT_LEN: usize = 11;

pub fn encode_stream(s: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + EVENT_LEN * s.events.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(s.terminated as u8);
    out.extend_from_slice(&(s.events.len() as u64).to_le_bytes());
    for e in &s.events {
        out.extend_from_slice(&e.instrument.get().to_le_bytes());
        out.push(e.pitch);
        out.extend_from_slice(&e.time_delta.to_le_bytes());
        out.extend_from_slice(&e.velocity.to_le_bytes());
    }
    out
}

pub fn decode_stream(buf: &[u8]) -> Result<EventStream> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::Format("not an NCRD stream (bad magic)".into()));
    }
    if buf.len() < HEADER_LEN {
        return Err(Error::Format("NCRD header truncated".into()));
    }
    if buf[4] != VERSION {
        return Err(Error::Format(format!("unsupported NCRD version {}", buf[4])));
    }
    let terminated = buf[5] & 1 == 1;
    let count = u64::from_le_bytes(buf[6..14].try_into().unwrap()) as usize;
    let body = &buf[HEADER_LEN..];
    if body.len() != count.checked_mul(EVENT_LEN).unwrap_or(usize::MAX) {
        return Err(Error::Format(format!(
            "NCRD body holds {} bytes, header promises {count} events",
            body.len()
        )));
    }
    let mut events = Vec::with_capacity(count);
    for c in body.chunks_exact(EVENT_LEN) {
        let e = Event {
            instrument: InstrumentId::new(u16::from_le_bytes([c[0], c[1]]))?,
            pitch: c[2],
            time_delta: f32::from_le_bytes(c[3..7].try_into().unwrap()),
            velocity: f32::from_le_bytes(c[7..11].try_into().unwrap()),
        };
        e.validate()?;
        events.push(e);
    }
    Ok(EventStream { events, terminated })
}

pub fn write_stream(path: &Path, s: &EventStream) -> Result<()> {
    fs::write(path, encode_stream(s))?;
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<EventStream> {
    decode_stream(&fs::read(path)?)
}

/// Every `.ncrd` file directly inside `dir`, in file-name order.
pub fn read_corpus(dir: &Path) -> Result<Vec<EventStream>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ncrd"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_stream(p)).collect()
}
