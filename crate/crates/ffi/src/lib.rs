//! C ABI over the ncrd engine.
//!
//! Every function returns an [`NcrdStatus`]. On failure a message is kept
//! per thread and can be read with [`ncrd_last_error`]. Handles are opaque
//! and must be released with [`ncrd_engine_free`]; a handle may be used
//! from any thread but not from two at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ncrd::engine::{Engine, Prediction, QuerySpec, Temperatures};
use ncrd::events::Event;
use ncrd::model::{ModelConfig, ModelParams};
use ncrd::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcrdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Constraints left nothing to sample.
    EmptySupport = 3,
    Io = 4,
    /// Unreadable checkpoint or malformed data.
    Format = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// One event. A velocity of 0 ends the note.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NcrdEvent {
    /// 1..=128 melodic programs, 129..=256 drum kits, 257..=272 anonymous.
    pub instrument: u16,
    pub pitch: u8,
    /// Seconds since the previous event, in [0, 10].
    pub time: f32,
    pub velocity: f32,
}

/// Query constraints. Start from [`ncrd_query_default`]; negative values
/// leave a sub-event free and null lists allow everything.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct NcrdQuery {
    pub fixed_instrument: i32,
    pub fixed_pitch: i32,
    pub fixed_time: f32,
    pub fixed_velocity: f32,
    pub instruments: *const u16,
    pub instruments_len: usize,
    pub pitches: *const u8,
    pub pitches_len: usize,
    /// Ignored unless `min_time <= max_time`.
    pub min_time: f32,
    pub max_time: f32,
    /// Ignored unless `min_velocity <= max_velocity`.
    pub min_velocity: f32,
    pub max_velocity: f32,
    /// Applied to every sub-event; 0 is greedy.
    pub temperature: f32,
    /// Only end sounding notes.
    pub end_held: bool,
    /// Only start notes that are silent.
    pub start_silent: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NcrdPrediction {
    pub event: NcrdEvent,
    /// Instrument, pitch, time, velocity.
    pub log_probs: [f64; 4],
    pub total: f64,
    /// Probability the piece ends before this event.
    pub eos_prob: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NcrdRanked {
    pub pitch: u8,
    pub log_prob: f64,
}

/// Opaque engine handle.
pub struct NcrdEngine {
    engine: Engine,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NcrdStatus {
    match e {
        Error::EmptySupport(_) => NcrdStatus::EmptySupport,
        Error::Io(_) => NcrdStatus::Io,
        Error::Format(_) | Error::Midi(_) => NcrdStatus::Format,
        _ => NcrdStatus::InvalidArgument,
    }
}

enum Fail {
    Status(NcrdStatus, String),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(NcrdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NcrdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NcrdStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            NcrdStatus::Panic
        }
    }
}

unsafe fn engine_mut<'a>(e: *mut NcrdEngine) -> Result<&'a mut NcrdEngine, Fail> {
    e.as_mut().ok_or_else(|| null("engine"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

fn to_event(e: &NcrdEvent) -> Result<Event, Fail> {
    Ok(Event::new(e.instrument, e.pitch, e.time, e.velocity)?)
}

fn from_event(e: &Event) -> NcrdEvent {
    NcrdEvent {
        instrument: e.instrument.get(),
        pitch: e.pitch,
        time: e.time_delta,
        velocity: e.velocity,
    }
}

unsafe fn to_spec(q: &NcrdQuery) -> Result<QuerySpec, Fail> {
    let bad = |m: &str| Fail::Status(NcrdStatus::InvalidArgument, m.to_string());
    let mut s = QuerySpec::new();
    if q.fixed_instrument >= 0 {
        s.fixed.instrument = Some(u16::try_from(q.fixed_instrument).map_err(|_| bad("fixed_instrument out of range"))?);
    }
    if q.fixed_pitch >= 0 {
        s.fixed.pitch = Some(u8::try_from(q.fixed_pitch).map_err(|_| bad("fixed_pitch out of range"))?);
    }
    if q.fixed_time >= 0.0 {
        s.fixed.time = Some(q.fixed_time as f64);
    }
    if q.fixed_velocity >= 0.0 {
        s.fixed.velocity = Some(q.fixed_velocity as f64);
    }
    s.instruments = slice(q.instruments, q.instruments_len).map(<[u16]>::to_vec);
    s.pitches = slice(q.pitches, q.pitches_len).map(<[u8]>::to_vec);
    if q.min_time <= q.max_time {
        s.time_range = Some((q.min_time as f64, q.max_time as f64));
    }
    if q.min_velocity <= q.max_velocity {
        s.velocity_range = Some((q.min_velocity as f64, q.max_velocity as f64));
    }
    if !(q.temperature >= 0.0) {
        return Err(bad("temperature must be non-negative"));
    }
    s.temperatures = Temperatures::uniform(q.temperature as f64);
    s.end_held = q.end_held;
    s.start_silent = q.start_silent;
    s.include_eos = true;
    Ok(s)
}

unsafe fn spec_or_default(q: *const NcrdQuery) -> Result<QuerySpec, Fail> {
    match q.as_ref() {
        Some(q) => to_spec(q),
        None => Ok(QuerySpec {
            include_eos: true,
            ..QuerySpec::new()
        }),
    }
}

fn preset(name: &str) -> Option<ModelConfig> {
    match name {
        "default" => Some(ModelConfig::default()),
        "small" => Some(ModelConfig::small()),
        "micro" => Some(ModelConfig::micro()),
        _ => None,
    }
}

fn boxed(engine: Engine, seed: u64) -> *mut NcrdEngine {
    Box::into_raw(Box::new(NcrdEngine {
        engine,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }))
}

/// Load a checkpoint. `seed` drives sampling.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncrd_engine_load(path: *const c_char, seed: u64, out: *mut *mut NcrdEngine) -> NcrdStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path.as_ref().ok_or_else(|| null("path"))?);
        let path = path
            .to_str()
            .map_err(|_| Fail::Status(NcrdStatus::InvalidArgument, "path is not UTF-8".into()))?;
        *out = boxed(Engine::from_checkpoint(Path::new(path))?, seed);
        Ok(())
    })
}

/// A randomly initialized model of preset `default`, `small` or `micro`.
/// Useful for testing and benchmarking.
///
/// # Safety
/// `preset_name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ncrd_engine_random(
    preset_name: *const c_char,
    seed: u64,
    out: *mut *mut NcrdEngine,
) -> NcrdStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let name = CStr::from_ptr(preset_name.as_ref().ok_or_else(|| null("preset_name"))?);
        let cfg = name
            .to_str()
            .ok()
            .and_then(preset)
            .ok_or_else(|| Fail::Status(NcrdStatus::InvalidArgument, format!("unknown preset {name:?}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&cfg, &mut rng)?;
        *out = boxed(Engine::new(params), seed.wrapping_add(1));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `engine` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ncrd_engine_free(engine: *mut NcrdEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Advance the model past an observed event.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ncrd_feed(engine: *mut NcrdEngine, event: *const NcrdEvent) -> NcrdStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let ev = to_event(event.as_ref().ok_or_else(|| null("event"))?)?;
        Ok(e.engine.feed(&ev)?)
    })
}

/// Forget everything fed so far.
///
/// # Safety
/// `engine` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ncrd_reset(engine: *mut NcrdEngine) -> NcrdStatus {
    guard(|| {
        engine_mut(engine)?.engine.reset();
        Ok(())
    })
}

/// Fill `out` with an unconstrained query at temperature 1.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncrd_query_default(out: *mut NcrdQuery) -> NcrdStatus {
    guard(|| {
        *out.as_mut().ok_or_else(|| null("out"))? = NcrdQuery {
            fixed_instrument: -1,
            fixed_pitch: -1,
            fixed_time: -1.0,
            fixed_velocity: -1.0,
            instruments: ptr::null(),
            instruments_len: 0,
            pitches: ptr::null(),
            pitches_len: 0,
            min_time: 1.0,
            max_time: 0.0,
            min_velocity: 1.0,
            max_velocity: 0.0,
            temperature: 1.0,
            end_held: false,
            start_silent: false,
        };
        Ok(())
    })
}

/// Sample the next event. A null `query` means unconstrained. The engine
/// state is not changed; feed the result to commit it.
///
/// # Safety
/// `engine` and `out` must be valid; list pointers in `query` must cover
/// their lengths.
#[no_mangle]
pub unsafe extern "C" fn ncrd_query(
    engine: *mut NcrdEngine,
    query: *const NcrdQuery,
    out: *mut NcrdPrediction,
) -> NcrdStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec = spec_or_default(query)?;
        let Prediction {
            event,
            log_probs,
            total,
            eos_prob,
            ..
        } = e.engine.query(&spec, &mut e.rng)?;
        *out = NcrdPrediction {
            event: from_event(&event),
            log_probs,
            total,
            eos_prob: eos_prob.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Pitches by log-probability, most likely first. At most `capacity`
/// entries are written; `written` receives the count. Pass a zero
/// capacity to learn the size.
///
/// # Safety
/// `out` must hold `capacity` entries; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncrd_pitch_ranking(
    engine: *mut NcrdEngine,
    query: *const NcrdQuery,
    out: *mut NcrdRanked,
    capacity: usize,
    written: *mut usize,
) -> NcrdStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        *written = 0;
        let ranking = e.engine.pitch_ranking(&spec_or_default(query)?)?;
        if capacity == 0 {
            *written = ranking.len();
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, capacity);
        for (d, &(pitch, log_prob)) in dst.iter_mut().zip(&ranking) {
            *d = NcrdRanked { pitch, log_prob };
            *written += 1;
        }
        if ranking.len() > capacity {
            return Err(Fail::Status(
                NcrdStatus::BufferTooSmall,
                format!("{} pitches, room for {capacity}", ranking.len()),
            ));
        }
        Ok(())
    })
}

/// Log-probability of a complete event in instrument, pitch, time,
/// velocity order. `log_probs` may be null.
///
/// # Safety
/// Pointers must be valid; `log_probs` holds 4 doubles when non-null.
#[no_mangle]
pub unsafe extern "C" fn ncrd_event_log_prob(
    engine: *mut NcrdEngine,
    event: *const NcrdEvent,
    log_probs: *mut f64,
    total: *mut f64,
) -> NcrdStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let ev = to_event(event.as_ref().ok_or_else(|| null("event"))?)?;
        let total = total.as_mut().ok_or_else(|| null("total"))?;
        let lp = e.engine.event_log_prob(&ev, &ncrd::engine::AUTO_ORDER)?;
        *total = lp.total;
        if !log_probs.is_null() {
            std::slice::from_raw_parts_mut(log_probs, 4).copy_from_slice(&lp.log_probs);
        }
        Ok(())
    })
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ncrd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn ncrd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
