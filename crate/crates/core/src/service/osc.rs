//! The OSC schema.
//!
//! Inbound:
//!
//! | address | arguments |
//! |---|---|
//! | `/notochord/feed` | `i` instrument, `i` pitch, `f` dt (negative: measure on arrival), `f` velocity |
//! | `/notochord/query` | key/value pairs, see below |
//! | `/notochord/ranking` | key/value pairs |
//! | `/notochord/reset` | none |
//! | `/notochord/mode` | `s` mode name |
//!
//! Query keys: `fixed_inst` `fixed_pitch` `fixed_dt` `fixed_vel`, `allow_inst`
//! `exclude_inst` `allow_pitch` `exclude_pitch` (repeatable), `min_dt` `max_dt`
//! `min_vel` `max_vel`, `order` (string such as `"vipt"`), `temperature` (all
//! six) or `temp_inst` `temp_pitch` `temp_rhythm` `temp_timing` `temp_vel_w`
//! `temp_vel_s`, and the flags `end_held` `start_silent` `eos`. Numbers may be
//! sent as any OSC numeric type.
//!
//! Outbound:
//!
//! | address | arguments |
//! |---|---|
//! | `/notochord/query-reply` | `iiff` event, `ffff` log-probs (i p t v), `f` eos probability when asked |
//! | `/notochord/ranking-reply` | 128 × (`i` pitch, `f` log-prob), most likely first |
//! | `/notochord/event` | `iiff` |
//! | `/notochord/surprise` | `ffff` per-modality NLL, `f` total |
//! | `/notochord/error` | `s` reason |

use rosc::{decoder, encoder, OscMessage, OscPacket, OscType};

use super::{Command, Mode, Reply};
use crate::distributions::{TIME_DISCRETIZATION, VELOCITY_DISCRETIZATION};
use crate::engine::{parse_order, QuerySpec, Temperatures};
use crate::events::Event;

pub const FEED: &str = "/notochord/feed";
pub const QUERY: &str = "/notochord/query";
pub const RANKING: &str = "/notochord/ranking";
pub const RESET: &str = "/notochord/reset";
pub const MODE: &str = "/notochord/mode";
pub const QUERY_REPLY: &str = "/notochord/query-reply";
pub const RANKING_REPLY: &str = "/notochord/ranking-reply";
pub const EVENT: &str = "/notochord/event";
pub const SURPRISE: &str = "/notochord/surprise";
pub const ERROR: &str = "/notochord/error";

type Parse<T> = std::result::Result<T, String>;

fn num(a: &OscType) -> Option<f64> {
    match *a {
        OscType::Int(x) => Some(x as f64),
        OscType::Float(x) => Some(x as f64),
        OscType::Double(x) => Some(x),
        OscType::Long(x) => Some(x as f64),
        OscType::Bool(b) => Some(b as u8 as f64),
        _ => None,
    }
}

fn number(key: &str, a: Option<&OscType>) -> Parse<f64> {
    a.and_then(num).ok_or_else(|| format!("`{key}` needs a number"))
}

fn int_in(key: &str, a: Option<&OscType>, lo: i64, hi: i64) -> Parse<i64> {
    let x = number(key, a)?;
    if x.fract() != 0.0 || x < lo as f64 || x > hi as f64 {
        return Err(format!("`{key}` must be an integer in [{lo}, {hi}], got {x}"));
    }
    Ok(x as i64)
}

fn instrument(key: &str, a: Option<&OscType>) -> Parse<u16> {
    int_in(key, a, 1, 272).map(|x| x as u16)
}

fn pitch(key: &str, a: Option<&OscType>) -> Parse<u8> {
    int_in(key, a, 0, 127).map(|x| x as u8)
}

/// Decode one UDP datagram into commands, one per message (bundles are
/// flattened in order).
pub fn decode(bytes: &[u8]) -> Vec<Parse<Command>> {
    match decoder::decode_udp(bytes) {
        Ok((_, packet)) => {
            let mut out = Vec::new();
            flatten(packet, &mut out);
            out
        }
        Err(e) => vec![Err(format!("undecodable packet: {e:?}"))],
    }
}

fn flatten(p: OscPacket, out: &mut Vec<Parse<Command>>) {
    match p {
        OscPacket::Message(m) => out.push(command(&m)),
        OscPacket::Bundle(b) => b.content.into_iter().for_each(|p| flatten(p, out)),
    }
}

pub fn command(m: &OscMessage) -> Parse<Command> {
    match m.addr.as_str() {
        FEED => {
            if m.args.len() != 4 {
                return Err(format!("feed takes 4 arguments, got {}", m.args.len()));
            }
            let dt = number("dt", m.args.get(2))?;
            let velocity = number("velocity", m.args.get(3))?;
            Ok(Command::Play {
                instrument: instrument("instrument", m.args.first())?,
                pitch: pitch("pitch", m.args.get(1))?,
                velocity: velocity as f32,
                dt: (dt >= 0.0).then_some(dt as f32),
            })
        }
        QUERY => query_spec(&m.args).map(Command::Query),
        RANKING => query_spec(&m.args).map(Command::Ranking),
        RESET => Ok(Command::Reset),
        MODE => match m.args.as_slice() {
            [OscType::String(s)] => Mode::parse(s).map(Command::SetMode).map_err(|e| e.to_string()),
            _ => Err("mode takes one string".into()),
        },
        _ => Err("unknown address".into()),
    }
}

fn flag(key: &str, a: Option<&OscType>) -> Parse<bool> {
    Ok(number(key, a)? != 0.0)
}

/// Parse key/value query arguments.
pub fn query_spec(args: &[OscType]) -> Parse<QuerySpec> {
    let mut spec = QuerySpec::default();
    let (mut dt, mut vel) = ((None, None), (None, None));
    let mut it = args.iter();
    while let Some(k) = it.next() {
        let OscType::String(key) = k else {
            return Err(format!("expected a key string, got {k:?}"));
        };
        let key = key.as_str();
        let v = it.next();
        let t = &mut spec.temperatures;
        match key {
            "fixed_inst" => spec.fixed.instrument = Some(instrument(key, v)?),
            "fixed_pitch" => spec.fixed.pitch = Some(pitch(key, v)?),
            "fixed_dt" => spec.fixed.time = Some(number(key, v)?),
            "fixed_vel" => spec.fixed.velocity = Some(number(key, v)?),
            "allow_inst" => spec.instruments.get_or_insert_with(Vec::new).push(instrument(key, v)?),
            "exclude_inst" => spec.exclude_instruments.push(instrument(key, v)?),
            "allow_pitch" => spec.pitches.get_or_insert_with(Vec::new).push(pitch(key, v)?),
            "exclude_pitch" => spec.exclude_pitches.push(pitch(key, v)?),
            "min_dt" => dt.0 = Some(number(key, v)?),
            "max_dt" => dt.1 = Some(number(key, v)?),
            "min_vel" => vel.0 = Some(number(key, v)?),
            "max_vel" => vel.1 = Some(number(key, v)?),
            "order" => match v {
                Some(OscType::String(s)) => spec.order = Some(parse_order(s).map_err(|e| e.to_string())?),
                _ => return Err("`order` needs a string".into()),
            },
            "temperature" => *t = Temperatures::uniform(number(key, v)?),
            "temp_inst" => t.instrument = number(key, v)?,
            "temp_pitch" => t.pitch = number(key, v)?,
            "temp_rhythm" => t.rhythm = number(key, v)?,
            "temp_timing" => t.timing = number(key, v)?,
            "temp_vel_w" => t.velocity_weights = number(key, v)?,
            "temp_vel_s" => t.velocity_scales = number(key, v)?,
            "end_held" => spec.end_held = flag(key, v)?,
            "start_silent" => spec.start_silent = flag(key, v)?,
            "eos" => spec.include_eos = flag(key, v)?,
            _ => return Err(format!("unknown query key `{key}`")),
        }
    }
    let (td, vd) = (TIME_DISCRETIZATION, VELOCITY_DISCRETIZATION);
    if dt.0.is_some() || dt.1.is_some() {
        spec.time_range = Some((dt.0.unwrap_or(td.lo), dt.1.unwrap_or(td.hi)));
    }
    if vel.0.is_some() || vel.1.is_some() {
        spec.velocity_range = Some((vel.0.unwrap_or(vd.lo), vel.1.unwrap_or(vd.hi)));
    }
    Ok(spec)
}

fn s(x: &str) -> OscType {
    OscType::String(x.to_string())
}

/// Key/value arguments for `spec`; the inverse of [`query_spec`] for values
/// representable in OSC.
pub fn query_args(spec: &QuerySpec) -> Vec<OscType> {
    let mut a = Vec::new();
    let f = &spec.fixed;
    if let Some(i) = f.instrument {
        a.extend([s("fixed_inst"), OscType::Int(i as i32)]);
    }
    if let Some(p) = f.pitch {
        a.extend([s("fixed_pitch"), OscType::Int(p as i32)]);
    }
    if let Some(x) = f.time {
        a.extend([s("fixed_dt"), OscType::Double(x)]);
    }
    if let Some(x) = f.velocity {
        a.extend([s("fixed_vel"), OscType::Double(x)]);
    }
    for i in spec.instruments.iter().flatten() {
        a.extend([s("allow_inst"), OscType::Int(*i as i32)]);
    }
    for i in &spec.exclude_instruments {
        a.extend([s("exclude_inst"), OscType::Int(*i as i32)]);
    }
    for p in spec.pitches.iter().flatten() {
        a.extend([s("allow_pitch"), OscType::Int(*p as i32)]);
    }
    for p in &spec.exclude_pitches {
        a.extend([s("exclude_pitch"), OscType::Int(*p as i32)]);
    }
    if let Some((lo, hi)) = spec.time_range {
        a.extend([s("min_dt"), OscType::Double(lo), s("max_dt"), OscType::Double(hi)]);
    }
    if let Some((lo, hi)) = spec.velocity_range {
        a.extend([s("min_vel"), OscType::Double(lo), s("max_vel"), OscType::Double(hi)]);
    }
    if let Some(o) = &spec.order {
        a.extend([s("order"), s(&o.iter().map(|m| m.short()).collect::<String>())]);
    }
    let t = &spec.temperatures;
    let d = Temperatures::default();
    for (key, x, dx) in [
        ("temp_inst", t.instrument, d.instrument),
        ("temp_pitch", t.pitch, d.pitch),
        ("temp_rhythm", t.rhythm, d.rhythm),
        ("temp_timing", t.timing, d.timing),
        ("temp_vel_w", t.velocity_weights, d.velocity_weights),
        ("temp_vel_s", t.velocity_scales, d.velocity_scales),
    ] {
        if x != dx {
            a.extend([s(key), OscType::Double(x)]);
        }
    }
    for (key, on) in [("end_held", spec.end_held), ("start_silent", spec.start_silent), ("eos", spec.include_eos)] {
        if on {
            a.extend([s(key), OscType::Bool(true)]);
        }
    }
    a
}

fn event_args(e: &Event) -> Vec<OscType> {
    vec![
        OscType::Int(e.instrument.get() as i32),
        OscType::Int(e.pitch as i32),
        OscType::Float(e.time_delta),
        OscType::Float(e.velocity),
    ]
}

fn packet(addr: &str, args: Vec<OscType>) -> Vec<u8> {
    let m = OscPacket::Message(OscMessage {
        addr: addr.to_string(),
        args,
    });
    encoder::encode(&m).expect("schema messages always encode")
}

/// Client side: a feed with a known time delta, or a measured one when
/// `dt` is `None`.
pub fn encode_feed(instrument: u16, pitch: u8, dt: Option<f32>, velocity: f32) -> Vec<u8> {
    packet(
        FEED,
        vec![
            OscType::Int(instrument as i32),
            OscType::Int(pitch as i32),
            OscType::Float(dt.unwrap_or(-1.0)),
            OscType::Float(velocity),
        ],
    )
}

pub fn encode_query(spec: &QuerySpec) -> Vec<u8> {
    packet(QUERY, query_args(spec))
}

pub fn encode_ranking(spec: &QuerySpec) -> Vec<u8> {
    packet(RANKING, query_args(spec))
}

pub fn encode_reset() -> Vec<u8> {
    packet(RESET, Vec::new())
}

pub fn encode_mode(mode: Mode) -> Vec<u8> {
    packet(MODE, vec![s(mode.name())])
}

/// Server side. Acks have no OSC form.
pub fn encode_reply(r: &Reply) -> Option<Vec<u8>> {
    Some(match r {
        Reply::Prediction(p) => {
            let mut args = event_args(&p.event);
            args.extend(p.log_probs.iter().map(|x| OscType::Float(*x as f32)));
            if let Some(eos) = p.eos_prob {
                args.push(OscType::Float(eos as f32));
            }
            packet(QUERY_REPLY, args)
        }
        Reply::Ranking(r) => packet(
            RANKING_REPLY,
            r.iter()
                .flat_map(|(p, lp)| [OscType::Int(*p as i32), OscType::Float(*lp as f32)])
                .collect(),
        ),
        Reply::Event(e) => packet(EVENT, event_args(e)),
        Reply::Surprise(x) => {
            let mut args: Vec<OscType> = x.nll.iter().map(|v| OscType::Float(*v as f32)).collect();
            args.push(OscType::Float(x.total as f32));
            packet(SURPRISE, args)
        }
        Reply::Error(e) => packet(ERROR, vec![s(e)]),
        Reply::Ack(_) => return None,
    })
}

/// A decoded `/notochord/query-reply`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryReply {
    pub event: Event,
    pub log_probs: [f32; 4],
    pub eos_prob: Option<f32>,
}

/// Client side: read a query reply, or the error the server sent instead.
pub fn decode_query_reply(bytes: &[u8]) -> Parse<QueryReply> {
    let (_, p) = decoder::decode_udp(bytes).map_err(|e| format!("{e:?}"))?;
    let OscPacket::Message(m) = p else {
        return Err("unexpected bundle".into());
    };
    match (m.addr.as_str(), m.args.as_slice()) {
        (ERROR, [OscType::String(e)]) => Err(e.clone()),
        (QUERY_REPLY, [OscType::Int(i), OscType::Int(p), OscType::Float(t), OscType::Float(v), rest @ ..])
            if rest.len() == 4 || rest.len() == 5 =>
        {
            let fs: Vec<f32> = rest.iter().filter_map(|a| a.clone().float()).collect();
            if fs.len() != rest.len() {
                return Err("log-probs must be floats".into());
            }
            let event = Event::new(*i as u16, *p as u8, *t, *v).map_err(|e| e.to_string())?;
            Ok(QueryReply {
                event,
                log_probs: [fs[0], fs[1], fs[2], fs[3]],
                eos_prob: fs.get(4).copied(),
            })
        }
        (a, _) => Err(format!("unexpected reply {a}")),
    }
}
