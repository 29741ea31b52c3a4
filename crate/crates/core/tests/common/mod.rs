#![allow(dead_code)]

pub mod corpora;

use std::path::PathBuf;

use ncrd::apps::Surprise;
use ncrd::engine::{parse_order, Engine, Prediction, QuerySpec, Temperatures, AUTO_ORDER};
use ncrd::events::Event;
use ncrd::model::{ModelConfig, ModelParams};
use ncrd::service::ws::ClientFrame;
use ncrd::service::{osc, ws, Mode, Output, Reply};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn engine(config: &ModelConfig, seed: u64) -> Engine {
    Engine::new(ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
}

pub fn ev(i: u16, p: u8, t: f32, v: f32) -> Event {
    Event::new(i, p, t, v).unwrap()
}

fn golden_query() -> QuerySpec {
    QuerySpec {
        pitches: Some(vec![60, 64]),
        exclude_instruments: vec![129],
        time_range: Some((0.0, 0.5)),
        order: Some(parse_order("vipt").unwrap()),
        temperatures: Temperatures { pitch: 0.5, ..Default::default() },
        start_silent: true,
        include_eos: true,
        ..QuerySpec::new().fix_velocity(0.0)
    }
}

fn prediction(eos: Option<f64>) -> Prediction {
    Prediction {
        event: ev(5, 61, 0.125, 33.0),
        log_probs: [-1.0, -2.0, -0.5, -3.25],
        total: -6.75,
        eos_prob: eos,
        order: AUTO_ORDER.to_vec(),
    }
}

fn replies() -> Vec<(&'static str, Reply)> {
    vec![
        ("prediction", Reply::Prediction(prediction(None))),
        ("prediction_eos", Reply::Prediction(prediction(Some(0.0625)))),
        ("ranking", Reply::Ranking((0..128u8).rev().map(|p| (p, -(p as f64) / 8.0)).collect())),
        ("event", Reply::Event(ev(130, 38, 0.5, 0.0))),
        ("surprise", Reply::Surprise(Surprise { nll: [0.5, 4.75, 1.25, 2.0], total: 8.5 })),
        ("ack", Reply::Ack("reset".into())),
        ("error", Reply::Error("unknown address".into())),
    ]
}

/// Schema samples built from fixed values, keyed by file name.
pub fn golden_cases() -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = vec![
        ("osc_feed.bin".into(), osc::encode_feed(1, 60, Some(0.25), 64.0)),
        ("osc_feed_measured.bin".into(), osc::encode_feed(130, 38, None, 0.0)),
        ("osc_query.bin".into(), osc::encode_query(&golden_query())),
        ("osc_ranking.bin".into(), osc::encode_ranking(&QuerySpec::new().fix_instrument(1))),
        ("osc_reset.bin".into(), osc::encode_reset()),
        ("osc_mode.bin".into(), osc::encode_mode(Mode::Harmonize)),
    ];
    let mut server_frames = String::new();
    for (seq, (name, r)) in replies().into_iter().enumerate() {
        if let Some(bytes) = osc::encode_reply(&r) {
            out.push((format!("osc_reply_{name}.bin"), bytes));
        }
        server_frames += &ws::encode(&Output { seq: seq as u64, reply: r });
        server_frames.push('\n');
    }
    out.push(("ws_server.jsonl".into(), server_frames.into_bytes()));
    let client = [
        ClientFrame::Feed { instrument: 1, pitch: 60, velocity: 64.0, dt: None },
        ClientFrame::Feed { instrument: 130, pitch: 38, velocity: 0.0, dt: Some(0.5) },
        ClientFrame::Query { spec: golden_query() },
        ClientFrame::Ranking { spec: QuerySpec::default() },
        ClientFrame::Reset,
        ClientFrame::Mode { mode: Mode::Improvise },
    ];
    let text: String = client.iter().map(|f| serde_json::to_string(f).unwrap() + "\n").collect();
    out.push(("ws_client.jsonl".into(), text.into_bytes()));
    out
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compare every case with its file. `NCRD_BLESS=1` rewrites the files.
pub fn check_goldens() -> Result<usize, String> {
    let dir = golden_dir();
    let bless = std::env::var_os("NCRD_BLESS").is_some();
    let cases = golden_cases();
    for (name, bytes) in &cases {
        let path = dir.join(name);
        if bless {
            std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
            continue;
        }
        let want = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if &want != bytes {
            return Err(format!("{name} differs from its golden file"));
        }
    }
    Ok(cases.len())
}
