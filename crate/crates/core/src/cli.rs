//! Command-line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apps::{generate, GenerateConfig};
use crate::data::roll::{save_png, RollStyle};
use crate::data::{preprocess_dir, read_corpus, write_smf, write_stream};
use crate::engine::{latency_benchmark, Engine, Temperatures};
use crate::error::{Error, Result};
use crate::model::{checkpoint, ModelConfig, ModelParams};
use crate::service::{self, Mode, SessionConfig};
use crate::trainer::{eval_nll_breakdown, history_csv, EvalOptions, TrainSchedule, Trainer};

#[derive(Parser, Debug)]
#[command(name = "ncrd", version, about = "Real-time probabilistic model for MIDI event streams")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Convert a directory of MIDI files into event streams.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Augmented variants written per file.
        #[arg(long, default_value_t = 0)]
        augment: usize,
    },
    /// Train a model on a directory of event streams.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss history as CSV; defaults to the checkpoint path with `.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Sample a stream and write it as SMF (`.mid`) or event stream.
    Generate(GenerateArgs),
    /// NLL tables by conditioning subset and by sub-event order.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long)]
        max_events: Option<usize>,
        /// Also write the tables as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the OSC / WebSocket / MIDI server until interrupted.
    Serve(ServeArgs),
    /// Feed and query latency percentiles.
    Bench {
        /// Without a checkpoint a randomly initialized model of `--preset`
        /// is timed.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long, default_value_t = 10_000)]
        calls: usize,
        /// OSC loopback round trips; 0 skips them.
        #[arg(long, default_value_t = 1000)]
        osc_calls: usize,
    },
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    max_events: usize,
    /// Keep going when the model predicts the end of the piece.
    #[arg(long)]
    ignore_eos: bool,
    /// One temperature for every sub-event.
    #[arg(long)]
    temperature: Option<f64>,
    /// Comma-separated pitch whitelist.
    #[arg(long, value_delimiter = ',')]
    pitches: Option<Vec<u8>>,
    /// Comma-separated instrument whitelist.
    #[arg(long, value_delimiter = ',')]
    instruments: Option<Vec<u16>>,
    /// Also draw a piano roll.
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// TOML session config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    osc: Option<std::net::SocketAddr>,
    #[arg(long)]
    osc_send: Option<std::net::SocketAddr>,
    #[arg(long)]
    ws: Option<std::net::SocketAddr>,
    #[arg(long)]
    midi_in: Option<PathBuf>,
    #[arg(long)]
    midi_out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
}

/// Training config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `default`, `small` or `micro`; used when `model` is absent.
    pub preset: Option<String>,
    pub model: Option<ModelConfig>,
    pub schedule: TrainSchedule,
    pub seed: Option<u64>,
}

impl TrainConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        match (&self.model, &self.preset) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(p)) => preset(p),
            (None, None) => Ok(ModelConfig::default()),
        }
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "default" => Ok(ModelConfig::default()),
        "small" => Ok(ModelConfig::small()),
        "micro" => Ok(ModelConfig::micro()),
        _ => Err(Error::Config(format!("unknown preset `{name}`"))),
    }
}

fn is_smf(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "mid" | "midi"))
}

fn cmd_train(config: Option<&Path>, data: &Path, out: &Path, history: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let cfg: TrainConfig = match config {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let model = cfg.model_config()?;
    let corpus = read_corpus(data)?;
    log::info!("{} streams", corpus.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(&model, &mut rng)?;
    log::info!("{} parameters", params.num_parameters());
    let mut t = Trainer::new(params, corpus, cfg.schedule.clone(), seed ^ 0x5EED)?;
    t.run(|t, r| {
        if t.step % 50 == 0 {
            log::info!("step {} epoch {} events {} nll {:.4} grad {:.3}", r.step, r.epoch, r.events_seen, r.total, r.grad_norm);
        }
    })?;
    if let Some(v) = t.validate() {
        log::info!("validation nll {:.4}", v.total);
    }
    let history_path = history.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("csv"));
    fs::write(&history_path, history_csv(&t.history))?;
    let extra = serde_json::json!({ "schedule": cfg.schedule, "seed": seed, "steps": t.step });
    checkpoint::save(t.params(), extra, out)?;
    println!("wrote {} and {}", out.display(), history_path.display());
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, seed: u64) -> Result<()> {
    let mut engine = Engine::from_checkpoint(&a.ckpt)?;
    let mut cfg = GenerateConfig {
        max_events: a.max_events,
        stop_on_eos: !a.ignore_eos,
        ..Default::default()
    };
    if let Some(t) = a.temperature {
        cfg.steering.temperatures = Temperatures::uniform(t);
    }
    cfg.steering.pitches = a.pitches.clone();
    cfg.steering.instruments = a.instruments.clone();
    let stream = generate(&mut engine, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    if is_smf(&a.out) {
        fs::write(&a.out, write_smf(&stream)?)?;
    } else {
        write_stream(&a.out, &stream)?;
    }
    if let Some(png) = &a.png {
        save_png(&stream, &RollStyle::default(), png)?;
    }
    println!("wrote {} events to {}", stream.len(), a.out.display());
    Ok(())
}

fn cmd_serve(a: &ServeArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default(),
    };
    if let Some(c) = &a.ckpt {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if a.osc.is_some() {
        cfg.osc.listen = a.osc;
    }
    if a.osc_send.is_some() {
        cfg.osc.send = a.osc_send;
    }
    if a.ws.is_some() {
        cfg.ws.listen = a.ws;
    }
    if a.midi_in.is_some() {
        cfg.midi.input = a.midi_in.clone();
    }
    if a.midi_out.is_some() {
        cfg.midi.output = a.midi_out.clone();
    }
    if let Some(m) = &a.mode {
        cfg.mode = Mode::parse(m)?;
    }
    if cfg.osc.listen.is_none() && cfg.ws.listen.is_none() && cfg.midi.input.is_none() {
        cfg.osc.listen = Some("127.0.0.1:9999".parse().unwrap());
    }
    service::serve(&cfg)
}

fn cmd_bench(ckpt: Option<&Path>, preset_name: &str, calls: usize, osc_calls: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match ckpt {
        Some(p) => checkpoint::load(p)?,
        None => ModelParams::init(&preset(preset_name)?, &mut rng)?,
    };
    let mut engine = Engine::new(params.clone());
    let report = latency_benchmark(&mut engine, calls, &mut rng)?;
    println!("{report}");
    if osc_calls > 0 {
        let cfg = SessionConfig {
            seed,
            osc: service::OscConfig {
                listen: Some("127.0.0.1:0".parse().unwrap()),
                send: None,
            },
            ..Default::default()
        };
        let h = service::start(&cfg, Engine::new(params))?;
        let p = service::osc_round_trips(h.osc_addr().unwrap(), osc_calls, &mut rng)?;
        h.shutdown()?;
        println!(
            "osc   p50 {:.3} ms  p90 {:.3} ms  p99 {:.3} ms  max {:.3} ms (feed + query round trip)",
            p.p50, p.p90, p.p99, p.max
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Cmd::Preprocess { input, output, augment } => {
            let r = preprocess_dir(input, output, *augment, seed)?;
            println!("wrote {} files ({} events), skipped {}", r.written, r.events, r.skipped.len());
            for (p, why) in &r.skipped {
                println!("  skipped {}: {why}", p.display());
            }
            Ok(())
        }
        Cmd::Train { config, data, out, history } => {
            cmd_train(config.as_deref(), data, out, history.as_deref(), cli.seed)
        }
        Cmd::Generate(a) => cmd_generate(a, seed),
        Cmd::Eval {
            ckpt,
            data,
            bootstrap,
            max_events,
            json,
        } => {
            let params = checkpoint::load(ckpt)?;
            let corpus = read_corpus(data)?;
            let opts = EvalOptions {
                bootstrap: *bootstrap,
                max_events: *max_events,
                seed,
                ..Default::default()
            };
            let b = eval_nll_breakdown(&params, &corpus, &opts);
            print!("{}", b.render());
            if let Some(j) = json {
                fs::write(j, serde_json::to_string_pretty(&b).map_err(|e| Error::Format(e.to_string()))?)?;
            }
            Ok(())
        }
        Cmd::Serve(a) => cmd_serve(a, cli.seed),
        Cmd::Bench {
            ckpt,
            preset,
            calls,
            osc_calls,
        } => cmd_bench(ckpt.as_deref(), preset, *calls, *osc_calls, seed),
    }
}

/// Parse `argv` (including the program name) and run; returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_eq!(run(["ncrd"]), 2);
        assert_eq!(run(["ncrd", "dance"]), 2);
        assert_eq!(run(["ncrd", "generate", "--out", "x"]), 2);
        assert_eq!(run(["ncrd", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(run(["ncrd", "eval", "--ckpt", "/nonexistent", "--data", "/nonexistent"]), 1);
    }

    #[test]
    fn train_config_presets() {
        let c: TrainConfig = toml::from_str("preset = \"small\"\n[schedule]\nbatch_size = 4").unwrap();
        assert_eq!(c.model_config().unwrap(), ModelConfig::small());
        assert_eq!(c.schedule.batch_size, 4);
        assert!(toml::from_str::<TrainConfig>("presett = 1").is_err());
        assert!(TrainConfig { preset: Some("huge".into()), ..Default::default() }.model_config().is_err());
    }
}
