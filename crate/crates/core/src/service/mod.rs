//! The process boundary: a serialized session behind OSC, WebSocket and raw
//! MIDI transports.

mod loopback;
pub mod midi;
pub mod osc;
mod server;
mod session;
pub mod ws;

pub use loopback::osc_round_trips;
pub use server::{serve, start, ServerHandle};
pub use session::{Command, Output, Reply, Session, MAX_LIVE_DT};

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::QuerySpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Raw,
    Generate,
    Autopitch,
    Harmonize,
    Improvise,
    Surprise,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Raw,
        Mode::Generate,
        Mode::Autopitch,
        Mode::Harmonize,
        Mode::Improvise,
        Mode::Surprise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Raw => "raw",
            Mode::Generate => "generate",
            Mode::Autopitch => "autopitch",
            Mode::Harmonize => "harmonize",
            Mode::Improvise => "improvise",
            Mode::Surprise => "surprise",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppParams {
    /// Constraints applied to every model event the apps produce.
    pub template: QuerySpec,
    /// Harmony notes per performed note.
    pub fan_out: usize,
    /// Instruments the improviser leaves to the player.
    pub player_instruments: Vec<u16>,
}

impl Default for AppParams {
    fn default() -> Self {
        AppParams {
            template: QuerySpec::default(),
            fan_out: 1,
            player_instruments: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscConfig {
    pub listen: Option<SocketAddr>,
    /// Where broadcast events go, besides replies to the sender.
    pub send: Option<SocketAddr>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WsConfig {
    pub listen: Option<SocketAddr>,
}

/// Raw MIDI device files, e.g. `/dev/snd/midiC1D0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MidiConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub mode: Mode,
    pub osc: OscConfig,
    pub ws: WsConfig,
    pub midi: MidiConfig,
    pub app: AppParams,
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for i in self.app.player_instruments.iter().chain(&self.app.template.exclude_instruments) {
            crate::events::InstrumentId::new(*i)?;
        }
        self.app.template.resolve()?;
        if self.app.fan_out == 0 {
            return Err(Error::Config("fan_out must be at least 1".into()));
        }
        let ports = [self.osc.listen, self.ws.listen];
        if let [Some(a), Some(b)] = ports {
            if a == b && a.port() != 0 {
                return Err(Error::Config(format!("osc and ws both listen on {a}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_toml() {
        let c = SessionConfig::from_toml(
            r#"
            checkpoint = "model.ckpt"
            seed = 7
            mode = "harmonize"
            [osc]
            listen = "127.0.0.1:9000"
            send = "127.0.0.1:9001"
            [midi]
            input = "/dev/snd/midiC1D0"
            [app]
            fan_out = 2
            player_instruments = [1, 2]
            [app.template]
            pitches = [60, 62, 64]
            "#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Harmonize);
        assert_eq!(c.seed, 7);
        assert_eq!(c.osc.listen.unwrap().port(), 9000);
        assert_eq!(c.app.template.pitches, Some(vec![60, 62, 64]));
        assert!(c.ws.listen.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(SessionConfig::from_toml("mode = \"jam\"").is_err());
        assert!(SessionConfig::from_toml("[osc]\nport = 3").is_err());
        let c = SessionConfig::from_toml("[app]\nplayer_instruments = [0]").unwrap();
        assert!(c.validate().is_err());
        let c = SessionConfig::from_toml("[osc]\nlisten = \"127.0.0.1:9000\"\n[ws]\nlisten = \"127.0.0.1:9000\"").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.name()).unwrap(), m);
        }
    }
}
