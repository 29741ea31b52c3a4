use std::io;

use crate::events::Modality;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("instrument id {0} outside [1, 272]")]
    InvalidInstrument(u32),
    #[error("pitch {0} outside [0, 127]")]
    InvalidPitch(u32),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("class index {index} out of range for {len} classes")]
    ClassOutOfRange { index: usize, len: usize },
    #[error("value {value} outside distribution domain [{lo}, {hi}]")]
    OutsideDomain { value: f64, lo: f64, hi: f64 },
    #[error("empty support for {0}")]
    EmptySupport(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown snapshot token {0}")]
    UnknownToken(u64),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("format error: {0}")]
    Format(String),
    #[error("midi error: {0}")]
    Midi(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn empty_support(modality: Modality) -> Self {
        Error::EmptySupport(modality.name().to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
