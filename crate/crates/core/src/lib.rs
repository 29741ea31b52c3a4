pub mod apps;
pub mod cli;
pub mod data;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod events;
pub mod model;
pub mod service;
pub mod trainer;

pub use error::{Error, Result};
