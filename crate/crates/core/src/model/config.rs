use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gru_layers: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub mixture_k: usize,
    pub dropout_p: f64,
    pub n_sinusoids: usize,
    /// Shortest and longest wavelength of the time features, in seconds.
    pub time_wavelengths: [f64; 2],
    /// Lowest and highest frequency of the velocity features, in cycles per
    /// velocity unit.
    pub velocity_frequency_range: [f64; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            hidden_dim: 512,
            gru_layers: 1,
            mlp_hidden: 256,
            mlp_layers: 2,
            mixture_k: 16,
            dropout_p: 0.1,
            n_sinusoids: 64,
            time_wavelengths: [0.01, 100.0],
            velocity_frequency_range: [1.0 / 256.0, 0.5],
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 16,
            gru_layers: 1,
            mlp_hidden: 8,
            mlp_layers: 2,
            mixture_k: 3,
            n_sinusoids: 4,
            ..Default::default()
        }
    }

    /// Small configuration that trains quickly on a CPU.
    pub fn small() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            gru_layers: 1,
            mlp_hidden: 64,
            mlp_layers: 1,
            mixture_k: 4,
            n_sinusoids: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.hidden_dim,
            self.gru_layers,
            self.mlp_hidden,
            self.mlp_layers,
            self.mixture_k,
            self.n_sinusoids,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        let [lo, hi] = self.time_wavelengths;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("bad time wavelengths {lo}..{hi}")));
        }
        let [lo, hi] = self.velocity_frequency_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("bad velocity frequencies {lo}..{hi}")));
        }
        Ok(())
    }

    /// Frequencies `1/λ` for wavelengths log-spaced over `time_wavelengths`.
    pub fn time_frequencies(&self) -> Vec<f64> {
        let [lo, hi] = self.time_wavelengths;
        let n = self.n_sinusoids;
        (0..n)
            .map(|j| {
                let t = if n == 1 { 0.0 } else { j as f64 / (n - 1) as f64 };
                1.0 / (lo * (hi / lo).powf(t))
            })
            .collect()
    }

    /// Linearly spaced velocity frequencies.
    pub fn velocity_frequencies(&self) -> Vec<f64> {
        let [lo, hi] = self.velocity_frequency_range;
        let n = self.n_sinusoids;
        (0..n)
            .map(|j| {
                let t = if n == 1 { 0.0 } else { j as f64 / (n - 1) as f64 };
                lo + (hi - lo) * t
            })
            .collect()
    }
}
