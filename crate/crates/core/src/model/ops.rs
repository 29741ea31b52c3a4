//! Forward kernels shared by the inference path and the recording tape.

use super::linalg::affine;
use super::params::{GruLayer, ModelParams};
use crate::distributions::numeric::sigmoid;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalize to zero mean and unit variance. Returns the output and
/// `1/sqrt(var + eps)`.
pub fn layer_norm(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

/// First half times the sigmoid of the second half.
pub fn glu(x: &[f64]) -> Vec<f64> {
    let (a, b) = x.split_at(x.len() / 2);
    a.iter().zip(b).map(|(a, b)| a * sigmoid(*b)).collect()
}

/// Intermediate values of one GRU cell, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruAux {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `W_hn h + b_hn`.
    pub gh_n: Vec<f64>,
}

/// One GRU cell:
/// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`,
/// `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
/// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
/// `h' = (1 - z) ⊙ n + z ⊙ h`.
pub fn gru_cell(p: &ModelParams, layer: &GruLayer, x: &[f64], h: &[f64]) -> (Vec<f64>, GruAux) {
    let hd = layer.hidden;
    let gi = affine(p.data(layer.w_ih), p.data(layer.b_ih), x);
    let gh = affine(p.data(layer.w_hh), p.data(layer.b_hh), h);
    let mut r = Vec::with_capacity(hd);
    let mut z = Vec::with_capacity(hd);
    let mut n = Vec::with_capacity(hd);
    let mut out = Vec::with_capacity(hd);
    for j in 0..hd {
        let rj = sigmoid(gi[j] + gh[j]);
        let zj = sigmoid(gi[hd + j] + gh[hd + j]);
        let nj = (gi[2 * hd + j] + rj * gh[2 * hd + j]).tanh();
        r.push(rj);
        z.push(zj);
        n.push(nj);
        out.push((1.0 - zj) * nj + zj * h[j]);
    }
    let gh_n = gh[2 * hd..].to_vec();
    (out, GruAux { r, z, n, gh_n })
}

pub fn sinusoids(x: f64, freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .map(|f| (2.0 * std::f64::consts::PI * f * x).sin())
        .collect()
}
