//! The network is written once against [`Graph`]; [`Eval`] computes values
//! directly for inference and the training tape records the same calls for
//! reverse-mode differentiation.

use rand::RngCore;

use super::forward;
use super::linalg::affine;
use super::ops;
use super::params::{GruLayer, Linear, ModelParams, ParamId};

pub trait Graph {
    type Node: Clone;

    fn params(&self) -> &ModelParams;
    fn value<'s>(&'s self, n: &'s Self::Node) -> &'s [f64];

    fn constant(&mut self, v: Vec<f64>) -> Self::Node;
    fn param(&mut self, p: ParamId) -> Self::Node;
    fn embed(&mut self, table: ParamId, row: usize) -> Self::Node;
    fn linear(&mut self, l: &Linear, x: &Self::Node) -> Self::Node;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Self::Node;
    fn layer_norm(&mut self, x: &Self::Node) -> Self::Node;
    fn glu(&mut self, x: &Self::Node) -> Self::Node;
    /// Elementwise product with a constant vector (dropout masks).
    fn mask(&mut self, x: &Self::Node, mask: Vec<f64>) -> Self::Node;
    fn gru_cell(&mut self, layer: &GruLayer, x: &Self::Node, h: &Self::Node) -> Self::Node;

    fn sum(&mut self, nodes: &[Self::Node]) -> Self::Node {
        let mut acc = nodes[0].clone();
        for n in &nodes[1..] {
            acc = self.add(&acc, n);
        }
        acc
    }
}

/// Dropout rate plus the randomness that draws its masks.
pub type Dropout<'r> = Option<(f64, &'r mut dyn RngCore)>;

/// Direct evaluation without recording.
pub struct Eval<'p> {
    params: &'p ModelParams,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Eval { params }
    }
}

impl Graph for Eval<'_> {
    type Node = Vec<f64>;

    fn params(&self) -> &ModelParams {
        self.params
    }

    fn value<'s>(&'s self, n: &'s Vec<f64>) -> &'s [f64] {
        n
    }

    fn constant(&mut self, v: Vec<f64>) -> Vec<f64> {
        v
    }

    fn param(&mut self, p: ParamId) -> Vec<f64> {
        self.params.data(p).to_vec()
    }

    fn embed(&mut self, table: ParamId, row: usize) -> Vec<f64> {
        let t = self.params.tensor(table);
        let width = t.shape[1];
        t.data[row * width..(row + 1) * width].to_vec()
    }

    fn linear(&mut self, l: &Linear, x: &Vec<f64>) -> Vec<f64> {
        affine(self.params.data(l.w), self.params.data(l.b), x)
    }

    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn layer_norm(&mut self, x: &Vec<f64>) -> Vec<f64> {
        ops::layer_norm(x).0
    }

    fn glu(&mut self, x: &Vec<f64>) -> Vec<f64> {
        ops::glu(x)
    }

    fn mask(&mut self, x: &Vec<f64>, mask: Vec<f64>) -> Vec<f64> {
        x.iter().zip(&mask).map(|(a, m)| a * m).collect()
    }

    fn gru_cell(&mut self, layer: &GruLayer, x: &Vec<f64>, h: &Vec<f64>) -> Vec<f64> {
        ops::gru_cell(self.params, layer, x, h).0
    }

    fn sum(&mut self, nodes: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = nodes[0].clone();
        for n in &nodes[1..] {
            for (a, b) in acc.iter_mut().zip(n) {
                *a += b;
            }
        }
        acc
    }
}

impl Eval<'_> {
    pub fn mlp(&mut self, mlp: &super::params::Mlp, x: &[f64], dropout: Dropout<'_>) -> Vec<f64> {
        forward::mlp(self, mlp, &x.to_vec(), dropout)
    }
}
