use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ModelConfig;
use crate::distributions::{Discretization, TIME_DISCRETIZATION, VELOCITY_DISCRETIZATION};
use crate::error::{Error, Result};
use crate::events::{Modality, NUM_INSTRUMENTS, NUM_PITCHES};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `y = W x + b` with `W` stored row-major as `out × inp`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

/// Blocks of (layer norm, affine to twice the width, GLU, dropout) followed
/// by a final affine projection.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub blocks: Vec<Linear>,
    pub out: Linear,
}

/// Gate order within the stacked matrices is reset, update, candidate.
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// How the raw output of a continuous head maps to mixture parameters:
/// `location = offset + unit * raw`, `log_scale = ln(unit) + raw`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DmolHead {
    pub k: usize,
    pub disc: Discretization,
    pub loc_offset: f64,
    pub loc_unit: f64,
}

pub const TIME_HEAD_UNIT: (f64, f64) = (0.0, 1.0);
pub const VELOCITY_HEAD_UNIT: (f64, f64) = (64.0, 32.0);

#[derive(Clone, Debug)]
pub struct Layout {
    pub instrument_table: ParamId,
    pub pitch_table: ParamId,
    pub time_proj: Linear,
    pub velocity_proj: Linear,
    pub gru: Vec<GruLayer>,
    pub initial_state: Vec<ParamId>,
    pub f_h: Mlp,
    /// Indexed by [`Modality::index`].
    pub heads: [Mlp; 4],
    pub eos: Linear,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    pub layout: Layout,
    pub time_freqs: Vec<f64>,
    pub velocity_freqs: Vec<f64>,
}

struct Builder {
    tensors: Vec<Tensor>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.tensors.push(Tensor {
            name,
            shape,
            data: vec![0.0; n],
        });
        ParamId(self.tensors.len() - 1)
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.weight"), vec![out, inp]),
            b: self.add(format!("{name}.bias"), vec![out]),
            inp,
            out,
        }
    }

    fn mlp(&mut self, name: &str, inp: usize, width: usize, layers: usize, out: usize) -> Mlp {
        let mut blocks = Vec::with_capacity(layers);
        let mut d = inp;
        for i in 0..layers {
            blocks.push(self.linear(&format!("{name}.block{i}"), d, 2 * width));
            d = width;
        }
        Mlp {
            blocks,
            out: self.linear(&format!("{name}.out"), d, out),
        }
    }
}

pub fn head_output_dim(config: &ModelConfig, m: Modality) -> usize {
    match m {
        Modality::Instrument => NUM_INSTRUMENTS,
        Modality::Pitch => NUM_PITCHES,
        Modality::Time | Modality::Velocity => 3 * config.mixture_k,
    }
}

impl ModelParams {
    /// All-zero parameters with the tensor layout implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut b = Builder { tensors: Vec::new() };
        let instrument_table = b.add("embed.instrument".into(), vec![NUM_INSTRUMENTS, c.embed_dim]);
        let pitch_table = b.add("embed.pitch".into(), vec![NUM_PITCHES, c.embed_dim]);
        let time_proj = b.linear("embed.time", c.n_sinusoids, c.embed_dim);
        let velocity_proj = b.linear("embed.velocity", c.n_sinusoids, c.embed_dim);
        let mut gru = Vec::new();
        let mut initial_state = Vec::new();
        for l in 0..c.gru_layers {
            let input = if l == 0 { c.embed_dim } else { c.hidden_dim };
            let h = c.hidden_dim;
            gru.push(GruLayer {
                w_ih: b.add(format!("gru{l}.w_ih"), vec![3 * h, input]),
                w_hh: b.add(format!("gru{l}.w_hh"), vec![3 * h, h]),
                b_ih: b.add(format!("gru{l}.b_ih"), vec![3 * h]),
                b_hh: b.add(format!("gru{l}.b_hh"), vec![3 * h]),
                input,
                hidden: h,
            });
            initial_state.push(b.add(format!("gru{l}.h0"), vec![h]));
        }
        let f_h = b.mlp("mlp.hidden", c.hidden_dim, c.mlp_hidden, c.mlp_layers, c.embed_dim);
        let heads = Modality::ALL.map(|m| {
            b.mlp(
                &format!("mlp.{}", m.name()),
                c.embed_dim,
                c.mlp_hidden,
                c.mlp_layers,
                head_output_dim(c, m),
            )
        });
        let eos = b.linear("eos", c.hidden_dim, 1);
        Ok(ModelParams {
            config: config.clone(),
            tensors: b.tensors,
            layout: Layout {
                instrument_table,
                pitch_table,
                time_proj,
                velocity_proj,
                gru,
                initial_state,
                f_h,
                heads,
                eos,
            },
            time_freqs: config.time_frequencies(),
            velocity_freqs: config.velocity_frequencies(),
        })
    }

    /// Random initialization: unit-normal embedding tables, uniform
    /// `±1/sqrt(fan_in)` weights, and head output layers shrunk so the
    /// untrained categorical heads start close to uniform.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let lay = p.layout.clone();
        for t in [lay.instrument_table, lay.pitch_table] {
            for v in &mut p.tensors[t.0].data {
                *v = normal.sample(rng);
            }
        }
        let fill_linear = |p: &mut ModelParams, l: &Linear, gain: f64, rng: &mut R| {
            let bound = gain / (l.inp as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            for v in &mut p.tensors[l.w.0].data {
                *v = u.sample(rng);
            }
        };
        fill_linear(&mut p, &lay.time_proj, 1.0, rng);
        fill_linear(&mut p, &lay.velocity_proj, 1.0, rng);
        for (g, h0) in lay.gru.iter().zip(&lay.initial_state) {
            let bound = 1.0 / (g.hidden as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            // a zero start state would feed exact zeros into layer norm
            for id in [g.w_ih, g.w_hh, g.b_ih, g.b_hh, *h0] {
                for v in &mut p.tensors[id.0].data {
                    *v = u.sample(rng);
                }
            }
        }
        for mlp in std::iter::once(&lay.f_h).chain(lay.heads.iter()) {
            for blk in &mlp.blocks {
                fill_linear(&mut p, blk, 1.0, rng);
            }
        }
        fill_linear(&mut p, &lay.f_h.out, 1.0, rng);
        for m in Modality::ALL {
            fill_linear(&mut p, &lay.heads[m.index()].out, 0.1, rng);
        }
        // spread the mixture components before training breaks the symmetry
        let k = config.mixture_k;
        let spread = |i: usize| if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
        let tb = lay.heads[Modality::Time.index()].out.b.0;
        for i in 0..k {
            p.tensors[tb].data[k + i] = 2.0 * spread(i);
            p.tensors[tb].data[2 * k + i] = -2.0;
        }
        let vb = lay.heads[Modality::Velocity.index()].out.b.0;
        for i in 0..k {
            p.tensors[vb].data[k + i] = -1.0 + 2.0 * spread(i);
            p.tensors[vb].data[2 * k + i] = -1.4;
        }
        fill_linear(&mut p, &lay.eos, 0.1, rng);
        p.tensors[lay.eos.b.0].data[0] = -4.0;
        Ok(p)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn dmol_head(&self, m: Modality) -> DmolHead {
        let (disc, (loc_offset, loc_unit)) = match m {
            Modality::Time => (TIME_DISCRETIZATION, TIME_HEAD_UNIT),
            Modality::Velocity => (VELOCITY_DISCRETIZATION, VELOCITY_HEAD_UNIT),
            _ => panic!("{} is not a continuous modality", m.name()),
        };
        DmolHead {
            k: self.config.mixture_k,
            disc,
            loc_offset,
            loc_unit,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor `{}` has non-finite values", t.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_follow_config() {
        let c = ModelConfig::micro();
        let p = ModelParams::zeros(&c).unwrap();
        assert_eq!(p.tensor(p.layout.instrument_table).shape, vec![272, 8]);
        assert_eq!(p.tensor(p.layout.pitch_table).shape, vec![128, 8]);
        assert_eq!(p.tensor(p.layout.gru[0].w_ih).shape, vec![48, 8]);
        assert_eq!(p.tensor(p.layout.heads[2].out.w).shape, vec![9, 8]);
        assert_eq!(p.tensor(p.layout.eos.w).shape, vec![1, 16]);
        let mut names: Vec<_> = p.tensors.iter().map(|t| t.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.tensors.len());
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let c = ModelConfig::micro();
        let a = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.tensors, b.tensors);
        a.check_finite().unwrap();
    }
}
