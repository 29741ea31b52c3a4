//! Central finite differences against the tape gradient.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::record_sequence;
use super::masks::PermutationMask;
use super::tape::{Grads, Tape};
use crate::events::Event;
use crate::model::graph::{Eval, Graph};
use crate::model::ModelParams;

/// A fixed loss: sequence, masks, end-of-sequence flag and the seed of the
/// dropout masks, so every evaluation sees the same function.
pub struct LossProblem<'a> {
    pub events: &'a [Event],
    pub masks: &'a [PermutationMask],
    pub eos_at_end: bool,
    pub dropout_seed: Option<u64>,
}

impl LossProblem<'_> {
    fn dropout_rng(&self) -> Option<ChaCha8Rng> {
        self.dropout_seed.map(ChaCha8Rng::seed_from_u64)
    }

    pub fn value(&self, params: &ModelParams) -> f64 {
        let mut g = Eval::new(params);
        let mut rng = self.dropout_rng();
        let p = params.config.dropout_p;
        let d = rng.as_mut().map(|r| (p, r as &mut dyn RngCore));
        let t = record_sequence(&mut g, self.events, self.masks, self.eos_at_end, d);
        t.total[0]
    }

    pub fn gradient(&self, params: &ModelParams) -> (f64, Grads) {
        let mut tape = Tape::new(params);
        let mut rng = self.dropout_rng();
        let p = params.config.dropout_p;
        let d = rng.as_mut().map(|r| (p, r as &mut dyn RngCore));
        let t = record_sequence(&mut tape, self.events, self.masks, self.eos_at_end, d);
        (tape.value(&t.total)[0], tape.backward(t.total))
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare every parameter's tape gradient with a central difference of
/// step `h`.
pub fn check_gradients(params: &ModelParams, problem: &LossProblem<'_>, h: f64, floor: f64) -> GradCheckReport {
    let (_, grads) = problem.gradient(params);
    let mut p = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for ti in 0..p.tensors.len() {
        for j in 0..p.tensors[ti].data.len() {
            let orig = p.tensors[ti].data[j];
            p.tensors[ti].data[j] = orig + h;
            let up = problem.value(&p);
            p.tensors[ti].data[j] = orig - h;
            let down = problem.value(&p);
            p.tensors[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors[ti][j];
            let err = relative_error(analytic, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (p.tensors[ti].name.clone(), j);
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn micro_problem() -> (ModelParams, Vec<Event>, Vec<PermutationMask>) {
        let cfg = ModelConfig::micro();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let events = vec![
            Event::new(1, 60, 0.0, 80.3).unwrap(),
            Event::new(130, 38, 0.137, 101.2).unwrap(),
            Event::new(1, 60, 0.25, 0.0).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let masks = (0..3).map(|_| PermutationMask::sample(&mut rng)).collect();
        (p, events, masks)
    }

    fn problem<'a>(events: &'a [Event], masks: &'a [PermutationMask]) -> LossProblem<'a> {
        LossProblem { events, masks, eos_at_end: true, dropout_seed: Some(3) }
    }

    #[test]
    fn tape_matches_central_differences() {
        let (p, events, masks) = micro_problem();
        let r = check_gradients(&p, &problem(&events, &masks), 1e-5, 1e-4);
        assert_eq!(r.checked, p.tensors.iter().map(|t| t.data.len()).sum::<usize>());
        assert!(
            r.max_rel_error < 1e-4,
            "{:e} at {:?}: {:e} vs {:e}",
            r.max_rel_error,
            r.worst,
            r.worst_analytic,
            r.worst_numeric
        );
    }

    // Below the floor the step-1e-5 difference is noise-limited; a
    // fourth-order extrapolation with a wider step resolves tiny entries.
    #[test]
    fn small_entries_match_extrapolated_differences() {
        let (p, events, masks) = micro_problem();
        let prob = problem(&events, &masks);
        let (_, grads) = prob.gradient(&p);
        let ti = p.find("gru0.w_hh").unwrap().0;
        let mut q = p.clone();
        let mut small: Vec<usize> = (0..grads.tensors[ti].len())
            .filter(|&j| (1e-7..1e-5).contains(&grads.tensors[ti][j].abs()))
            .collect();
        small.truncate(12);
        assert!(!small.is_empty());
        for j in small {
            let o = q.tensors[ti].data[j];
            let mut d = |h: f64| {
                q.tensors[ti].data[j] = o + h;
                let up = prob.value(&q);
                q.tensors[ti].data[j] = o - h;
                let down = prob.value(&q);
                q.tensors[ti].data[j] = o;
                (up - down) / (2.0 * h)
            };
            let rich = (4.0 * d(1e-3) - d(2e-3)) / 3.0;
            let a = grads.tensors[ti][j];
            assert!(relative_error(a, rich, 0.0) < 1e-3, "{j}: {a:e} vs {rich:e}");
        }
    }

    #[test]
    fn unused_rows_get_exact_zeros() {
        let (p, events, masks) = micro_problem();
        let (_, grads) = problem(&events, &masks).gradient(&p);
        let d = p.config.embed_dim;
        let pitch = &grads.tensors[p.find("embed.pitch").unwrap().0];
        for row in 0..128 {
            let touched = pitch[row * d..(row + 1) * d].iter().any(|&g| g != 0.0);
            assert_eq!(touched, row == 60 || row == 38, "pitch row {row}");
        }
        let inst = &grads.tensors[p.find("embed.instrument").unwrap().0];
        let rows = (0..inst.len() / d).filter(|r| inst[r * d..(r + 1) * d].iter().any(|&g| g != 0.0)).count();
        assert_eq!(rows, 2);
    }

    #[test]
    fn gradient_is_additive_over_sequences() {
        let (p, events, masks) = micro_problem();
        let first = LossProblem { events: &events[..2], masks: &masks[..2], eos_at_end: false, dropout_seed: None };
        let other = [Event::new(5, 72, 0.0, 64.0).unwrap()];
        let second = LossProblem { events: &other, masks: &masks[2..], eos_at_end: true, dropout_seed: None };
        let (la, ga) = first.gradient(&p);
        let (lb, gb) = second.gradient(&p);
        let mut tape = Tape::new(&p);
        let a = record_sequence(&mut tape, first.events, first.masks, false, None).total;
        let b = record_sequence(&mut tape, second.events, second.masks, true, None).total;
        let sum = tape.add(&a, &b);
        assert!((tape.value(&sum)[0] - (la + lb)).abs() < 1e-12);
        let g = tape.backward(sum);
        for ((x, y), z) in ga.tensors.iter().zip(&gb.tensors).zip(&g.tensors) {
            for ((x, y), z) in x.iter().zip(y).zip(z) {
                assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
    }
}
