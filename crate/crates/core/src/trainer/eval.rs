//! NLL broken out by target sub-event and conditioning subset, plus the
//! total for every one of the 24 sub-event orders, with bootstrap intervals.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::numeric::logsumexp;
use crate::events::{EventStream, Modality};
use crate::model::forward::SubEvents;
use crate::model::{dmol_from_raw, ConditioningSet, Model, ModelParams};

#[derive(Clone, Debug, Serialize)]
pub struct EvalOptions {
    pub bootstrap: usize,
    /// Two-sided coverage of the percentile interval.
    pub confidence: f64,
    /// Stop after this many events in total.
    pub max_events: Option<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bootstrap: 1000,
            confidence: 0.99,
            max_events: None,
            seed: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsetRow {
    pub target: Modality,
    pub subset: Vec<Modality>,
    pub label: String,
    pub nll: Estimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct PermutationRow {
    pub order: [Modality; 4],
    pub label: String,
    pub nll: Estimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct NllBreakdown {
    pub events: usize,
    /// 4 targets × 8 subsets, target-major, subsets in bit order.
    pub subsets: Vec<SubsetRow>,
    /// The 24 orders in lexicographic order of modality index.
    pub permutations: Vec<PermutationRow>,
}

/// The three non-target modalities in canonical order.
fn others(target: Modality) -> [Modality; 3] {
    let v: Vec<Modality> = Modality::ALL.into_iter().filter(|m| *m != target).collect();
    [v[0], v[1], v[2]]
}

fn subset_bits(target: Modality, subset: &[Modality]) -> usize {
    let o = others(target);
    subset
        .iter()
        .map(|m| 1 << o.iter().position(|x| x == m).expect("subset excludes the target"))
        .sum()
}

fn subset_members(target: Modality, bits: usize) -> Vec<Modality> {
    let o = others(target);
    (0..3).filter(|j| bits & (1 << j) != 0).map(|j| o[j]).collect()
}

fn subset_label(subset: &[Modality]) -> String {
    let mut s = String::from("S");
    for m in subset {
        s.push('+');
        s.push(m.short());
    }
    s
}

pub fn all_orders() -> Vec<[Modality; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let idx = [a, b, c, d];
                    let mut seen = [false; 4];
                    if idx.iter().all(|&i| !std::mem::replace(&mut seen[i], true)) {
                        out.push(idx.map(Modality::from_index));
                    }
                }
            }
        }
    }
    out
}

/// NLL of each target under each of its 8 conditioning subsets, indexed
/// `[target][bits]`, for every event of `stream`.
fn stream_table(model: &Model, stream: &EventStream, limit: usize) -> Vec<[[f64; 8]; 4]> {
    let mut state = model.initial_state();
    let mut rows = Vec::with_capacity(limit.min(stream.events.len()));
    for e in stream.events.iter().take(limit) {
        let ctx = model.context(state.top());
        let sub = SubEvents::from(e);
        let values = [sub.instrument as f64, sub.pitch as f64, sub.time, sub.velocity];
        let emb = model.sub_event_embeddings(e);
        let mut row = [[0.0; 8]; 4];
        for target in Modality::ALL {
            for bits in 0..8 {
                let mut cond = ConditioningSet::new();
                for m in subset_members(target, bits) {
                    cond.insert(m, emb[m.index()].clone());
                }
                let raw = model.head_raw(&ctx, target, &cond).expect("target excluded from its subset");
                let v = values[target.index()];
                row[target.index()][bits] = match target {
                    Modality::Instrument | Modality::Pitch => logsumexp(&raw) - raw[v as usize],
                    _ => {
                        let d = dmol_from_raw(&model.params().dmol_head(target), &raw);
                        -d.bin_log_prob(v).expect("value clamped into the domain")
                    }
                };
            }
        }
        rows.push(row);
        let input = model.event_embedding(e);
        state = model.gru_step(&state, &input).0;
    }
    rows
}

pub fn eval_nll_breakdown(params: &ModelParams, dataset: &[EventStream], opts: &EvalOptions) -> NllBreakdown {
    let model = Model::new(params.clone());
    let mut budget = opts.max_events.unwrap_or(usize::MAX);
    let mut jobs = Vec::new();
    for s in dataset {
        if budget == 0 {
            break;
        }
        let n = s.events.len().min(budget);
        if n > 0 {
            jobs.push((s, n));
            budget -= n;
        }
    }
    let rows: Vec<[[f64; 8]; 4]> = jobs
        .par_iter()
        .map(|(s, n)| stream_table(&model, s, *n))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let orders = all_orders();
    // one column per reported statistic: 32 subset cells then 24 orders
    let stat = |row: &[[f64; 8]; 4], j: usize| -> f64 {
        if j < 32 {
            row[j / 8][j % 8]
        } else {
            let order = &orders[j - 32];
            let mut total = 0.0;
            for (k, t) in order.iter().enumerate() {
                total += row[t.index()][subset_bits(*t, &order[..k])];
            }
            total
        }
    };
    let n_stats = 32 + orders.len();
    let columns: Vec<Vec<f64>> = (0..n_stats)
        .map(|j| rows.iter().map(|r| stat(r, j)).collect())
        .collect();
    let estimates = bootstrap(&columns, opts);

    let subsets = (0..32)
        .map(|j| {
            let target = Modality::from_index(j / 8);
            let subset = subset_members(target, j % 8);
            SubsetRow {
                target,
                label: subset_label(&subset),
                subset,
                nll: estimates[j],
            }
        })
        .collect();
    let permutations = orders
        .iter()
        .enumerate()
        .map(|(i, o)| PermutationRow {
            order: *o,
            label: o.iter().map(|m| m.short()).collect(),
            nll: estimates[32 + i],
        })
        .collect();
    NllBreakdown {
        events: rows.len(),
        subsets,
        permutations,
    }
}

/// Mean of each column with a percentile bootstrap interval over events.
fn bootstrap(columns: &[Vec<f64>], opts: &EvalOptions) -> Vec<Estimate> {
    let n = columns.first().map_or(0, Vec::len);
    if n == 0 {
        return vec![Estimate { mean: f64::NAN, lo: f64::NAN, hi: f64::NAN }; columns.len()];
    }
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    if opts.bootstrap == 0 {
        return means.iter().map(|&m| Estimate { mean: m, lo: m, hi: m }).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut resampled: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.bootstrap); columns.len()];
    let mut counts = vec![0u32; n];
    for _ in 0..opts.bootstrap {
        counts.fill(0);
        for _ in 0..n {
            counts[rng.gen_range(0..n)] += 1;
        }
        for (c, out) in columns.iter().zip(resampled.iter_mut()) {
            let s: f64 = c.iter().zip(&counts).map(|(v, k)| v * *k as f64).sum();
            out.push(s / n as f64);
        }
    }
    let alpha = (1.0 - opts.confidence) / 2.0;
    resampled
        .into_iter()
        .zip(means)
        .map(|(mut r, mean)| {
            r.sort_by(f64::total_cmp);
            let at = |q: f64| r[((q * (r.len() - 1) as f64).round() as usize).min(r.len() - 1)];
            Estimate {
                mean,
                lo: at(alpha),
                hi: at(1.0 - alpha),
            }
        })
        .collect()
}

impl NllBreakdown {
    pub fn subset(&self, target: Modality, subset: &[Modality]) -> &SubsetRow {
        &self.subsets[target.index() * 8 + subset_bits(target, subset)]
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "events: {}", self.events);
        let _ = writeln!(s, "\nNLL by target and conditioning subset (nats, mean [CI])");
        let _ = writeln!(s, "{:<10} {:<10} {:>10} {:>10} {:>10}", "target", "subset", "mean", "lo", "hi");
        for r in &self.subsets {
            let _ = writeln!(
                s,
                "{:<10} {:<10} {:>10.4} {:>10.4} {:>10.4}",
                r.target.name(),
                r.label,
                r.nll.mean,
                r.nll.lo,
                r.nll.hi
            );
        }
        let _ = writeln!(s, "\nTotal NLL per event by sub-event order");
        let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10}", "order", "mean", "lo", "hi");
        for r in &self.permutations {
            let _ = writeln!(s, "{:<10} {:>10.4} {:>10.4} {:>10.4}", r.label, r.nll.mean, r.nll.lo, r.nll.hi);
        }
        s
    }
}
