use std::fmt;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::{Engine, QuerySpec};
use crate::error::Result;

/// Latency percentiles in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles of `samples` (milliseconds).
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| {
            if s.is_empty() {
                return f64::NAN;
            }
            let i = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
            s[i]
        };
        Percentiles {
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: s.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LatencyReport {
    pub calls: usize,
    pub feed: Percentiles,
    pub query: Percentiles,
    /// Median feed time over a window starting at the 10th call, and over
    /// the last window.
    pub feed_early_ms: f64,
    pub feed_late_ms: f64,
    pub query_early_ms: f64,
    pub query_late_ms: f64,
}

impl LatencyReport {
    pub fn feed_growth(&self) -> f64 {
        self.feed_late_ms / self.feed_early_ms
    }

    pub fn query_growth(&self) -> f64 {
        self.query_late_ms / self.query_early_ms
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "calls {}", self.calls)?;
        for (name, p) in [("feed", self.feed), ("query", self.query)] {
            writeln!(
                f,
                "{name:<5} p50 {:.3} ms  p90 {:.3} ms  p99 {:.3} ms  max {:.3} ms",
                p.p50, p.p90, p.p99, p.max
            )?;
        }
        write!(
            f,
            "growth feed {:.3}x  query {:.3}x (late/early median)",
            self.feed_growth(),
            self.query_growth()
        )
    }
}

fn median(xs: &[f64]) -> f64 {
    Percentiles::of(xs).p50
}

/// Alternate `calls` full queries and feeds of the sampled events, timing
/// each call.
pub fn latency_benchmark<R: Rng + ?Sized>(engine: &mut Engine, calls: usize, rng: &mut R) -> Result<LatencyReport> {
    let spec = QuerySpec::new();
    let mut feed = Vec::with_capacity(calls);
    let mut query = Vec::with_capacity(calls);
    for _ in 0..calls {
        let t = Instant::now();
        let p = engine.query(&spec, rng)?;
        query.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        engine.feed(&p.event)?;
        feed.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let w = (calls / 20).clamp(1, 200);
    let early = 10.min(calls.saturating_sub(w))..(10 + w).min(calls);
    let late = calls.saturating_sub(w)..calls;
    Ok(LatencyReport {
        calls,
        feed: Percentiles::of(&feed),
        query: Percentiles::of(&query),
        feed_early_ms: median(&feed[early.clone()]),
        feed_late_ms: median(&feed[late.clone()]),
        query_early_ms: median(&query[early]),
        query_late_ms: median(&query[late]),
    })
}
