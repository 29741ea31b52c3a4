use rand::Rng;
use serde::{Deserialize, Serialize};

use super::numeric::{log_softmax, logsumexp};
use super::SamplingControls;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParams {
    pub logits: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(logits: Vec<f64>) -> Self {
        CategoricalParams { logits }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    pub fn log_prob(&self, class: usize) -> Result<f64> {
        categorical_log_prob(self, class)
    }

    pub fn sample<R: Rng + ?Sized>(&self, controls: &SamplingControls, rng: &mut R) -> Result<usize> {
        categorical_sample(self, controls, rng)
    }
}

pub fn categorical_log_prob(params: &CategoricalParams, class: usize) -> Result<f64> {
    let len = params.logits.len();
    if class >= len {
        return Err(Error::ClassOutOfRange { index: class, len });
    }
    Ok(params.logits[class] - logsumexp(&params.logits))
}

/// Sample a class from the tempered softmax with white/black lists applied.
/// The surviving classes are renormalized; if none survive the call fails
/// with [`Error::EmptySupport`].
pub fn categorical_sample<R: Rng + ?Sized>(
    params: &CategoricalParams,
    controls: &SamplingControls,
    rng: &mut R,
) -> Result<usize> {
    controls.validate()?;
    let allowed: Vec<usize> = (0..params.logits.len())
        .filter(|&i| controls.allows(i) && params.logits[i] > f64::NEG_INFINITY)
        .collect();
    if allowed.is_empty() {
        return Err(Error::EmptySupport("categorical".into()));
    }

    let tau = controls.class_temperature;
    if tau == 0.0 {
        // lowest index wins ties
        let best = allowed
            .iter()
            .copied()
            .fold(allowed[0], |b, i| if params.logits[i] > params.logits[b] { i } else { b });
        return Ok(best);
    }

    let scaled: Vec<f64> = allowed.iter().map(|&i| params.logits[i] / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&class, &w) in allowed.iter().zip(&weights) {
        if u < w {
            return Ok(class);
        }
        u -= w;
    }
    // rounding left u at the very top
    Ok(*allowed
        .iter()
        .zip(&weights)
        .rev()
        .find(|(_, &w)| w > 0.0)
        .map(|(c, _)| c)
        .unwrap_or(&allowed[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_examples() {
        let p = CategoricalParams::new(vec![0.3; 4]);
        assert!((p.log_prob(2).unwrap() - 0.25f64.ln()).abs() < 1e-12);
        let p = CategoricalParams::new(vec![10.0, 0.0]);
        assert!((p.log_prob(0).unwrap() - -4.539889921686465e-05).abs() < 1e-15);
        let p = CategoricalParams::new(vec![0.0, 0.0]);
        assert!((p.log_prob(1).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            p.log_prob(2),
            Err(Error::ClassOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = CategoricalParams::new((0..128).map(|i| (i as f64 * 0.37).sin() * 5.0).collect());
        let s: f64 = p.log_probs().iter().map(|l| l.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn whitelist_single_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CategoricalParams::new((0..128).map(|i| -(i as f64)).collect());
        let c = SamplingControls::default().with_whitelist([60]);
        for _ in 0..20 {
            assert_eq!(p.sample(&c, &mut rng).unwrap(), 60);
        }
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = CategoricalParams::new(vec![1.0, 3.0, 2.0]);
        let c = SamplingControls { class_temperature: 0.0, ..Default::default() };
        assert_eq!(p.sample(&c, &mut rng).unwrap(), 1);
        // and the small-temperature limit agrees
        let c = SamplingControls { class_temperature: 1e-3, ..Default::default() };
        for _ in 0..100 {
            assert_eq!(p.sample(&c, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn everything_masked_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = CategoricalParams::new(vec![0.0; 3]);
        let c = SamplingControls::default().with_blacklist([0, 1, 2]);
        assert!(matches!(p.sample(&c, &mut rng), Err(Error::EmptySupport(_))));
    }

    #[test]
    fn blacklist_renormalizes_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = CategoricalParams::new(vec![0.0; 272]);
        let c = SamplingControls::default().with_blacklist(0..128);
        let n = 100_000usize;
        let mut counts = vec![0usize; 272];
        for _ in 0..n {
            counts[p.sample(&c, &mut rng).unwrap()] += 1;
        }
        assert!(counts[..128].iter().all(|&c| c == 0));
        let q = 1.0 / 144.0;
        let mean = n as f64 * q;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        for &c in &counts[128..] {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "count {c} vs {mean}±{sigma}");
        }
    }

    proptest::proptest! {
        #[test]
        fn masked_argmax_shift_invariant(
            logits in proptest::collection::vec(-10.0f64..10.0, 2..40),
            shift in -50.0f64..50.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = logits.len();
            let c = SamplingControls { class_temperature: 0.0, ..Default::default() }
                .with_blacklist((0..n).filter(|i| i % 3 == 0));
            let a = CategoricalParams::new(logits.clone()).sample(&c, &mut rng).unwrap();
            let b = CategoricalParams::new(logits.iter().map(|l| l + shift).collect())
                .sample(&c, &mut rng)
                .unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
