use rand::Rng;

use crate::events::Modality;

/// Which sub-events condition which. `cells[t][c]` is set when target `t`
/// sees the true value of `c`; the diagonal is always clear.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PermutationMask {
    cells: [[bool; 4]; 4],
}

impl PermutationMask {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every target conditioned on all three others.
    pub fn full() -> Self {
        let mut m = Self::default();
        for t in Modality::ALL {
            for c in Modality::ALL {
                m.set(t, c, true);
            }
        }
        m
    }

    /// Each off-diagonal cell independently on with probability one half.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut m = Self::default();
        for t in Modality::ALL {
            for c in Modality::ALL {
                m.set(t, c, rng.gen_bool(0.5));
            }
        }
        m
    }

    /// The mask in which each modality conditions on those before it in
    /// `order`.
    pub fn from_order(order: &[Modality; 4]) -> Self {
        let mut m = Self::default();
        for (i, t) in order.iter().enumerate() {
            for c in &order[..i] {
                m.set(*t, *c, true);
            }
        }
        m
    }

    /// Setting a diagonal cell is ignored.
    pub fn set(&mut self, target: Modality, cond: Modality, on: bool) {
        if target != cond {
            self.cells[target.index()][cond.index()] = on;
        }
    }

    pub fn get(&self, target: Modality, cond: Modality) -> bool {
        self.cells[target.index()][cond.index()]
    }

    pub fn conditioning(&self, target: Modality) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(move |c| self.get(target, *c))
    }
}

/// Masks for a batch, indexed `[item][step]`.
pub fn sample_masks<R: Rng + ?Sized>(rng: &mut R, batch: usize, steps: usize) -> Vec<Vec<PermutationMask>> {
    (0..batch)
        .map(|_| (0..steps).map(|_| PermutationMask::sample(rng)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_is_always_clear() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for row in sample_masks(&mut rng, 16, 64) {
            for m in row {
                for t in Modality::ALL {
                    assert!(!m.get(t, t));
                }
            }
        }
        assert!(!PermutationMask::full().get(Modality::Pitch, Modality::Pitch));
    }

    #[test]
    fn off_diagonal_cells_are_fair_coins() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [[0u32; 4]; 4];
        for _ in 0..n {
            let m = PermutationMask::sample(&mut rng);
            for t in Modality::ALL {
                for c in Modality::ALL {
                    counts[t.index()][c.index()] += m.get(t, c) as u32;
                }
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        for t in 0..4 {
            for c in 0..4 {
                if t != c {
                    assert!((counts[t][c] as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
                }
            }
        }
    }

    #[test]
    fn masks_vary_across_timesteps() {
        // 12 fair bits collide with probability 1/4096 per pair
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let masks = sample_masks(&mut rng, 1, 32).remove(0);
        let mut distinct = masks.clone();
        distinct.sort_by_key(|m| format!("{m:?}"));
        distinct.dedup();
        assert!(distinct.len() >= 30);
    }

    #[test]
    fn order_masks_are_triangular() {
        use Modality::*;
        let m = PermutationMask::from_order(&[Pitch, Instrument, Velocity, Time]);
        assert_eq!(m.conditioning(Pitch).count(), 0);
        assert_eq!(m.conditioning(Instrument).collect::<Vec<_>>(), vec![Pitch]);
        assert_eq!(m.conditioning(Time).count(), 3);
    }
}
