use crate::dist::ScoreVector;
use crate::error::{Error, Result};
use crate::rng::{hash_to_unit_interval, mix64};
use crate::scorer::Scorer;
use crate::scorers::PottsGibbsScorer;
use crate::seq::{SeqState, TokenId, Vocabulary};

/// How the perturbation depends on the context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PerturbationMode {
    /// `g_i(a; x_{-i})` is a keyed hash of `(i, a, x_{-i})`: any change of
    /// context redraws every value.
    #[default]
    Hashed,
    /// `g_i(a; x_{-i}) = (1/(n−1)) Σ_{j≠i} w_ij · h(i, j, a, x_j)`, with
    /// per-pair weights `w_ij ∈ [0, 1]`. Pairs with large weights are both
    /// more influential and more incompatible.
    Pairwise,
}

/// A Potts scorer plus a deterministic pseudorandom perturbation
/// `ε · g_i(a; x_{-i})` with `g ∈ [−1, 1]`, which breaks compatibility.
#[derive(Clone, Debug)]
pub struct PerturbedScorer {
    base: PottsGibbsScorer,
    epsilon: f64,
    key: u64,
    mode: PerturbationMode,
}

impl PerturbedScorer {
    pub fn new(base: PottsGibbsScorer, epsilon: f64, key: u64) -> Result<Self> {
        Self::with_mode(base, epsilon, key, PerturbationMode::Hashed)
    }

    pub fn with_mode(
        base: PottsGibbsScorer,
        epsilon: f64,
        key: u64,
        mode: PerturbationMode,
    ) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::input(format!(
                "perturbation amplitude must be ≥ 0, got {epsilon}"
            )));
        }
        Ok(Self {
            base,
            epsilon,
            key,
            mode,
        })
    }

    pub fn base(&self) -> &PottsGibbsScorer {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Weight `w_ij ∈ [0, 1]` of the pair in [`PerturbationMode::Pairwise`].
    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        let h = mix64(self.key ^ mix64(0x7061_6972 ^ ((i as u64) << 32 | j as u64)));
        hash_to_unit_interval(h).abs()
    }

    /// The perturbation `g_i(a; x_{-i}) ∈ [−1, 1]`.
    pub fn perturbation(&self, ids: &[TokenId], pos: usize, token: TokenId) -> f64 {
        match self.mode {
            PerturbationMode::Hashed => {
                let ctx = context_hash(self.key, ids, pos);
                let h = mix64(ctx ^ mix64((pos as u64) << 32 | token as u64));
                hash_to_unit_interval(h)
            }
            PerturbationMode::Pairwise => {
                let n = ids.len();
                if n < 2 {
                    return 0.0;
                }
                let mut total = 0.0;
                for (j, &b) in ids.iter().enumerate() {
                    if j == pos {
                        continue;
                    }
                    let h = mix64(
                        self.key
                            ^ mix64(((pos as u64) << 40) ^ ((j as u64) << 20) ^ token as u64)
                            ^ mix64(0x6b65_7900 ^ b as u64),
                    );
                    total += self.pair_weight(pos, j) * hash_to_unit_interval(h);
                }
                total / (n - 1) as f64
            }
        }
    }
}

/// Keyed hash of every token except the one at `pos`.
fn context_hash(key: u64, ids: &[TokenId], pos: usize) -> u64 {
    let mut h = mix64(key);
    for (k, &t) in ids.iter().enumerate() {
        if k != pos {
            h = mix64(h ^ ((k as u64) << 32 | t as u64));
        }
    }
    h
}

impl Scorer for PerturbedScorer {
    fn vocab(&self) -> &Vocabulary {
        self.base.vocab()
    }

    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        let mut scores = self.base.local_scores(state, pos)?.into_inner();
        if self.epsilon > 0.0 {
            for (a, s) in scores.iter_mut().enumerate() {
                *s += self.epsilon * self.perturbation(state.ids(), pos, a as TokenId);
            }
        }
        Ok(ScoreVector::from_finite(scores))
    }

    fn name(&self) -> String {
        format!(
            "perturbed({}, eps={}, {:?})",
            self.base.name(),
            self.epsilon,
            self.mode
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base() -> PottsGibbsScorer {
        PottsGibbsScorer::random(4, 3, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn zero_amplitude_is_base() {
        let b = base();
        let p = PerturbedScorer::new(b.clone(), 0.0, 9).unwrap();
        let x = SeqState::new(vec![0, 1, 2, 0], 3).unwrap();
        for i in 0..4 {
            assert_eq!(
                p.local_scores(&x, i).unwrap(),
                b.local_scores(&x, i).unwrap()
            );
        }
    }

    #[test]
    fn deterministic_bounded_and_blind_to_own_token() {
        for mode in [PerturbationMode::Hashed, PerturbationMode::Pairwise] {
            let p = PerturbedScorer::with_mode(base(), 0.7, 9, mode).unwrap();
            let x = SeqState::new(vec![0, 1, 2, 0], 3).unwrap();
            for i in 0..4 {
                let a = p.local_scores(&x, i).unwrap();
                assert_eq!(a, p.local_scores(&x, i).unwrap());
                let y = x.replaced(i, (x.get(i) + 1) % 3);
                assert_eq!(a, p.local_scores(&y, i).unwrap());
                for t in 0..3 {
                    let g = p.perturbation(x.ids(), i, t);
                    assert!((-1.0..=1.0).contains(&g));
                }
            }
        }
    }

    #[test]
    fn rejects_negative_amplitude() {
        assert!(PerturbedScorer::new(base(), -0.1, 0).is_err());
    }
}
