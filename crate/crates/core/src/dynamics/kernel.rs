use rand::Rng;

use crate::dist::{tempered_conditional, ProbVector};
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seq::{SeqState, TokenId};

/// Single-site heat-bath kernel: pick a non-frozen site uniformly and
/// resample it from the tempered conditional.
#[derive(Clone, Copy)]
pub struct GlauberKernel<'a> {
    scorer: &'a dyn Scorer,
    tau: f64,
}

/// What one kernel step did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub site: usize,
    pub from: TokenId,
    pub to: TokenId,
}

/// A non-trivial move out of a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Move {
    pub site: usize,
    pub token: TokenId,
    pub prob: f64,
}

/// One row of the transition matrix: the self-loop mass plus every move
/// changing exactly one site.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRow {
    pub stay: f64,
    pub moves: Vec<Move>,
}

impl<'a> GlauberKernel<'a> {
    pub fn new(scorer: &'a dyn Scorer, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        Ok(Self { scorer, tau })
    }

    pub fn scorer(&self) -> &'a dyn Scorer {
        self.scorer
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn vocab_size(&self) -> usize {
        self.scorer.vocab_size()
    }

    pub fn conditional(&self, state: &SeqState, pos: usize) -> Result<ProbVector> {
        tempered_conditional(&self.scorer.local_scores(state, pos)?, self.tau)
    }

    /// Advances `state` in place by one step.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut SeqState, rng: &mut R) -> Result<StepOutcome> {
        let free = state.free_positions();
        let site = free[rng.random_range(0..free.len())];
        let p = self.conditional(state, site)?;
        let to = p.sample_with(rng.random::<f64>()) as TokenId;
        let from = state.get(site);
        state.set(site, to);
        Ok(StepOutcome { site, from, to })
    }

    /// Exact one-step law from `state`.
    pub fn transition_row(&self, state: &SeqState) -> Result<TransitionRow> {
        let free = state.free_positions();
        let w = 1.0 / free.len() as f64;
        let mut stay = 0.0;
        let mut moves = Vec::with_capacity(free.len() * (self.vocab_size() - 1));
        for &site in free {
            let p = self.conditional(state, site)?;
            let current = state.get(site) as usize;
            for (a, &pa) in p.iter().enumerate() {
                if a == current {
                    stay += w * pa;
                } else {
                    moves.push(Move {
                        site,
                        token: a as TokenId,
                        prob: w * pa,
                    });
                }
            }
        }
        Ok(TransitionRow { stay, moves })
    }
}

/// One kernel step returning the new state.
pub fn glauber_step<R: Rng + ?Sized>(
    state: &SeqState,
    kernel: &GlauberKernel<'_>,
    rng: &mut R,
) -> Result<SeqState> {
    let mut next = state.clone();
    kernel.step(&mut next, rng)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;
    use crate::scorers::{IndependentScorer, PottsGibbsScorer};

    #[test]
    fn rejects_bad_temperature() {
        let s = IndependentScorer::uniform(3).unwrap();
        assert!(GlauberKernel::new(&s, 0.0).is_err());
        assert!(GlauberKernel::new(&s, f64::NAN).is_err());
    }

    #[test]
    fn uniform_resampling_frequencies() {
        let v = 5;
        let s = IndependentScorer::uniform(v).unwrap();
        let k = GlauberKernel::new(&s, 1.0).unwrap();
        let mut x = SeqState::new(vec![0; 3], v).unwrap();
        let mut rng = replica_rng(1, 0);
        let mut counts = vec![0u64; v];
        let steps = 100_000;
        for _ in 0..steps {
            let o = k.step(&mut x, &mut rng).unwrap();
            counts[o.to as usize] += 1;
        }
        let p = 1.0 / v as f64;
        let sigma = (steps as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - steps as f64 * p).abs() < 3.0 * sigma + 1.0);
        }
    }

    #[test]
    fn frozen_sites_never_move() {
        let s = IndependentScorer::uniform(4).unwrap();
        let k = GlauberKernel::new(&s, 1.0).unwrap();
        let mut x = SeqState::with_frozen(vec![3, 0, 0, 3], &[0, 3], 4).unwrap();
        let mut rng = replica_rng(2, 0);
        for _ in 0..2000 {
            let o = k.step(&mut x, &mut rng).unwrap();
            assert!(o.site == 1 || o.site == 2);
        }
        assert_eq!((x.get(0), x.get(3)), (3, 3));
    }

    #[test]
    fn low_temperature_locks_argmax_state() {
        let mut m = PottsGibbsScorer::ferromagnetic(4, 3, 4.0).unwrap();
        m.set_field(0, &[-1.0, 0.0, 0.0]).unwrap();
        let k = GlauberKernel::new(&m, 0.01).unwrap();
        let mut x = SeqState::new(vec![0; 4], 3).unwrap();
        let mut rng = replica_rng(3, 0);
        for _ in 0..10_000 {
            k.step(&mut x, &mut rng).unwrap();
        }
        assert_eq!(x.ids(), &[0, 0, 0, 0]);
    }

    #[test]
    fn rows_sum_to_one_with_positive_self_loop() {
        let m = PottsGibbsScorer::random(3, 3, 1.0, 1.0, &mut replica_rng(4, 0)).unwrap();
        let k = GlauberKernel::new(&m, 0.7).unwrap();
        for idx in 0..27 {
            let x = SeqState::new(crate::seq::ids_from_index(idx, 3, 3), 3).unwrap();
            let row = k.transition_row(&x).unwrap();
            let total = row.stay + row.moves.iter().map(|m| m.prob).sum::<f64>();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(row.stay > 0.0);
            assert_eq!(row.moves.len(), 3 * 2);
        }
    }
}
