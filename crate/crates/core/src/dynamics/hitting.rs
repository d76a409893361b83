//! First time a chain moves at least a given distance away from its start.

use serde::{Deserialize, Serialize};

use super::kernel::GlauberKernel;
use crate::dist::normalized_hamming;
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRole};
use crate::seq::SeqState;

/// Distance between the current state and the start state.
pub type DistanceFn<'a> = &'a (dyn Fn(&SeqState, &SeqState) -> f64 + Sync);

/// Normalized Hamming distance, the default distance for hitting times.
pub fn default_distance(x: &SeqState, x0: &SeqState) -> f64 {
    normalized_hamming(x, x0).unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingResult {
    /// First step with distance at least the threshold; `None` on timeout.
    pub hitting_step: Option<u64>,
    pub budget: u64,
}

impl HittingResult {
    pub fn timed_out(&self) -> bool {
        self.hitting_step.is_none()
    }
}

/// Runs the chain from `x0` until `distance(x_t, x0) >= threshold` or the
/// budget is spent. A zero threshold is met at step 0.
pub fn hitting_time(
    x0: &SeqState,
    kernel: &GlauberKernel<'_>,
    distance: Option<DistanceFn<'_>>,
    threshold: f64,
    budget: u64,
    seed: u64,
    replica: u64,
) -> Result<HittingResult> {
    if !(threshold >= 0.0) {
        return Err(Error::domain(format!(
            "hitting threshold must be non-negative, got {threshold}"
        )));
    }
    let distance = distance.unwrap_or(&default_distance);
    if distance(x0, x0) >= threshold {
        return Ok(HittingResult {
            hitting_step: Some(0),
            budget,
        });
    }
    let mut rng = substream(seed, replica, StreamRole::Shared);
    let mut x = x0.clone();
    for step in 1..=budget {
        let o = kernel.step(&mut x, &mut rng)?;
        if o.from != o.to && distance(&x, x0) >= threshold {
            return Ok(HittingResult {
                hitting_step: Some(step),
                budget,
            });
        }
    }
    Ok(HittingResult {
        hitting_step: None,
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::IndependentScorer;

    #[test]
    fn zero_threshold_hits_immediately() {
        let s = IndependentScorer::uniform(3).unwrap();
        let k = GlauberKernel::new(&s, 1.0).unwrap();
        let x = SeqState::new(vec![0; 4], 3).unwrap();
        let r = hitting_time(&x, &k, None, 0.0, 10, 1, 0).unwrap();
        assert_eq!(r.hitting_step, Some(0));
        assert!(hitting_time(&x, &k, None, -0.1, 10, 1, 0).is_err());
    }

    #[test]
    fn unreachable_threshold_times_out() {
        let s = IndependentScorer::uniform(3).unwrap();
        let k = GlauberKernel::new(&s, 1.0).unwrap();
        let x = SeqState::with_frozen(vec![0; 4], &[0, 1, 2], 3).unwrap();
        let r = hitting_time(&x, &k, None, 0.5, 500, 1, 0).unwrap();
        assert!(r.timed_out());
    }

    #[test]
    fn custom_distance_is_used() {
        let s = IndependentScorer::uniform(4).unwrap();
        let k = GlauberKernel::new(&s, 1.0).unwrap();
        let x = SeqState::new(vec![0; 5], 4).unwrap();
        let first_site_moved =
            |a: &SeqState, b: &SeqState| if a.get(0) != b.get(0) { 1.0 } else { 0.0 };
        let r = hitting_time(&x, &k, Some(&first_site_moved), 1.0, 100_000, 3, 0).unwrap();
        assert!(r.hitting_step.unwrap() >= 1);
    }
}
