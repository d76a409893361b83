//! One-step drift of a token count and boundary sampling for count basins.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basin::BasinSpec;
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRole};
use crate::scorer::{conditional, Scorer};
use crate::seq::{SeqState, TokenId};
use crate::stats::median;

/// Expected one-step change of the fraction of non-frozen sites holding
/// `target`:
/// `(1/N)[Σ_{x_i≠t} p_τ(t | x_{-i}) − Σ_{x_i=t} (1 − p_τ(t | x_{-i}))]`.
pub fn drift_estimate(scorer: &dyn Scorer, x: &SeqState, target: TokenId, tau: f64) -> Result<f64> {
    let free = x.free_positions();
    if free.is_empty() {
        return Err(Error::input("state has no free positions"));
    }
    if target as usize >= scorer.vocab_size() {
        return Err(Error::input(format!(
            "target token {target} outside the vocabulary"
        )));
    }
    let mut gain = 0.0;
    let mut loss = 0.0;
    for &i in free {
        let p = conditional(scorer, x, i, tau)?[target as usize];
        if x.get(i) == target {
            loss += 1.0 - p;
        } else {
            gain += p;
        }
    }
    Ok((gain - loss) / free.len() as f64)
}

/// A state on the boundary of the count basin built from `template`:
/// exactly `⌈fraction·N⌉` free sites hold `target`, chosen uniformly, and
/// every other free site holds a uniform token other than `target`.
pub fn sample_count_boundary<R: Rng + ?Sized>(
    template: &SeqState,
    target: TokenId,
    fraction: f64,
    vocab_size: usize,
    rng: &mut R,
) -> Result<SeqState> {
    if vocab_size < 2 || target as usize >= vocab_size {
        return Err(Error::input("target token outside the vocabulary"));
    }
    let free = template.free_positions();
    let k = BasinSpec::count_threshold(fraction, free.len());
    if k > free.len() {
        return Err(Error::input(
            "count threshold exceeds the number of free sites",
        ));
    }
    let mut ids = template.ids().to_vec();
    let chosen = sample(rng, free.len(), k);
    let mut is_target = vec![false; free.len()];
    for c in chosen.iter() {
        is_target[c] = true;
    }
    for (slot, &pos) in free.iter().enumerate() {
        ids[pos] = if is_target[slot] {
            target
        } else {
            // uniform over the other V − 1 tokens
            let a = rng.random_range(0..vocab_size as TokenId - 1);
            if a >= target {
                a + 1
            } else {
                a
            }
        };
    }
    template.with_ids(ids)
}

/// `count` boundary samples; sample `k` uses its own substream of `seed`.
pub fn boundary_samples(
    template: &SeqState,
    target: TokenId,
    fraction: f64,
    vocab_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SeqState>> {
    (0..count)
        .map(|k| {
            let mut rng = substream(seed, k as u64, StreamRole::Aux);
            sample_count_boundary(template, target, fraction, vocab_size, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub tau: f64,
    pub target: TokenId,
    pub fraction: f64,
    /// Number of free sites `N`.
    pub sites: usize,
    pub count: usize,
    pub values: Vec<f64>,
    pub min: f64,
    pub median: f64,
    /// All sampled drifts are strictly positive.
    pub all_positive: bool,
}

/// Drift at each of `samples`.
pub fn drift_report(
    scorer: &dyn Scorer,
    samples: &[SeqState],
    target: TokenId,
    fraction: f64,
    tau: f64,
) -> Result<DriftReport> {
    let Some(first) = samples.first() else {
        return Err(Error::input("drift report needs at least one sample"));
    };
    let values = samples
        .par_iter()
        .map(|x| drift_estimate(scorer, x, target, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport {
        tau,
        target,
        fraction,
        sites: first.free_positions().len(),
        count: values.len(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(&values),
        all_positive: values.iter().all(|&d| d > 0.0),
        values,
    })
}
