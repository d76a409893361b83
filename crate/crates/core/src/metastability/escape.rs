//! Escape times from a basin.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basin::BasinSpec;
use crate::dist::sample_index;
use crate::dynamics::GlauberKernel;
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRole};
use crate::seq::SeqState;
use crate::stats::{mean, median, quantile};

/// How the chain is advanced while waiting for an escape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeMethod {
    /// One kernel step at a time.
    #[default]
    Direct,
    /// Draw the geometric holding time of the current state, then the move
    /// it ends with. Same law of the escape step as `Direct`, but each jump
    /// costs a full transition row, so it pays off when self-loops dominate.
    Jump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeSamples {
    pub budget: u64,
    pub method: EscapeMethod,
    /// First step outside the basin per replica; `None` on timeout.
    pub times: Vec<Option<u64>>,
    pub timeouts: usize,
    /// Mean over escaped replicas.
    pub mean: f64,
    /// Mean with timeouts counted as the budget: a lower bound on the true mean.
    pub censored_mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl EscapeSamples {
    fn from_times(times: Vec<Option<u64>>, budget: u64, method: EscapeMethod) -> Self {
        let escaped: Vec<f64> = times.iter().flatten().map(|&t| t as f64).collect();
        let censored: Vec<f64> = times.iter().map(|t| t.unwrap_or(budget) as f64).collect();
        Self {
            budget,
            method,
            timeouts: times.len() - escaped.len(),
            mean: mean(&escaped),
            censored_mean: mean(&censored),
            median: median(&censored),
            q10: quantile(&censored, 0.1),
            q90: quantile(&censored, 0.9),
            times,
        }
    }
}

fn escape_direct(
    x0: &SeqState,
    kernel: &GlauberKernel<'_>,
    basin: &BasinSpec,
    budget: u64,
    rng: &mut impl Rng,
) -> Result<Option<u64>> {
    let mut x = x0.clone();
    for step in 1..=budget {
        let o = kernel.step(&mut x, rng)?;
        if o.from != o.to && !basin.contains(&x) {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

fn escape_jump(
    x0: &SeqState,
    kernel: &GlauberKernel<'_>,
    basin: &BasinSpec,
    budget: u64,
    rng: &mut impl Rng,
) -> Result<Option<u64>> {
    let mut x = x0.clone();
    let mut elapsed: u64 = 0;
    loop {
        let row = kernel.transition_row(&x)?;
        let weights: Vec<f64> = row.moves.iter().map(|m| m.prob).collect();
        let leave: f64 = weights.iter().sum();
        if leave <= 0.0 {
            return Ok(None);
        }
        // steps until the first move: geometric on {1, 2, ...} with success `leave`
        let hold = if leave >= 1.0 {
            1.0
        } else {
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / (-leave).ln_1p()).ceil().max(1.0)
        };
        if hold > (budget - elapsed) as f64 {
            return Ok(None);
        }
        elapsed += hold as u64;
        let m = row.moves[sample_index(&weights, rng.random::<f64>())];
        x.set(m.site, m.token);
        if !basin.contains(&x) {
            return Ok(Some(elapsed));
        }
    }
}

/// Escape step from `x0` for `replicas` independent replicas; replica `r`
/// uses substream `r` of `seed`.
pub fn measure_escape_time(
    x0: &SeqState,
    kernel: &GlauberKernel<'_>,
    basin: &BasinSpec,
    budget: u64,
    replicas: usize,
    seed: u64,
    method: EscapeMethod,
) -> Result<EscapeSamples> {
    if !basin.contains(x0) {
        return Err(Error::input("escape start state lies outside the basin"));
    }
    if replicas == 0 {
        return Err(Error::input(
            "escape measurement needs at least one replica",
        ));
    }
    let times = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64, StreamRole::Shared);
            match method {
                EscapeMethod::Direct => escape_direct(x0, kernel, basin, budget, &mut rng),
                EscapeMethod::Jump => escape_jump(x0, kernel, basin, budget, &mut rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EscapeSamples::from_times(times, budget, method))
}
