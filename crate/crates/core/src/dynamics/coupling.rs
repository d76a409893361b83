//! Maximal coupling of two Glauber chains and meeting-time experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::GlauberKernel;
use crate::dist::sample_index;
use crate::error::{Error, Result};
use crate::rng::CouplingStreams;
use crate::seq::{SeqState, TokenId};

/// Tokens chosen by one coupled step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoupledStep {
    pub site: usize,
    pub x_before: TokenId,
    pub y_before: TokenId,
    pub x_token: TokenId,
    pub y_token: TokenId,
}

/// One coupled step. Both chains update the same site; the new tokens are
/// drawn from the maximal coupling of the two conditionals, so they
/// disagree with probability exactly `TV(p, q)` while each chain keeps its
/// own kernel as marginal law.
///
/// The site, the overlap decision and the overlap draw use the shared
/// stream; residual draws use one stream per chain.
pub fn maximal_coupling_step(
    x: &mut SeqState,
    y: &mut SeqState,
    kernel: &GlauberKernel<'_>,
    streams: &mut CouplingStreams,
) -> Result<CoupledStep> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "coupled states differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if !x.same_frozen(y) {
        return Err(Error::input("coupled states have different frozen sets"));
    }
    let free = x.free_positions();
    let site = free[streams.shared.random_range(0..free.len())];
    let p = kernel.conditional(x, site)?;
    let q = if x.same_context(y, site) {
        None
    } else {
        Some(kernel.conditional(y, site)?)
    };

    let (a, b) = match &q {
        None => {
            let a = p.sample_with(streams.shared.random::<f64>()) as TokenId;
            (a, a)
        }
        Some(q) => {
            let overlap: Vec<f64> = p.iter().zip(q.iter()).map(|(a, b)| a.min(*b)).collect();
            let w: f64 = overlap.iter().sum();
            let u = streams.shared.random::<f64>();
            let v = streams.shared.random::<f64>();
            if u < w {
                let a = sample_index(&overlap, v) as TokenId;
                (a, a)
            } else {
                let rx: Vec<f64> = p
                    .iter()
                    .zip(&overlap)
                    .map(|(a, m)| (a - m).max(0.0))
                    .collect();
                let ry: Vec<f64> = q
                    .iter()
                    .zip(&overlap)
                    .map(|(b, m)| (b - m).max(0.0))
                    .collect();
                let a = residual_draw(&rx, &overlap, streams.residual_x.random::<f64>());
                let b = residual_draw(&ry, &overlap, streams.residual_y.random::<f64>());
                (a, b)
            }
        }
    };
    let (x_before, y_before) = (x.get(site), y.get(site));
    x.set(site, a);
    y.set(site, b);
    Ok(CoupledStep {
        site,
        x_before,
        y_before,
        x_token: a,
        y_token: b,
    })
}

/// Draw from a residual; if rounding left it empty the overlap is used.
fn residual_draw(residual: &[f64], overlap: &[f64], u: f64) -> TokenId {
    if residual.iter().sum::<f64>() > 0.0 {
        sample_index(residual, u) as TokenId
    } else {
        sample_index(overlap, u) as TokenId
    }
}

/// Outcome of a meeting-time run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    /// First step at which the two states coincide; `None` on timeout.
    pub meeting_step: Option<u64>,
    pub budget: u64,
    /// Hamming distance after each step (index 0 is the start), if requested.
    pub distance_trace: Option<Vec<u32>>,
}

impl CouplingResult {
    pub fn timed_out(&self) -> bool {
        self.meeting_step.is_none()
    }
}

/// Runs two maximally coupled chains from `x0` and `y0` until they meet or
/// `budget` steps elapse. Uses the coupling streams of `(seed, replica)`.
pub fn coupling_meeting_time(
    x0: &SeqState,
    y0: &SeqState,
    kernel: &GlauberKernel<'_>,
    budget: u64,
    seed: u64,
    replica: u64,
    keep_trace: bool,
) -> Result<CouplingResult> {
    if budget == 0 {
        return Err(Error::input("coupling budget must be at least 1"));
    }
    let mut x = x0.clone();
    let mut y = y0.with_ids(y0.ids().to_vec())?;
    if !x.same_frozen(&y) {
        return Err(Error::input("coupled states have different frozen sets"));
    }
    let mut distance = crate::dist::hamming_distance(&x, &y)?;
    let mut trace = keep_trace.then(|| vec![distance as u32]);
    if distance == 0 {
        return Ok(CouplingResult {
            meeting_step: Some(0),
            budget,
            distance_trace: trace,
        });
    }
    let mut streams = CouplingStreams::new(seed, replica);
    for step in 1..=budget {
        let s = maximal_coupling_step(&mut x, &mut y, kernel, &mut streams)?;
        let was = s.x_before != s.y_before;
        let now = s.x_token != s.y_token;
        match (was, now) {
            (true, false) => distance -= 1,
            (false, true) => distance += 1,
            _ => {}
        }
        if let Some(t) = &mut trace {
            t.push(distance as u32);
        }
        if distance == 0 {
            return Ok(CouplingResult {
                meeting_step: Some(step),
                budget,
                distance_trace: trace,
            });
        }
    }
    Ok(CouplingResult {
        meeting_step: None,
        budget,
        distance_trace: trace,
    })
}
