//! Rectangle incompatibility.
//!
//! Start from `x`, change site `i` from `A` to `A′` and site `j` from `B` to
//! `B′`. The two orders give two paths to the same endpoint `z`:
//!
//! ```text
//!   x ──(i: A→A′)──▶ y ──(j: B→B′)──▶ z
//!   x ──(j: B→B′)──▶ w ──(i: A→A′)──▶ z
//! ```
//!
//! Each edge carries the log-ratio of the conditional probabilities of the
//! new and old token. For conditionals of a single joint distribution both
//! paths sum to `ln π(z) − ln π(x)`, so
//! `δ = (s_xy + s_yz) − (s_xw + s_wz)` vanishes on every rectangle.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::tempered_log_conditional;
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRole};
use crate::scorer::Scorer;
use crate::seq::{ids_from_index, state_count, SeqState, TokenId};
use crate::stats::{binomial_half_upper_tail, median, quantile, spearman};

/// Rectangles with `|δ|` above this count as nonzero in the sign test.
pub const DELTA_NOISE_FLOOR: f64 = 1e-8;

/// One evaluated rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    /// Index of the base state within the campaign's state list.
    pub state_id: usize,
    pub base: Vec<TokenId>,
    pub i: usize,
    pub j: usize,
    pub a: TokenId,
    pub a_prime: TokenId,
    pub b: TokenId,
    pub b_prime: TokenId,
    pub s_xy: f64,
    pub s_yz: f64,
    pub s_xw: f64,
    pub s_wz: f64,
    pub delta: f64,
    pub tau: f64,
}

/// Raw score difference `s_pos(to) − s_pos(from)` in `state`.
fn score_step(
    scorer: &dyn Scorer,
    state: &SeqState,
    pos: usize,
    from: TokenId,
    to: TokenId,
) -> Result<f64> {
    let s = scorer.local_scores(state, pos)?;
    Ok(s[to as usize] - s[from as usize])
}

fn check_rectangle(
    x: &SeqState,
    i: usize,
    j: usize,
    a_prime: TokenId,
    b_prime: TokenId,
    v: usize,
) -> Result<()> {
    if i == j {
        return Err(Error::input(format!(
            "rectangle needs two distinct positions, got {i} twice"
        )));
    }
    for (p, t) in [(i, a_prime), (j, b_prime)] {
        if p >= x.len() {
            return Err(Error::input(format!(
                "position {p} out of range for length {}",
                x.len()
            )));
        }
        if x.is_frozen(p) {
            return Err(Error::input(format!("position {p} is frozen")));
        }
        if t as usize >= v {
            return Err(Error::input(format!(
                "token {t} outside vocabulary of size {v}"
            )));
        }
        if t == x.get(p) {
            return Err(Error::input(format!(
                "replacement at position {p} equals the current token {t}"
            )));
        }
    }
    Ok(())
}

/// Evaluates the rectangle at `(i → A′, j → B′)` from `x`.
///
/// Edges are score differences divided by `τ`; the normalizers cancel.
/// `delta` is the raw-score combination divided by `τ` once, so that
/// `delta(τ) == delta(1) / τ` holds bit for bit.
pub fn rectangle_delta(
    scorer: &dyn Scorer,
    x: &SeqState,
    i: usize,
    j: usize,
    a_prime: TokenId,
    b_prime: TokenId,
    tau: f64,
) -> Result<Rectangle> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    check_rectangle(x, i, j, a_prime, b_prime, scorer.vocab_size())?;
    let (a, b) = (x.get(i), x.get(j));
    let y = x.replaced(i, a_prime);
    let w = x.replaced(j, b_prime);
    let d_xy = score_step(scorer, x, i, a, a_prime)?;
    let d_yz = score_step(scorer, &y, j, b, b_prime)?;
    let d_xw = score_step(scorer, x, j, b, b_prime)?;
    let d_wz = score_step(scorer, &w, i, a, a_prime)?;
    Ok(Rectangle {
        state_id: 0,
        base: x.ids().to_vec(),
        i,
        j,
        a,
        a_prime,
        b,
        b_prime,
        s_xy: d_xy / tau,
        s_yz: d_yz / tau,
        s_xw: d_xw / tau,
        s_wz: d_wz / tau,
        delta: ((d_xy + d_yz) - (d_xw + d_wz)) / tau,
        tau,
    })
}

/// `max_{b′} |ln p(x_i | x_{-i}) − ln p(x_i | x′_{-i})|` over the swaps `x_j → b′`.
fn one_sided_influence(
    scorer: &dyn Scorer,
    x: &SeqState,
    i: usize,
    j: usize,
    swaps: &[TokenId],
    tau: f64,
) -> Result<f64> {
    let a = x.get(i) as usize;
    let before = tempered_log_conditional(&scorer.local_scores(x, i)?, tau)?[a];
    let mut best = 0.0f64;
    for &b in swaps {
        if b == x.get(j) {
            continue;
        }
        let after = tempered_log_conditional(&scorer.local_scores(&x.replaced(j, b), i)?, tau)?[a];
        best = best.max((before - after).abs());
    }
    Ok(best)
}

/// Symmetrized token influence between `i` and `j`: the larger of the
/// change in `ln p(x_i | ·)` when `x_j` is swapped to any of `swaps_j` and
/// the change in `ln p(x_j | ·)` when `x_i` is swapped to any of `swaps_i`.
pub fn token_influence(
    scorer: &dyn Scorer,
    x: &SeqState,
    i: usize,
    j: usize,
    swaps_i: &[TokenId],
    swaps_j: &[TokenId],
    tau: f64,
) -> Result<f64> {
    if i == j {
        return Err(Error::input(format!(
            "influence needs two distinct positions, got {i} twice"
        )));
    }
    if i >= x.len() || j >= x.len() {
        return Err(Error::input("influence position out of range"));
    }
    let v = scorer.vocab_size();
    if swaps_i.iter().chain(swaps_j).any(|&t| t as usize >= v) {
        return Err(Error::input(format!(
            "swap token outside vocabulary of size {v}"
        )));
    }
    Ok(one_sided_influence(scorer, x, i, j, swaps_j, tau)?
        .max(one_sided_influence(scorer, x, j, i, swaps_i, tau)?))
}

/// One campaign rectangle plus the influence between its two positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    #[serde(flatten)]
    pub rectangle: Rectangle,
    /// Symmetrized influence using the rectangle's own replacements as swaps.
    pub influence: f64,
}

/// Aggregate statistics of a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub scorer: String,
    pub count: usize,
    pub k: usize,
    pub tau: f64,
    pub seed: u64,
    pub mean_abs_delta: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    /// Rectangles with `|δ|` above [`DELTA_NOISE_FLOOR`].
    pub nonzero: usize,
    /// `P(Bin(count, ½) ≥ nonzero)`.
    pub p_value: f64,
    /// Spearman correlation between influence and `|δ|`.
    pub influence_spearman: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectangleCampaign {
    pub records: Vec<CampaignRecord>,
    pub summary: CampaignSummary,
}

/// Settings of [`run_rectangle_campaign`].
#[derive(Clone, Copy, Debug)]
pub struct CampaignOptions {
    pub count: usize,
    pub k: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            count: 300,
            k: 50,
            tau: 1.0,
            seed: 0,
        }
    }
}

/// Draws one rectangle for index `r` from its own substream.
fn sample_rectangle(
    scorer: &dyn Scorer,
    states: &[SeqState],
    r: usize,
    options: &CampaignOptions,
) -> Result<CampaignRecord> {
    let mut rng = substream(options.seed, r as u64, StreamRole::Aux);
    let state_id = rng.random_range(0..states.len());
    let x = &states[state_id];
    let free = x.free_positions();
    let i = free[rng.random_range(0..free.len())];
    let j = loop {
        let j = free[rng.random_range(0..free.len())];
        if j != i {
            break j;
        }
    };
    let mask: Vec<TokenId> = scorer.mask_id().into_iter().collect();
    let mut pick = |pos: usize| -> Result<TokenId> {
        let mut exclude = mask.clone();
        exclude.push(x.get(pos));
        let top = scorer.local_scores(x, pos)?.top_k(options.k, &exclude);
        if top.is_empty() {
            return Err(Error::input(format!(
                "no replacement token available at position {pos}"
            )));
        }
        Ok(top[rng.random_range(0..top.len())])
    };
    let a_prime = pick(i)?;
    let b_prime = pick(j)?;
    let mut rectangle = rectangle_delta(scorer, x, i, j, a_prime, b_prime, options.tau)?;
    rectangle.state_id = state_id;
    let influence = token_influence(scorer, x, i, j, &[a_prime], &[b_prime], options.tau)?;
    Ok(CampaignRecord {
        rectangle,
        influence,
    })
}

/// Samples `count` rectangles uniformly over (state, i ≠ j), with
/// replacements drawn uniformly from the scorer's top-`k` tokens at each
/// position (current token and mask excluded). Deterministic given the seed;
/// rectangle `r` always uses substream `r`.
pub fn run_rectangle_campaign(
    scorer: &dyn Scorer,
    states: &[SeqState],
    options: CampaignOptions,
) -> Result<RectangleCampaign> {
    if options.count == 0 {
        return Err(Error::input("campaign count must be at least 1"));
    }
    if options.k < 2 {
        return Err(Error::input(format!(
            "top-k must be at least 2, got {}",
            options.k
        )));
    }
    if states.is_empty() {
        return Err(Error::input("campaign needs at least one state"));
    }
    if let Some(bad) = states.iter().position(|s| s.free_positions().len() < 2) {
        return Err(Error::input(format!(
            "state {bad} has fewer than two non-frozen positions"
        )));
    }
    let records = (0..options.count)
        .into_par_iter()
        .map(|r| sample_rectangle(scorer, states, r, &options))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&scorer.name(), &records, &options);
    Ok(RectangleCampaign { records, summary })
}

/// Recomputes the summary from records.
pub fn summarize(
    scorer: &str,
    records: &[CampaignRecord],
    options: &CampaignOptions,
) -> CampaignSummary {
    let abs: Vec<f64> = records.iter().map(|r| r.rectangle.delta.abs()).collect();
    let infl: Vec<f64> = records.iter().map(|r| r.influence).collect();
    let nonzero = abs.iter().filter(|&&d| d > DELTA_NOISE_FLOOR).count();
    CampaignSummary {
        scorer: scorer.to_string(),
        count: records.len(),
        k: options.k,
        tau: options.tau,
        seed: options.seed,
        mean_abs_delta: crate::stats::mean(&abs),
        median: median(&abs),
        q25: quantile(&abs, 0.25),
        q75: quantile(&abs, 0.75),
        q90: quantile(&abs, 0.9),
        max: abs.iter().copied().fold(0.0, f64::max),
        nonzero,
        p_value: binomial_half_upper_tail(nonzero as u64, records.len() as u64),
        influence_spearman: spearman(&infl, &abs),
    }
}

impl RectangleCampaign {
    /// CSV with one row per rectangle.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "state_id,i,j,A,A',B,B',s_xy,s_yz,s_xw,s_wz,delta,influence"
        )?;
        for rec in &self.records {
            let r = &rec.rectangle;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.state_id,
                r.i,
                r.j,
                r.a,
                r.a_prime,
                r.b,
                r.b_prime,
                r.s_xy,
                r.s_yz,
                r.s_xw,
                r.s_wz,
                r.delta,
                rec.influence
            )?;
        }
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary).map_err(std::io::Error::from)?;
        Ok(())
    }

    /// `(influence, |δ|)` pairs for scatter plots.
    pub fn influence_scatter(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.influence, r.rectangle.delta.abs()))
            .collect()
    }
}

/// Largest `|δ|` over every rectangle of every state of length `n`
/// (frozen positions excluded). Capped at `max_states` states.
pub fn exhaustive_max_abs_delta(
    scorer: &dyn Scorer,
    n: usize,
    tau: f64,
    max_states: usize,
) -> Result<f64> {
    let v = scorer.vocab_size();
    let total = state_count(v, n).unwrap_or(u128::MAX);
    if total > max_states as u128 {
        return Err(Error::capacity(
            "exhaustive rectangle states",
            total,
            max_states as u128,
        ));
    }
    (0..total as usize)
        .into_par_iter()
        .map(|idx| {
            let x = SeqState::new(ids_from_index(idx, n, v), v)?;
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    for a in (0..v as TokenId).filter(|&a| a != x.get(i)) {
                        for b in (0..v as TokenId).filter(|&b| b != x.get(j)) {
                            worst = worst
                                .max(rectangle_delta(scorer, &x, i, j, a, b, tau)?.delta.abs());
                        }
                    }
                }
            }
            Ok(worst)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}
