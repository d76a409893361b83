//! Influence coefficients `c_ij(τ)` and cross-site score oscillations `Δ_ij`.
//!
//! `c_ij(τ)` is the largest total-variation change of the conditional at
//! site `i` when only the token at site `j` changes. `Δ_ij` is the largest
//! spread `max_a − min_a` of the score change `s_i(a; x) − s_i(a; y)` over
//! the same pairs of contexts; it does not depend on `τ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{tempered_conditional, tv_unchecked};
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seq::{ids_from_index, state_count, SeqState, TokenId};

/// Whether a matrix holds exact suprema or maxima over sampled contexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    Exact,
    /// Max over sampled context pairs: a lower bound on each entry.
    SampledLowerBound,
}

/// How to enumerate context pairs.
#[derive(Clone, Debug)]
pub enum ContextSource<'a> {
    /// Every pair of states of length `n` differing at one site.
    Exhaustive { n: usize, max_states: u128 },
    /// Each base state against all single-token swaps at `j` drawn from the
    /// scorer's top-`k` tokens at `j` in that state.
    Sampled { bases: &'a [SeqState], k: usize },
}

impl ContextSource<'_> {
    /// Exhaustive enumeration limited to `2^20` states.
    pub fn exhaustive(n: usize) -> Self {
        ContextSource::Exhaustive {
            n,
            max_states: 1 << 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    pub tau: f64,
    pub mode: EstimateMode,
    /// `c[i][j]`; the diagonal is zero.
    pub c: Vec<Vec<f64>>,
    /// Mean TV change over the enumerated pairs, per `(i, j)`.
    pub mean: Vec<Vec<f64>>,
}

impl InfluenceMatrix {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        off_diagonal_row_sums(&self.c)
    }

    /// `α(τ) = max_i Σ_{j≠i} c_ij`.
    pub fn alpha(&self) -> f64 {
        self.row_sums().into_iter().fold(0.0, f64::max)
    }

    /// `max_i Σ_{j≠i}` of the mean matrix.
    pub fn mean_alpha(&self) -> f64 {
        off_diagonal_row_sums(&self.mean)
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationMatrix {
    pub mode: EstimateMode,
    /// `Δ[i][j]`; the diagonal is zero.
    pub delta: Vec<Vec<f64>>,
}

impl OscillationMatrix {
    pub fn max_row_sum(&self) -> f64 {
        off_diagonal_row_sums(&self.delta)
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// True when `max_i Σ_j Δ_ij < 4τ`, which forces `α(τ) < 1`.
    pub fn guarantees_contraction(&self, tau: f64) -> bool {
        self.max_row_sum() < 4.0 * tau
    }

    /// The bound `Δ_ij / (4τ)` on each influence coefficient.
    pub fn influence_bound(&self, tau: f64) -> Vec<Vec<f64>> {
        self.delta
            .iter()
            .map(|row| row.iter().map(|d| d / (4.0 * tau)).collect())
            .collect()
    }
}

fn off_diagonal_row_sums(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .sum()
        })
        .collect()
}

/// Accumulates the per-pair statistics for one site `i`.
struct PairStats {
    c: Vec<f64>,
    c_sum: Vec<f64>,
    delta: Vec<f64>,
    pairs: Vec<u64>,
}

impl PairStats {
    fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            c_sum: vec![0.0; n],
            delta: vec![0.0; n],
            pairs: vec![0; n],
        }
    }

    fn add(&mut self, j: usize, p: &[f64], q: &[f64], s: &[f64], t: &[f64]) {
        let tv = tv_unchecked(p, q);
        self.c[j] = self.c[j].max(tv);
        self.c_sum[j] += tv;
        self.pairs[j] += 1;
        let (lo, hi) = s
            .iter()
            .zip(t)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        self.delta[j] = self.delta[j].max(hi - lo);
    }

    fn mean_row(&self) -> Vec<f64> {
        self.c_sum
            .iter()
            .zip(&self.pairs)
            .map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
            .collect()
    }
}

/// Computes `c(τ)` and `Δ` together; both use the same context pairs.
pub fn influence_and_oscillation(
    scorer: &dyn Scorer,
    tau: f64,
    source: &ContextSource<'_>,
) -> Result<(InfluenceMatrix, OscillationMatrix)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let (rows, mode) = match source {
        ContextSource::Exhaustive { n, max_states } => (
            exhaustive_rows(scorer, *n, tau, *max_states)?,
            EstimateMode::Exact,
        ),
        ContextSource::Sampled { bases, k } => (
            sampled_rows(scorer, bases, *k, tau)?,
            EstimateMode::SampledLowerBound,
        ),
    };
    let c = rows.iter().map(|r| r.c.clone()).collect();
    let mean = rows.iter().map(PairStats::mean_row).collect();
    let delta = rows.iter().map(|r| r.delta.clone()).collect();
    Ok((
        InfluenceMatrix { tau, mode, c, mean },
        OscillationMatrix { mode, delta },
    ))
}

pub fn influence_coefficients(
    scorer: &dyn Scorer,
    tau: f64,
    source: &ContextSource<'_>,
) -> Result<InfluenceMatrix> {
    Ok(influence_and_oscillation(scorer, tau, source)?.0)
}

/// Oscillation matrix; `τ` plays no role, so this evaluates at `τ = 1`.
pub fn oscillation_matrix(
    scorer: &dyn Scorer,
    source: &ContextSource<'_>,
) -> Result<OscillationMatrix> {
    Ok(influence_and_oscillation(scorer, 1.0, source)?.1)
}

fn exhaustive_rows(
    scorer: &dyn Scorer,
    n: usize,
    tau: f64,
    max_states: u128,
) -> Result<Vec<PairStats>> {
    let v = scorer.vocab_size();
    if n < 2 {
        return Err(Error::input("influence needs at least two sites"));
    }
    let total = state_count(v, n).unwrap_or(u128::MAX);
    if total > max_states {
        return Err(Error::capacity("exact influence states", total, max_states));
    }
    let total = total as usize;
    (0..n)
        .into_par_iter()
        .map(|i| {
            // scores and conditionals at site i for every context, stored at
            // the index of the state with x_i = 0
            let stride_i = v.pow(i as u32);
            let mut scores = vec![Vec::new(); total];
            let mut probs = vec![Vec::new(); total];
            for idx in (0..total).filter(|idx| (idx / stride_i) % v == 0) {
                let x = SeqState::new(ids_from_index(idx, n, v), v)?;
                let s = scorer.local_scores(&x, i)?;
                probs[idx] = tempered_conditional(&s, tau)?.into_inner();
                scores[idx] = s.into_inner();
            }
            let mut stats = PairStats::new(n);
            for j in (0..n).filter(|&j| j != i) {
                let stride_j = v.pow(j as u32);
                for base in
                    (0..total).filter(|idx| (idx / stride_i) % v == 0 && (idx / stride_j) % v == 0)
                {
                    for b in 0..v {
                        for b2 in (b + 1)..v {
                            let (x, y) = (base + b * stride_j, base + b2 * stride_j);
                            stats.add(j, &probs[x], &probs[y], &scores[x], &scores[y]);
                        }
                    }
                }
            }
            Ok(stats)
        })
        .collect()
}

fn sampled_rows(
    scorer: &dyn Scorer,
    bases: &[SeqState],
    k: usize,
    tau: f64,
) -> Result<Vec<PairStats>> {
    let Some(first) = bases.first() else {
        return Err(Error::input(
            "sampled influence needs at least one base state",
        ));
    };
    let n = first.len();
    if n < 2 {
        return Err(Error::input("influence needs at least two sites"));
    }
    if bases.iter().any(|b| b.len() != n) {
        return Err(Error::input("base states differ in length"));
    }
    if k == 0 {
        return Err(Error::input("sampled influence needs k ≥ 1"));
    }
    let mask: Vec<TokenId> = scorer.mask_id().into_iter().collect();
    let per_base = bases
        .par_iter()
        .map(|x| {
            let mut rows: Vec<PairStats> = (0..n).map(|_| PairStats::new(n)).collect();
            let free = x.free_positions();
            let base_scores: Vec<Option<Vec<f64>>> = (0..n)
                .map(|i| {
                    if x.is_frozen(i) {
                        Ok(None)
                    } else {
                        scorer.local_scores(x, i).map(|s| Some(s.into_inner()))
                    }
                })
                .collect::<Result<_>>()?;
            for &j in free {
                let mut exclude = mask.clone();
                exclude.push(x.get(j));
                let swaps =
                    crate::dist::ScoreVector::new(base_scores[j].clone().expect("free site"))?
                        .top_k(k, &exclude);
                for b in swaps {
                    let y = x.replaced(j, b);
                    let queries: Vec<(&SeqState, usize)> =
                        free.iter().filter(|&&i| i != j).map(|&i| (&y, i)).collect();
                    let swapped = scorer.local_scores_batch(&queries)?;
                    for (&(_, i), t) in queries.iter().zip(&swapped) {
                        let s = base_scores[i].as_ref().expect("free site");
                        let p = tempered_conditional(s, tau)?;
                        let q = tempered_conditional(t, tau)?;
                        rows[i].add(j, &p, &q, s, t);
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged: Vec<PairStats> = (0..n).map(|_| PairStats::new(n)).collect();
    for rows in per_base {
        for (m, r) in merged.iter_mut().zip(rows) {
            for j in 0..n {
                m.c[j] = m.c[j].max(r.c[j]);
                m.delta[j] = m.delta[j].max(r.delta[j]);
                m.c_sum[j] += r.c_sum[j];
                m.pairs[j] += r.pairs[j];
            }
        }
    }
    Ok(merged)
}
