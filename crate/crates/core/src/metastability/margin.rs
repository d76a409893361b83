//! Per-position score gaps and the uniform-margin check on a basin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basin::BasinSpec;
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seq::{ids_from_index, state_count, SeqState, TokenId};

/// Perfect traps have every token strictly ahead of its rivals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    Perfect,
    Approximate,
}

/// Score gaps `Δ_i(x) = s_i(x_i; x_{-i}) − max_{a≠x_i} s_i(a; x_{-i})` at
/// the non-frozen positions of one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub positions: Vec<usize>,
    pub gaps: Vec<f64>,
    /// Conditional argmax `m_i(x_{-i})` at each position (lowest id on ties).
    pub argmax: Vec<TokenId>,
    pub mean_gap: f64,
    pub min_gap: f64,
    /// Every token is a conditional argmax (`Δ_i ≥ 0` everywhere).
    pub all_argmax: bool,
    pub kind: TrapKind,
}

/// Gap of the current token over its best rival at `pos`.
fn gap_at(scores: &[f64], current: TokenId) -> f64 {
    let rival = scores
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != current as usize)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    scores[current as usize] - rival
}

pub fn margin_report(scorer: &dyn Scorer, x: &SeqState) -> Result<MarginReport> {
    let positions = x.free_positions().to_vec();
    if positions.is_empty() {
        return Err(Error::input("state has no free positions"));
    }
    let queries: Vec<(&SeqState, usize)> = positions.iter().map(|&i| (x, i)).collect();
    let scores = scorer.local_scores_batch(&queries)?;
    let mut gaps = Vec::with_capacity(positions.len());
    let mut argmax = Vec::with_capacity(positions.len());
    for (&i, s) in positions.iter().zip(&scores) {
        gaps.push(gap_at(s, x.get(i)));
        argmax.push(s.argmax() as TokenId);
    }
    let mean_gap = crate::stats::mean(&gaps);
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MarginReport {
        positions,
        gaps,
        argmax,
        mean_gap,
        min_gap,
        all_argmax: min_gap >= 0.0,
        kind: if min_gap > 0.0 {
            TrapKind::Perfect
        } else {
            TrapKind::Approximate
        },
    })
}

/// A state, a site and a token at which a margin is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginWitness {
    pub state: Vec<TokenId>,
    pub site: usize,
    pub token: TokenId,
    /// `s_i(x_i) − s_i(token)`.
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckScope {
    /// Only the supplied states were examined: a necessary condition.
    CertifiedOnSample,
    /// Every state of an enumerable basin was examined.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub passed: bool,
    pub required: f64,
    pub scope: CheckScope,
    pub checked_states: usize,
    /// Number of `(state, site)` pairs from which a single change can exit.
    pub exit_sites: usize,
    /// Smallest gap to an exit-causing token; `None` when no exit was found.
    pub certified_margin: Option<f64>,
    /// The `(x, i, a)` attaining `certified_margin`.
    pub binding: Option<MarginWitness>,
    /// Smallest all-rival gap `Δ_i` over exit-capable sites.
    pub min_site_gap: Option<f64>,
    /// Exit-capable sites whose token is not the conditional argmax; the
    /// witness token is the argmax.
    pub argmax_violations: Vec<MarginWitness>,
}

#[derive(Default)]
struct Accumulator {
    exit_sites: usize,
    binding: Option<MarginWitness>,
    min_site_gap: Option<f64>,
    violations: Vec<MarginWitness>,
}

impl Accumulator {
    fn merge(mut self, other: Accumulator) -> Accumulator {
        self.exit_sites += other.exit_sites;
        if let Some(b) = other.binding {
            if self.binding.as_ref().is_none_or(|a| b.gap < a.gap) {
                self.binding = Some(b);
            }
        }
        self.min_site_gap = match (self.min_site_gap, other.min_site_gap) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.violations.extend(other.violations);
        self
    }
}

fn check_state(scorer: &dyn Scorer, basin: &BasinSpec, x: &SeqState) -> Result<Accumulator> {
    let v = scorer.vocab_size();
    let mut acc = Accumulator::default();
    for &i in x.free_positions() {
        let exits = basin.exit_tokens(x, i, v);
        if exits.is_empty() {
            continue;
        }
        acc.exit_sites += 1;
        let s = scorer.local_scores(x, i)?;
        let current = x.get(i);
        let site_gap = gap_at(&s, current);
        acc.min_site_gap = Some(acc.min_site_gap.map_or(site_gap, |g: f64| g.min(site_gap)));
        if site_gap < 0.0 {
            let m = s.argmax() as TokenId;
            acc.violations.push(MarginWitness {
                state: x.ids().to_vec(),
                site: i,
                token: m,
                gap: s[current as usize] - s[m as usize],
            });
        }
        for a in exits {
            let gap = s[current as usize] - s[a as usize];
            if acc.binding.as_ref().is_none_or(|b| gap < b.gap) {
                acc.binding = Some(MarginWitness {
                    state: x.ids().to_vec(),
                    site: i,
                    token: a,
                    gap,
                });
            }
        }
    }
    Ok(acc)
}

fn finish(
    acc: Accumulator,
    required: f64,
    scope: CheckScope,
    checked_states: usize,
) -> MarginCheck {
    let certified_margin = acc.binding.as_ref().map(|b| b.gap);
    MarginCheck {
        passed: acc.violations.is_empty() && certified_margin.is_none_or(|m| m >= required),
        required,
        scope,
        checked_states,
        exit_sites: acc.exit_sites,
        certified_margin,
        binding: acc.binding,
        min_site_gap: acc.min_site_gap,
        argmax_violations: acc.violations,
    }
}

/// Checks the margin condition on the supplied basin states: every
/// exit-capable site holds its conditional argmax and every exit-causing
/// token trails it by at least `required`.
pub fn check_margin_assumption(
    scorer: &dyn Scorer,
    basin: &BasinSpec,
    samples: &[SeqState],
    required: f64,
) -> Result<MarginCheck> {
    if samples.is_empty() {
        return Err(Error::input("margin check needs at least one sample state"));
    }
    if let Some(k) = samples.iter().position(|x| !basin.contains(x)) {
        return Err(Error::input(format!("sample {k} lies outside the basin")));
    }
    let acc = samples
        .par_iter()
        .map(|x| check_state(scorer, basin, x))
        .try_reduce(Accumulator::default, |a, b| Ok(a.merge(b)))?;
    Ok(finish(
        acc,
        required,
        CheckScope::CertifiedOnSample,
        samples.len(),
    ))
}

/// Same check over every basin state of length `n` with no frozen sites.
pub fn check_margin_exhaustive(
    scorer: &dyn Scorer,
    basin: &BasinSpec,
    n: usize,
    required: f64,
    max_states: u128,
) -> Result<MarginCheck> {
    let v = scorer.vocab_size();
    let total = state_count(v, n).unwrap_or(u128::MAX);
    if total > max_states {
        return Err(Error::capacity(
            "exhaustive margin states",
            total,
            max_states,
        ));
    }
    let members: Vec<SeqState> = (0..total as usize)
        .map(|idx| SeqState::new(ids_from_index(idx, n, v), v))
        .filter(|x| x.as_ref().map_or(true, |x| basin.contains(x)))
        .collect::<Result<_>>()?;
    if members.is_empty() {
        return Err(Error::input("basin has no states"));
    }
    let acc = members
        .par_iter()
        .map(|x| check_state(scorer, basin, x))
        .try_reduce(Accumulator::default, |a, b| Ok(a.merge(b)))?;
    Ok(finish(acc, required, CheckScope::Exhaustive, members.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::TabularScorer;

    /// Scores favor token 0 everywhere by `gap`.
    fn favor_zero(n: usize, v: usize, gap: f64) -> TabularScorer {
        TabularScorer::from_fn(n, v, |_, _, a| if a == 0 { gap } else { 0.0 }).unwrap()
    }

    #[test]
    fn report_on_constructed_state() {
        let s = favor_zero(3, 3, 2.0);
        let r = margin_report(&s, &SeqState::new(vec![0, 0, 0], 3).unwrap()).unwrap();
        assert_eq!(r.min_gap, 2.0);
        assert_eq!(r.mean_gap, 2.0);
        assert!(r.all_argmax);
        assert_eq!(r.kind, TrapKind::Perfect);
        assert_eq!(r.argmax, vec![0, 0, 0]);

        let r = margin_report(&s, &SeqState::with_frozen(vec![1, 0, 0], &[2], 3).unwrap()).unwrap();
        assert_eq!(r.positions, vec![0, 1]);
        assert_eq!(r.gaps, vec![-2.0, 2.0]);
        assert!(!r.all_argmax);
        assert_eq!(r.kind, TrapKind::Approximate);
    }

    #[test]
    fn gaps_match_full_enumeration() {
        let s = TabularScorer::random(3, 4, 2.0, &mut crate::rng::replica_rng(1, 0)).unwrap();
        for idx in 0..64 {
            let x = SeqState::new(ids_from_index(idx, 3, 4), 4).unwrap();
            let r = margin_report(&s, &x).unwrap();
            for (&i, &g) in r.positions.iter().zip(&r.gaps) {
                let sc = s.local_scores(&x, i).unwrap();
                let mut best_other = f64::NEG_INFINITY;
                for a in 0..4 {
                    if a != x.get(i) as usize && sc[a] > best_other {
                        best_other = sc[a];
                    }
                }
                assert_eq!(g, sc[x.get(i) as usize] - best_other);
            }
        }
    }

    #[test]
    fn certified_margin_by_construction() {
        let s = favor_zero(4, 3, 2.0);
        let basin = BasinSpec::hamming_ball(vec![0; 4], 1);
        let ex = check_margin_exhaustive(&s, &basin, 4, 2.0, 4096).unwrap();
        assert!(ex.passed);
        assert_eq!(ex.certified_margin, Some(2.0));
        assert_eq!(ex.scope, CheckScope::Exhaustive);
        assert_eq!(ex.checked_states, 1 + 4 * 2);
        let sample = vec![SeqState::new(vec![0, 2, 0, 0], 3).unwrap()];
        let r = check_margin_assumption(&s, &basin, &sample, 2.5).unwrap();
        assert!(!r.passed);
        assert_eq!(r.certified_margin, Some(2.0));
        assert_eq!(r.exit_sites, 3);
    }

    #[test]
    fn argmax_violation_is_reported() {
        // site 2 prefers token 1 when the others hold 0
        let s = TabularScorer::from_fn(3, 2, |site, ctx, a| {
            if site == 2 && ctx[0] == 0 && ctx[1] == 0 {
                if a == 1 {
                    1.0
                } else {
                    0.0
                }
            } else if a == 0 {
                3.0
            } else {
                0.0
            }
        })
        .unwrap();
        let basin = BasinSpec::explicit([vec![0, 0, 0]], "single");
        let r =
            check_margin_assumption(&s, &basin, &[SeqState::new(vec![0, 0, 0], 2).unwrap()], 0.5)
                .unwrap();
        assert!(!r.passed);
        assert_eq!(r.argmax_violations.len(), 1);
        assert_eq!(
            (r.argmax_violations[0].site, r.argmax_violations[0].token),
            (2, 1)
        );
        assert_eq!(r.certified_margin, Some(-1.0));
        assert!(check_margin_assumption(&s, &basin, &[], 0.5).is_err());
        assert!(check_margin_assumption(
            &s,
            &basin,
            &[SeqState::new(vec![1, 0, 0], 2).unwrap()],
            0.5
        )
        .is_err());
    }
}
