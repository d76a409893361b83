//! Exact analysis of small chains by enumerating all `V^n` states.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::influence::{InfluenceMatrix, OscillationMatrix};
use crate::dynamics::GlauberKernel;
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seq::{ids_from_index, state_count, state_index, SeqState, TokenId};

/// Dyadic powers beyond `2^MAX_DOUBLINGS` steps are not explored.
const MAX_DOUBLINGS: u32 = 48;

#[derive(Clone, Debug)]
pub struct ChainOptions {
    /// Largest state space to enumerate.
    pub max_states: u128,
    /// Accuracies at which `t_mix` is tabulated.
    pub eps_grid: Vec<f64>,
    /// Largest state space for which the dense `t_mix` computation runs;
    /// above it the table is left empty.
    pub max_mixing_states: usize,
    /// Sup-norm residual `‖μP − μ‖_∞` at which power iteration stops.
    pub residual_tol: f64,
    /// Power-iteration sweeps before falling back to direct elimination.
    pub max_sweeps: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            max_states: 4096,
            eps_grid: vec![0.25, 0.1, 0.01],
            max_mixing_states: 1024,
            residual_tol: 1e-13,
            max_sweeps: 200_000,
        }
    }
}

/// Transition matrix in compressed rows: self-loop plus single-site moves.
#[derive(Clone, Debug)]
pub struct SparseKernel {
    pub stay: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

impl SparseKernel {
    pub fn states(&self) -> usize {
        self.stay.len()
    }

    /// Moves out of `x` as `(target, probability)`, excluding the self-loop.
    pub fn moves(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[x]..self.offsets[x + 1];
        self.targets[r.clone()]
            .iter()
            .map(|&t| t as usize)
            .zip(self.probs[r].iter().copied())
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return self.stay[x];
        }
        self.moves(x)
            .find(|&(t, _)| t == y)
            .map(|(_, p)| p)
            .unwrap_or(0.0)
    }

    /// `μ P` for a row vector `μ`.
    pub fn left_multiply(&self, mu: &[f64], out: &mut [f64]) {
        for (o, (m, s)) in out.iter_mut().zip(mu.iter().zip(&self.stay)) {
            *o = m * s;
        }
        for (x, &m) in mu.iter().enumerate() {
            for (y, p) in self.moves(x) {
                out[y] += m * p;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.states();
        let mut m = DMatrix::zeros(n, n);
        for x in 0..n {
            m[(x, x)] = self.stay[x];
            for (y, p) in self.moves(x) {
                m[(x, y)] += p;
            }
        }
        m
    }

    /// Largest `|Σ_y P(x, y) − 1|`.
    pub fn max_row_error(&self) -> f64 {
        (0..self.states())
            .map(|x| (self.stay[x] + self.moves(x).map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the full transition matrix of the chain on `V^n` (no frozen sites).
pub fn build_kernel(
    scorer: &dyn Scorer,
    n: usize,
    tau: f64,
    max_states: u128,
) -> Result<SparseKernel> {
    let v = scorer.vocab_size();
    let total = state_count(v, n).unwrap_or(u128::MAX);
    if total > max_states {
        return Err(Error::capacity("exact chain states", total, max_states));
    }
    let kernel = GlauberKernel::new(scorer, tau)?;
    let rows = (0..total as usize)
        .into_par_iter()
        .map(|idx| {
            let x = SeqState::new(ids_from_index(idx, n, v), v)?;
            let row = kernel.transition_row(&x)?;
            let moves: Vec<(u32, f64)> = row
                .moves
                .iter()
                .map(|m| {
                    let mut ids = x.ids().to_vec();
                    ids[m.site] = m.token;
                    (state_index(&ids, v) as u32, m.prob)
                })
                .collect();
            Ok((row.stay, moves))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut k = SparseKernel {
        stay: Vec::with_capacity(rows.len()),
        offsets: vec![0],
        targets: Vec::new(),
        probs: Vec::new(),
    };
    for (stay, moves) in rows {
        k.stay.push(stay);
        for (t, p) in moves {
            k.targets.push(t);
            k.probs.push(p);
        }
        k.offsets.push(k.targets.len());
    }
    Ok(k)
}

/// How the stationary vector was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    PowerIteration {
        sweeps: usize,
    },
    /// Grassmann–Taksar–Heyman elimination, used when power iteration has
    /// not converged within its sweep budget.
    Elimination,
}

fn sup_residual(kernel: &SparseKernel, mu: &[f64], scratch: &mut [f64]) -> f64 {
    kernel.left_multiply(mu, scratch);
    mu.iter()
        .zip(scratch.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn power_iteration(
    kernel: &SparseKernel,
    tol: f64,
    max_sweeps: usize,
) -> Option<(Vec<f64>, usize)> {
    let n = kernel.states();
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for sweep in 1..=max_sweeps {
        kernel.left_multiply(&mu, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= total);
        std::mem::swap(&mut mu, &mut next);
        if sweep % 16 == 0 && sup_residual(kernel, &mu, &mut next) <= tol {
            return Some((mu, sweep));
        }
    }
    None
}

/// Stationary vector by state elimination; every operation adds or
/// multiplies non-negative numbers, so tiny probabilities keep full
/// relative precision.
pub fn stationary_by_elimination(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| p.row(i).iter().copied().collect()).collect();
    let mut out_rate = vec![0.0; n];
    for k in (1..n).rev() {
        let s: f64 = a[k][..k].iter().sum();
        out_rate[k] = s;
        let row_k: Vec<f64> = a[k][..k].iter().map(|v| v / s).collect();
        let col_k: Vec<f64> = (0..k).map(|i| a[i][k]).collect();
        a[..k]
            .par_iter_mut()
            .zip(col_k.par_iter())
            .for_each(|(row, &aik)| {
                if aik != 0.0 {
                    for (r, &kj) in row[..k].iter_mut().zip(&row_k) {
                        *r += aik * kj;
                    }
                }
            });
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let inflow: f64 = (0..k).map(|i| pi[i] * a[i][k]).sum();
        pi[k] = inflow / out_rate[k];
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    pi
}

/// Largest TV distance between a row of `m` and `mu`.
fn max_row_tv(m: &DMatrix<f64>, mu: &[f64]) -> f64 {
    (0..m.nrows())
        .into_par_iter()
        .map(|x| {
            0.5 * mu
                .iter()
                .enumerate()
                .map(|(y, q)| (m[(x, y)] - q).abs())
                .sum::<f64>()
        })
        .reduce(|| 0.0, f64::max)
}

/// `t_mix(ε)` for each accuracy, by doubling then greedy binary descent
/// over the stored dyadic powers. `None` means not mixed within
/// `2^MAX_DOUBLINGS` steps.
pub fn mixing_times(p: &DMatrix<f64>, mu: &[f64], eps_grid: &[f64]) -> Vec<Option<u64>> {
    let mut powers = vec![p.clone()];
    let mut dists = vec![max_row_tv(p, mu)];
    let target = eps_grid.iter().copied().fold(f64::INFINITY, f64::min);
    while *dists.last().expect("nonempty") > target && (powers.len() as u32) <= MAX_DOUBLINGS {
        let last = powers.last().expect("nonempty");
        let sq = last * last;
        dists.push(max_row_tv(&sq, mu));
        powers.push(sq);
    }
    eps_grid
        .iter()
        .map(|&eps| {
            let top = dists.iter().position(|&d| d <= eps)?;
            // invariant: d(t) > eps for the accumulated t (t = 0 trivially)
            let mut t: u64 = 0;
            let mut acc: Option<DMatrix<f64>> = None;
            for k in (0..top).rev() {
                let cand = match &acc {
                    None => powers[k].clone(),
                    Some(m) => m * &powers[k],
                };
                if max_row_tv(&cand, mu) > eps {
                    t += 1 << k;
                    acc = Some(cand);
                }
            }
            Some(t + 1)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingTime {
    pub eps: f64,
    pub steps: Option<u64>,
}

/// Everything computed about one enumerated chain.
#[derive(Clone, Debug)]
pub struct ChainAnalysis {
    pub n: usize,
    pub vocab_size: usize,
    pub tau: f64,
    pub kernel: SparseKernel,
    pub stationary: Vec<f64>,
    pub method: StationaryMethod,
    /// `‖μP − μ‖_∞` of the returned stationary vector.
    pub residual: f64,
    pub t_mix: Vec<MixingTime>,
    /// `max |μ(x)P(x,y) − μ(y)P(y,x)|`.
    pub reversibility_defect: f64,
    pub max_row_error: f64,
}

pub fn exact_chain_analysis(
    scorer: &dyn Scorer,
    n: usize,
    tau: f64,
    options: &ChainOptions,
) -> Result<ChainAnalysis> {
    if options.eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::domain("mixing accuracies must lie in (0, 1)"));
    }
    let kernel = build_kernel(scorer, n, tau, options.max_states)?;
    let states = kernel.states();
    let mut dense: Option<DMatrix<f64>> = None;
    let (stationary, method) =
        match power_iteration(&kernel, options.residual_tol, options.max_sweeps) {
            Some((mu, sweeps)) => (mu, StationaryMethod::PowerIteration { sweeps }),
            None => {
                let d = kernel.to_dense();
                let mu = stationary_by_elimination(&d);
                dense = Some(d);
                (mu, StationaryMethod::Elimination)
            }
        };
    let mut scratch = vec![0.0; states];
    let residual = sup_residual(&kernel, &stationary, &mut scratch);
    let t_mix = if states <= options.max_mixing_states && !options.eps_grid.is_empty() {
        let d = dense.unwrap_or_else(|| kernel.to_dense());
        mixing_times(&d, &stationary, &options.eps_grid)
            .into_iter()
            .zip(&options.eps_grid)
            .map(|(steps, &eps)| MixingTime { eps, steps })
            .collect()
    } else {
        Vec::new()
    };
    let reversibility_defect = (0..states)
        .into_par_iter()
        .map(|x| {
            kernel
                .moves(x)
                .map(|(y, p)| (stationary[x] * p - stationary[y] * kernel.prob(y, x)).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(ChainAnalysis {
        n,
        vocab_size: scorer.vocab_size(),
        tau,
        max_row_error: kernel.max_row_error(),
        kernel,
        stationary,
        method,
        residual,
        t_mix,
        reversibility_defect,
    })
}

impl ChainAnalysis {
    pub fn states(&self) -> usize {
        self.kernel.states()
    }

    pub fn index_of(&self, ids: &[TokenId]) -> usize {
        state_index(ids, self.vocab_size)
    }

    pub fn ids_of(&self, index: usize) -> Vec<TokenId> {
        ids_from_index(index, self.n, self.vocab_size)
    }

    /// Membership vector of the states satisfying `pred`.
    pub fn basin_mask<F: Fn(&[TokenId]) -> bool>(&self, pred: F) -> Vec<bool> {
        (0..self.states()).map(|x| pred(&self.ids_of(x))).collect()
    }

    pub fn basin_mass(&self, basin: &[bool]) -> f64 {
        self.stationary
            .iter()
            .zip(basin)
            .filter(|(_, &b)| b)
            .map(|(m, _)| m)
            .sum()
    }

    /// `P(x, Bᶜ)`.
    pub fn exit_probability(&self, x: usize, basin: &[bool]) -> f64 {
        self.kernel
            .moves(x)
            .filter(|&(y, _)| !basin[y])
            .map(|(_, p)| p)
            .sum()
    }

    /// Conductance `Φ(B) = Σ_{x∈B} μ(x) P(x, Bᶜ) / μ(B)`.
    pub fn conductance(&self, basin: &[bool]) -> f64 {
        let flow: f64 = (0..self.states())
            .filter(|&x| basin[x])
            .map(|x| self.stationary[x] * self.exit_probability(x, basin))
            .sum();
        flow / self.basin_mass(basin)
    }

    /// Expected steps to leave `B` from each state of `B`, solving
    /// `(I − Q) t = 1` with `Q` the kernel restricted to `B`.
    /// Returns `(state index, expected exit time)` pairs.
    pub fn mean_exit_times(&self, basin: &[bool]) -> Result<Vec<(usize, f64)>> {
        let members: Vec<usize> = (0..self.states()).filter(|&x| basin[x]).collect();
        if members.is_empty() {
            return Err(Error::input("basin is empty"));
        }
        if members.len() == self.states() {
            return Err(Error::input(
                "basin covers every state; the chain never leaves it",
            ));
        }
        let mut pos = vec![usize::MAX; self.states()];
        for (k, &x) in members.iter().enumerate() {
            pos[x] = k;
        }
        let m = members.len();
        let mut a = DMatrix::<f64>::identity(m, m);
        for (k, &x) in members.iter().enumerate() {
            a[(k, k)] -= self.kernel.stay[x];
            for (y, p) in self.kernel.moves(x) {
                if basin[y] {
                    a[(k, pos[y])] -= p;
                }
            }
        }
        let t = a
            .lu()
            .solve(&DVector::from_element(m, 1.0))
            .ok_or_else(|| Error::domain("exit-time system is singular"))?;
        Ok(members.into_iter().zip(t.iter().copied()).collect())
    }

    pub fn mixing_time(&self, eps: f64) -> Option<u64> {
        self.t_mix
            .iter()
            .find(|m| m.eps == eps)
            .and_then(|m| m.steps)
    }

    /// The `k` most probable states, most probable first.
    pub fn top_states(&self, k: usize) -> Vec<(Vec<TokenId>, f64)> {
        let mut order: Vec<usize> = (0..self.states()).collect();
        order.sort_by(|&a, &b| {
            self.stationary[b]
                .total_cmp(&self.stationary[a])
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .take(k)
            .map(|x| (self.ids_of(x), self.stationary[x]))
            .collect()
    }
}

/// JSON export of an analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisExport {
    pub n: usize,
    pub vocab_size: usize,
    pub tau: f64,
    pub alpha: Option<f64>,
    pub c_matrix: Option<Vec<Vec<f64>>>,
    pub delta_matrix: Option<Vec<Vec<f64>>>,
    pub t_mix_table: Vec<MixingTime>,
    pub reversibility_defect: f64,
    pub stationary_residual: f64,
    pub stationary_method: StationaryMethod,
    pub stationary_top_states: Vec<(Vec<TokenId>, f64)>,
}

impl AnalysisExport {
    pub fn new(
        analysis: &ChainAnalysis,
        influence: Option<&InfluenceMatrix>,
        oscillation: Option<&OscillationMatrix>,
        top: usize,
    ) -> Self {
        Self {
            n: analysis.n,
            vocab_size: analysis.vocab_size,
            tau: analysis.tau,
            alpha: influence.map(InfluenceMatrix::alpha),
            c_matrix: influence.map(|c| c.c.clone()),
            delta_matrix: oscillation.map(|d| d.delta.clone()),
            t_mix_table: analysis.t_mix.clone(),
            reversibility_defect: analysis.reversibility_defect,
            stationary_residual: analysis.residual,
            stationary_method: analysis.method,
            stationary_top_states: analysis.top_states(top),
        }
    }
}
