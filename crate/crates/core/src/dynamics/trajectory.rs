//! Fixed-length chain runs with recorded snapshots and observables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::kernel::GlauberKernel;
use crate::dist::{normalized_hamming, tempered_conditional};
use crate::error::{Error, Result};
use crate::rng::{substream, ChainRng, StreamRole};
use crate::seq::{SeqState, TokenId};

/// Everything an observer may look at when a record is taken.
pub struct ObserveContext<'a, 'k> {
    pub step: u64,
    pub start: &'a SeqState,
    pub state: &'a SeqState,
    pub kernel: &'a GlauberKernel<'k>,
}

/// A named real-valued statistic evaluated at recording steps.
pub trait Observer: Send + Sync {
    fn name(&self) -> String;
    fn observe(&self, ctx: &ObserveContext<'_, '_>) -> Result<f64>;
}

/// Normalized Hamming distance from the starting state.
pub struct HammingFromStart;

impl Observer for HammingFromStart {
    fn name(&self) -> String {
        "hamming_from_start".into()
    }
    fn observe(&self, ctx: &ObserveContext<'_, '_>) -> Result<f64> {
        normalized_hamming(ctx.state, ctx.start)
    }
}

/// Fraction of non-frozen positions holding `token`.
pub struct TokenFraction(pub TokenId);

impl Observer for TokenFraction {
    fn name(&self) -> String {
        format!("fraction_{}", self.0)
    }
    fn observe(&self, ctx: &ObserveContext<'_, '_>) -> Result<f64> {
        Ok(ctx.state.count_free(self.0) as f64 / ctx.state.free_positions().len() as f64)
    }
}

/// Minimum per-position score gap `s_i(x_i) − max_{a≠x_i} s_i(a)`.
pub struct MinScoreGap;

impl Observer for MinScoreGap {
    fn name(&self) -> String {
        "min_gap".into()
    }
    fn observe(&self, ctx: &ObserveContext<'_, '_>) -> Result<f64> {
        let mut min = f64::INFINITY;
        for &i in ctx.state.free_positions() {
            let s = ctx.kernel.scorer().local_scores(ctx.state, i)?;
            let own = s[ctx.state.get(i) as usize];
            let best_other = s
                .iter()
                .enumerate()
                .filter(|&(a, _)| a != ctx.state.get(i) as usize)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            min = min.min(own - best_other);
        }
        Ok(min)
    }
}

/// Expected one-step change of the count of `token`, divided by the number
/// of free sites.
pub struct CountDrift(pub TokenId);

impl Observer for CountDrift {
    fn name(&self) -> String {
        format!("drift_{}", self.0)
    }
    fn observe(&self, ctx: &ObserveContext<'_, '_>) -> Result<f64> {
        let t = self.0;
        let free = ctx.state.free_positions();
        let mut total = 0.0;
        for &i in free {
            let s = ctx.kernel.scorer().local_scores(ctx.state, i)?;
            let p = tempered_conditional(&s, ctx.kernel.tau())?[t as usize];
            total += if ctx.state.get(i) == t { -(1.0 - p) } else { p };
        }
        Ok(total / free.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snapshot {
    /// Every token.
    Ids(Vec<TokenId>),
    /// `(position, token)` pairs that changed since the previous record.
    Delta(Vec<(usize, TokenId)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    #[serde(flatten)]
    pub snapshot: Snapshot,
    pub observables: BTreeMap<String, f64>,
}

/// Records of one chain run. Snapshots are delta-encoded against the
/// previous record, with a full keyframe every `keyframe_every` records.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub record_every: u64,
    pub keyframe_every: usize,
    pub frozen: Vec<usize>,
    pub vocab_size: usize,
    /// Set when the run stopped early on a scorer error; records are partial.
    pub aborted: Option<String>,
}

impl Trajectory {
    /// Decodes every recorded state as `(step, state)`.
    pub fn states(&self) -> Result<Vec<(u64, SeqState)>> {
        let mut out = Vec::with_capacity(self.records.len());
        let mut current: Option<Vec<TokenId>> = None;
        for r in &self.records {
            let ids = match (&r.snapshot, current.take()) {
                (Snapshot::Ids(ids), _) => ids.clone(),
                (Snapshot::Delta(d), Some(mut prev)) => {
                    for &(p, t) in d {
                        if p >= prev.len() {
                            return Err(Error::input(format!("delta position {p} out of range")));
                        }
                        prev[p] = t;
                    }
                    prev
                }
                (Snapshot::Delta(_), None) => {
                    return Err(Error::input("trajectory starts with a delta record"))
                }
            };
            out.push((
                r.step,
                SeqState::with_frozen(ids.clone(), &self.frozen, self.vocab_size)?,
            ));
            current = Some(ids);
        }
        Ok(out)
    }

    /// Values of one observable in record order.
    pub fn observable(&self, name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.observables.get(name).copied())
            .collect()
    }

    /// Writes one JSON object per record.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: std::io::BufRead>(
        r: R,
        record_every: u64,
        frozen: Vec<usize>,
        vocab_size: usize,
    ) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::input(format!("bad record: {e}")))?,
            );
        }
        Ok(Self {
            records,
            record_every,
            keyframe_every: 0,
            frozen,
            vocab_size,
            aborted: None,
        })
    }
}

/// Options for [`run_chain`].
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub steps: u64,
    pub record_every: u64,
    pub keyframe_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            steps: 10_000,
            record_every: 1,
            keyframe_every: 256,
        }
    }
}

/// Runs `steps` kernel steps from `start` with the shared stream of
/// `(seed, replica 0)`.
pub fn run_chain(
    start: &SeqState,
    kernel: &GlauberKernel<'_>,
    options: RunOptions,
    observers: &[&dyn Observer],
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = substream(seed, 0, StreamRole::Shared);
    run_chain_with_rng(start, kernel, options, observers, &mut rng)
}

pub fn run_chain_with_rng(
    start: &SeqState,
    kernel: &GlauberKernel<'_>,
    options: RunOptions,
    observers: &[&dyn Observer],
    rng: &mut ChainRng,
) -> Result<Trajectory> {
    if options.record_every == 0 {
        return Err(Error::input("record_every must be at least 1"));
    }
    let keyframe_every = options.keyframe_every.max(1);
    let mut traj = Trajectory {
        records: Vec::new(),
        record_every: options.record_every,
        keyframe_every,
        frozen: start.frozen().frozen_positions(),
        vocab_size: kernel.vocab_size(),
        aborted: None,
    };
    let mut state = start.clone();
    let mut last_recorded: Vec<TokenId> = start.ids().to_vec();

    let mut record = |traj: &mut Trajectory, step: u64, state: &SeqState| -> Result<()> {
        let ctx = ObserveContext {
            step,
            start,
            state,
            kernel,
        };
        let mut observables = BTreeMap::new();
        for o in observers {
            observables.insert(o.name(), o.observe(&ctx)?);
        }
        let snapshot = if traj.records.len() % keyframe_every == 0 {
            Snapshot::Ids(state.ids().to_vec())
        } else {
            Snapshot::Delta(
                state
                    .ids()
                    .iter()
                    .zip(&last_recorded)
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(p, (&a, _))| (p, a))
                    .collect(),
            )
        };
        last_recorded.copy_from_slice(state.ids());
        traj.records.push(TrajectoryRecord {
            step,
            snapshot,
            observables,
        });
        Ok(())
    };

    if let Err(e) = record(&mut traj, 0, &state) {
        return abort_or_fail(traj, e);
    }
    for step in 1..=options.steps {
        if let Err(e) = kernel.step(&mut state, rng) {
            return abort_or_fail(traj, e);
        }
        if step % options.record_every == 0 || step == options.steps {
            if let Err(e) = record(&mut traj, step, &state) {
                return abort_or_fail(traj, e);
            }
        }
    }
    Ok(traj)
}

fn abort_or_fail(mut traj: Trajectory, e: Error) -> Result<Trajectory> {
    if e.is_transport() {
        traj.aborted = Some(e.to_string());
        Ok(traj)
    } else {
        Err(e)
    }
}
