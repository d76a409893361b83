//! Subcommand implementations. Each one writes its artifacts through
//! [`Output`] and returns the error that stopped it, if any; artifacts of
//! cells that finished before the error are kept.

mod basin;
mod chain;
mod diagnostics;
mod grid;
pub mod serve;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use glauber::{Scorer, SeqState};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::Output;
use crate::scorer_spec::ScorerSource;
use crate::states::{random_pair, random_state, read_state_file, to_states, StateLine};

pub use basin::{drift, margin};
pub use chain::{run, traps};
pub use diagnostics::{exact, influence, rect};
pub use grid::{couple, hit};

/// Everything a command needs besides the output directory.
pub struct Ctx<'a> {
    pub config: &'a ExperimentConfig,
    source: ScorerSource,
    lines: Option<Vec<StateLine>>,
}

impl<'a> Ctx<'a> {
    pub fn new(config: &'a ExperimentConfig) -> anyhow::Result<Self> {
        let lines = config.states.as_deref().map(read_state_file).transpose()?;
        if let Some(lines) = &lines {
            let n = lines[0].ids.len();
            if let Some(k) = lines.iter().position(|l| l.ids.len() != n) {
                return Err(glauber::Error::Input(format!(
                    "state {} has length {}, the first has {n}",
                    k + 1,
                    lines[k].ids.len()
                ))
                .into());
            }
        }
        Ok(Self {
            config,
            source: ScorerSource::new(config.scorer.clone()),
            lines,
        })
    }

    /// Sequence lengths: the state file's length when one is given,
    /// otherwise the `n` grid.
    pub fn lengths(&self) -> Vec<usize> {
        match &self.lines {
            Some(lines) => vec![lines[0].ids.len()],
            None => self.config.grid.n.clone(),
        }
    }

    /// `(τ, n)` cells in grid order.
    pub fn cells(&self) -> Vec<(f64, usize)> {
        let ns = self.lengths();
        self.config
            .grid
            .tau
            .iter()
            .flat_map(|&t| ns.iter().map(move |&n| (t, n)))
            .collect()
    }

    /// `(τ, n, replica)` keys in grid order.
    pub fn replica_keys(&self) -> Vec<(f64, usize, u64)> {
        self.cells()
            .into_iter()
            .flat_map(|(t, n)| (0..self.config.grid.replicas).map(move |r| (t, n, r)))
            .collect()
    }

    pub fn scorer(&self, n: usize) -> glauber::Result<Arc<dyn Scorer>> {
        self.source.for_len(n)
    }

    /// States from the state file, if one was given.
    pub fn given_states(&self, vocab_size: usize) -> glauber::Result<Option<Vec<SeqState>>> {
        self.lines
            .as_deref()
            .map(|l| to_states(l, vocab_size))
            .transpose()
    }

    /// Start state of `replica`: cycles through the state file, or draws
    /// a uniform state.
    pub fn start(&self, n: usize, vocab_size: usize, replica: u64) -> glauber::Result<SeqState> {
        match self.given_states(vocab_size)? {
            Some(states) => Ok(states[replica as usize % states.len()].clone()),
            None => random_state(n, vocab_size, self.config.seed, replica),
        }
    }

    /// Start pair of `replica` for coupled chains: consecutive states of
    /// the state file, or two uniform draws.
    pub fn start_pair(
        &self,
        n: usize,
        vocab_size: usize,
        replica: u64,
    ) -> glauber::Result<(SeqState, SeqState)> {
        match self.given_states(vocab_size)? {
            Some(states) if states.len() < 2 => Err(glauber::Error::Input(
                "coupling from a state file needs at least two states".into(),
            )),
            Some(states) => {
                let k = replica as usize;
                Ok((
                    states[k % states.len()].clone(),
                    states[(k + 1) % states.len()].clone(),
                ))
            }
            None => random_pair(n, vocab_size, self.config.seed, replica),
        }
    }
}

/// Evaluates `f` on every key in parallel. After the first error no new key
/// starts; the results of keys that finished are returned with that error.
pub fn run_cells<K, T, F>(keys: &[K], f: F) -> (Vec<Option<T>>, Option<glauber::Error>)
where
    K: Sync,
    T: Send,
    F: Fn(&K) -> glauber::Result<T> + Sync,
{
    let stop = AtomicBool::new(false);
    let outcomes: Vec<Option<glauber::Result<T>>> = keys
        .par_iter()
        .map(|k| {
            if stop.load(Ordering::Relaxed) {
                return None;
            }
            let r = f(k);
            if r.is_err() {
                stop.store(true, Ordering::Relaxed);
            }
            Some(r)
        })
        .collect();
    let mut error = None;
    let results = outcomes
        .into_iter()
        .map(|o| match o {
            Some(Ok(t)) => Some(t),
            Some(Err(e)) => {
                error.get_or_insert(e);
                None
            }
            None => None,
        })
        .collect();
    (results, error)
}

fn none_done<T>(results: &[Option<T>]) -> bool {
    results.iter().all(Option::is_none)
}

/// Turns a leftover cell error into the command result.
fn finish_cells(error: Option<glauber::Error>) -> anyhow::Result<()> {
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn csv_float(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes what `Output` collected for a command, whatever the outcome.
pub fn execute(name: &str, config: &ExperimentConfig) -> anyhow::Result<()> {
    let mut out = Output::create(config, name)?;
    let result = Ctx::new(config).and_then(|ctx| match name {
        "run" => run(&ctx, &mut out),
        "couple" => couple(&ctx, &mut out),
        "hit" => hit(&ctx, &mut out),
        "rect" => rect(&ctx, &mut out),
        "influence" => influence(&ctx, &mut out),
        "exact" => exact(&ctx, &mut out),
        "drift" => drift(&ctx, &mut out),
        "margin" => margin(&ctx, &mut out),
        "traps" => traps(&ctx, &mut out),
        other => unreachable!("unknown command {other}"),
    });
    out.finish(config, result.as_ref().err())?;
    result
}
