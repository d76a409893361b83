//! Trap detection on recorded trajectories.
//!
//! At record `k ≥ w` (with `w` the window in records) the windowed drift is
//! `m_k = (1/w) Σ_{s=k−w+1}^{k} d(x_s, x_{k−w})`, the mean distance of the
//! window's states from the state just before it. Maximal runs `k1..=k2`
//! with `m_k < θ` become traps spanning records `k1 − w ..= k2`; overlapping
//! spans are merged into one trap.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::margin::{margin_report, MarginReport};
use crate::dynamics::{DistanceFn, Trajectory};
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seq::{SeqState, TokenId};

/// Default window, in steps.
pub const DEFAULT_TRAP_WINDOW: u64 = 300;
/// Default threshold for normalized Hamming drift.
pub const HAMMING_TRAP_THRESHOLD: f64 = 0.25;
/// Threshold preset for cosine drift of sentence embeddings computed outside
/// this crate.
pub const EMBEDDING_TRAP_THRESHOLD: f64 = 0.12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    /// Window length in steps.
    pub window: u64,
    pub threshold: f64,
    pub distance: String,
}

impl Default for TrapParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_TRAP_WINDOW,
            threshold: HAMMING_TRAP_THRESHOLD,
            distance: "normalized_hamming".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapEvent {
    pub start: u64,
    pub end: u64,
    pub duration: u64,
    /// Most frequent recorded state in the trap (earliest on ties).
    pub representative: Vec<TokenId>,
    pub margin: Option<MarginReport>,
    pub params: TrapParams,
}

/// Detects traps in `(step, state)` records spaced evenly in steps.
pub fn detect_traps(
    records: &[(u64, SeqState)],
    distance: DistanceFn<'_>,
    params: &TrapParams,
    scorer: Option<&dyn Scorer>,
) -> Result<Vec<TrapEvent>> {
    if records.len() < 2 {
        return Err(Error::input("trap detection needs at least two records"));
    }
    let stride = records[1].0 - records[0].0;
    if stride == 0 || records.windows(2).any(|w| w[1].0 - w[0].0 != stride) {
        return Err(Error::input("trap detection needs evenly spaced records"));
    }
    if params.window == 0 || params.window % stride != 0 {
        return Err(Error::input(format!(
            "window {} must be a positive multiple of the record spacing {stride}",
            params.window
        )));
    }
    let w = (params.window / stride) as usize;
    if w >= records.len() {
        return Err(Error::input(format!(
            "window of {} steps is longer than the trajectory",
            params.window
        )));
    }
    let flagged: Vec<bool> = (0..records.len())
        .map(|k| {
            if k < w {
                return false;
            }
            let anchor = &records[k - w].1;
            let total: f64 = records[k - w + 1..=k]
                .iter()
                .map(|(_, x)| distance(x, anchor))
                .sum();
            total / (w as f64) < params.threshold
        })
        .collect();

    // spans of consecutive flagged runs overlap when a single outlying
    // anchor interrupts a trap; such spans are merged
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < flagged.len() {
        if !flagged[k] {
            k += 1;
            continue;
        }
        let k1 = k;
        while k + 1 < flagged.len() && flagged[k + 1] {
            k += 1;
        }
        match spans.last_mut() {
            Some(last) if k1 - w <= last.1 => last.1 = k,
            _ => spans.push((k1 - w, k)),
        }
        k += 1;
    }

    let mut events = Vec::with_capacity(spans.len());
    for (first, last) in spans {
        let representative = modal_state(&records[first..=last]);
        let margin = match scorer {
            Some(s) => Some(margin_report(s, &representative)?),
            None => None,
        };
        events.push(TrapEvent {
            start: records[first].0,
            end: records[last].0,
            duration: records[last].0 - records[first].0,
            representative: representative.into_ids(),
            margin,
            params: params.clone(),
        });
    }
    Ok(events)
}

/// Decodes `trajectory` and runs [`detect_traps`].
pub fn detect_traps_in(
    trajectory: &Trajectory,
    distance: DistanceFn<'_>,
    params: &TrapParams,
    scorer: Option<&dyn Scorer>,
) -> Result<Vec<TrapEvent>> {
    detect_traps(&trajectory.states()?, distance, params, scorer)
}

fn modal_state(records: &[(u64, SeqState)]) -> SeqState {
    let mut counts: HashMap<&[TokenId], (usize, usize)> = HashMap::new();
    for (k, (_, x)) in records.iter().enumerate() {
        counts.entry(x.ids()).or_insert((0, k)).0 += 1;
    }
    let (_, &(_, first)) = counts
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("non-empty run");
    records[first].1.clone()
}

/// CSV with columns `start,end,duration,min_gap,mean_gap,all_argmax`.
pub fn write_traps_csv<W: Write>(events: &[TrapEvent], mut out: W) -> Result<()> {
    writeln!(out, "start,end,duration,min_gap,mean_gap,all_argmax")?;
    for e in events {
        let (min, mean, all) = match &e.margin {
            Some(m) => (
                m.min_gap.to_string(),
                m.mean_gap.to_string(),
                m.all_argmax.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.start, e.end, e.duration, min, mean, all
        )?;
    }
    Ok(())
}
