//! Parallel grids of meeting-time and hitting-time cells.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One grid cell result, keyed by `(tau, n, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
    pub step: Option<u64>,
    pub timeout: bool,
}

/// Evaluates `cell(tau, n, seed)` for every key in parallel. Rows come back
/// sorted by key regardless of scheduling.
pub fn run_grid<F>(taus: &[f64], ns: &[usize], seeds: &[u64], cell: F) -> Result<Vec<GridRow>>
where
    F: Fn(f64, usize, u64) -> Result<Option<u64>> + Sync,
{
    let keys: Vec<(f64, usize, u64)> = taus
        .iter()
        .flat_map(|&t| {
            ns.iter()
                .flat_map(move |&n| seeds.iter().map(move |&s| (t, n, s)))
        })
        .collect();
    let mut rows = keys
        .par_iter()
        .map(|&(tau, n, seed)| {
            let step = cell(tau, n, seed)?;
            Ok(GridRow {
                tau,
                n,
                seed,
                step,
                timeout: step.is_none(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.tau
            .total_cmp(&b.tau)
            .then(a.n.cmp(&b.n))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

/// Writes rows as CSV with header `tau,n,seed,<step_column>,timeout_flag`.
pub fn write_grid_csv<W: Write>(rows: &[GridRow], step_column: &str, mut out: W) -> Result<()> {
    writeln!(out, "tau,n,seed,{step_column},timeout_flag")?;
    for r in rows {
        let step = r.step.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.tau, r.n, r.seed, step, r.timeout as u8
        )?;
    }
    Ok(())
}
