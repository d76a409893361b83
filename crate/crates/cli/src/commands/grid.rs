use std::io::Write;

use glauber::dynamics::{
    coupling_meeting_time, hitting_time, write_grid_csv, GlauberKernel, GridRow,
};
use glauber::stats::median;

use super::{finish_cells, none_done, run_cells, Ctx};
use crate::output::{cell_dir, Output};

/// Meeting times of maximally coupled chains over the `(τ, n)` grid.
pub fn couple(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let cfg = ctx.config;
    let keys = ctx.replica_keys();
    let (steps, error) = run_cells(&keys, |&(tau, n, r)| {
        let scorer = ctx.scorer(n)?;
        let kernel = GlauberKernel::new(scorer.as_ref(), tau)?;
        let (x0, y0) = ctx.start_pair(n, scorer.vocab_size(), r)?;
        let result = coupling_meeting_time(&x0, &y0, &kernel, cfg.chain.steps, cfg.seed, r, false)?;
        Ok(result.meeting_step)
    });
    if none_done(&steps) {
        return finish_cells(error);
    }
    write_grid(ctx, out, &keys, steps, "meeting_step")?;
    finish_cells(error)
}

/// Steps until the chain first moves `hit_radius` away from its start.
pub fn hit(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let cfg = ctx.config;
    let keys = ctx.replica_keys();
    let (steps, error) = run_cells(&keys, |&(tau, n, r)| {
        let scorer = ctx.scorer(n)?;
        let kernel = GlauberKernel::new(scorer.as_ref(), tau)?;
        let x0 = ctx.start(n, scorer.vocab_size(), r)?;
        let result = hitting_time(
            &x0,
            &kernel,
            None,
            cfg.chain.hit_radius,
            cfg.chain.steps,
            cfg.seed,
            r,
        )?;
        Ok(result.hitting_step)
    });
    if none_done(&steps) {
        return finish_cells(error);
    }
    write_grid(ctx, out, &keys, steps, "hitting_step")?;
    finish_cells(error)
}

/// Per-replica rows at the root and per cell, plus one summary row per
/// cell with the median step (timeouts counted as the budget) and the
/// timeout fraction.
fn write_grid(
    ctx: &Ctx,
    out: &mut Output,
    keys: &[(f64, usize, u64)],
    steps: Vec<Option<Option<u64>>>,
    column: &str,
) -> anyhow::Result<()> {
    let rows: Vec<GridRow> = keys
        .iter()
        .zip(steps)
        .filter_map(|(&(tau, n, seed), step)| {
            step.map(|step| GridRow {
                tau,
                n,
                seed,
                step,
                timeout: step.is_none(),
            })
        })
        .collect();
    if rows.is_empty() {
        return Ok(());
    }
    out.write_with("grid.csv", |buf| Ok(write_grid_csv(&rows, column, buf)?))?;
    let budget = ctx.config.chain.steps;
    let mut summary = Vec::new();
    writeln!(summary, "tau,n,replicas,median_{column},timeout_fraction")?;
    for (tau, n) in ctx.cells() {
        let cell: Vec<GridRow> = rows
            .iter()
            .filter(|r| r.tau == tau && r.n == n)
            .cloned()
            .collect();
        if cell.is_empty() {
            continue;
        }
        out.write_with(&format!("{}/replicas.csv", cell_dir(tau, n)), |buf| {
            Ok(write_grid_csv(&cell, column, buf)?)
        })?;
        let censored: Vec<f64> = cell
            .iter()
            .map(|r| r.step.unwrap_or(budget) as f64)
            .collect();
        let timeouts = cell.iter().filter(|r| r.timeout).count();
        writeln!(
            summary,
            "{tau},{n},{},{},{}",
            cell.len(),
            median(&censored),
            timeouts as f64 / cell.len() as f64
        )?;
    }
    out.write("summary.csv", summary)
}
