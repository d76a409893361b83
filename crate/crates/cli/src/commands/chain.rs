use std::io::{BufRead, Write};

use glauber::dynamics::{
    default_distance, run_chain_with_rng, GlauberKernel, HammingFromStart, MinScoreGap, Observer,
    RunOptions, Snapshot, TokenFraction, Trajectory, TrajectoryRecord,
};
use glauber::metastability::{detect_traps_in, write_traps_csv, TrapEvent, TrapParams};
use glauber::rng::{substream, StreamRole};

use super::{csv_float, finish_cells, none_done, run_cells, Ctx};
use crate::output::{cell_dir, Output};

fn run_options(ctx: &Ctx) -> RunOptions {
    RunOptions {
        steps: ctx.config.chain.steps,
        record_every: ctx.config.chain.record_every,
        keyframe_every: ctx.config.chain.keyframe_every,
    }
}

/// One chain per `(τ, n, replica)`.
fn run_replica(ctx: &Ctx, tau: f64, n: usize, replica: u64) -> glauber::Result<Trajectory> {
    let scorer = ctx.scorer(n)?;
    let kernel = GlauberKernel::new(scorer.as_ref(), tau)?;
    let x0 = ctx.start(n, scorer.vocab_size(), replica)?;
    let track = ctx.config.chain.track_token.map(TokenFraction);
    let mut observers: Vec<&dyn Observer> = vec![&HammingFromStart, &MinScoreGap];
    if let Some(t) = &track {
        observers.push(t);
    }
    let mut rng = substream(ctx.config.seed, replica, StreamRole::Shared);
    run_chain_with_rng(&x0, &kernel, run_options(ctx), &observers, &mut rng)
}

/// A run that stopped on a scorer error is written and then reported as a
/// transport failure; only remote scorers fail mid-run.
fn aborted_error(trajectories: &[Option<Trajectory>]) -> Option<glauber::Error> {
    trajectories
        .iter()
        .flatten()
        .find_map(|t| t.aborted.clone())
        .map(|msg| glauber::Error::Transport(format!("chain stopped early: {msg}")))
}

pub fn run(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let keys = ctx.replica_keys();
    let (trajectories, error) = run_cells(&keys, |&(tau, n, r)| run_replica(ctx, tau, n, r));
    if none_done(&trajectories) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    writeln!(
        summary,
        "tau,n,replica,records,last_step,final_hamming,final_min_gap,aborted"
    )?;
    for (&(tau, n, r), t) in keys.iter().zip(&trajectories) {
        let Some(t) = t else { continue };
        out.write_with(
            &format!("{}/trajectory_r{r}.ndjson", cell_dir(tau, n)),
            |buf| Ok(t.write_ndjson(buf)?),
        )?;
        let last = t.records.last();
        let observable = |name: &str| last.and_then(|rec| rec.observables.get(name).copied());
        writeln!(
            summary,
            "{tau},{n},{r},{},{},{},{},{}",
            t.records.len(),
            last.map(|rec| rec.step).unwrap_or(0),
            csv_float(observable("hamming_from_start")),
            csv_float(observable("min_gap")),
            t.aborted.is_some() as u8
        )?;
    }
    out.write("summary.csv", summary)?;
    let aborted = aborted_error(&trajectories);
    finish_cells(error.or(aborted))
}

fn trap_params(ctx: &Ctx) -> TrapParams {
    TrapParams {
        window: ctx.config.traps.window,
        threshold: ctx.config.traps.threshold,
        ..TrapParams::default()
    }
}

/// Traps in a trajectory file, or in fresh chains over the grid.
pub fn traps(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    match &ctx.config.traps.trajectory {
        Some(path) => traps_in_file(ctx, out, path),
        None => traps_in_fresh_runs(ctx, out),
    }
}

fn traps_in_file(ctx: &Ctx, out: &mut Output, path: &std::path::Path) -> anyhow::Result<()> {
    let text = std::fs::read(path)
        .map_err(|e| glauber::Error::Input(format!("{}: {e}", path.display())))?;
    let first = text
        .lines()
        .map_while(Result::ok)
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| glauber::Error::Input(format!("{} has no records", path.display())))?;
    let record: TrajectoryRecord = serde_json::from_str(&first)
        .map_err(|e| glauber::Error::Input(format!("{}: bad record: {e}", path.display())))?;
    let Snapshot::Ids(ids) = record.snapshot else {
        return Err(glauber::Error::Input(format!(
            "{}: first record is not a keyframe",
            path.display()
        ))
        .into());
    };
    let scorer = ctx.scorer(ids.len())?;
    let frozen = ctx
        .given_states(scorer.vocab_size())?
        .map(|s| s[0].frozen().frozen_positions())
        .unwrap_or_default();
    let t = Trajectory::read_ndjson(
        &text[..],
        ctx.config.chain.record_every,
        frozen,
        scorer.vocab_size(),
    )?;
    let events = detect_traps_in(
        &t,
        &default_distance,
        &trap_params(ctx),
        Some(scorer.as_ref()),
    )?;
    write_events(out, "", &events)
}

fn write_events(out: &mut Output, prefix: &str, events: &[TrapEvent]) -> anyhow::Result<()> {
    out.write_with(&format!("{prefix}traps.csv"), |buf| {
        Ok(write_traps_csv(events, buf)?)
    })?;
    out.write_json(&format!("{prefix}traps.json"), &events)
}

fn traps_in_fresh_runs(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let keys = ctx.replica_keys();
    let params = trap_params(ctx);
    let (results, error) = run_cells(&keys, |&(tau, n, r)| {
        let t = run_replica(ctx, tau, n, r)?;
        let scorer = ctx.scorer(n)?;
        let events = detect_traps_in(&t, &default_distance, &params, Some(scorer.as_ref()))?;
        Ok((events, t.aborted))
    });
    if none_done(&results) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    writeln!(summary, "tau,n,replica,traps,longest,total_duration")?;
    let mut aborted = None;
    for (&(tau, n, r), res) in keys.iter().zip(&results) {
        let Some((events, stopped)) = res else {
            continue;
        };
        write_events(out, &format!("{}/r{r}_", cell_dir(tau, n)), events)?;
        writeln!(
            summary,
            "{tau},{n},{r},{},{},{}",
            events.len(),
            events.iter().map(|e| e.duration).max().unwrap_or(0),
            events.iter().map(|e| e.duration).sum::<u64>()
        )?;
        if let (None, Some(msg)) = (&aborted, stopped) {
            aborted = Some(glauber::Error::Transport(format!(
                "chain stopped early: {msg}"
            )));
        }
    }
    out.write("summary.csv", summary)?;
    finish_cells(error.or(aborted))
}
