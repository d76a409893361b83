use std::io::Write;

use glauber::bounds::{escape_bound, EscapeBound};
use glauber::metastability::{
    boundary_samples, check_margin_assumption, check_margin_exhaustive, drift_report, BasinSpec,
    MarginCheck,
};
use glauber::SeqState;
use serde::Serialize;

use super::{csv_float, finish_cells, none_done, run_cells, Ctx};
use crate::config::BasinConfig;
use crate::output::{cell_dir, Output};
use crate::UsageError;

fn basin_spec(basin: &BasinConfig) -> glauber::Result<BasinSpec> {
    Ok(match basin {
        BasinConfig::TokenCount { target, fraction } => BasinSpec::token_count(*target, *fraction)?,
        BasinConfig::HammingBall { center, radius } => {
            BasinSpec::hamming_ball(center.clone(), *radius)
        }
        BasinConfig::Explicit { states } => {
            BasinSpec::explicit(states.iter().cloned(), "configured states")
        }
    })
}

/// Drift of the target count on the boundary of a token-count basin.
pub fn drift(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let BasinConfig::TokenCount { target, fraction } = ctx.config.basin else {
        return Err(UsageError::new("basin.kind: drift needs a token_count basin").into());
    };
    let samples = ctx.config.drift.samples;
    let cells = ctx.cells();
    let (reports, error) = run_cells(&cells, |&(tau, n)| {
        let scorer = ctx.scorer(n)?;
        let v = scorer.vocab_size();
        let template = match ctx.given_states(v)? {
            Some(states) => states[0].clone(),
            None => SeqState::new(vec![0; n], v)?,
        };
        let boundary = boundary_samples(&template, target, fraction, v, samples, ctx.config.seed)?;
        drift_report(scorer.as_ref(), &boundary, target, fraction, tau)
    });
    if none_done(&reports) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    writeln!(summary, "tau,n,sites,count,min,median,all_positive")?;
    for (&(tau, n), r) in cells.iter().zip(&reports) {
        let Some(r) = r else { continue };
        out.write_json(&format!("{}/drift.json", cell_dir(tau, n)), r)?;
        writeln!(
            summary,
            "{tau},{n},{},{},{},{},{}",
            r.sites, r.count, r.min, r.median, r.all_positive
        )?;
    }
    out.write("summary.csv", summary)?;
    finish_cells(error)
}

#[derive(Serialize)]
struct EscapeAt {
    tau: f64,
    #[serde(flatten)]
    bound: EscapeBound,
}

#[derive(Serialize)]
struct MarginOutput {
    n: usize,
    basin: String,
    check: MarginCheck,
    /// Escape bounds from the certified margin, one per grid temperature.
    escape_bounds: Vec<EscapeAt>,
}

/// Margin of the configured basin, exhaustively or on the basin states of
/// the state file, with the escape bounds it implies.
pub fn margin(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let cfg = &ctx.config.margin;
    if !cfg.exhaustive && ctx.config.states.is_none() {
        return Err(UsageError::new("margin.exhaustive: set it to true or pass --states").into());
    }
    let basin = basin_spec(&ctx.config.basin)?;
    let taus = &ctx.config.grid.tau;
    let ns = ctx.lengths();
    let (outputs, error) = run_cells(&ns, |&n| {
        let scorer = ctx.scorer(n)?;
        let check = match ctx.given_states(scorer.vocab_size())? {
            Some(states) if !cfg.exhaustive => {
                let members: Vec<SeqState> =
                    states.into_iter().filter(|x| basin.contains(x)).collect();
                if members.is_empty() {
                    return Err(glauber::Error::Input(
                        "no given state lies in the basin".into(),
                    ));
                }
                check_margin_assumption(scorer.as_ref(), &basin, &members, cfg.required)?
            }
            _ => check_margin_exhaustive(
                scorer.as_ref(),
                &basin,
                n,
                cfg.required,
                cfg.max_states as u128,
            )?,
        };
        let escape_bounds = match check.certified_margin {
            Some(m) if m > 0.0 => taus
                .iter()
                .map(|&tau| {
                    Ok(EscapeAt {
                        tau,
                        bound: escape_bound(scorer.vocab_size(), m, tau)?,
                    })
                })
                .collect::<glauber::Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(MarginOutput {
            n,
            basin: basin.description(),
            check,
            escape_bounds,
        })
    });
    if none_done(&outputs) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    writeln!(
        summary,
        "n,scope,checked_states,certified_margin,passed,tau,per_step_bound,t_mix_lower"
    )?;
    for (&n, o) in ns.iter().zip(&outputs) {
        let Some(o) = o else { continue };
        out.write_json(&format!("cells/n={n}/margin.json"), o)?;
        let c = &o.check;
        let scope = serde_json::to_value(c.scope)?;
        let prefix = format!(
            "{n},{},{},{},{}",
            scope.as_str().unwrap_or_default(),
            c.checked_states,
            csv_float(c.certified_margin),
            c.passed
        );
        if o.escape_bounds.is_empty() {
            writeln!(summary, "{prefix},,,")?;
        }
        for e in &o.escape_bounds {
            writeln!(
                summary,
                "{prefix},{},{},{}",
                e.tau, e.bound.per_step, e.bound.t_mix_lower
            )?;
        }
    }
    out.write("summary.csv", summary)?;
    finish_cells(error)
}
