use std::io::Write;

use glauber::bounds::{
    exact_chain_analysis, influence_and_oscillation, mixing_upper_bound, AnalysisExport,
    ChainOptions, ContextSource, EstimateMode,
};
use glauber::incompatibility::{run_rectangle_campaign, CampaignOptions, RectangleCampaign};
use glauber::SeqState;
use serde::Serialize;

use super::{csv_float, finish_cells, none_done, run_cells, Ctx};
use crate::config::InfluenceMode;
use crate::output::{cell_dir, Output};
use crate::states::{random_states, write_states};

/// Base states: the state file, or `count` random ones (which are written
/// out so the run can be inspected).
fn bases(
    ctx: &Ctx,
    n: usize,
    vocab_size: usize,
    count: usize,
) -> glauber::Result<(Vec<SeqState>, bool)> {
    match ctx.given_states(vocab_size)? {
        Some(s) => Ok((s, false)),
        None => Ok((random_states(n, vocab_size, ctx.config.seed, count)?, true)),
    }
}

/// Rectangle campaigns over the `(τ, n)` grid.
pub fn rect(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let cfg = ctx.config;
    let cells = ctx.cells();
    let (campaigns, error) = run_cells(&cells, |&(tau, n)| {
        let scorer = ctx.scorer(n)?;
        let (states, drawn) = bases(ctx, n, scorer.vocab_size(), cfg.rect.random_states)?;
        let options = CampaignOptions {
            count: cfg.rect.count,
            k: cfg.rect.k,
            tau,
            seed: cfg.seed,
        };
        let campaign = run_rectangle_campaign(scorer.as_ref(), &states, options)?;
        Ok((campaign, drawn.then_some(states)))
    });
    if none_done(&campaigns) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    writeln!(
        summary,
        "tau,n,count,mean_abs_delta,median,q90,max,nonzero,p_value,influence_spearman"
    )?;
    for (&(tau, n), c) in cells.iter().zip(&campaigns) {
        let Some((campaign, drawn)) = c else { continue };
        write_campaign(out, &cell_dir(tau, n), campaign, drawn.as_deref())?;
        let s = &campaign.summary;
        writeln!(
            summary,
            "{tau},{n},{},{},{},{},{},{},{},{}",
            s.count,
            s.mean_abs_delta,
            s.median,
            s.q90,
            s.max,
            s.nonzero,
            s.p_value,
            s.influence_spearman
        )?;
    }
    out.write("summary.csv", summary)?;
    finish_cells(error)
}

fn write_campaign(
    out: &mut Output,
    dir: &str,
    campaign: &RectangleCampaign,
    drawn: Option<&[SeqState]>,
) -> anyhow::Result<()> {
    out.write_with(&format!("{dir}/rectangles.csv"), |buf| {
        Ok(campaign.write_csv(buf)?)
    })?;
    out.write_with(&format!("{dir}/summary.json"), |buf| {
        campaign.write_summary_json(&mut *buf)?;
        buf.push(b'\n');
        Ok(())
    })?;
    if let Some(states) = drawn {
        out.write_with(&format!("{dir}/states.ndjson"), |buf| {
            Ok(write_states(states, buf)?)
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct InfluenceReport {
    tau: f64,
    n: usize,
    mode: EstimateMode,
    alpha: f64,
    mean_alpha: f64,
    max_oscillation_row_sum: f64,
    /// `max_i Σ_j Δ_ij < 4τ`.
    contraction_certified: bool,
    /// Upper bound on `t_mix(1/4)` when `α < 1`.
    mixing_upper_bound: Option<f64>,
    c: Vec<Vec<f64>>,
    mean: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

/// Influence and oscillation matrices over the `(τ, n)` grid.
pub fn influence(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let cfg = &ctx.config.influence;
    let cells = ctx.cells();
    let (reports, error) = run_cells(&cells, |&(tau, n)| {
        let scorer = ctx.scorer(n)?;
        let based;
        let source = match cfg.mode {
            InfluenceMode::Exact => ContextSource::Exhaustive {
                n,
                max_states: cfg.max_states as u128,
            },
            InfluenceMode::Sampled => {
                based = bases(ctx, n, scorer.vocab_size(), cfg.random_states)?.0;
                ContextSource::Sampled {
                    bases: &based,
                    k: cfg.k,
                }
            }
        };
        let (c, d) = influence_and_oscillation(scorer.as_ref(), tau, &source)?;
        let alpha = c.alpha();
        Ok(InfluenceReport {
            tau,
            n,
            mode: c.mode,
            alpha,
            mean_alpha: c.mean_alpha(),
            max_oscillation_row_sum: d.max_row_sum(),
            contraction_certified: d.guarantees_contraction(tau),
            mixing_upper_bound: mixing_upper_bound(n, alpha, 0.25)?,
            c: c.c,
            mean: c.mean,
            delta: d.delta,
        })
    });
    if none_done(&reports) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    writeln!(
        summary,
        "tau,n,alpha,mean_alpha,max_oscillation_row_sum,contraction_certified,mixing_upper_bound"
    )?;
    for (&(tau, n), r) in cells.iter().zip(&reports) {
        let Some(r) = r else { continue };
        out.write_json(&format!("{}/influence.json", cell_dir(tau, n)), r)?;
        writeln!(
            summary,
            "{tau},{n},{},{},{},{},{}",
            r.alpha,
            r.mean_alpha,
            r.max_oscillation_row_sum,
            r.contraction_certified,
            csv_float(r.mixing_upper_bound)
        )?;
    }
    out.write("summary.csv", summary)?;
    finish_cells(error)
}

/// Exact chain analysis of every enumerable `(τ, n)` cell.
pub fn exact(ctx: &Ctx, out: &mut Output) -> anyhow::Result<()> {
    let cfg = &ctx.config.exact;
    let cells = ctx.cells();
    let options = ChainOptions {
        max_states: cfg.max_states as u128,
        eps_grid: cfg.eps.clone(),
        max_mixing_states: cfg.max_mixing_states,
        ..ChainOptions::default()
    };
    let (exports, error) = run_cells(&cells, |&(tau, n)| {
        let scorer = ctx.scorer(n)?;
        let analysis = exact_chain_analysis(scorer.as_ref(), n, tau, &options)?;
        let matrices = if cfg.with_influence {
            let source = ContextSource::Exhaustive {
                n,
                max_states: options.max_states,
            };
            Some(influence_and_oscillation(scorer.as_ref(), tau, &source)?)
        } else {
            None
        };
        let export = AnalysisExport::new(
            &analysis,
            matrices.as_ref().map(|m| &m.0),
            matrices.as_ref().map(|m| &m.1),
            cfg.top,
        );
        Ok((analysis.states(), export))
    });
    if none_done(&exports) {
        return finish_cells(error);
    }
    let mut summary = Vec::new();
    write!(
        summary,
        "tau,n,states,reversibility_defect,stationary_residual,alpha"
    )?;
    for eps in &cfg.eps {
        write!(summary, ",t_mix_{eps}")?;
    }
    writeln!(summary)?;
    for (&(tau, n), e) in cells.iter().zip(&exports) {
        let Some((states, export)) = e else { continue };
        out.write_json(&format!("{}/analysis.json", cell_dir(tau, n)), export)?;
        write!(
            summary,
            "{tau},{n},{states},{},{},{}",
            export.reversibility_defect,
            export.stationary_residual,
            csv_float(export.alpha)
        )?;
        for eps in &cfg.eps {
            let steps = export
                .t_mix_table
                .iter()
                .find(|m| m.eps == *eps)
                .and_then(|m| m.steps);
            write!(
                summary,
                ",{}",
                steps.map(|s| s.to_string()).unwrap_or_default()
            )?;
        }
        writeln!(summary)?;
    }
    out.write("summary.csv", summary)?;
    finish_cells(error)
}
