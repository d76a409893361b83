//! Closed-form bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contraction mixing bound `n/(1−α) · (ln n + ln 1/ε)`.
///
/// Returns `Ok(None)` when `α ≥ 1`, where the contraction argument gives
/// nothing.
pub fn mixing_upper_bound(n: usize, alpha: f64, eps: f64) -> Result<Option<f64>> {
    if n == 0 {
        return Err(Error::domain("sequence length must be at least 1"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::domain(format!(
            "influence sum must be non-negative, got {alpha}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!(
            "mixing accuracy must lie in (0, 1), got {eps}"
        )));
    }
    if alpha >= 1.0 {
        return Ok(None);
    }
    let n = n as f64;
    Ok(Some(n / (1.0 - alpha) * (n.ln() + (1.0 / eps).ln())))
}

/// Low-temperature escape bounds for a basin with margin `Δ★`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeBound {
    /// Upper bound on `P_τ(x, Bᶜ)` for every `x` in the basin: `|V| e^{−Δ★/τ}`.
    pub per_step: f64,
    /// Upper bound on the basin conductance (same value as `per_step`).
    pub conductance: f64,
    /// Lower bound `e^{Δ★/τ} / (4|V|)` on `t_mix(1/4)`.
    pub t_mix_lower: f64,
}

pub fn escape_bound(vocab_size: usize, margin: f64, tau: f64) -> Result<EscapeBound> {
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(Error::domain(format!(
            "margin must be positive, got {margin}"
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let v = vocab_size as f64;
    let per_step = v * (-margin / tau).exp();
    Ok(EscapeBound {
        per_step,
        conductance: per_step,
        t_mix_lower: (margin / tau).exp() / (4.0 * v),
    })
}
