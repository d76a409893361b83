//! Basins: sets of states a chain is expected to linger in.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::{SeqState, TokenId};

/// A set of states with decidable membership.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasinSpec {
    /// States in which at least `⌈fraction · N⌉` of the `N` non-frozen
    /// sites hold `target`.
    TokenCount { target: TokenId, fraction: f64 },
    /// States within Hamming distance `radius` of `center`.
    HammingBall { center: Vec<TokenId>, radius: usize },
    /// An explicit list of states.
    Explicit {
        states: BTreeSet<Vec<TokenId>>,
        #[serde(default)]
        description: String,
    },
}

impl BasinSpec {
    pub fn token_count(target: TokenId, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::domain(format!(
                "basin fraction must lie in (0, 1], got {fraction}"
            )));
        }
        Ok(BasinSpec::TokenCount { target, fraction })
    }

    pub fn hamming_ball(center: Vec<TokenId>, radius: usize) -> Self {
        BasinSpec::HammingBall { center, radius }
    }

    pub fn explicit<I: IntoIterator<Item = Vec<TokenId>>>(
        states: I,
        description: impl Into<String>,
    ) -> Self {
        BasinSpec::Explicit {
            states: states.into_iter().collect(),
            description: description.into(),
        }
    }

    pub fn description(&self) -> String {
        match self {
            BasinSpec::TokenCount { target, fraction } => {
                format!("count(token {target}) >= {fraction} N")
            }
            BasinSpec::HammingBall { center, radius } => format!("hamming({center:?}) <= {radius}"),
            BasinSpec::Explicit {
                states,
                description,
            } if description.is_empty() => {
                format!("{} explicit states", states.len())
            }
            BasinSpec::Explicit { description, .. } => description.clone(),
        }
    }

    /// Minimal number of target tokens for a token-count basin with `free` sites.
    pub fn count_threshold(fraction: f64, free: usize) -> usize {
        // guard against products such as 0.9 · 100 = 90.00000000000001
        ((fraction * free as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn contains(&self, x: &SeqState) -> bool {
        match self {
            BasinSpec::TokenCount { target, fraction } => {
                x.count_free(*target) >= Self::count_threshold(*fraction, x.free_positions().len())
            }
            BasinSpec::HammingBall { center, radius } => {
                center.len() == x.len()
                    && x.ids().iter().zip(center).filter(|(a, b)| a != b).count() <= *radius
            }
            BasinSpec::Explicit { states, .. } => states.contains(x.ids()),
        }
    }

    /// Tokens `a ≠ x_i` with `x^{(i→a)}` outside the basin, for `x` in the basin.
    pub fn exit_tokens(&self, x: &SeqState, i: usize, vocab_size: usize) -> Vec<TokenId> {
        if x.is_frozen(i) {
            return Vec::new();
        }
        let current = x.get(i);
        let all_others = || {
            (0..vocab_size as TokenId)
                .filter(|&a| a != current)
                .collect()
        };
        match self {
            BasinSpec::TokenCount { target, fraction } => {
                let threshold = Self::count_threshold(*fraction, x.free_positions().len());
                if current == *target && x.count_free(*target) == threshold {
                    all_others()
                } else {
                    Vec::new()
                }
            }
            BasinSpec::HammingBall { center, radius } => {
                let d = x.ids().iter().zip(center).filter(|(a, b)| a != b).count();
                if d == *radius && current == center[i] {
                    all_others()
                } else {
                    Vec::new()
                }
            }
            BasinSpec::Explicit { states, .. } => {
                let mut ids = x.ids().to_vec();
                (0..vocab_size as TokenId)
                    .filter(|&a| a != current)
                    .filter(|&a| {
                        ids[i] = a;
                        !states.contains(&ids)
                    })
                    .collect()
            }
        }
    }
}
