//! Glauber dynamics on finite-alphabet sequences driven by local
//! conditional scorers, with diagnostics for compatibility, mixing and
//! metastability.
//!
//! The chain state is a token sequence [`SeqState`]. A [`Scorer`] supplies
//! local scores `s_i(a; x_{-i})`; at temperature `τ` these become the
//! conditionals `p_τ(a | x_{-i}) ∝ exp(s_i(a; x_{-i})/τ)` resampled by
//! [`dynamics::GlauberKernel`].

pub mod bounds;
pub mod dist;
pub mod dynamics;
pub mod error;
pub mod incompatibility;
pub mod metastability;
pub mod rng;
pub mod scorer;
pub mod scorers;
pub mod seq;
pub mod stats;

pub use dist::{
    hamming_distance, normalized_hamming, tempered_conditional, tempered_log_conditional,
    tv_distance, ProbVector, ScoreVector,
};
pub use error::{Error, Result};
pub use scorer::{conditional, Scorer};
pub use seq::{SeqState, TokenId, Vocabulary};
