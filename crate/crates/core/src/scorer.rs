//! The local scorer contract.

use crate::dist::{tempered_conditional, ProbVector, ScoreVector};
use crate::error::{Error, Result};
use crate::seq::{SeqState, TokenId, Vocabulary};

/// Source of local score vectors `s_i(·; x_{-i})`.
///
/// Implementations must be deterministic and must not look at the token
/// currently at `pos`: two states that agree everywhere except at `pos`
/// get identical scores there. Scores are natural-log units before
/// temperature.
pub trait Scorer: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector>;

    /// Scores for several `(state, position)` queries. Remote backends
    /// override this to send one batched request.
    fn local_scores_batch(&self, queries: &[(&SeqState, usize)]) -> Result<Vec<ScoreVector>> {
        queries
            .iter()
            .map(|&(state, pos)| self.local_scores(state, pos))
            .collect()
    }

    /// Token used as the mask sentinel, if the backend has one. Sampling
    /// helpers never propose it as a replacement.
    fn mask_id(&self) -> Option<TokenId> {
        None
    }

    /// Short identifier used in reports.
    fn name(&self) -> String;

    fn vocab_size(&self) -> usize {
        self.vocab().size()
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        (**self).local_scores(state, pos)
    }
    fn local_scores_batch(&self, queries: &[(&SeqState, usize)]) -> Result<Vec<ScoreVector>> {
        (**self).local_scores_batch(queries)
    }
    fn mask_id(&self) -> Option<TokenId> {
        (**self).mask_id()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        (**self).local_scores(state, pos)
    }
    fn local_scores_batch(&self, queries: &[(&SeqState, usize)]) -> Result<Vec<ScoreVector>> {
        (**self).local_scores_batch(queries)
    }
    fn mask_id(&self) -> Option<TokenId> {
        (**self).mask_id()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Tempered conditional `p_τ(· | x_{-pos})` for one position.
pub fn conditional<S: Scorer + ?Sized>(
    scorer: &S,
    state: &SeqState,
    pos: usize,
    tau: f64,
) -> Result<ProbVector> {
    tempered_conditional(&scorer.local_scores(state, pos)?, tau)
}

pub(crate) fn check_position(
    state: &SeqState,
    pos: usize,
    expected_len: Option<usize>,
) -> Result<()> {
    if let Some(n) = expected_len {
        if state.len() != n {
            return Err(Error::input(format!(
                "state has length {}, scorer expects {n}",
                state.len()
            )));
        }
    }
    if pos >= state.len() {
        return Err(Error::input(format!(
            "position {pos} out of range for length {}",
            state.len()
        )));
    }
    Ok(())
}
