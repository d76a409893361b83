use crate::dist::ScoreVector;
use crate::error::{Error, Result};
use crate::scorer::{check_position, Scorer};
use crate::seq::{SeqState, TokenId, Vocabulary};

/// Context-free scorer: every site uses the same fixed score vector.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentScorer {
    vocab: Vocabulary,
    scores: Vec<f64>,
}

impl IndependentScorer {
    pub fn new(vocab: Vocabulary, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != vocab.size() {
            return Err(Error::input(format!(
                "{} scores for a vocabulary of {}",
                scores.len(),
                vocab.size()
            )));
        }
        let scores = ScoreVector::new(scores)?.into_inner();
        Ok(Self { vocab, scores })
    }

    /// All scores zero: every conditional is uniform.
    pub fn uniform(v: usize) -> Result<Self> {
        Self::new(Vocabulary::synthetic(v)?, vec![0.0; v])
    }

    /// Scores giving `p(target | ·) = prob` at temperature 1, the remaining
    /// mass spread evenly over the other tokens.
    pub fn with_target_probability(v: usize, target: TokenId, prob: f64) -> Result<Self> {
        if target as usize >= v {
            return Err(Error::input(format!(
                "target {target} outside vocabulary of {v}"
            )));
        }
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::input(format!(
                "target probability must be in (0, 1), got {prob}"
            )));
        }
        let mut scores = vec![0.0; v];
        scores[target as usize] = (prob * (v - 1) as f64 / (1.0 - prob)).ln();
        Self::new(Vocabulary::synthetic(v)?, scores)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl Scorer for IndependentScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        check_position(state, pos, None)?;
        Ok(ScoreVector::from_finite(self.scores.clone()))
    }

    fn name(&self) -> String {
        format!("independent(V={})", self.vocab.size())
    }
}
