//! Newline-delimited JSON protocol spoken between the engine and a scoring
//! server.
//!
//! ```text
//! → {"op":"meta"}
//! ← {"vocab_size":30522,"mask_id":103,"frozen_suggestion":[101,102]}
//! → {"op":"scores","id":7,"tokens":[...],"pos":3}
//! ← {"id":7,"scores":[...]}
//! → {"op":"scores_batch","id":8,"items":[{"tokens":[...],"pos":1},...]}
//! ← {"id":8,"results":[[...],...]}
//! ← {"id":9,"error":"message"}
//! ```
//!
//! Scores are raw natural-log logits, before temperature. `frozen_suggestion`
//! lists token ids (delimiters) whose positions should be frozen.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seq::{SeqState, TokenId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub tokens: Vec<TokenId>,
    pub pos: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Meta {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
    Scores {
        id: u64,
        tokens: Vec<TokenId>,
        pos: usize,
    },
    ScoresBatch {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        items: Vec<BatchItem>,
    },
}

/// Any server message; which fields are present depends on the request.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_suggestion: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn error(id: Option<u64>, msg: impl Into<String>) -> Self {
        Self {
            id,
            error: Some(msg.into()),
            ..Self::default()
        }
    }
}

/// Serves `scorer` over the protocol until the reader reaches end of input.
///
/// Tokens at the scored position are replaced before scoring, so requests
/// may carry `mask_id` there even when it lies outside the vocabulary.
pub fn serve<S, R, W>(scorer: &S, mask_id: TokenId, reader: R, mut writer: W) -> Result<()>
where
    S: Scorer + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                Response::error(id, format!("bad request: {e}"))
            }
            Ok(Request::Meta { id }) => Response {
                id,
                vocab_size: Some(scorer.vocab_size()),
                mask_id: Some(mask_id),
                frozen_suggestion: Some(Vec::new()),
                ..Response::default()
            },
            Ok(Request::Scores { id, tokens, pos }) => match score_item(scorer, &tokens, pos) {
                Ok(s) => Response {
                    id: Some(id),
                    scores: Some(s),
                    ..Response::default()
                },
                Err(e) => Response::error(Some(id), e.to_string()),
            },
            Ok(Request::ScoresBatch { id, items }) => {
                let results: Result<Vec<Vec<f64>>> = items
                    .iter()
                    .map(|it| score_item(scorer, &it.tokens, it.pos))
                    .collect();
                match results {
                    Ok(r) => Response {
                        id,
                        results: Some(r),
                        ..Response::default()
                    },
                    Err(e) => Response::error(id, e.to_string()),
                }
            }
        };
        // one write per response line keeps small-packet delays off sockets
        let mut line = serde_json::to_vec(&response).map_err(std::io::Error::from)?;
        line.push(b'\n');
        writer.write_all(&line)?;
        writer.flush()?;
    }
    Ok(())
}

fn score_item<S: Scorer + ?Sized>(scorer: &S, tokens: &[TokenId], pos: usize) -> Result<Vec<f64>> {
    let v = scorer.vocab_size();
    if pos >= tokens.len() {
        return Err(Error::input(format!(
            "pos {pos} out of range for {} tokens",
            tokens.len()
        )));
    }
    if let Some((k, t)) = tokens
        .iter()
        .enumerate()
        .find(|&(k, &t)| k != pos && t as usize >= v)
    {
        return Err(Error::input(format!(
            "token {t} at index {k} outside vocabulary of {v}"
        )));
    }
    let mut ids = tokens.to_vec();
    ids[pos] = 0;
    let state = SeqState::new(ids, v)?;
    Ok(scorer.local_scores(&state, pos)?.into_inner())
}
