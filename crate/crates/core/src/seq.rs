//! Vocabulary and chain states.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id. Ids index into a [`Vocabulary`].
pub type TokenId = u32;

/// Ordered list of distinct token strings; token id `i` is `tokens[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::input(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut seen = HashSet::with_capacity(tokens.len());
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(Error::input(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        Ok(Self { tokens })
    }

    /// Vocabulary of `size` placeholder tokens named `t0`, `t1`, ...
    pub fn synthetic(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("t{i}")).collect())
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| i as TokenId)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Positions excluded from updates, shared between copies of a state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenSet {
    mask: Vec<bool>,
    free: Vec<usize>,
}

impl FrozenSet {
    fn new(len: usize, frozen: &[usize]) -> Result<Self> {
        let mut mask = vec![false; len];
        for &p in frozen {
            if p >= len {
                return Err(Error::input(format!(
                    "frozen position {p} out of range for length {len}"
                )));
            }
            mask[p] = true;
        }
        let free: Vec<usize> = (0..len).filter(|&p| !mask[p]).collect();
        if free.is_empty() {
            return Err(Error::input("every position is frozen"));
        }
        Ok(Self { mask, free })
    }

    pub fn is_frozen(&self, pos: usize) -> bool {
        self.mask.get(pos).copied().unwrap_or(false)
    }

    /// Non-frozen positions in increasing order.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn frozen_positions(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&p| self.mask[p]).collect()
    }
}

/// A chain state: a fixed-length token sequence plus its frozen positions.
///
/// Cloning is cheap for the frozen set (it is reference counted), so two
/// copies of a state always agree on which positions may move.
#[derive(Clone, PartialEq, Eq)]
pub struct SeqState {
    ids: Vec<TokenId>,
    frozen: Arc<FrozenSet>,
}

impl SeqState {
    /// State with no frozen positions.
    pub fn new(ids: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        Self::with_frozen(ids, &[], vocab_size)
    }

    pub fn with_frozen(ids: Vec<TokenId>, frozen: &[usize], vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::input("state must have at least one position"));
        }
        if let Some((p, &id)) = ids
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= vocab_size)
        {
            return Err(Error::input(format!(
                "token id {id} at position {p} is outside a vocabulary of size {vocab_size}"
            )));
        }
        let frozen = Arc::new(FrozenSet::new(ids.len(), frozen)?);
        Ok(Self { ids, frozen })
    }

    /// A state sharing this state's frozen set but holding other tokens.
    pub fn with_ids(&self, ids: Vec<TokenId>) -> Result<Self> {
        if ids.len() != self.ids.len() {
            return Err(Error::input(format!(
                "length mismatch: {} vs {}",
                ids.len(),
                self.ids.len()
            )));
        }
        Ok(Self {
            ids,
            frozen: Arc::clone(&self.frozen),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn get(&self, pos: usize) -> TokenId {
        self.ids[pos]
    }

    /// Overwrites one token. Callers are responsible for the id being in range.
    pub fn set(&mut self, pos: usize, token: TokenId) {
        self.ids[pos] = token;
    }

    /// Copy of this state with position `pos` replaced by `token`.
    pub fn replaced(&self, pos: usize, token: TokenId) -> Self {
        let mut out = self.clone();
        out.ids[pos] = token;
        out
    }

    pub fn frozen(&self) -> &FrozenSet {
        &self.frozen
    }

    pub fn is_frozen(&self, pos: usize) -> bool {
        self.frozen.is_frozen(pos)
    }

    pub fn free_positions(&self) -> &[usize] {
        self.frozen.free()
    }

    pub fn same_frozen(&self, other: &SeqState) -> bool {
        Arc::ptr_eq(&self.frozen, &other.frozen) || *self.frozen == *other.frozen
    }

    /// True when the two states agree everywhere except possibly at `pos`.
    pub fn same_context(&self, other: &SeqState, pos: usize) -> bool {
        self.ids.len() == other.ids.len()
            && self
                .ids
                .iter()
                .zip(&other.ids)
                .enumerate()
                .all(|(k, (a, b))| k == pos || a == b)
    }

    /// Counts the non-frozen positions holding `token`.
    pub fn count_free(&self, token: TokenId) -> usize {
        self.frozen
            .free()
            .iter()
            .filter(|&&p| self.ids[p] == token)
            .count()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.ids
    }
}

impl fmt::Debug for SeqState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let frozen = self.frozen.frozen_positions();
        if frozen.is_empty() {
            write!(f, "SeqState({:?})", self.ids)
        } else {
            write!(f, "SeqState({:?}, frozen={:?})", self.ids, frozen)
        }
    }
}

/// Mixed-radix index of `ids` in `V^n` with position 0 as the least significant digit.
pub fn state_index(ids: &[TokenId], vocab_size: usize) -> usize {
    ids.iter()
        .rev()
        .fold(0usize, |acc, &t| acc * vocab_size + t as usize)
}

/// Inverse of [`state_index`].
pub fn ids_from_index(mut index: usize, len: usize, vocab_size: usize) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(len);
    for _ in 0..len {
        ids.push((index % vocab_size) as TokenId);
        index /= vocab_size;
    }
    ids
}

/// `V^n` when it fits in a `u128`, otherwise `None`.
pub fn state_count(vocab_size: usize, len: usize) -> Option<u128> {
    (vocab_size as u128).checked_pow(u32::try_from(len).ok()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_rejects_small_or_duplicate() {
        assert!(Vocabulary::new(vec!["a".into()]).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
        let v = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(v.token(1), Some("b"));
        assert_eq!(v.id_of("a"), Some(0));
    }

    #[test]
    fn state_validation() {
        assert!(SeqState::new(vec![0, 3], 3).is_err());
        assert!(SeqState::new(vec![], 3).is_err());
        assert!(SeqState::with_frozen(vec![0, 1], &[0, 1], 3).is_err());
        assert!(SeqState::with_frozen(vec![0, 1], &[2], 3).is_err());
        let s = SeqState::with_frozen(vec![0, 1, 2], &[0], 3).unwrap();
        assert_eq!(s.free_positions(), &[1, 2]);
        assert!(s.is_frozen(0));
    }

    #[test]
    fn index_round_trip() {
        for idx in 0..81 {
            let ids = ids_from_index(idx, 4, 3);
            assert_eq!(state_index(&ids, 3), idx);
        }
        assert_eq!(state_index(&[1, 0], 2), 1);
        assert_eq!(state_count(4, 6), Some(4096));
    }
}
