//! Explicit score tables covering every context.
//!
//! File layout (all integers and floats little-endian):
//!
//! | offset | size | content                                  |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `GTAB`                             |
//! | 4      | 4    | format version, `u32` (currently 1)      |
//! | 8      | 8    | vocabulary size `V`, `u64`               |
//! | 16     | 8    | sequence length `n`, `u64`               |
//! | 24     | 8·n·V^n | scores, `f64`                         |
//!
//! Scores are ordered site-major, then context, then token: entry
//! `(i, c, a)` sits at index `(i · V^(n−1) + c) · V + a`. The context index
//! `c` of `x_{-i}` is the mixed-radix number formed by the tokens at
//! positions `k ≠ i`, lowest position least significant.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::dist::ScoreVector;
use crate::error::{Error, Result};
use crate::scorer::{check_position, Scorer};
use crate::seq::{ids_from_index, state_count, SeqState, TokenId, Vocabulary};

const MAGIC: &[u8; 4] = b"GTAB";
const VERSION: u32 = 1;

/// Largest `V^n` a table may cover.
pub const TABULAR_MAX_STATES: u128 = 1 << 17;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularScorer {
    n: usize,
    vocab: Vocabulary,
    contexts: usize,
    table: Vec<f64>,
}

/// Index of the context `x_{-pos}` among the `V^(n−1)` contexts of site `pos`.
pub fn context_index(ids: &[TokenId], pos: usize, vocab_size: usize) -> usize {
    ids.iter()
        .enumerate()
        .rev()
        .filter(|&(k, _)| k != pos)
        .fold(0usize, |acc, (_, &t)| acc * vocab_size + t as usize)
}

/// A full state whose context at `pos` is `context`, with token 0 at `pos`.
pub fn state_from_context(context: usize, pos: usize, n: usize, vocab_size: usize) -> Vec<TokenId> {
    let rest = ids_from_index(context, n - 1, vocab_size);
    let mut ids = Vec::with_capacity(n);
    ids.extend_from_slice(&rest[..pos]);
    ids.push(0);
    ids.extend_from_slice(&rest[pos..]);
    ids
}

fn check_capacity(n: usize, v: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::input("table needs at least one site"));
    }
    let states = state_count(v, n).unwrap_or(u128::MAX);
    if states > TABULAR_MAX_STATES {
        return Err(Error::capacity(
            "tabular scorer states V^n",
            states,
            TABULAR_MAX_STATES,
        ));
    }
    Ok(state_count(v, n - 1).unwrap_or(0) as usize)
}

impl TabularScorer {
    /// Builds a table by evaluating `f(site, context_state, token)`.
    pub fn from_fn<F>(n: usize, v: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[TokenId], TokenId) -> f64,
    {
        let vocab = Vocabulary::synthetic(v)?;
        let contexts = check_capacity(n, v)?;
        let mut table = Vec::with_capacity(n * contexts * v);
        for i in 0..n {
            for c in 0..contexts {
                let ids = state_from_context(c, i, n, v);
                for a in 0..v as TokenId {
                    table.push(f(i, &ids, a));
                }
            }
        }
        Self::from_table(n, vocab, table)
    }

    /// Scores drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(n: usize, v: usize, scale: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(n, v, |_, _, _| rng.random_range(-1.0..=1.0) * scale)
    }

    /// Tabulates any scorer over all contexts of length-`n` states.
    pub fn from_scorer<S: Scorer + ?Sized>(scorer: &S, n: usize) -> Result<Self> {
        let v = scorer.vocab_size();
        let contexts = check_capacity(n, v)?;
        let mut table = Vec::with_capacity(n * contexts * v);
        for i in 0..n {
            for c in 0..contexts {
                let ids = state_from_context(c, i, n, v);
                let state = SeqState::new(ids, v)?;
                table.extend_from_slice(&scorer.local_scores(&state, i)?);
            }
        }
        Self::from_table(n, scorer.vocab().clone(), table)
    }

    pub fn from_table(n: usize, vocab: Vocabulary, table: Vec<f64>) -> Result<Self> {
        let v = vocab.size();
        let contexts = check_capacity(n, v)?;
        if table.len() != n * contexts * v {
            return Err(Error::input(format!(
                "table has {} entries, expected {}",
                table.len(),
                n * contexts * v
            )));
        }
        if table.iter().any(|s| !s.is_finite()) {
            return Err(Error::input("table contains non-finite scores"));
        }
        Ok(Self {
            n,
            vocab,
            contexts,
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of contexts per site, `V^(n−1)`.
    pub fn contexts(&self) -> usize {
        self.contexts
    }

    /// Score slice for `(site, context)`.
    pub fn row(&self, site: usize, context: usize) -> &[f64] {
        let v = self.vocab.size();
        let start = (site * self.contexts + context) * v;
        &self.table[start..start + v]
    }

    pub fn row_mut(&mut self, site: usize, context: usize) -> &mut [f64] {
        let v = self.vocab.size();
        let start = (site * self.contexts + context) * v;
        &mut self.table[start..start + v]
    }

    pub fn scores_at(&self, ids: &[TokenId], pos: usize) -> &[f64] {
        self.row(pos, context_index(ids, pos, self.vocab.size()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab.size() as u64).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.table.len() * 8);
        for s in &self.table {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(Error::input("not a score table: bad magic"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::input(format!("unsupported table version {version}")));
        }
        let v = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
        let vocab = Vocabulary::synthetic(v)?;
        let contexts = check_capacity(n, v)?;
        let mut bytes = vec![0u8; n * contexts * v * 8];
        r.read_exact(&mut bytes)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::input("trailing bytes after score table"));
        }
        let table = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_table(n, vocab, table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl Scorer for TabularScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        check_position(state, pos, Some(self.n))?;
        Ok(ScoreVector::from_finite(
            self.scores_at(state.ids(), pos).to_vec(),
        ))
    }

    fn name(&self) -> String {
        format!("tabular(n={}, V={})", self.n, self.vocab.size())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::PottsGibbsScorer;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn context_index_ignores_position() {
        let a = [2, 0, 1, 1];
        let b = [2, 2, 1, 1];
        assert_eq!(context_index(&a, 1, 3), context_index(&b, 1, 3));
        for c in 0..27 {
            let ids = state_from_context(c, 2, 4, 3);
            assert_eq!(ids[2], 0);
            assert_eq!(context_index(&ids, 2, 3), c);
        }
    }

    #[test]
    fn tabulated_potts_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PottsGibbsScorer::random(3, 3, 1.0, 1.0, &mut rng).unwrap();
        let t = TabularScorer::from_scorer(&p, 3).unwrap();
        for idx in 0..27 {
            let x = SeqState::new(ids_from_index(idx, 3, 3), 3).unwrap();
            for i in 0..3 {
                assert_eq!(
                    t.local_scores(&x, i).unwrap(),
                    p.local_scores(&x, i).unwrap()
                );
            }
        }
    }

    #[test]
    fn capacity_and_format_errors() {
        assert!(matches!(
            TabularScorer::from_fn(20, 4, |_, _, _| 0.0),
            Err(Error::Capacity { .. })
        ));
        assert!(TabularScorer::read_from(&b"NOPE00000000000000000000"[..]).is_err());
        let t = TabularScorer::from_fn(2, 2, |_, _, _| 1.0).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(TabularScorer::read_from(&buf[..]).is_err());
        buf.truncate(buf.len() - 2);
        assert!(TabularScorer::read_from(&buf[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn file_round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..4, v in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = TabularScorer::from_fn(n, v, |_, _, _| {
                let bits: u64 = rng.random();
                let x = f64::from_bits(bits);
                if x.is_finite() { x } else { 0.5 }
            }).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = TabularScorer::read_from(&buf[..]).unwrap();
            prop_assert!(t.table.iter().zip(&back.table).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.n, n);
        }
    }
}
