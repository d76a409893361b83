//! Initial states: NDJSON state files or seeded random draws.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::Context;
use glauber::rng::{substream, StreamRole};
use glauber::{SeqState, TokenId};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One line of a state file, e.g. `{"ids":[3,0,2],"frozen":[0]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateLine {
    pub ids: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen: Vec<usize>,
}

/// Parses a state file without checking tokens against a vocabulary.
pub fn read_state_file(path: &Path) -> anyhow::Result<Vec<StateLine>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open state file {}", path.display()))?;
    let mut lines = Vec::new();
    for (k, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: StateLine = serde_json::from_str(&line)
            .map_err(|e| glauber::Error::Input(format!("{}:{}: {e}", path.display(), k + 1)))?;
        lines.push(parsed);
    }
    if lines.is_empty() {
        return Err(
            glauber::Error::Input(format!("state file {} is empty", path.display())).into(),
        );
    }
    Ok(lines)
}

pub fn to_states(lines: &[StateLine], vocab_size: usize) -> glauber::Result<Vec<SeqState>> {
    lines
        .iter()
        .enumerate()
        .map(|(k, l)| {
            SeqState::with_frozen(l.ids.clone(), &l.frozen, vocab_size)
                .map_err(|e| glauber::Error::Input(format!("state {}: {e}", k + 1)))
        })
        .collect()
}

pub fn write_states<W: Write>(states: &[SeqState], mut out: W) -> std::io::Result<()> {
    for s in states {
        let line = StateLine {
            ids: s.ids().to_vec(),
            frozen: s.frozen().frozen_positions(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `count` uniform states for samplers that also draw from the replica
/// streams of `seed`; they come from a derived seed so the two never share
/// a stream.
pub fn random_states(
    n: usize,
    vocab_size: usize,
    seed: u64,
    count: usize,
) -> glauber::Result<Vec<SeqState>> {
    let derived = seed ^ 0x5a5a_5a5a_5a5a_5a5a;
    (0..count)
        .map(|k| random_state(n, vocab_size, derived, k as u64))
        .collect()
}

/// Uniform random state of length `n` for replica `replica` of `seed`.
pub fn random_state(
    n: usize,
    vocab_size: usize,
    seed: u64,
    replica: u64,
) -> glauber::Result<SeqState> {
    let mut rng = substream(seed, replica, StreamRole::Aux);
    random_state_with(n, vocab_size, &mut rng)
}

/// Two independent uniform states for the coupled chains of `replica`.
pub fn random_pair(
    n: usize,
    vocab_size: usize,
    seed: u64,
    replica: u64,
) -> glauber::Result<(SeqState, SeqState)> {
    let mut rng = substream(seed, replica, StreamRole::Aux);
    Ok((
        random_state_with(n, vocab_size, &mut rng)?,
        random_state_with(n, vocab_size, &mut rng)?,
    ))
}

fn random_state_with<R: Rng>(
    n: usize,
    vocab_size: usize,
    rng: &mut R,
) -> glauber::Result<SeqState> {
    let ids = (0..n)
        .map(|_| rng.random_range(0..vocab_size as TokenId))
        .collect();
    SeqState::new(ids, vocab_size)
}
