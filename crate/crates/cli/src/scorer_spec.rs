//! Declarative scorer selection and construction.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use glauber::rng::substream;
use glauber::rng::StreamRole;
use glauber::scorers::{
    Endpoint, IndependentScorer, PerturbationMode, PerturbedScorer, PottsGibbsScorer,
    RemoteOptions, RemoteScorer, TabularScorer,
};
use glauber::Scorer;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    Hashed,
    Pairwise,
}

impl From<PerturbationKind> for PerturbationMode {
    fn from(k: PerturbationKind) -> Self {
        match k {
            PerturbationKind::Hashed => PerturbationMode::Hashed,
            PerturbationKind::Pairwise => PerturbationMode::Pairwise,
        }
    }
}

/// Which scorer drives the chain. Synthetic models that depend on the
/// sequence length are rebuilt for each `n` of the grid from their seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerSpec {
    /// Random pairwise Potts model; compatible by construction.
    Potts {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default = "one")]
        coupling_scale: f64,
        #[serde(default = "one")]
        field_scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Uniform ferromagnetic couplings of the given strength.
    Ferromagnetic {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default = "one")]
        strength: f64,
    },
    /// Context-free scores; uniform unless `probability` sets the mass of
    /// `target` at `τ = 1`.
    Independent {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default)]
        target: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probability: Option<f64>,
    },
    /// Random full conditional table.
    Tabular {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Conditional table saved in the binary table format.
    TabularFile { path: PathBuf },
    /// Random Potts model plus a pseudorandom incompatible perturbation.
    Perturbed {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default = "one")]
        coupling_scale: f64,
        #[serde(default = "one")]
        field_scale: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        epsilon: f64,
        #[serde(default)]
        key: u64,
        #[serde(default)]
        mode: PerturbationKind,
    },
    /// A scoring server speaking the NDJSON protocol.
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cache_capacity: Option<usize>,
    },
}

fn default_vocab() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::Potts {
            vocab_size: default_vocab(),
            coupling_scale: 1.0,
            field_scale: 1.0,
            seed: 0,
        }
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<(), UsageError> {
        let vocab = match self {
            ScorerSpec::Potts { vocab_size, .. }
            | ScorerSpec::Ferromagnetic { vocab_size, .. }
            | ScorerSpec::Independent { vocab_size, .. }
            | ScorerSpec::Tabular { vocab_size, .. }
            | ScorerSpec::Perturbed { vocab_size, .. } => Some(*vocab_size),
            _ => None,
        };
        if let Some(v) = vocab {
            if v < 2 {
                return Err(UsageError::new(format!(
                    "scorer.vocab_size: need at least 2 tokens, got {v}"
                )));
            }
        }
        match self {
            ScorerSpec::Independent {
                vocab_size,
                target,
                probability,
            } => {
                if *target as usize >= *vocab_size {
                    return Err(UsageError::new(
                        "scorer.target: token outside the vocabulary",
                    ));
                }
                if let Some(p) = probability {
                    if !(*p > 0.0 && *p < 1.0) {
                        return Err(UsageError::new(format!(
                            "scorer.probability: must lie in (0, 1), got {p}"
                        )));
                    }
                }
            }
            ScorerSpec::Perturbed { epsilon, .. } if !(*epsilon >= 0.0) => {
                return Err(UsageError::new(format!(
                    "scorer.epsilon: must be non-negative, got {epsilon}"
                )));
            }
            ScorerSpec::Remote {
                endpoint,
                timeout_secs,
                ..
            } => {
                Endpoint::parse(endpoint)
                    .map_err(|e| UsageError::new(format!("scorer.endpoint: {e}")))?;
                if !(*timeout_secs > 0.0) {
                    return Err(UsageError::new("scorer.timeout_secs: must be positive"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Builds scorers on demand. A remote scorer is connected once and shared
/// by every worker; the client multiplexes requests by id.
pub struct ScorerSource {
    spec: ScorerSpec,
    remote: Mutex<Option<Arc<RemoteScorer>>>,
}

impl ScorerSource {
    pub fn new(spec: ScorerSpec) -> Self {
        Self {
            spec,
            remote: Mutex::new(None),
        }
    }

    /// Scorer for sequences of length `n`.
    pub fn for_len(&self, n: usize) -> glauber::Result<Arc<dyn Scorer>> {
        Ok(match &self.spec {
            ScorerSpec::Potts {
                vocab_size,
                coupling_scale,
                field_scale,
                seed,
            } => Arc::new(random_potts(
                n,
                *vocab_size,
                *coupling_scale,
                *field_scale,
                *seed,
            )?),
            ScorerSpec::Ferromagnetic {
                vocab_size,
                strength,
            } => Arc::new(PottsGibbsScorer::ferromagnetic(n, *vocab_size, *strength)?),
            ScorerSpec::Independent {
                vocab_size,
                target,
                probability,
            } => Arc::new(match probability {
                Some(p) => IndependentScorer::with_target_probability(*vocab_size, *target, *p)?,
                None => IndependentScorer::uniform(*vocab_size)?,
            }),
            ScorerSpec::Tabular {
                vocab_size,
                scale,
                seed,
            } => {
                let mut rng = substream(*seed, n as u64, StreamRole::Aux);
                Arc::new(TabularScorer::random(n, *vocab_size, *scale, &mut rng)?)
            }
            ScorerSpec::TabularFile { path } => {
                let t = TabularScorer::load(path)?;
                if t.len() != n {
                    return Err(glauber::Error::Input(format!(
                        "table {} serves length {}, asked for {n}",
                        path.display(),
                        t.len()
                    )));
                }
                Arc::new(t)
            }
            ScorerSpec::Perturbed {
                vocab_size,
                coupling_scale,
                field_scale,
                seed,
                epsilon,
                key,
                mode,
            } => {
                let base = random_potts(n, *vocab_size, *coupling_scale, *field_scale, *seed)?;
                Arc::new(PerturbedScorer::with_mode(
                    base,
                    *epsilon,
                    *key,
                    (*mode).into(),
                )?)
            }
            ScorerSpec::Remote { .. } => self.remote()?,
        })
    }

    fn remote(&self) -> glauber::Result<Arc<RemoteScorer>> {
        let ScorerSpec::Remote {
            endpoint,
            timeout_secs,
            retries,
            cache_capacity,
        } = &self.spec
        else {
            unreachable!("remote() called on a local spec");
        };
        let mut slot = self.remote.lock().expect("remote slot poisoned");
        if let Some(r) = slot.as_ref() {
            return Ok(Arc::clone(r));
        }
        let options = RemoteOptions {
            timeout: Duration::from_secs_f64(*timeout_secs),
            retries: *retries,
            cache_capacity: *cache_capacity,
        };
        let r = Arc::new(RemoteScorer::connect(Endpoint::parse(endpoint)?, options)?);
        *slot = Some(Arc::clone(&r));
        Ok(r)
    }
}

fn random_potts(
    n: usize,
    v: usize,
    coupling_scale: f64,
    field_scale: f64,
    seed: u64,
) -> glauber::Result<PottsGibbsScorer> {
    let mut rng = substream(seed, n as u64, StreamRole::Aux);
    PottsGibbsScorer::random(n, v, coupling_scale, field_scale, &mut rng)
}
