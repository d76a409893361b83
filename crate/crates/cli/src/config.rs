//! Experiment configuration: a TOML file with flag overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scorer_spec::ScorerSpec;
use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random draw of a run derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    /// NDJSON state file with initial states; random states are drawn when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<PathBuf>,
    #[serde(default)]
    pub rect: RectConfig,
    #[serde(default)]
    pub influence: InfluenceConfig,
    #[serde(default)]
    pub exact: ExactConfig,
    #[serde(default)]
    pub basin: BasinConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub margin: MarginConfig,
    #[serde(default)]
    pub traps: TrapsConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("glauber-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_taus")]
    pub tau: Vec<f64>,
    #[serde(default = "default_ns")]
    pub n: Vec<usize>,
    /// Replicas per grid cell.
    #[serde(default = "default_replicas")]
    pub replicas: u64,
}

fn default_taus() -> Vec<f64> {
    vec![1.0]
}

fn default_ns() -> Vec<usize> {
    vec![8]
}

fn default_replicas() -> u64 {
    1
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tau: default_taus(),
            n: default_ns(),
            replicas: default_replicas(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Step count for `run`; step budget for `couple` and `hit`.
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default = "default_keyframe_every")]
    pub keyframe_every: usize,
    /// Normalized Hamming radius for `hit`.
    #[serde(default = "default_hit_radius")]
    pub hit_radius: f64,
    /// Token whose fraction `run` records, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_token: Option<u32>,
}

fn default_steps() -> u64 {
    10_000
}

fn default_record_every() -> u64 {
    1
}

fn default_keyframe_every() -> usize {
    256
}

fn default_hit_radius() -> f64 {
    0.5
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            record_every: default_record_every(),
            keyframe_every: default_keyframe_every(),
            hit_radius: default_hit_radius(),
            track_token: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectConfig {
    #[serde(default = "default_rect_count")]
    pub count: usize,
    #[serde(default = "default_rect_k")]
    pub k: usize,
    /// Random states drawn when no state file is given.
    #[serde(default = "default_random_states")]
    pub random_states: usize,
}

fn default_rect_count() -> usize {
    300
}

fn default_rect_k() -> usize {
    50
}

fn default_random_states() -> usize {
    32
}

impl Default for RectConfig {
    fn default() -> Self {
        Self {
            count: default_rect_count(),
            k: default_rect_k(),
            random_states: default_random_states(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMode {
    #[default]
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceConfig {
    #[serde(default)]
    pub mode: InfluenceMode,
    #[serde(default = "default_max_states")]
    pub max_states: u64,
    /// Swaps per site in sampled mode.
    #[serde(default = "default_influence_k")]
    pub k: usize,
    /// Base states in sampled mode when no state file is given.
    #[serde(default = "default_random_states")]
    pub random_states: usize,
}

fn default_max_states() -> u64 {
    1 << 20
}

fn default_influence_k() -> usize {
    10
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            mode: InfluenceMode::default(),
            max_states: default_max_states(),
            k: default_influence_k(),
            random_states: default_random_states(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_exact_states")]
    pub max_states: u64,
    #[serde(default = "default_mixing_states")]
    pub max_mixing_states: usize,
    /// Most probable states listed in the export.
    #[serde(default = "default_top")]
    pub top: usize,
    /// Also compute the influence and oscillation matrices.
    #[serde(default = "default_true")]
    pub with_influence: bool,
}

fn default_eps() -> Vec<f64> {
    vec![0.25, 0.1, 0.01]
}

fn default_exact_states() -> u64 {
    4096
}

fn default_mixing_states() -> usize {
    1024
}

fn default_top() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            max_states: default_exact_states(),
            max_mixing_states: default_mixing_states(),
            top: default_top(),
            with_influence: true,
        }
    }
}

/// Basin used by `drift`, `margin` and the escape measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasinConfig {
    TokenCount {
        #[serde(default)]
        target: u32,
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    HammingBall {
        center: Vec<u32>,
        radius: usize,
    },
    Explicit {
        states: Vec<Vec<u32>>,
    },
}

fn default_fraction() -> f64 {
    0.9
}

impl Default for BasinConfig {
    fn default() -> Self {
        BasinConfig::TokenCount {
            target: 0,
            fraction: default_fraction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    #[serde(default = "default_drift_samples")]
    pub samples: usize,
}

fn default_drift_samples() -> usize {
    200
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            samples: default_drift_samples(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    /// Margin the basin must certify.
    #[serde(default = "default_required")]
    pub required: f64,
    /// Scan every basin state instead of sampled ones.
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default = "default_max_states")]
    pub max_states: u64,
}

fn default_required() -> f64 {
    1.0
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            required: default_required(),
            exhaustive: false,
            max_states: default_max_states(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapsConfig {
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Trajectory written by `run`; a fresh chain is run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
}

fn default_window() -> u64 {
    glauber::metastability::DEFAULT_TRAP_WINDOW
}

fn default_threshold() -> f64 {
    glauber::metastability::HAMMING_TRAP_THRESHOLD
}

impl Default for TrapsConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            threshold: default_threshold(),
            trajectory: None,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub scorer: Option<String>,
    pub endpoint: Option<String>,
    pub tau: Option<Vec<f64>>,
    pub n: Option<Vec<usize>>,
    pub steps: Option<u64>,
    pub record_every: Option<u64>,
    pub states: Option<PathBuf>,
    /// `path.to.key=value` assignments; values parse as TOML, else as strings.
    pub sets: Vec<String>,
}

fn table<'a>(root: &'a mut toml::Table, key: &str) -> Result<&'a mut toml::Table, UsageError> {
    root.entry(key)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| UsageError::new(format!("{key}: expected a table")))
}

fn int(v: u64) -> toml::Value {
    toml::Value::Integer(v as i64)
}

impl ExperimentConfig {
    /// Defaults, then `path` if given, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, UsageError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    UsageError::new(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| UsageError::new(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        apply_overrides(&mut root, overrides)?;
        let config: ExperimentConfig =
            toml::Value::Table(root)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    UsageError::new(format!("invalid config: {}", e.message()))
                })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if self.grid.tau.is_empty() {
            return Err(UsageError::new("grid.tau: grid is empty"));
        }
        for (k, t) in self.grid.tau.iter().enumerate() {
            if !(*t > 0.0) || !t.is_finite() {
                return Err(UsageError::new(format!(
                    "grid.tau[{k}]: temperature must be positive, got {t}"
                )));
            }
        }
        if self.grid.n.is_empty() {
            return Err(UsageError::new("grid.n: grid is empty"));
        }
        if let Some(k) = self.grid.n.iter().position(|&n| n == 0) {
            return Err(UsageError::new(format!(
                "grid.n[{k}]: length must be at least 1"
            )));
        }
        if self.grid.replicas == 0 {
            return Err(UsageError::new("grid.replicas: need at least one replica"));
        }
        if self.chain.record_every == 0 {
            return Err(UsageError::new("chain.record_every: must be at least 1"));
        }
        if self.chain.keyframe_every == 0 {
            return Err(UsageError::new("chain.keyframe_every: must be at least 1"));
        }
        if !(self.chain.hit_radius >= 0.0) {
            return Err(UsageError::new("chain.hit_radius: must be non-negative"));
        }
        for (k, e) in self.exact.eps.iter().enumerate() {
            if !(*e > 0.0 && *e < 1.0) {
                return Err(UsageError::new(format!(
                    "exact.eps[{k}]: must lie in (0, 1), got {e}"
                )));
            }
        }
        if let BasinConfig::TokenCount { fraction, .. } = self.basin {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(UsageError::new(format!(
                    "basin.fraction: must lie in (0, 1], got {fraction}"
                )));
            }
        }
        if self.traps.window == 0 {
            return Err(UsageError::new("traps.window: must be at least 1"));
        }
        if !(self.traps.threshold > 0.0) {
            return Err(UsageError::new("traps.threshold: must be positive"));
        }
        self.scorer.validate()
    }

    /// SHA-256 of the canonical JSON form. `out` and `workers` cannot change
    /// results and are left out.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut identity = self.clone();
        identity.out = PathBuf::new();
        identity.workers = 0;
        let canonical = serde_json::to_vec(&identity).expect("config serializes");
        format!("{:x}", Sha256::digest(&canonical))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

fn apply_overrides(root: &mut toml::Table, o: &Overrides) -> Result<(), UsageError> {
    if let Some(seed) = o.seed {
        root.insert("seed".into(), int(seed));
    }
    if let Some(w) = o.workers {
        root.insert("workers".into(), int(w as u64));
    }
    if let Some(out) = &o.out {
        root.insert("out".into(), toml::Value::String(out.display().to_string()));
    }
    if let Some(states) = &o.states {
        root.insert(
            "states".into(),
            toml::Value::String(states.display().to_string()),
        );
    }
    if let Some(kind) = &o.scorer {
        let scorer = table(root, "scorer")?;
        if scorer.get("kind").and_then(|k| k.as_str()) != Some(kind.as_str()) {
            // parameters of another kind would not fit the new one
            scorer.clear();
        }
        scorer.insert("kind".into(), toml::Value::String(kind.clone()));
    }
    if let Some(endpoint) = &o.endpoint {
        let scorer = table(root, "scorer")?;
        if scorer.get("kind").and_then(|k| k.as_str()) != Some("remote") {
            scorer.clear();
            scorer.insert("kind".into(), toml::Value::String("remote".into()));
        }
        scorer.insert("endpoint".into(), toml::Value::String(endpoint.clone()));
    }
    if let Some(taus) = &o.tau {
        let grid = table(root, "grid")?;
        grid.insert(
            "tau".into(),
            toml::Value::Array(taus.iter().map(|&t| toml::Value::Float(t)).collect()),
        );
    }
    if let Some(ns) = &o.n {
        let grid = table(root, "grid")?;
        grid.insert(
            "n".into(),
            toml::Value::Array(ns.iter().map(|&n| int(n as u64)).collect()),
        );
    }
    if let Some(steps) = o.steps {
        table(root, "chain")?.insert("steps".into(), int(steps));
    }
    if let Some(r) = o.record_every {
        table(root, "chain")?.insert("record_every".into(), int(r));
    }
    for assignment in &o.sets {
        set_path(root, assignment)?;
    }
    // partial tables keep the default kind
    for (key, kind) in [("scorer", "potts"), ("basin", "token_count")] {
        if let Some(t) = root.get_mut(key).and_then(|t| t.as_table_mut()) {
            t.entry("kind")
                .or_insert_with(|| toml::Value::String(kind.into()));
        }
    }
    Ok(())
}

fn set_path(root: &mut toml::Table, assignment: &str) -> Result<(), UsageError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError::new(format!("--set {assignment:?}: expected path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(UsageError::new(format!("--set {assignment:?}: empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut node = root;
    for key in parents {
        node = table(node, key)?;
    }
    node.insert((*last).to_owned(), value);
    Ok(())
}
