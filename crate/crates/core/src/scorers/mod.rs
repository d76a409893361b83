//! Concrete scorer backends.

mod independent;
mod perturbed;
mod potts;
mod remote;
pub mod tabular;
pub mod wire;

pub use independent::IndependentScorer;
pub use perturbed::{PerturbationMode, PerturbedScorer};
pub use potts::PottsGibbsScorer;
pub use remote::{default_cache_capacity, Endpoint, RemoteOptions, RemoteScorer};
pub use tabular::{TabularScorer, TABULAR_MAX_STATES};
