//! Influence and oscillation matrices, closed-form mixing and escape
//! bounds, and exact analysis of enumerable chains.

mod chain;
mod formulas;
mod influence;

pub use chain::{
    build_kernel, exact_chain_analysis, mixing_times, stationary_by_elimination, AnalysisExport,
    ChainAnalysis, ChainOptions, MixingTime, SparseKernel, StationaryMethod,
};
pub use formulas::{escape_bound, mixing_upper_bound, EscapeBound};
pub use influence::{
    influence_and_oscillation, influence_coefficients, oscillation_matrix, ContextSource,
    EstimateMode, InfluenceMatrix, OscillationMatrix,
};
