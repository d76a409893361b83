//! Single-site Glauber dynamics and the experiments built on it.

mod coupling;
mod grid;
mod hitting;
mod kernel;
mod trajectory;

pub use coupling::{coupling_meeting_time, maximal_coupling_step, CoupledStep, CouplingResult};
pub use grid::{run_grid, write_grid_csv, GridRow};
pub use hitting::{default_distance, hitting_time, DistanceFn, HittingResult};
pub use kernel::{glauber_step, GlauberKernel, Move, StepOutcome, TransitionRow};
pub use trajectory::{
    run_chain, run_chain_with_rng, CountDrift, HammingFromStart, MinScoreGap, ObserveContext,
    Observer, RunOptions, Snapshot, TokenFraction, Trajectory, TrajectoryRecord,
};
