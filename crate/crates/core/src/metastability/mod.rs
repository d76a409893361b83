//! Basins, score margins, drift certificates, escape times and traps.

mod basin;
mod drift;
mod escape;
mod margin;
mod traps;

pub use basin::BasinSpec;
pub use drift::{
    boundary_samples, drift_estimate, drift_report, sample_count_boundary, DriftReport,
};
pub use escape::{measure_escape_time, EscapeMethod, EscapeSamples};
pub use margin::{
    check_margin_assumption, check_margin_exhaustive, margin_report, CheckScope, MarginCheck,
    MarginReport, MarginWitness, TrapKind,
};
pub use traps::{
    detect_traps, detect_traps_in, write_traps_csv, TrapEvent, TrapParams, DEFAULT_TRAP_WINDOW,
    EMBEDDING_TRAP_THRESHOLD, HAMMING_TRAP_THRESHOLD,
};
