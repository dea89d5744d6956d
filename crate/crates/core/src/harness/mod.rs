//! Run orchestration: configuration, single realizations, ensembles,
//! convergence studies and file output.

pub mod config;
pub mod converge;
pub mod export;
pub mod mc;
pub mod run;

pub use config::{InitialCondition, Mode, RunConfig, OUT_DIR_ENV};
pub use converge::{convergence_study, rung_errors, Axis, Ladder, RateTable, Rung};
pub use mc::{monte_carlo, summarize, Histogram, McSummary, Stat};
pub use run::{
    discrete_energy, drive, eigen_trace, min_within, ENERGY_DRIFT, read_checkpoint, run_realization, write_checkpoint, Checkpoint, RunOutput,
    Runner, StepRecord, TraceRecord,
};
