//! Config-driven Monte Carlo experiment harness with CSV/SVG outputs.
//!
//! Experiments come in three kinds: estimator RMSE sweeps over the sensing
//! SNR, optimizer CRB sweeps over QoS or RF-chain count with near-field,
//! far-field, and fully digital variants, and convergence traces. Trials
//! are dispatched to a worker pool; per-trial RNG streams derive from
//! (seed, sweep index, trial index) so results are reproducible and
//! independent of trial count or scheduling.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, ProbingMode, SweepVariable};
pub use experiments::{
    derive_seed, generate_scenario, run_crb_sweep, run_experiment, run_positioning_sweep,
    HarnessError, ScenarioInstance, SearchGrids, TrialRecord,
};
pub use output::{emit_outputs, records_from_csv, records_to_csv, CSV_HEADER};
