//! Workload generation, timed runs, diffing and payload accounting.

pub mod config;
pub mod diff;
pub mod presets;
pub mod run;
pub mod workload;

pub use config::{ConfigError, KindMix, Profile, WorkloadConfig};
pub use diff::{
    changed_since, payload_accounting, recursive_diff, DiffReport, PayloadReport, DEFAULT_COMPRESSION_COEFFICIENT,
};
pub use run::{
    render_table, run_experiment, run_workload, DestinationReport, DestinationSpec, ExperimentConfig, FaultPlan,
    RunReport, StoreKind,
};
pub use workload::{generate_workload, OpRecord, ScheduledChangeset, Workload};
