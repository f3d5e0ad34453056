//! Experiment driver: configuration, the replication loop, aggregation and
//! the truth-oracle table behind the `itelab` binary.

pub mod aggregate;
pub mod config;
pub mod oracle;
pub mod run;

pub use aggregate::{aggregate, AggregateRow};
pub use config::{ConfigError, Estimator, ExperimentConfig, Profile, Variant};
pub use run::{run, RunError, RunSummary};

/// Process exit codes of the binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const ALL_FAILED: i32 = 3;
}
