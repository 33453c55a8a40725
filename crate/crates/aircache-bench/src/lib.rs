//! Std companion to the core compression crate: run configuration,
//! benchmark grid execution, and report serialization for the CLI.

pub mod config;
pub mod error;
pub mod harness;
pub mod report;

pub use config::{
    canonical_policies, AllocationDoc, AudienceDoc, EvictionDoc, ModelDoc, PolicyDoc, RunConfig,
    ScenarioDoc, ScorerDoc,
};
pub use error::BenchError;
pub use harness::{needle_recall, prepare_repeats, run_grid, run_single, RepeatContext};
pub use report::{write_atomic, Format, RunRecord, RunReport, Summary, CSV_HEADER, SCHEMA_VERSION};
