//! Pipeline orchestration for `ctdgm`: configuration, stage drivers,
//! artifacts and parameter sweeps.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{PipelineConfig, RawConfig, TraceSource};
pub use error::CliError;
pub use pipeline::{run_pipeline, sweep_parameters, Manifest, PipelineOutcome, SweepAxis, SweepTable};
