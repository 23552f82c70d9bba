//! Deterministic simulation of the sampling pipeline over synthetic
//! workloads with exact ground truth.

mod model;
mod sampler;
mod workload;

use thiserror::Error;

use crate::transport::TransportError;

pub use model::{apply_filter, FilterSpec, MemoryModel, PerLevel, SamplerConfig};
pub use sampler::{run_sampling, CoreCapture, KindCounts, SampleAccounting, SimOutcome, SimRun};
pub use workload::{gen_workload, CoreOps, MemOp, OpStream, Region, WorkloadKind, WorkloadSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid memory model: {0}")]
    InvalidModel(String),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}
