//! Profiling session: configuration, annotations, and trace normalization.

mod config;
mod session;
mod trace;

use thiserror::Error;

use crate::codec::CodecError;
use crate::transport::TraceFileError;

pub use config::{
    encode_perf_attr, parse_config, AttrSpec, ProfileConfig, SamplingMode, ENV_AUXBUFSIZE,
    ENV_BUFSIZE, ENV_ENABLE, ENV_MODE, ENV_NAME, ENV_PERIOD, ENV_TRACK_RSS, SPE_LOAD_FILTER,
    SPE_PMU_TYPE, SPE_STORE_FILTER, SPE_TS_ENABLE,
};
pub use session::{
    parse_phases, parse_tags, read_rss, validate_rss, Clock, ManualClock, MonotonicClock, PhaseSet,
    PhaseTag, RegionTag, Session, TagRegistry,
};
pub use trace::{
    build_trace, read_jsonl, write_jsonl, NormalizedTrace, TraceCounters, TraceSample,
    COUNTER_ACCEPTED, COUNTER_AUX_COLLISION, COUNTER_AUX_RECORDS, COUNTER_AUX_TRUNCATED,
};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{var}: invalid value {value:?} ({reason})")]
    Config {
        var: &'static str,
        value: String,
        reason: String,
    },
    #[error("sampling disabled: {0}")]
    SamplingDisabled(String),
    #[error("region tag {name:?}: start {start:#x} is not below end {end:#x}")]
    InvertedRange { name: String, start: u64, end: u64 },
    #[error("region tag {0:?} is already registered")]
    DuplicateTag(String),
    #[error("region tag {name:?} overlaps {existing:?}")]
    TagOverlap { name: String, existing: String },
    #[error("phase {0:?} is still open")]
    PhaseAlreadyOpen(String),
    #[error("no phase is open")]
    NoOpenPhase,
    #[error("invalid phases: {0}")]
    InvalidPhases(String),
    #[error("rss series goes backwards in time at entry {index}")]
    RssOutOfOrder { index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    TraceFile(#[from] TraceFileError),
    #[error("core {core}: {source}")]
    Codec { core: u16, source: CodecError },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ProfileError {
    pub(crate) fn config(var: &'static str, value: &str, reason: &str) -> Self {
        ProfileError::Config {
            var,
            value: value.to_owned(),
            reason: reason.to_owned(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        ProfileError::Parse {
            line,
            message: message.into(),
        }
    }
}
