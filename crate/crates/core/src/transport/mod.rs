//! Producer/consumer transport for sample bytes.
//!
//! Samples travel through a pair of buffers per core: the aux buffer holds
//! packet bytes and the ring buffer holds [`AuxRecord`] descriptors. This
//! module also provides the timer-to-nanosecond conversion driven by the
//! metadata page, and the persisted raw trace file.

mod buffers;
mod tracefile;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffers::{
    AppendOutcome, BufferConfig, BufferPair, Consumer, Drained, MetadataPage, Producer,
    DEFAULT_PAGE_SIZE, RING_RECORD_SIZE,
};
pub use tracefile::{
    fnv1a64, AuxChunk, CoreTrace, TraceFile, TraceFileError, TRACE_MAGIC, TRACE_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("invalid buffer configuration: {0}")]
    InvalidConfig(String),
    #[error("append of {len} bytes is not a whole number of packets")]
    Unaligned { len: usize },
}

bitflags! {
    /// Flag bits of an aux descriptor, matching the perf ABI values.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct AuxFlags: u32 {
        /// Data was lost because the aux buffer was full.
        const TRUNCATED = 0x01;
        /// At least one sample collided since the previous descriptor.
        const COLLISION = 0x08;
    }
}

/// Describes `aux_size` bytes starting at free-running aux offset `aux_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuxRecord {
    pub aux_offset: u64,
    pub aux_size: u64,
    pub flags: AuxFlags,
}

/// Timer conversion fields of the metadata page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimescaleParams {
    pub time_zero: u64,
    pub time_shift: u8,
    pub time_mult: u32,
}

impl Default for TimescaleParams {
    /// Identity conversion: one tick is one nanosecond.
    fn default() -> Self {
        TimescaleParams {
            time_zero: 0,
            time_shift: 0,
            time_mult: 1,
        }
    }
}

impl TimescaleParams {
    pub fn validate(&self) -> Result<(), TransportError> {
        if self.time_shift > 63 {
            return Err(TransportError::InvalidConfig(format!(
                "time_shift {} exceeds 63",
                self.time_shift
            )));
        }
        if self.time_mult == 0 {
            return Err(TransportError::InvalidConfig(
                "time_mult must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Converts raw timer ticks to nanoseconds:
/// `time_zero + (ts >> shift) * mult + (((ts & mask) * mult) >> shift)`.
///
/// The sum wraps modulo 2^64. The remainder product is formed in 128 bits, so
/// the result is exactly `time_zero + floor(ts * mult / 2^shift)` mod 2^64.
pub fn convert_timestamp(ts: u64, params: &TimescaleParams) -> u64 {
    let shift = u32::from(params.time_shift);
    let mult = u64::from(params.time_mult);
    let quot = ts >> shift;
    let rem = ts & ((1u64 << shift) - 1);
    let rem_part = ((u128::from(rem) * u128::from(mult)) >> shift) as u64;
    params
        .time_zero
        .wrapping_add(quot.wrapping_mul(mult))
        .wrapping_add(rem_part)
}
