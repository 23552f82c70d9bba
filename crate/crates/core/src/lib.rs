//! Memory-centric sampling profiler stack.
//!
//! * [`codec`]: fixed 64-byte sample packets.
//! * [`transport`]: ring/aux buffers, timer conversion and raw trace files.
//! * [`sim`]: deterministic simulation of the sampling pipeline.
//! * [`profiler`]: configuration, annotations and normalized traces.
//! * [`analysis`]: accuracy, overhead, capacity, bandwidth, region profiles
//!   and sensitivity sweeps.

pub mod analysis;
pub mod codec;
pub mod profiler;
pub mod sim;
pub mod transport;

mod serde_hex;
