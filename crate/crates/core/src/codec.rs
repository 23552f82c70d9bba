//! Fixed-layout 64-byte sample packets.
//!
//! Every sample occupies one 64-byte, 64-byte-aligned packet. The virtual
//! address is a little-endian `u64` at offset 31, preceded by the marker byte
//! `0xb2` at offset 30. The timestamp is a little-endian `u64` at offset 56,
//! preceded by the marker byte `0x71` at offset 55.
//!
//! ```text
//!  0      op_kind (0 = load, 1 = store)
//!  1      memory_level (0 = L1, 1 = L2, 2 = SLC, 3 = DRAM)
//!  2..6   latency_cycles  u32 LE
//!  6..8   core_id         u16 LE
//!  8..30  reserved, zero
//!  30     0xb2
//!  31..39 virtual_address u64 LE
//!  39..55 reserved, zero
//!  55     0x71
//!  56..64 timestamp       u64 LE
//! ```
//!
//! Decoding is total: any 64 bytes yield either a [`SampleRecord`] or a
//! [`SkipReason`]. Packets with a bad marker or a zero address/timestamp are
//! skipped rather than rejected, since real traces contain gaps.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size of one sample packet in bytes.
pub const PACKET_SIZE: usize = 64;

pub const ADDRESS_MARKER: u8 = 0xb2;
pub const TIMESTAMP_MARKER: u8 = 0x71;

const OP_KIND_OFFSET: usize = 0;
const LEVEL_OFFSET: usize = 1;
const LATENCY_OFFSET: usize = 2;
const CORE_OFFSET: usize = 6;
const ADDRESS_MARKER_OFFSET: usize = 30;
const ADDRESS_OFFSET: usize = 31;
const TIMESTAMP_MARKER_OFFSET: usize = 55;
const TIMESTAMP_OFFSET: usize = 56;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("packet must be exactly {PACKET_SIZE} bytes, got {0}")]
    PacketLength(usize),
    #[error("stream length is not a multiple of {PACKET_SIZE} bytes ({residual} trailing bytes)")]
    TruncatedStream { residual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Load,
    Store,
}

impl OpKind {
    pub const ALL: [OpKind; 2] = [OpKind::Load, OpKind::Store];

    fn to_byte(self) -> u8 {
        match self {
            OpKind::Load => 0,
            OpKind::Store => 1,
        }
    }

    /// Packet bytes other than 0/1 decode as a load when the store bit is clear.
    fn from_byte(b: u8) -> Self {
        if b & 1 == 0 {
            OpKind::Load
        } else {
            OpKind::Store
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Load => "load",
            OpKind::Store => "store",
        })
    }
}

/// Where in the memory hierarchy a sampled access was satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemoryLevel {
    L1,
    L2,
    #[serde(rename = "SLC")]
    Slc,
    #[serde(rename = "DRAM")]
    Dram,
}

impl MemoryLevel {
    pub const ALL: [MemoryLevel; 4] = [
        MemoryLevel::L1,
        MemoryLevel::L2,
        MemoryLevel::Slc,
        MemoryLevel::Dram,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_byte(b: u8) -> Self {
        Self::ALL[usize::from(b & 0b11)]
    }
}

impl fmt::Display for MemoryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemoryLevel::L1 => "L1",
            MemoryLevel::L2 => "L2",
            MemoryLevel::Slc => "SLC",
            MemoryLevel::Dram => "DRAM",
        })
    }
}

/// One decoded memory-access sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRecord {
    pub virtual_address: u64,
    /// Raw sampling-unit timer ticks.
    pub timestamp: u64,
    pub op_kind: OpKind,
    pub memory_level: MemoryLevel,
    pub latency_cycles: u32,
    pub core_id: u16,
}

/// Exactly one 64-byte packet.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PacketBytes(pub [u8; PACKET_SIZE]);

impl PacketBytes {
    pub fn as_bytes(&self) -> &[u8; PACKET_SIZE] {
        &self.0
    }
}

impl TryFrom<&[u8]> for PacketBytes {
    type Error = CodecError;

    fn try_from(bytes: &[u8]) -> Result<Self, Self::Error> {
        bytes
            .try_into()
            .map(PacketBytes)
            .map_err(|_| CodecError::PacketLength(bytes.len()))
    }
}

impl fmt::Debug for PacketBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PacketBytes(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// Why a packet was skipped. Checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkipReason {
    BadAddressMarker,
    BadTimestampMarker,
    ZeroAddress,
    ZeroTimestamp,
}

impl SkipReason {
    pub const ALL: [SkipReason; 4] = [
        SkipReason::BadAddressMarker,
        SkipReason::BadTimestampMarker,
        SkipReason::ZeroAddress,
        SkipReason::ZeroTimestamp,
    ];

    /// Stable snake_case name, used for counters and stats output.
    pub fn name(self) -> &'static str {
        match self {
            SkipReason::BadAddressMarker => "bad_address_marker",
            SkipReason::BadTimestampMarker => "bad_timestamp_marker",
            SkipReason::ZeroAddress => "zero_address",
            SkipReason::ZeroTimestamp => "zero_timestamp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeOutcome {
    Record(SampleRecord),
    Skip(SkipReason),
}

impl DecodeOutcome {
    pub fn record(self) -> Option<SampleRecord> {
        match self {
            DecodeOutcome::Record(r) => Some(r),
            DecodeOutcome::Skip(_) => None,
        }
    }
}

/// Per-reason skip counters for a decoded stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipStats {
    pub bad_address_marker: u64,
    pub bad_timestamp_marker: u64,
    pub zero_address: u64,
    pub zero_timestamp: u64,
}

impl SkipStats {
    pub fn record(&mut self, reason: SkipReason) {
        *self.get_mut(reason) += 1;
    }

    pub fn get(&self, reason: SkipReason) -> u64 {
        match reason {
            SkipReason::BadAddressMarker => self.bad_address_marker,
            SkipReason::BadTimestampMarker => self.bad_timestamp_marker,
            SkipReason::ZeroAddress => self.zero_address,
            SkipReason::ZeroTimestamp => self.zero_timestamp,
        }
    }

    fn get_mut(&mut self, reason: SkipReason) -> &mut u64 {
        match reason {
            SkipReason::BadAddressMarker => &mut self.bad_address_marker,
            SkipReason::BadTimestampMarker => &mut self.bad_timestamp_marker,
            SkipReason::ZeroAddress => &mut self.zero_address,
            SkipReason::ZeroTimestamp => &mut self.zero_timestamp,
        }
    }

    pub fn total(&self) -> u64 {
        SkipReason::ALL.iter().map(|&r| self.get(r)).sum()
    }

    pub fn merge(&mut self, other: &SkipStats) {
        for r in SkipReason::ALL {
            *self.get_mut(r) += other.get(r);
        }
    }
}

pub fn encode_record(record: &SampleRecord) -> PacketBytes {
    let mut p = [0u8; PACKET_SIZE];
    p[OP_KIND_OFFSET] = record.op_kind.to_byte();
    p[LEVEL_OFFSET] = record.memory_level.index() as u8;
    p[LATENCY_OFFSET..LATENCY_OFFSET + 4].copy_from_slice(&record.latency_cycles.to_le_bytes());
    p[CORE_OFFSET..CORE_OFFSET + 2].copy_from_slice(&record.core_id.to_le_bytes());
    p[ADDRESS_MARKER_OFFSET] = ADDRESS_MARKER;
    p[ADDRESS_OFFSET..ADDRESS_OFFSET + 8].copy_from_slice(&record.virtual_address.to_le_bytes());
    p[TIMESTAMP_MARKER_OFFSET] = TIMESTAMP_MARKER;
    p[TIMESTAMP_OFFSET..].copy_from_slice(&record.timestamp.to_le_bytes());
    PacketBytes(p)
}

fn le_u64(p: &[u8; PACKET_SIZE], at: usize) -> u64 {
    u64::from_le_bytes(p[at..at + 8].try_into().unwrap())
}

pub fn decode_packet(packet: &PacketBytes) -> DecodeOutcome {
    let p = &packet.0;
    if p[ADDRESS_MARKER_OFFSET] != ADDRESS_MARKER {
        return DecodeOutcome::Skip(SkipReason::BadAddressMarker);
    }
    if p[TIMESTAMP_MARKER_OFFSET] != TIMESTAMP_MARKER {
        return DecodeOutcome::Skip(SkipReason::BadTimestampMarker);
    }
    let virtual_address = le_u64(p, ADDRESS_OFFSET);
    if virtual_address == 0 {
        return DecodeOutcome::Skip(SkipReason::ZeroAddress);
    }
    let timestamp = le_u64(p, TIMESTAMP_OFFSET);
    if timestamp == 0 {
        return DecodeOutcome::Skip(SkipReason::ZeroTimestamp);
    }
    DecodeOutcome::Record(SampleRecord {
        virtual_address,
        timestamp,
        op_kind: OpKind::from_byte(p[OP_KIND_OFFSET]),
        memory_level: MemoryLevel::from_byte(p[LEVEL_OFFSET]),
        latency_cycles: u32::from_le_bytes(
            p[LATENCY_OFFSET..LATENCY_OFFSET + 4].try_into().unwrap(),
        ),
        core_id: u16::from_le_bytes(p[CORE_OFFSET..CORE_OFFSET + 2].try_into().unwrap()),
    })
}

/// Slice form of [`decode_packet`] that checks the length first.
pub fn decode_slice(bytes: &[u8]) -> Result<DecodeOutcome, CodecError> {
    PacketBytes::try_from(bytes).map(|p| decode_packet(&p))
}

/// Decodes a concatenation of packets, keeping accepted records in stream order.
pub fn decode_stream(bytes: &[u8]) -> Result<(Vec<SampleRecord>, SkipStats), CodecError> {
    let residual = bytes.len() % PACKET_SIZE;
    if residual != 0 {
        return Err(CodecError::TruncatedStream { residual });
    }
    let mut records = Vec::with_capacity(bytes.len() / PACKET_SIZE);
    let mut stats = SkipStats::default();
    for chunk in bytes.chunks_exact(PACKET_SIZE) {
        let packet = PacketBytes(chunk.try_into().unwrap());
        match decode_packet(&packet) {
            DecodeOutcome::Record(r) => records.push(r),
            DecodeOutcome::Skip(reason) => stats.record(reason),
        }
    }
    Ok((records, stats))
}
