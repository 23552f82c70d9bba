//! Persisted raw trace sessions.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NMO1" | version u16 | page_size u32 | core_count u16
//! per core:   core_id u16 | record_count u32
//! per record: aux_offset u64 | aux_size u64 | flags u32 | aux_size payload bytes
//! trailer:    FNV-1a 64 digest of every preceding byte
//! ```

use std::hash::Hasher;
use std::io::{self, Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::{AuxFlags, AuxRecord};

pub const TRACE_MAGIC: &[u8; 4] = b"NMO1";
pub const TRACE_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 2;
const DIGEST_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("malformed trace file: {0}")]
    Malformed(String),
    #[error("unsupported trace format version {0}")]
    UnsupportedVersion(u16),
    #[error("trace digest mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    DigestMismatch { stored: u64, computed: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxChunk {
    pub record: AuxRecord,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoreTrace {
    pub core_id: u16,
    pub chunks: Vec<AuxChunk>,
}

impl CoreTrace {
    pub fn payload_bytes(&self) -> u64 {
        self.chunks.iter().map(|c| c.payload.len() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub page_size: u32,
    pub cores: Vec<CoreTrace>,
}

impl TraceFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TRACE_MAGIC);
        // Writes into a Vec cannot fail.
        out.write_u16::<LittleEndian>(TRACE_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.page_size).unwrap();
        out.write_u16::<LittleEndian>(self.cores.len() as u16)
            .unwrap();
        for core in &self.cores {
            out.write_u16::<LittleEndian>(core.core_id).unwrap();
            out.write_u32::<LittleEndian>(core.chunks.len() as u32)
                .unwrap();
            for chunk in &core.chunks {
                out.write_u64::<LittleEndian>(chunk.record.aux_offset)
                    .unwrap();
                out.write_u64::<LittleEndian>(chunk.payload.len() as u64)
                    .unwrap();
                out.write_u32::<LittleEndian>(chunk.record.flags.bits())
                    .unwrap();
                out.extend_from_slice(&chunk.payload);
            }
        }
        let digest = fnv1a64(&out);
        out.write_u64::<LittleEndian>(digest).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TraceFileError> {
        if bytes.len() < HEADER_LEN + DIGEST_LEN {
            return Err(TraceFileError::Malformed(format!(
                "{} bytes is shorter than the fixed header and trailer",
                bytes.len()
            )));
        }
        if &bytes[..4] != TRACE_MAGIC {
            return Err(TraceFileError::Malformed("bad magic".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(TraceFileError::DigestMismatch { stored, computed });
        }

        let mut rd = Cursor::new(&body[4..]);
        let malformed =
            |e: io::Error| TraceFileError::Malformed(format!("unexpected end of data: {e}"));
        let version = rd.read_u16::<LittleEndian>().map_err(malformed)?;
        if version != TRACE_VERSION {
            return Err(TraceFileError::UnsupportedVersion(version));
        }
        let page_size = rd.read_u32::<LittleEndian>().map_err(malformed)?;
        let core_count = rd.read_u16::<LittleEndian>().map_err(malformed)?;
        let mut cores = Vec::with_capacity(usize::from(core_count));
        for _ in 0..core_count {
            let core_id = rd.read_u16::<LittleEndian>().map_err(malformed)?;
            let record_count = rd.read_u32::<LittleEndian>().map_err(malformed)?;
            let mut chunks = Vec::new();
            for _ in 0..record_count {
                let aux_offset = rd.read_u64::<LittleEndian>().map_err(malformed)?;
                let aux_size = rd.read_u64::<LittleEndian>().map_err(malformed)?;
                let flags = rd.read_u32::<LittleEndian>().map_err(malformed)?;
                let remaining = body.len() as u64 - 4 - rd.position();
                if aux_size > remaining {
                    return Err(TraceFileError::Malformed(format!(
                        "record claims {aux_size} payload bytes, {remaining} remain"
                    )));
                }
                let mut payload = vec![0; aux_size as usize];
                rd.read_exact(&mut payload).map_err(malformed)?;
                chunks.push(AuxChunk {
                    record: AuxRecord {
                        aux_offset,
                        aux_size,
                        flags: AuxFlags::from_bits_retain(flags),
                    },
                    payload,
                });
            }
            cores.push(CoreTrace { core_id, chunks });
        }
        if rd.position() as usize != body.len() - 4 {
            return Err(TraceFileError::Malformed(
                "trailing bytes after last core".into(),
            ));
        }
        Ok(TraceFile { page_size, cores })
    }
}
