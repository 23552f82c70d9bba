//! Ring + aux buffer pair.
//!
//! The aux buffer carries raw packet bytes. The ring buffer carries one
//! 32-byte `PERF_RECORD_AUX`-style descriptor per append, telling the consumer
//! which aux region to read. Both use free-running `u64` cursors; the physical
//! position of a cursor is `cursor % capacity`.
//!
//! Publication order on the producer side is: payload words, ring record,
//! ring head (release), aux head (release). The consumer acquires the ring
//! head before reading records and publishes its tails after copying out.
//!
//! Aux space is only ever reclaimed by a drain. When the ring is full the
//! descriptor is dropped but the bytes stay in the aux buffer; the next
//! descriptor that fits covers them too and carries `TRUNCATED`. A drain that
//! finds bytes no descriptor covers emits a synthesized `TRUNCATED`
//! descriptor for them so that nothing appended is lost.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AuxFlags, AuxRecord, TimescaleParams, TransportError};
use crate::codec::PACKET_SIZE;

pub const DEFAULT_PAGE_SIZE: u64 = 65536;

/// Bytes one descriptor occupies in the ring (header + offset + size + flags).
pub const RING_RECORD_SIZE: u64 = 32;

const PERF_RECORD_AUX: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub page_size_bytes: u64,
    /// Data pages, not counting the metadata page.
    pub ring_pages: u64,
    pub aux_pages: u64,
    /// `None` means half the aux capacity.
    pub aux_watermark_bytes: Option<u64>,
}

impl Default for BufferConfig {
    /// 1 MiB ring and 1 MiB aux with 64 KiB pages.
    fn default() -> Self {
        BufferConfig {
            page_size_bytes: DEFAULT_PAGE_SIZE,
            ring_pages: 16,
            aux_pages: 16,
            aux_watermark_bytes: None,
        }
    }
}

impl BufferConfig {
    pub fn new(ring_pages: u64, aux_pages: u64) -> Self {
        BufferConfig {
            ring_pages,
            aux_pages,
            ..Default::default()
        }
    }

    pub fn with_page_size(mut self, page_size_bytes: u64) -> Self {
        self.page_size_bytes = page_size_bytes;
        self
    }

    pub fn ring_capacity(&self) -> u64 {
        self.ring_pages * self.page_size_bytes
    }

    /// Metadata page plus data pages.
    pub fn ring_allocation(&self) -> u64 {
        (self.ring_pages + 1) * self.page_size_bytes
    }

    pub fn aux_capacity(&self) -> u64 {
        self.aux_pages * self.page_size_bytes
    }

    pub fn watermark(&self) -> u64 {
        self.aux_watermark_bytes.unwrap_or(self.aux_capacity() / 2)
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let invalid = |msg: String| Err(TransportError::InvalidConfig(msg));
        if self.page_size_bytes == 0 || !self.page_size_bytes.is_multiple_of(PACKET_SIZE as u64) {
            return invalid(format!(
                "page size must be a positive multiple of {PACKET_SIZE}, got {}",
                self.page_size_bytes
            ));
        }
        if self.ring_pages == 0 {
            return invalid("ring buffer needs at least one data page".into());
        }
        if self.aux_pages == 0 {
            return invalid("aux buffer needs at least one page".into());
        }
        let wm = self.watermark();
        if wm == 0 || wm > self.aux_capacity() {
            return invalid(format!(
                "aux watermark {wm} must be in 1..={}",
                self.aux_capacity()
            ));
        }
        Ok(())
    }
}

/// Snapshot of the metadata page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataPage {
    pub timescale: TimescaleParams,
    pub ring_head: u64,
    pub ring_tail: u64,
    pub aux_head: u64,
    pub aux_tail: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Written {
        record: AuxRecord,
        watermark_crossed: bool,
        /// The ring had no room; the descriptor was not published.
        metadata_dropped: bool,
    },
    Truncated {
        dropped_bytes: u64,
    },
}

/// Result of a drain: descriptors in FIFO order with their payloads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Drained {
    pub records: Vec<AuxRecord>,
    pub payloads: Vec<Vec<u8>>,
}

impl Drained {
    pub fn total_bytes(&self) -> u64 {
        self.payloads.iter().map(|p| p.len() as u64).sum()
    }
}

/// A fixed-size region of 64-bit words addressed by byte offsets that are
/// multiples of 8.
struct WordRegion {
    words: Box<[AtomicU64]>,
}

impl WordRegion {
    fn zeroed(bytes: u64) -> Self {
        let n = (bytes / 8) as usize;
        WordRegion {
            words: (0..n).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    fn capacity(&self) -> u64 {
        self.words.len() as u64 * 8
    }

    fn word_index(&self, cursor: u64) -> usize {
        ((cursor % self.capacity()) / 8) as usize
    }

    fn write(&self, cursor: u64, bytes: &[u8]) {
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            let w = u64::from_le_bytes(chunk.try_into().unwrap());
            self.words[self.word_index(cursor + 8 * i as u64)].store(w, Ordering::Relaxed);
        }
    }

    fn read_into(&self, cursor: u64, len: u64, out: &mut Vec<u8>) {
        for i in 0..len / 8 {
            let w = self.words[self.word_index(cursor + 8 * i)].load(Ordering::Relaxed);
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    fn store_word(&self, cursor: u64, w: u64) {
        self.words[self.word_index(cursor)].store(w, Ordering::Relaxed);
    }

    fn load_word(&self, cursor: u64) -> u64 {
        self.words[self.word_index(cursor)].load(Ordering::Relaxed)
    }
}

struct Shared {
    config: BufferConfig,
    timescale: TimescaleParams,
    ring: WordRegion,
    aux: WordRegion,
    ring_head: AtomicU64,
    ring_tail: AtomicU64,
    aux_head: AtomicU64,
    aux_tail: AtomicU64,
}

impl Shared {
    fn metadata(&self) -> MetadataPage {
        MetadataPage {
            timescale: self.timescale,
            ring_head: self.ring_head.load(Ordering::Acquire),
            ring_tail: self.ring_tail.load(Ordering::Acquire),
            aux_head: self.aux_head.load(Ordering::Acquire),
            aux_tail: self.aux_tail.load(Ordering::Acquire),
        }
    }
}

/// Producer half. Owns the head cursors and the sticky flag state.
pub struct Producer {
    shared: Arc<Shared>,
    aux_head: u64,
    ring_head: u64,
    sticky: AuxFlags,
    /// Start of aux bytes whose descriptor was dropped.
    uncovered_from: Option<u64>,
}

/// Consumer half. Owns the tail cursors.
pub struct Consumer {
    shared: Arc<Shared>,
    aux_tail: u64,
    ring_tail: u64,
}

impl Producer {
    pub fn aux_fill(&self) -> u64 {
        self.aux_head - self.shared.aux_tail.load(Ordering::Acquire)
    }

    pub fn aux_free(&self) -> u64 {
        self.shared.config.aux_capacity() - self.aux_fill()
    }

    pub fn append(
        &mut self,
        packets: &[u8],
        flags: AuxFlags,
    ) -> Result<AppendOutcome, TransportError> {
        if !packets.len().is_multiple_of(PACKET_SIZE) {
            return Err(TransportError::Unaligned { len: packets.len() });
        }
        let shared = &*self.shared;
        let len = packets.len() as u64;
        let aux_tail = shared.aux_tail.load(Ordering::Acquire);
        let free = shared.config.aux_capacity() - (self.aux_head - aux_tail);
        if len > free {
            self.sticky |= AuxFlags::TRUNCATED;
            return Ok(AppendOutcome::Truncated { dropped_bytes: len });
        }

        shared.aux.write(self.aux_head, packets);
        let new_head = self.aux_head + len;
        let start = self.uncovered_from.unwrap_or(self.aux_head);
        let record = AuxRecord {
            aux_offset: start,
            aux_size: new_head - start,
            flags: flags | self.sticky,
        };

        let ring_tail = shared.ring_tail.load(Ordering::Acquire);
        let metadata_dropped =
            self.ring_head - ring_tail + RING_RECORD_SIZE > shared.ring.capacity();
        if metadata_dropped {
            self.uncovered_from = Some(start);
            self.sticky |= AuxFlags::TRUNCATED;
        } else {
            let at = self.ring_head;
            shared
                .ring
                .store_word(at, PERF_RECORD_AUX | (RING_RECORD_SIZE << 48));
            shared.ring.store_word(at + 8, record.aux_offset);
            shared.ring.store_word(at + 16, record.aux_size);
            shared
                .ring
                .store_word(at + 24, u64::from(record.flags.bits()));
            self.ring_head += RING_RECORD_SIZE;
            shared.ring_head.store(self.ring_head, Ordering::Release);
            self.sticky = AuxFlags::empty();
            self.uncovered_from = None;
        }

        self.aux_head = new_head;
        shared.aux_head.store(new_head, Ordering::Release);
        Ok(AppendOutcome::Written {
            record,
            watermark_crossed: new_head - aux_tail >= shared.config.watermark(),
            metadata_dropped,
        })
    }
}

impl Consumer {
    pub fn drain(&mut self) -> Drained {
        let shared = &*self.shared;
        let mut out = Drained::default();
        let ring_head = shared.ring_head.load(Ordering::Acquire);
        while self.ring_tail < ring_head {
            let at = self.ring_tail;
            let offset = shared.ring.load_word(at + 8);
            let size = shared.ring.load_word(at + 16);
            let flags = AuxFlags::from_bits_truncate(shared.ring.load_word(at + 24) as u32);
            self.ring_tail += RING_RECORD_SIZE;

            // Descriptors may start before the tail when they re-cover bytes
            // an earlier drain already handed out.
            let end = offset + size;
            let start = offset.max(self.aux_tail);
            let mut payload = Vec::new();
            if end > start {
                shared.aux.read_into(start, end - start, &mut payload);
                self.aux_tail = end;
            }
            out.records.push(AuxRecord {
                aux_offset: start.min(end),
                aux_size: end.saturating_sub(start),
                flags,
            });
            out.payloads.push(payload);
        }
        shared.ring_tail.store(self.ring_tail, Ordering::Release);

        let aux_head = shared.aux_head.load(Ordering::Acquire);
        if aux_head > self.aux_tail {
            let mut payload = Vec::new();
            shared
                .aux
                .read_into(self.aux_tail, aux_head - self.aux_tail, &mut payload);
            out.records.push(AuxRecord {
                aux_offset: self.aux_tail,
                aux_size: aux_head - self.aux_tail,
                flags: AuxFlags::TRUNCATED,
            });
            out.payloads.push(payload);
            self.aux_tail = aux_head;
        }
        shared.aux_tail.store(self.aux_tail, Ordering::Release);
        out
    }
}

/// Ring and aux buffers for one core, usable from a single context or split
/// into a [`Producer`] and [`Consumer`] for concurrent use.
pub struct BufferPair {
    producer: Producer,
    consumer: Consumer,
}

impl BufferPair {
    pub fn create(
        config: BufferConfig,
        timescale: TimescaleParams,
    ) -> Result<Self, TransportError> {
        config.validate()?;
        timescale.validate()?;
        let shared = Arc::new(Shared {
            config,
            timescale,
            ring: WordRegion::zeroed(config.ring_capacity()),
            aux: WordRegion::zeroed(config.aux_capacity()),
            ring_head: AtomicU64::new(0),
            ring_tail: AtomicU64::new(0),
            aux_head: AtomicU64::new(0),
            aux_tail: AtomicU64::new(0),
        });
        Ok(BufferPair {
            producer: Producer {
                shared: Arc::clone(&shared),
                aux_head: 0,
                ring_head: 0,
                sticky: AuxFlags::empty(),
                uncovered_from: None,
            },
            consumer: Consumer {
                shared,
                aux_tail: 0,
                ring_tail: 0,
            },
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.producer.shared.config
    }

    pub fn metadata(&self) -> MetadataPage {
        self.producer.shared.metadata()
    }

    pub fn aux_fill(&self) -> u64 {
        self.producer.aux_fill()
    }

    pub fn aux_free(&self) -> u64 {
        self.producer.aux_free()
    }

    /// Bytes of descriptors not yet consumed.
    pub fn ring_fill(&self) -> u64 {
        self.producer.ring_head - self.producer.shared.ring_tail.load(Ordering::Acquire)
    }

    pub fn producer_append(
        &mut self,
        packets: &[u8],
        flags: AuxFlags,
    ) -> Result<AppendOutcome, TransportError> {
        self.producer.append(packets, flags)
    }

    pub fn consumer_drain(&mut self) -> Drained {
        let drained = self.consumer.drain();
        // Everything present was handed out, including uncovered bytes.
        self.producer.uncovered_from = None;
        drained
    }

    pub fn split(self) -> (Producer, Consumer) {
        (self.producer, self.consumer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packets(n: usize, fill: u8) -> Vec<u8> {
        vec![fill; n * PACKET_SIZE]
    }

    fn pair(ring_pages: u64, aux_pages: u64, page: u64) -> BufferPair {
        BufferPair::create(
            BufferConfig::new(ring_pages, aux_pages).with_page_size(page),
            TimescaleParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn capacities() {
        let c = BufferConfig::new(8, 16);
        assert_eq!(c.ring_capacity(), 524_288);
        assert_eq!(c.ring_allocation(), 589_824);
        assert_eq!(c.aux_capacity(), 1_048_576);
        assert_eq!(c.watermark(), 524_288);
        // nine pages total: eight data pages and the metadata page
        assert_eq!(c.ring_allocation() / c.page_size_bytes, 9);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BufferConfig::new(0, 4).validate().is_err());
        assert!(BufferConfig::new(4, 0).validate().is_err());
        assert!(BufferConfig::new(4, 4)
            .with_page_size(100)
            .validate()
            .is_err());
        let mut c = BufferConfig::new(4, 4);
        c.aux_watermark_bytes = Some(c.aux_capacity() + 64);
        assert!(c.validate().is_err());
        c.aux_watermark_bytes = Some(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn fresh_buffers_are_empty() {
        let mut b = pair(8, 16, DEFAULT_PAGE_SIZE);
        let m = b.metadata();
        assert_eq!(
            (m.ring_head, m.ring_tail, m.aux_head, m.aux_tail),
            (0, 0, 0, 0)
        );
        assert_eq!(b.consumer_drain(), Drained::default());
    }

    #[test]
    fn empty_append_yields_zero_sized_record() {
        let mut b = pair(8, 16, DEFAULT_PAGE_SIZE);
        match b.producer_append(&[], AuxFlags::empty()).unwrap() {
            AppendOutcome::Written {
                record,
                watermark_crossed,
                ..
            } => {
                assert_eq!(record.aux_size, 0);
                assert!(!watermark_crossed);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(b.aux_fill(), 0);
    }

    #[test]
    fn first_append_record_and_watermark() {
        let mut b = pair(8, 16, DEFAULT_PAGE_SIZE);
        let out = b
            .producer_append(&packets(10, 1), AuxFlags::empty())
            .unwrap();
        // fill model: 640 bytes in, watermark at half of 1 MiB
        assert_eq!(
            out,
            AppendOutcome::Written {
                record: AuxRecord {
                    aux_offset: 0,
                    aux_size: 640,
                    flags: AuxFlags::empty()
                },
                watermark_crossed: 640 >= 524_288,
                metadata_dropped: false,
            }
        );
    }

    #[test]
    fn full_aux_truncates_and_flags_next_record() {
        let mut b = pair(1, 1, 4096);
        let cap = b.config().aux_capacity() as usize;
        assert!(matches!(
            b.producer_append(&vec![7; cap], AuxFlags::empty()).unwrap(),
            AppendOutcome::Written {
                watermark_crossed: true,
                ..
            }
        ));
        assert_eq!(
            b.producer_append(&packets(1, 0), AuxFlags::empty())
                .unwrap(),
            AppendOutcome::Truncated { dropped_bytes: 64 }
        );
        let drained = b.consumer_drain();
        assert_eq!(drained.total_bytes(), cap as u64);
        let out = b
            .producer_append(&packets(1, 2), AuxFlags::COLLISION)
            .unwrap();
        match out {
            AppendOutcome::Written { record, .. } => {
                assert_eq!(record.flags, AuxFlags::TRUNCATED | AuxFlags::COLLISION)
            }
            other => panic!("{other:?}"),
        }
        // sticky flag clears once reported
        match b
            .producer_append(&packets(1, 3), AuxFlags::empty())
            .unwrap()
        {
            AppendOutcome::Written { record, .. } => assert!(record.flags.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unaligned_append_is_rejected() {
        let mut b = pair(1, 1, 4096);
        assert_eq!(
            b.producer_append(&[0; 65], AuxFlags::empty()),
            Err(TransportError::Unaligned { len: 65 })
        );
    }

    #[test]
    fn drain_returns_fifo_with_payloads() {
        let mut b = pair(1, 1, 4096);
        let a: Vec<u8> = (0..128).map(|i| i as u8).collect();
        let c: Vec<u8> = (0..192).map(|i| (255 - i) as u8).collect();
        b.producer_append(&a, AuxFlags::empty()).unwrap();
        b.producer_append(&c, AuxFlags::COLLISION).unwrap();
        let d = b.consumer_drain();
        assert_eq!(d.payloads, vec![a, c]);
        assert_eq!(
            d.records[0],
            AuxRecord {
                aux_offset: 0,
                aux_size: 128,
                flags: AuxFlags::empty()
            }
        );
        assert_eq!(
            d.records[1],
            AuxRecord {
                aux_offset: 128,
                aux_size: 192,
                flags: AuxFlags::COLLISION
            }
        );
        assert_eq!(b.aux_fill(), 0);
        assert_eq!(b.ring_fill(), 0);
    }

    #[test]
    fn payload_reassembles_across_wrap() {
        let mut b = pair(1, 1, 4096);
        b.producer_append(&packets(60, 0), AuxFlags::empty())
            .unwrap();
        b.consumer_drain();
        // head now at 3840 of 4096: the next 512 bytes wrap
        let data: Vec<u8> = (0..512u32).map(|i| (i * 7 % 251) as u8).collect();
        b.producer_append(&data, AuxFlags::empty()).unwrap();
        let d = b.consumer_drain();
        assert_eq!(d.payloads, vec![data]);
        assert_eq!(d.records[0].aux_offset % 4096, 3840);
    }

    #[test]
    fn dropped_descriptors_are_recovered() {
        // 64-byte ring page holds two descriptors
        let mut b = pair(1, 4, 64);
        let chunks: Vec<Vec<u8>> = (0..3).map(|i| packets(1, i)).collect();
        for c in &chunks[..2] {
            b.producer_append(c, AuxFlags::empty()).unwrap();
        }
        match b.producer_append(&chunks[2], AuxFlags::empty()).unwrap() {
            AppendOutcome::Written {
                metadata_dropped, ..
            } => assert!(metadata_dropped),
            other => panic!("{other:?}"),
        }
        let d = b.consumer_drain();
        assert_eq!(d.records.len(), 3);
        assert_eq!(d.records[2].flags, AuxFlags::TRUNCATED);
        assert_eq!(d.payloads.concat(), chunks.concat());
        assert_eq!(b.aux_fill(), 0);
    }
}
