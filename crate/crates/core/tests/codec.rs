use nmo_core::codec::{
    decode_packet, decode_slice, decode_stream, encode_record, CodecError, DecodeOutcome,
    MemoryLevel, OpKind, PacketBytes, SampleRecord, SkipReason, PACKET_SIZE,
};
use proptest::prelude::*;

fn record_strategy() -> impl Strategy<Value = SampleRecord> {
    (
        1..=u64::MAX,
        1..=u64::MAX,
        prop::sample::select(OpKind::ALL.to_vec()),
        prop::sample::select(MemoryLevel::ALL.to_vec()),
        any::<u32>(),
        any::<u16>(),
    )
        .prop_map(|(va, ts, op, level, lat, core)| SampleRecord {
            virtual_address: va,
            timestamp: ts,
            op_kind: op,
            memory_level: level,
            latency_cycles: lat,
            core_id: core,
        })
}

/// Built byte by byte, without the encoder.
fn hand_packet(op: u8, level: u8, lat: u32, core: u16, va: u64, ts: u64) -> [u8; 64] {
    let mut p = [0u8; 64];
    p[0] = op;
    p[1] = level;
    for i in 0..4 {
        p[2 + i] = (lat >> (8 * i)) as u8;
    }
    p[6] = core as u8;
    p[7] = (core >> 8) as u8;
    p[30] = 0xb2;
    for i in 0..8 {
        p[31 + i] = (va >> (8 * i)) as u8;
        p[56 + i] = (ts >> (8 * i)) as u8;
    }
    p[55] = 0x71;
    p
}

#[test]
fn golden_packet_decodes() {
    let raw = hand_packet(
        1,
        3,
        1470,
        0x0102,
        0x0000_ffff_8000_1040,
        0x1122_3344_5566_7788,
    );
    let expected = SampleRecord {
        virtual_address: 0x0000_ffff_8000_1040,
        timestamp: 0x1122_3344_5566_7788,
        op_kind: OpKind::Store,
        memory_level: MemoryLevel::Dram,
        latency_cycles: 1470,
        core_id: 0x0102,
    };
    assert_eq!(
        decode_packet(&PacketBytes(raw)),
        DecodeOutcome::Record(expected)
    );
    assert_eq!(encode_record(&expected).0, raw);
}

#[test]
fn golden_skip_reasons() {
    let good = hand_packet(0, 0, 4, 0, 0x1000, 77);
    type Corrupt = fn(&mut [u8; 64]);
    let cases: [(Corrupt, SkipReason); 5] = [
        (|p| p[30] = 0xb3, SkipReason::BadAddressMarker),
        (|p| p[55] = 0x00, SkipReason::BadTimestampMarker),
        (|p| p[31..39].fill(0), SkipReason::ZeroAddress),
        (|p| p[56..64].fill(0), SkipReason::ZeroTimestamp),
        // Both markers bad: the address marker is reported.
        (
            |p| {
                p[30] = 0;
                p[55] = 0;
            },
            SkipReason::BadAddressMarker,
        ),
    ];
    for (corrupt, reason) in cases {
        let mut p = good;
        corrupt(&mut p);
        assert_eq!(
            decode_packet(&PacketBytes(p)),
            DecodeOutcome::Skip(reason),
            "{reason:?}"
        );
    }
}

#[test]
fn stream_counts_skips_and_keeps_order() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&hand_packet(0, 0, 1, 0, 0x10, 1));
    bytes.extend_from_slice(&hand_packet(0, 0, 1, 0, 0, 2));
    bytes.extend_from_slice(&hand_packet(1, 2, 1, 0, 0x30, 3));
    bytes.extend_from_slice(&[0u8; 64]);
    let (records, stats) = decode_stream(&bytes).unwrap();
    let vas: Vec<u64> = records.iter().map(|r| r.virtual_address).collect();
    assert_eq!(vas, [0x10, 0x30]);
    assert_eq!(stats.zero_address, 1);
    assert_eq!(stats.bad_address_marker, 1);
    assert_eq!(stats.total(), 2);
}

#[test]
fn length_errors() {
    assert_eq!(
        decode_stream(&[0u8; 65]),
        Err(CodecError::TruncatedStream { residual: 1 })
    );
    assert_eq!(decode_slice(&[0u8; 63]), Err(CodecError::PacketLength(63)));
    assert_eq!(decode_stream(&[]).unwrap().0, []);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn roundtrip(r in record_strategy()) {
        let packet = encode_record(&r);
        prop_assert_eq!(packet.0.len(), PACKET_SIZE);
        prop_assert_eq!(decode_packet(&packet), DecodeOutcome::Record(r));
    }

    #[test]
    fn decode_is_total(
        head in prop::array::uniform32(any::<u8>()),
        tail in prop::array::uniform32(any::<u8>()),
        markers: bool,
    ) {
        let mut raw = [0u8; 64];
        raw[..32].copy_from_slice(&head);
        raw[32..].copy_from_slice(&tail);
        if markers {
            raw[30] = 0xb2;
            raw[55] = 0x71;
        }
        match decode_packet(&PacketBytes(raw)) {
            DecodeOutcome::Record(r) => {
                prop_assert_eq!(raw[30], 0xb2);
                prop_assert_eq!(raw[55], 0x71);
                prop_assert!(r.virtual_address != 0 && r.timestamp != 0);
                // Re-encoding canonicalizes reserved bytes but keeps the record.
                prop_assert_eq!(decode_packet(&encode_record(&r)), DecodeOutcome::Record(r));
            }
            DecodeOutcome::Skip(_) => {}
        }
    }

    #[test]
    fn stream_is_concatenation(records in prop::collection::vec(record_strategy(), 0..50)) {
        let bytes: Vec<u8> = records.iter().flat_map(|r| encode_record(r).0).collect();
        let (decoded, stats) = decode_stream(&bytes).unwrap();
        prop_assert_eq!(decoded, records);
        prop_assert_eq!(stats.total(), 0);
    }
}
