//! Property tests for the byte-level round trips:
//! assemble(dissect(p)) == p, decode(encode(r)) == r, and dissector
//! totality over arbitrary bytes.

use proptest::prelude::*;

use pktlm_core::assemble::assemble;
use pktlm_core::dissect::{dissect, RawPacket};
use pktlm_core::record::{FieldRecord, FieldValue, Payload};
use pktlm_core::schema::*;
use pktlm_core::tokenize::{decode, encode, validate};
use pktlm_core::vocab::{build_vocab, VocabConfig};

/// Strategy for a schema-conforming synthetic record (always a TCP packet,
/// optionally with a TLS record and hello).
fn record_strategy() -> impl Strategy<Value = FieldRecord> {
    (
        any::<[u8; 6]>(),   // eth dst
        any::<[u8; 6]>(),   // eth src
        any::<[u8; 4]>(),   // ip src
        any::<[u8; 4]>(),   // ip dst
        0u64..65536,        // sport
        0u64..65536,        // dport
        any::<u32>(),       // seq
        any::<u32>(),       // ack
        0u64..256,          // tcp flags
        prop::collection::vec(any::<u8>(), 0..50), // payload
        prop::option::of((
            prop_oneof![Just(22u64), Just(23u64)], // content type
            0x0301u64..0x0305,                     // record version
            prop::option::of((
                prop_oneof![Just(1u64), Just(2u64)], // hello type
                any::<[u8; 32]>(),                   // random
                prop::collection::vec(any::<u8>(), 0..16), // session id
            )),
        )),
        prop::option::of(prop::collection::vec(any::<u8>(), 1..10)), // ip options (padded)
    )
        .prop_map(
            |(edst, esrc, isrc, idst, sport, dport, seq, ack, flags, payload, tls, ipopts)| {
                let schema = ProtocolSchema::builtin();
                let mut r = FieldRecord::all_absent(&schema);
                r.set(F_ETH_DST, FieldValue::Bytes(edst.to_vec()));
                r.set(F_ETH_SRC, FieldValue::Bytes(esrc.to_vec()));
                r.set(F_ETH_TYPE, FieldValue::Int(0x0800));
                r.set(F_IP_VERSION, FieldValue::Int(4));
                r.set(F_IP_IHL, FieldValue::Recompute);
                r.set(F_IP_TOS, FieldValue::Int(0));
                r.set(F_IP_LEN, FieldValue::Recompute);
                r.set(F_IP_ID, FieldValue::Int(4660));
                r.set(F_IP_FLAGS, FieldValue::Int(2));
                r.set(F_IP_FRAG, FieldValue::Int(0));
                r.set(F_IP_TTL, FieldValue::Int(64));
                r.set(F_IP_PROTO, FieldValue::Int(6));
                r.set(F_IP_CHECKSUM, FieldValue::Recompute);
                r.set(F_IP_SRC, FieldValue::Bytes(isrc.to_vec()));
                r.set(F_IP_DST, FieldValue::Bytes(idst.to_vec()));
                if let Some(mut opts) = ipopts {
                    while opts.len() % 4 != 0 {
                        opts.push(0);
                    }
                    if !opts.is_empty() {
                        r.set(F_IP_OPTIONS, FieldValue::Bytes(opts));
                    }
                }
                r.set(F_TCP_SPORT, FieldValue::Int(sport));
                r.set(F_TCP_DPORT, FieldValue::Int(dport));
                r.set(F_TCP_SEQ, FieldValue::Int(seq as u64));
                r.set(F_TCP_ACK, FieldValue::Int(ack as u64));
                r.set(F_TCP_DATA_OFFSET, FieldValue::Recompute);
                r.set(F_TCP_RESERVED, FieldValue::Int(0));
                r.set(F_TCP_FLAGS, FieldValue::Int(flags));
                r.set(F_TCP_WINDOW, FieldValue::Int(29200));
                r.set(F_TCP_CHECKSUM, FieldValue::Recompute);
                r.set(F_TCP_URGENT, FieldValue::Int(0));
                if let Some((ct, ver, hello)) = tls {
                    r.set(F_TLS_CONTENT_TYPE, FieldValue::Int(ct));
                    r.set(F_TLS_VERSION, FieldValue::Int(ver));
                    r.set(F_TLS_LENGTH, FieldValue::Recompute);
                    if ct == 22 {
                        if let Some((ht, random, sid)) = hello {
                            r.set(F_HS_TYPE, FieldValue::Int(ht));
                            r.set(F_HS_LENGTH, FieldValue::Recompute);
                            r.set(F_HS_VERSION, FieldValue::Int(0x0303));
                            r.set(F_HS_RANDOM, FieldValue::Bytes(random.to_vec()));
                            r.set(F_HS_SESSION_ID_LEN, FieldValue::Recompute);
                            if !sid.is_empty() {
                                r.set(F_HS_SESSION_ID, FieldValue::Bytes(sid));
                            }
                            if ht == 1 {
                                r.set(F_HS_CIPHER_SUITES_LEN, FieldValue::Int(4));
                            }
                            r.set(F_HS_CIPHER_SUITE, FieldValue::Int(0x1301));
                        }
                    }
                }
                r.payload = Payload::Bytes(payload);
                r
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// assemble then dissect then assemble reproduces the bytes exactly.
    #[test]
    fn assemble_dissect_byte_identity(rec in record_strategy()) {
        let schema = ProtocolSchema::builtin();
        let pkt = assemble(&rec, &schema).unwrap();
        let dissected = dissect(&pkt, &schema).unwrap();
        let back = assemble(&dissected, &schema).unwrap();
        prop_assert_eq!(&pkt.bytes, &back.bytes);
        // recomputed checksums always verify
        prop_assert!(dissected.meta.warnings.is_empty());
    }

    /// The dissector is total: arbitrary bytes produce a record or an error,
    /// never a panic; records round-trip to the same bytes.
    #[test]
    fn dissect_total_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let schema = ProtocolSchema::builtin();
        let pkt = RawPacket::new(0, 0, bytes.clone());
        if let Ok(rec) = dissect(&pkt, &schema) {
            let back = assemble(&rec, &schema).unwrap();
            prop_assert_eq!(bytes, back.bytes);
        }
    }

    /// Fuzzed-but-parseable mutations: flip one byte of a valid frame; if it
    /// still dissects, reassembly is still the identity.
    #[test]
    fn mutated_frames_roundtrip(rec in record_strategy(), pos_seed in any::<u64>(), val in any::<u8>()) {
        let schema = ProtocolSchema::builtin();
        let mut bytes = assemble(&rec, &schema).unwrap().bytes;
        let pos = (pos_seed as usize) % bytes.len();
        bytes[pos] = val;
        let pkt = RawPacket::new(0, 0, bytes.clone());
        if let Ok(r) = dissect(&pkt, &schema) {
            let back = assemble(&r, &schema).unwrap();
            prop_assert_eq!(bytes, back.bytes);
        }
    }

    /// encode/decode identity over dissected records, and through the full
    /// chain back to bytes.
    #[test]
    fn tokenize_roundtrip_and_full_chain(recs in prop::collection::vec(record_strategy(), 1..8)) {
        let schema = ProtocolSchema::builtin();
        let packets: Vec<RawPacket> = recs.iter().map(|r| assemble(r, &schema).unwrap()).collect();
        let dissected: Vec<FieldRecord> =
            packets.iter().map(|p| dissect(p, &schema).unwrap()).collect();
        let vocab = build_vocab(&dissected, &[], &VocabConfig::default(), &schema).unwrap();
        for (rec, pkt) in dissected.iter().zip(packets.iter()) {
            let seq = encode(rec, &vocab, &schema, None, 512).unwrap();
            prop_assert!(validate(&seq.ids, &vocab, &schema).valid);
            let back = decode(&seq, &vocab, &schema).unwrap();
            prop_assert_eq!(&back, rec);
            let bytes = assemble(&back, &schema).unwrap();
            prop_assert_eq!(&bytes.bytes, &pkt.bytes);
        }
    }

}

/// Monte-Carlo: of 1000 random shuffles of a valid sequence, at least 99%
/// are flagged invalid. (A shuffle can in principle permute only raw byte
/// tokens and stay grammatical, so 100% is not guaranteed.)
#[test]
fn shuffled_sequences_are_flagged() {
    let schema = ProtocolSchema::builtin();
    let mut rec = FieldRecord::all_absent(&schema);
    rec.set(F_TCP_SPORT, FieldValue::Int(50000));
    rec.set(F_TCP_DPORT, FieldValue::Int(443));
    rec.set(F_TLS_VERSION, FieldValue::Int(0x0301));
    rec.payload = Payload::Bytes(vec![1, 2, 3]);
    let vocab =
        build_vocab(core::slice::from_ref(&rec), &[], &VocabConfig::default(), &schema).unwrap();
    let seq = encode(&rec, &vocab, &schema, None, 512).unwrap();
    assert!(validate(&seq.ids, &vocab, &schema).valid);

    let mut rng = pktlm_core::rng::Rng::seed_from(2024);
    let mut flagged = 0usize;
    const TRIALS: usize = 1000;
    for _ in 0..TRIALS {
        let mut ids = seq.ids.clone();
        rng.shuffle(&mut ids);
        if ids == seq.ids {
            continue;
        }
        let rep = validate(&ids, &vocab, &schema);
        if !rep.valid {
            assert!(!rep.violations.is_empty());
            flagged += 1;
        }
    }
    assert!(flagged >= TRIALS * 99 / 100, "only {}/1000 shuffles flagged", flagged);
}
