//! Packet dissection: raw bytes to an ordered field record.
//!
//! The dissector is total over arbitrary byte input: it returns a record or
//! a structured error, never panics. Every byte of the input ends up either
//! inside a parsed field or in the trailing payload blob, so assembly can
//! reproduce the packet exactly.

use alloc::vec::Vec;
use core::fmt;

use crate::checksum::{ipv4_header_checksum, tcp_checksum};
use crate::record::{FieldRecord, FieldValue, Payload, SkipReason, Warnings};
use crate::schema::*;

/// A captured packet: timestamp, captured bytes, and original wire length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub ts_sec: u64,
    pub ts_usec: u32,
    pub bytes: Vec<u8>,
    pub original_length: u32,
}

impl RawPacket {
    pub fn new(ts_sec: u64, ts_usec: u32, bytes: Vec<u8>) -> Self {
        let original_length = bytes.len() as u32;
        RawPacket { ts_sec, ts_usec, bytes, original_length }
    }
}

/// Structured dissection failure naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DissectError {
    pub field: &'static str,
    pub offset: usize,
    pub reason: DissectReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissectReason {
    /// The packet has no bytes at all.
    EmptyPacket,
    /// Fixed header does not fit in the remaining bytes.
    Truncated,
    /// A length field is inconsistent with the surrounding structure.
    BadLength,
    /// A value is outside its field's domain.
    BadValue,
}

impl fmt::Display for DissectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.reason {
            DissectReason::EmptyPacket => "empty packet",
            DissectReason::Truncated => "truncated",
            DissectReason::BadLength => "bad length",
            DissectReason::BadValue => "bad value",
        };
        write!(f, "dissect: {} at {} (offset {})", what, self.field, self.offset)
    }
}

fn err(field: &'static str, offset: usize, reason: DissectReason) -> DissectError {
    DissectError { field, offset, reason }
}

fn be_uint(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64)
}

/// Dissect one packet under the schema.
///
/// Layer rules:
/// * Ethernet II always parses (error if under 14 bytes).
/// * `eth.type == 0x0800` dispatches into IPv4; anything else stops at the
///   Ethernet layer with a `NonIpv4` skip mark.
/// * A structurally claimed IPv4 header that does not parse is an error;
///   a valid IPv4 header with a non-TCP protocol stops at the Ethernet
///   layer with a `NonTcp` skip mark (deeper fields all absent).
/// * TCP parses per its data offset; the TLS record layer is attempted when
///   the logical TCP payload looks like a record start (content type in
///   20..=23, version 0x03xx with minor <= 4).
/// * ClientHello/ServerHello fixed fields parse only when they fit
///   completely; otherwise the handshake layer stays absent and its bytes
///   remain in the payload blob.
pub fn dissect(packet: &RawPacket, schema: &ProtocolSchema) -> Result<FieldRecord, DissectError> {
    let bytes = &packet.bytes;
    if bytes.is_empty() {
        return Err(err("eth.dst", 0, DissectReason::EmptyPacket));
    }
    let mut rec = FieldRecord::all_absent(schema);
    rec.meta.ts_sec = packet.ts_sec;
    rec.meta.ts_usec = packet.ts_usec;

    // --- Ethernet II ---
    if bytes.len() < 14 {
        return Err(err("eth.dst", 0, DissectReason::Truncated));
    }
    rec.set(F_ETH_DST, FieldValue::Bytes(bytes[0..6].to_vec()));
    rec.set(F_ETH_SRC, FieldValue::Bytes(bytes[6..12].to_vec()));
    let ethertype = be_uint(&bytes[12..14]);
    rec.set(F_ETH_TYPE, FieldValue::Int(ethertype));
    let eth_end = 14;

    if ethertype != ETHERTYPE_IPV4 {
        rec.meta.skip = Some(SkipReason::NonIpv4);
        rec.payload = Payload::Bytes(bytes[eth_end..].to_vec());
        return Ok(rec);
    }

    // --- IPv4 ---
    let ip_start = eth_end;
    if bytes.len() < ip_start + 20 {
        return Err(err("ip.version", ip_start, DissectReason::Truncated));
    }
    let version = (bytes[ip_start] >> 4) as u64;
    let ihl = (bytes[ip_start] & 0x0f) as u64;
    if version != 4 {
        return Err(err("ip.version", ip_start, DissectReason::BadValue));
    }
    if ihl < 5 {
        return Err(err("ip.ihl", ip_start, DissectReason::BadLength));
    }
    let ip_header_len = (ihl * 4) as usize;
    if bytes.len() < ip_start + ip_header_len {
        return Err(err("ip.ihl", ip_start, DissectReason::Truncated));
    }
    let total_len = be_uint(&bytes[ip_start + 2..ip_start + 4]) as usize;
    if total_len < ip_header_len {
        return Err(err("ip.len", ip_start + 2, DissectReason::BadLength));
    }
    if ip_start + total_len > bytes.len() {
        return Err(err("ip.len", ip_start + 2, DissectReason::Truncated));
    }
    let proto = bytes[ip_start + 9] as u64;

    if proto != IPPROTO_TCP {
        // Not TLS-over-TCP material: stop at the Ethernet layer.
        rec.meta.skip = Some(SkipReason::NonTcp);
        rec.payload = Payload::Bytes(bytes[eth_end..].to_vec());
        return Ok(rec);
    }

    rec.set(F_IP_VERSION, FieldValue::Int(version));
    rec.set(F_IP_IHL, FieldValue::Int(ihl));
    rec.set(F_IP_TOS, FieldValue::Int(bytes[ip_start + 1] as u64));
    rec.set(F_IP_LEN, FieldValue::Int(total_len as u64));
    rec.set(F_IP_ID, FieldValue::Int(be_uint(&bytes[ip_start + 4..ip_start + 6])));
    let flags_frag = be_uint(&bytes[ip_start + 6..ip_start + 8]);
    rec.set(F_IP_FLAGS, FieldValue::Int(flags_frag >> 13));
    rec.set(F_IP_FRAG, FieldValue::Int(flags_frag & 0x1fff));
    rec.set(F_IP_TTL, FieldValue::Int(bytes[ip_start + 8] as u64));
    rec.set(F_IP_PROTO, FieldValue::Int(proto));
    let ip_cksum = be_uint(&bytes[ip_start + 10..ip_start + 12]);
    rec.set(F_IP_CHECKSUM, FieldValue::Int(ip_cksum));
    let ip_src: [u8; 4] = bytes[ip_start + 12..ip_start + 16].try_into().unwrap();
    let ip_dst: [u8; 4] = bytes[ip_start + 16..ip_start + 20].try_into().unwrap();
    rec.set(F_IP_SRC, FieldValue::Bytes(ip_src.to_vec()));
    rec.set(F_IP_DST, FieldValue::Bytes(ip_dst.to_vec()));
    if ip_header_len > 20 {
        rec.set(
            F_IP_OPTIONS,
            FieldValue::Bytes(bytes[ip_start + 20..ip_start + ip_header_len].to_vec()),
        );
    }
    if ipv4_header_checksum(&bytes[ip_start..ip_start + ip_header_len]) != ip_cksum as u16 {
        rec.meta.warnings.set(Warnings::IP_CHECKSUM_MISMATCH);
    }

    // --- TCP ---
    let tcp_start = ip_start + ip_header_len;
    let ip_payload_len = total_len - ip_header_len;
    if ip_payload_len < 20 {
        return Err(err("tcp.sport", tcp_start, DissectReason::Truncated));
    }
    let data_offset = (bytes[tcp_start + 12] >> 4) as u64;
    if data_offset < 5 {
        return Err(err("tcp.data_offset", tcp_start + 12, DissectReason::BadLength));
    }
    let tcp_header_len = (data_offset * 4) as usize;
    if tcp_header_len > ip_payload_len {
        return Err(err("tcp.data_offset", tcp_start + 12, DissectReason::BadLength));
    }
    rec.set(F_TCP_SPORT, FieldValue::Int(be_uint(&bytes[tcp_start..tcp_start + 2])));
    rec.set(F_TCP_DPORT, FieldValue::Int(be_uint(&bytes[tcp_start + 2..tcp_start + 4])));
    rec.set(F_TCP_SEQ, FieldValue::Int(be_uint(&bytes[tcp_start + 4..tcp_start + 8])));
    rec.set(F_TCP_ACK, FieldValue::Int(be_uint(&bytes[tcp_start + 8..tcp_start + 12])));
    rec.set(F_TCP_DATA_OFFSET, FieldValue::Int(data_offset));
    rec.set(F_TCP_RESERVED, FieldValue::Int((bytes[tcp_start + 12] & 0x0f) as u64));
    rec.set(F_TCP_FLAGS, FieldValue::Int(bytes[tcp_start + 13] as u64));
    rec.set(F_TCP_WINDOW, FieldValue::Int(be_uint(&bytes[tcp_start + 14..tcp_start + 16])));
    let tcp_cksum = be_uint(&bytes[tcp_start + 16..tcp_start + 18]);
    rec.set(F_TCP_CHECKSUM, FieldValue::Int(tcp_cksum));
    rec.set(F_TCP_URGENT, FieldValue::Int(be_uint(&bytes[tcp_start + 18..tcp_start + 20])));
    if tcp_header_len > 20 {
        rec.set(
            F_TCP_OPTIONS,
            FieldValue::Bytes(bytes[tcp_start + 20..tcp_start + tcp_header_len].to_vec()),
        );
    }
    let segment = &bytes[tcp_start..ip_start + total_len];
    if tcp_checksum(ip_src, ip_dst, segment) != tcp_cksum as u16 {
        rec.meta.warnings.set(Warnings::TCP_CHECKSUM_MISMATCH);
    }

    // Logical TCP payload is bounded by ip.len; anything past it (Ethernet
    // trailer padding) still belongs to the payload blob for losslessness.
    let tcp_payload_start = tcp_start + tcp_header_len;
    let logical_end = ip_start + total_len;
    let logical_payload = &bytes[tcp_payload_start..logical_end];

    // --- TLS record layer ---
    let tls_plausible = logical_payload.len() >= 5
        && TLS_CONTENT_TYPES.contains(&logical_payload[0])
        && logical_payload[1] == 3
        && logical_payload[2] <= 4;
    if !tls_plausible {
        rec.payload = Payload::Bytes(bytes[tcp_payload_start..].to_vec());
        return Ok(rec);
    }
    let content_type = logical_payload[0] as u64;
    rec.set(F_TLS_CONTENT_TYPE, FieldValue::Int(content_type));
    rec.set(F_TLS_VERSION, FieldValue::Int(be_uint(&logical_payload[1..3])));
    rec.set(F_TLS_LENGTH, FieldValue::Int(be_uint(&logical_payload[3..5])));
    let record_body_start = tcp_payload_start + 5;

    // --- ClientHello / ServerHello fixed fields ---
    let body = &logical_payload[5..];
    let hs = parse_hello(body);
    match hs {
        Some(h) => {
            rec.set(F_HS_TYPE, FieldValue::Int(h.hs_type));
            rec.set(F_HS_LENGTH, FieldValue::Int(h.length));
            rec.set(F_HS_VERSION, FieldValue::Int(h.version));
            rec.set(F_HS_RANDOM, FieldValue::Bytes(h.random.to_vec()));
            rec.set(F_HS_SESSION_ID_LEN, FieldValue::Int(h.session_id_len));
            if !h.session_id.is_empty() {
                rec.set(F_HS_SESSION_ID, FieldValue::Bytes(h.session_id.to_vec()));
            }
            if let Some(cs_len) = h.cipher_suites_len {
                rec.set(F_HS_CIPHER_SUITES_LEN, FieldValue::Int(cs_len));
            }
            if let Some(cs) = h.cipher_suite {
                rec.set(F_HS_CIPHER_SUITE, FieldValue::Int(cs));
            }
            rec.payload = Payload::Bytes(bytes[record_body_start + h.consumed..].to_vec());
        }
        None => {
            rec.payload = Payload::Bytes(bytes[record_body_start..].to_vec());
        }
    }
    Ok(rec)
}

struct Hello<'a> {
    hs_type: u64,
    length: u64,
    version: u64,
    random: &'a [u8],
    session_id_len: u64,
    session_id: &'a [u8],
    cipher_suites_len: Option<u64>,
    cipher_suite: Option<u64>,
    /// Bytes consumed from the record body.
    consumed: usize,
}

/// Parse the fixed prefix of a ClientHello or ServerHello. Returns `None`
/// whenever the fields do not fit completely; the caller then leaves the
/// handshake layer absent.
fn parse_hello(body: &[u8]) -> Option<Hello<'_>> {
    // handshake header: type(1) + length(3); hello: version(2) + random(32)
    // + session_id_len(1)
    if body.len() < 4 + 2 + 32 + 1 {
        return None;
    }
    let hs_type = body[0] as u64;
    if hs_type != HS_CLIENT_HELLO && hs_type != HS_SERVER_HELLO {
        return None;
    }
    let length = be_uint(&body[1..4]);
    let version = be_uint(&body[4..6]);
    let random = &body[6..38];
    let session_id_len = body[38] as u64;
    let sid_start = 39;
    let sid_end = sid_start + session_id_len as usize;
    if body.len() < sid_end {
        return None;
    }
    let session_id = &body[sid_start..sid_end];
    if hs_type == HS_CLIENT_HELLO {
        if body.len() < sid_end + 2 {
            return None;
        }
        let cs_len = be_uint(&body[sid_end..sid_end + 2]);
        if cs_len >= 2 {
            if body.len() < sid_end + 4 {
                return None;
            }
            let cs = be_uint(&body[sid_end + 2..sid_end + 4]);
            Some(Hello {
                hs_type,
                length,
                version,
                random,
                session_id_len,
                session_id,
                cipher_suites_len: Some(cs_len),
                cipher_suite: Some(cs),
                consumed: sid_end + 4,
            })
        } else {
            Some(Hello {
                hs_type,
                length,
                version,
                random,
                session_id_len,
                session_id,
                cipher_suites_len: Some(cs_len),
                cipher_suite: None,
                consumed: sid_end + 2,
            })
        }
    } else {
        if body.len() < sid_end + 2 {
            return None;
        }
        let cs = be_uint(&body[sid_end..sid_end + 2]);
        Some(Hello {
            hs_type,
            length,
            version,
            random,
            session_id_len,
            session_id,
            cipher_suites_len: None,
            cipher_suite: Some(cs),
            consumed: sid_end + 2,
        })
    }
}
