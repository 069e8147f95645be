//! Packet assembly: an ordered field record back to raw bytes.
//!
//! For records produced by dissection this is the exact byte inverse. For
//! synthetic records, derived fields (lengths, checksums) may carry the
//! `Recompute` marker and are filled in from the assembled content.

use alloc::vec::Vec;
use core::fmt;

use crate::checksum::{ipv4_header_checksum, tcp_checksum};
use crate::dissect::RawPacket;
use crate::record::{FieldRecord, FieldValue, Payload};
use crate::schema::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssembleError {
    /// Integer value does not fit the field's bit width, or a byte string
    /// has the wrong length for its codec.
    Range { field: &'static str },
    /// Value variant does not match the field codec (bytes where an integer
    /// belongs, or vice versa).
    Type { field: &'static str },
    /// A field required by the present layers is absent.
    Missing { field: &'static str },
    /// An explicit value contradicts the assembled content.
    Inconsistent { field: &'static str },
    /// `Recompute` on a field that cannot be derived.
    NotRecomputable { field: &'static str },
    /// The payload is still a length bucket; synthesize bytes first.
    PayloadUnsynthesized,
}

impl fmt::Display for AssembleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssembleError::Range { field } => write!(f, "assemble: value out of range for {}", field),
            AssembleError::Type { field } => write!(f, "assemble: wrong value type for {}", field),
            AssembleError::Missing { field } => write!(f, "assemble: missing required field {}", field),
            AssembleError::Inconsistent { field } => {
                write!(f, "assemble: explicit value inconsistent with content for {}", field)
            }
            AssembleError::NotRecomputable { field } => {
                write!(f, "assemble: field {} cannot be recomputed", field)
            }
            AssembleError::PayloadUnsynthesized => {
                write!(f, "assemble: payload is a length bucket; synthesize bytes first")
            }
        }
    }
}

fn uint_value(rec: &FieldRecord, schema: &ProtocolSchema, idx: FieldIdx) -> Result<u64, AssembleError> {
    let spec = schema.field(idx);
    match rec.get(idx) {
        FieldValue::Int(v) => {
            let max = spec.codec.uint_max().ok_or(AssembleError::Type { field: spec.path })?;
            if *v > max {
                return Err(AssembleError::Range { field: spec.path });
            }
            Ok(*v)
        }
        FieldValue::Bytes(_) => Err(AssembleError::Type { field: spec.path }),
        FieldValue::Absent => Err(AssembleError::Missing { field: spec.path }),
        FieldValue::Recompute => Err(AssembleError::NotRecomputable { field: spec.path }),
    }
}

/// Integer field that may be `Recompute`; `None` means "fill in later".
fn uint_or_recompute(
    rec: &FieldRecord,
    schema: &ProtocolSchema,
    idx: FieldIdx,
) -> Result<Option<u64>, AssembleError> {
    let spec = schema.field(idx);
    if matches!(rec.get(idx), FieldValue::Recompute) {
        if !spec.recomputable {
            return Err(AssembleError::NotRecomputable { field: spec.path });
        }
        return Ok(None);
    }
    uint_value(rec, schema, idx).map(Some)
}

fn bytes_value<'a>(
    rec: &'a FieldRecord,
    schema: &ProtocolSchema,
    idx: FieldIdx,
) -> Result<&'a [u8], AssembleError> {
    let spec = schema.field(idx);
    match rec.get(idx) {
        FieldValue::Bytes(b) => {
            match spec.codec {
                FieldCodec::Bytes { len } => {
                    if b.len() != len as usize {
                        return Err(AssembleError::Range { field: spec.path });
                    }
                }
                FieldCodec::VarBytes { max } => {
                    if b.len() > max as usize {
                        return Err(AssembleError::Range { field: spec.path });
                    }
                }
                FieldCodec::UInt { .. } => return Err(AssembleError::Type { field: spec.path }),
            }
            Ok(b)
        }
        FieldValue::Int(_) => Err(AssembleError::Type { field: spec.path }),
        FieldValue::Absent => Err(AssembleError::Missing { field: spec.path }),
        FieldValue::Recompute => Err(AssembleError::NotRecomputable { field: spec.path }),
    }
}

/// Variable byte field that may be absent (absent contributes zero bytes).
fn optional_bytes<'a>(
    rec: &'a FieldRecord,
    schema: &ProtocolSchema,
    idx: FieldIdx,
) -> Result<&'a [u8], AssembleError> {
    if rec.get(idx).is_absent() {
        Ok(&[])
    } else {
        bytes_value(rec, schema, idx)
    }
}

fn layer_present(rec: &FieldRecord, anchor: FieldIdx) -> bool {
    !rec.get(anchor).is_absent()
}

/// Assemble a record into raw packet bytes.
///
/// Presence rules: a layer is emitted iff its anchor field (`eth.type`,
/// `ip.version`, `tcp.sport`, `tls.record.content_type`, `tls.hs.type`) is
/// not absent; each deeper layer requires the shallower ones. Address
/// fields must be concrete — fill anonymized records before assembling.
pub fn assemble(rec: &FieldRecord, schema: &ProtocolSchema) -> Result<RawPacket, AssembleError> {
    let payload: &[u8] = match &rec.payload {
        Payload::Bytes(b) => b,
        Payload::Bucket(_) => return Err(AssembleError::PayloadUnsynthesized),
    };

    let has_ip = layer_present(rec, F_IP_VERSION);
    let has_tcp = layer_present(rec, F_TCP_SPORT);
    let has_tls = layer_present(rec, F_TLS_CONTENT_TYPE);
    let has_hs = layer_present(rec, F_HS_TYPE);
    if !layer_present(rec, F_ETH_TYPE) {
        return Err(AssembleError::Missing { field: "eth.type" });
    }
    if has_tcp && !has_ip {
        return Err(AssembleError::Missing { field: "ip.version" });
    }
    if has_tls && !has_tcp {
        return Err(AssembleError::Missing { field: "tcp.sport" });
    }
    if has_hs && !has_tls {
        return Err(AssembleError::Missing { field: "tls.record.content_type" });
    }

    let mut out: Vec<u8> = Vec::with_capacity(64 + payload.len());

    // --- Ethernet ---
    out.extend_from_slice(bytes_value(rec, schema, F_ETH_DST)?);
    out.extend_from_slice(bytes_value(rec, schema, F_ETH_SRC)?);
    out.extend_from_slice(&(uint_value(rec, schema, F_ETH_TYPE)? as u16).to_be_bytes());

    if !has_ip {
        out.extend_from_slice(payload);
        return Ok(finish(rec, out));
    }

    // --- IPv4 ---
    let ip_start = out.len();
    let ip_options = optional_bytes(rec, schema, F_IP_OPTIONS)?;
    if ip_options.len() % 4 != 0 {
        return Err(AssembleError::Inconsistent { field: "ip.options" });
    }
    let derived_ihl = 5 + (ip_options.len() / 4) as u64;
    let ihl = match uint_or_recompute(rec, schema, F_IP_IHL)? {
        Some(v) => {
            if v != derived_ihl {
                return Err(AssembleError::Inconsistent { field: "ip.ihl" });
            }
            v
        }
        None => derived_ihl,
    };
    let version = uint_value(rec, schema, F_IP_VERSION)?;
    out.push(((version as u8) << 4) | (ihl as u8 & 0x0f));
    out.push(uint_value(rec, schema, F_IP_TOS)? as u8);
    let ip_len_pos = out.len();
    let explicit_ip_len = uint_or_recompute(rec, schema, F_IP_LEN)?;
    out.extend_from_slice(&[0, 0]); // ip.len placeholder
    out.extend_from_slice(&(uint_value(rec, schema, F_IP_ID)? as u16).to_be_bytes());
    let flags = uint_value(rec, schema, F_IP_FLAGS)?;
    let frag = uint_value(rec, schema, F_IP_FRAG)?;
    out.extend_from_slice(&(((flags as u16) << 13) | frag as u16).to_be_bytes());
    out.push(uint_value(rec, schema, F_IP_TTL)? as u8);
    out.push(uint_value(rec, schema, F_IP_PROTO)? as u8);
    let ip_cksum_pos = out.len();
    let explicit_ip_cksum = uint_or_recompute(rec, schema, F_IP_CHECKSUM)?;
    out.extend_from_slice(&[0, 0]); // ip.checksum placeholder
    let ip_src: [u8; 4] = bytes_value(rec, schema, F_IP_SRC)?.try_into().unwrap();
    let ip_dst: [u8; 4] = bytes_value(rec, schema, F_IP_DST)?.try_into().unwrap();
    out.extend_from_slice(&ip_src);
    out.extend_from_slice(&ip_dst);
    out.extend_from_slice(ip_options);
    let ip_header_len = out.len() - ip_start;

    // --- TCP ---
    let mut tcp_start = out.len();
    if has_tcp {
        tcp_start = out.len();
        let tcp_options = optional_bytes(rec, schema, F_TCP_OPTIONS)?;
        if tcp_options.len() % 4 != 0 {
            return Err(AssembleError::Inconsistent { field: "tcp.options" });
        }
        let derived_doff = 5 + (tcp_options.len() / 4) as u64;
        let doff = match uint_or_recompute(rec, schema, F_TCP_DATA_OFFSET)? {
            Some(v) => {
                if v != derived_doff {
                    return Err(AssembleError::Inconsistent { field: "tcp.data_offset" });
                }
                v
            }
            None => derived_doff,
        };
        out.extend_from_slice(&(uint_value(rec, schema, F_TCP_SPORT)? as u16).to_be_bytes());
        out.extend_from_slice(&(uint_value(rec, schema, F_TCP_DPORT)? as u16).to_be_bytes());
        out.extend_from_slice(&(uint_value(rec, schema, F_TCP_SEQ)? as u32).to_be_bytes());
        out.extend_from_slice(&(uint_value(rec, schema, F_TCP_ACK)? as u32).to_be_bytes());
        out.push(((doff as u8) << 4) | (uint_value(rec, schema, F_TCP_RESERVED)? as u8 & 0x0f));
        out.push(uint_value(rec, schema, F_TCP_FLAGS)? as u8);
        out.extend_from_slice(&(uint_value(rec, schema, F_TCP_WINDOW)? as u16).to_be_bytes());
        out.extend_from_slice(&[0, 0]); // tcp.checksum placeholder
        out.extend_from_slice(&(uint_value(rec, schema, F_TCP_URGENT)? as u16).to_be_bytes());
        out.extend_from_slice(tcp_options);
    }
    let tcp_cksum_pos = tcp_start + 16;
    let explicit_tcp_cksum = if has_tcp {
        uint_or_recompute(rec, schema, F_TCP_CHECKSUM)?
    } else {
        None
    };

    // --- TLS record header ---
    let mut tls_len_pos = 0usize;
    let mut explicit_tls_len = None;
    let record_body_start;
    if has_tls {
        out.push(uint_value(rec, schema, F_TLS_CONTENT_TYPE)? as u8);
        out.extend_from_slice(&(uint_value(rec, schema, F_TLS_VERSION)? as u16).to_be_bytes());
        tls_len_pos = out.len();
        explicit_tls_len = uint_or_recompute(rec, schema, F_TLS_LENGTH)?;
        out.extend_from_slice(&[0, 0]); // tls.record.length placeholder
        record_body_start = out.len();
    } else {
        record_body_start = out.len();
    }

    // --- ClientHello / ServerHello fixed fields ---
    let mut hs_len_pos = 0usize;
    let mut explicit_hs_len = None;
    let mut hs_body_start = out.len();
    if has_hs {
        out.push(uint_value(rec, schema, F_HS_TYPE)? as u8);
        hs_len_pos = out.len();
        explicit_hs_len = uint_or_recompute(rec, schema, F_HS_LENGTH)?;
        out.extend_from_slice(&[0, 0, 0]); // tls.hs.length placeholder
        hs_body_start = out.len();
        out.extend_from_slice(&(uint_value(rec, schema, F_HS_VERSION)? as u16).to_be_bytes());
        out.extend_from_slice(bytes_value(rec, schema, F_HS_RANDOM)?);
        let sid = optional_bytes(rec, schema, F_HS_SESSION_ID)?;
        let sid_len = match uint_or_recompute(rec, schema, F_HS_SESSION_ID_LEN)? {
            Some(v) => {
                if v != sid.len() as u64 {
                    return Err(AssembleError::Inconsistent { field: "tls.hs.session_id_len" });
                }
                v
            }
            None => sid.len() as u64,
        };
        out.push(sid_len as u8);
        out.extend_from_slice(sid);
        if !rec.get(F_HS_CIPHER_SUITES_LEN).is_absent() {
            out.extend_from_slice(
                &(uint_value(rec, schema, F_HS_CIPHER_SUITES_LEN)? as u16).to_be_bytes(),
            );
        }
        if !rec.get(F_HS_CIPHER_SUITE).is_absent() {
            out.extend_from_slice(&(uint_value(rec, schema, F_HS_CIPHER_SUITE)? as u16).to_be_bytes());
        }
    }

    // --- payload blob ---
    out.extend_from_slice(payload);

    // --- resolve recomputed lengths bottom-up ---
    if has_hs {
        let hs_len = match explicit_hs_len {
            Some(v) => v,
            None => (out.len() - hs_body_start) as u64,
        };
        if hs_len > 0xff_ffff {
            return Err(AssembleError::Range { field: "tls.hs.length" });
        }
        let b = (hs_len as u32).to_be_bytes();
        out[hs_len_pos..hs_len_pos + 3].copy_from_slice(&b[1..4]);
    }
    if has_tls {
        let tls_len = match explicit_tls_len {
            Some(v) => v,
            None => {
                let v = (out.len() - record_body_start) as u64;
                if v > 0xffff {
                    return Err(AssembleError::Range { field: "tls.record.length" });
                }
                v
            }
        };
        out[tls_len_pos..tls_len_pos + 2].copy_from_slice(&(tls_len as u16).to_be_bytes());
    }

    let total_from_ip = out.len() - ip_start;
    let min_ip_len = ip_header_len + if has_tcp { (out[tcp_start + 12] >> 4) as usize * 4 } else { 0 };
    let ip_len = match explicit_ip_len {
        Some(v) => {
            // Explicit lengths may be shorter than the frame (Ethernet
            // trailer padding) but never shorter than the headers nor
            // longer than the assembled content.
            if (v as usize) < min_ip_len || (v as usize) > total_from_ip {
                return Err(AssembleError::Inconsistent { field: "ip.len" });
            }
            v
        }
        None => {
            if total_from_ip > 0xffff {
                return Err(AssembleError::Range { field: "ip.len" });
            }
            total_from_ip as u64
        }
    };
    out[ip_len_pos..ip_len_pos + 2].copy_from_slice(&(ip_len as u16).to_be_bytes());

    // --- checksums (after all lengths are final) ---
    let ip_cksum = match explicit_ip_cksum {
        Some(v) => v as u16,
        None => ipv4_header_checksum(&out[ip_start..ip_start + ip_header_len]),
    };
    out[ip_cksum_pos..ip_cksum_pos + 2].copy_from_slice(&ip_cksum.to_be_bytes());

    if has_tcp {
        let tcp_cksum = match explicit_tcp_cksum {
            Some(v) => v as u16,
            None => {
                let segment = &out[tcp_start..ip_start + ip_len as usize];
                tcp_checksum(ip_src, ip_dst, segment)
            }
        };
        out[tcp_cksum_pos..tcp_cksum_pos + 2].copy_from_slice(&tcp_cksum.to_be_bytes());
    }

    Ok(finish(rec, out))
}

fn finish(rec: &FieldRecord, bytes: Vec<u8>) -> RawPacket {
    RawPacket::new(rec.meta.ts_sec, rec.meta.ts_usec, bytes)
}
