//! Declarative protocol schema: Ethernet II, IPv4, TCP, and the TLS record
//! layer with ClientHello/ServerHello fixed fields.
//!
//! The schema is a compiled-in table. Every packet dissected under it yields
//! one value per field, in table order, with [`crate::record::FieldValue::Absent`]
//! for fields whose layer (or optional extent) is not on the wire. Deeper TLS
//! extension semantics are intentionally not modeled; whatever follows the
//! deepest parsed field stays in the opaque payload blob.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Protocol layers, outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Eth,
    Ip,
    Tcp,
    TlsRecord,
    TlsHandshake,
}

impl Layer {
    pub const ALL: [Layer; 5] = [
        Layer::Eth,
        Layer::Ip,
        Layer::Tcp,
        Layer::TlsRecord,
        Layer::TlsHandshake,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Eth => "eth",
            Layer::Ip => "ip",
            Layer::Tcp => "tcp",
            Layer::TlsRecord => "tls.record",
            Layer::TlsHandshake => "tls.hs",
        }
    }
}

/// How a field's bytes are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldCodec {
    /// Big-endian unsigned integer occupying `bits` bits. Sub-byte fields
    /// share bytes with their neighbors; the dissector handles packing.
    UInt { bits: u8 },
    /// Raw byte string of fixed length.
    Bytes { len: u16 },
    /// Raw byte string whose length is derived from another field at parse
    /// time (header-length words, an explicit length prefix, ...).
    VarBytes { max: u16 },
}

impl FieldCodec {
    /// Width in whole bytes used when a value is spelled as raw bytes in a
    /// token stream. Sub-byte integers round up to one byte.
    pub fn raw_width(&self) -> Option<usize> {
        match self {
            FieldCodec::UInt { bits } => Some(((*bits as usize) + 7) / 8),
            FieldCodec::Bytes { len } => Some(*len as usize),
            FieldCodec::VarBytes { .. } => None,
        }
    }

    /// Upper bound on raw byte width (equals `raw_width` for fixed codecs).
    pub fn max_width(&self) -> usize {
        match self {
            FieldCodec::UInt { bits } => ((*bits as usize) + 7) / 8,
            FieldCodec::Bytes { len } => *len as usize,
            FieldCodec::VarBytes { max } => *max as usize,
        }
    }

    /// Maximum integer value for `UInt` codecs.
    pub fn uint_max(&self) -> Option<u64> {
        match self {
            FieldCodec::UInt { bits } => {
                if *bits >= 64 {
                    Some(u64::MAX)
                } else {
                    Some((1u64 << bits) - 1)
                }
            }
            _ => None,
        }
    }
}

/// One field in the schema table.
#[derive(Debug, Clone, Copy)]
pub struct FieldSpec {
    /// Dot-separated path, unique across the schema.
    pub path: &'static str,
    pub layer: Layer,
    pub codec: FieldCodec,
    /// Whether assembly may recompute this field from surrounding content
    /// when it carries the `Recompute` marker (lengths and checksums).
    pub recomputable: bool,
}

/// Dense field index into [`ProtocolSchema::fields`].
pub type FieldIdx = usize;

/// Number of fields in the built-in schema.
pub const FIELD_COUNT: usize = 38;

/// Pseudo field path used for the payload-length bucket in token streams.
/// It is not part of the schema table; it is introduced by the `PLEN`
/// special token instead of a field-name token.
pub const PAYLOAD_LEN_PATH: &str = "payload.len";

// Field indices, in wire order. Kept as constants so dissection, assembly,
// and tests can refer to fields without string lookups.
pub const F_ETH_DST: FieldIdx = 0;
pub const F_ETH_SRC: FieldIdx = 1;
pub const F_ETH_TYPE: FieldIdx = 2;
pub const F_IP_VERSION: FieldIdx = 3;
pub const F_IP_IHL: FieldIdx = 4;
pub const F_IP_TOS: FieldIdx = 5;
pub const F_IP_LEN: FieldIdx = 6;
pub const F_IP_ID: FieldIdx = 7;
pub const F_IP_FLAGS: FieldIdx = 8;
pub const F_IP_FRAG: FieldIdx = 9;
pub const F_IP_TTL: FieldIdx = 10;
pub const F_IP_PROTO: FieldIdx = 11;
pub const F_IP_CHECKSUM: FieldIdx = 12;
pub const F_IP_SRC: FieldIdx = 13;
pub const F_IP_DST: FieldIdx = 14;
pub const F_IP_OPTIONS: FieldIdx = 15;
pub const F_TCP_SPORT: FieldIdx = 16;
pub const F_TCP_DPORT: FieldIdx = 17;
pub const F_TCP_SEQ: FieldIdx = 18;
pub const F_TCP_ACK: FieldIdx = 19;
pub const F_TCP_DATA_OFFSET: FieldIdx = 20;
pub const F_TCP_RESERVED: FieldIdx = 21;
pub const F_TCP_FLAGS: FieldIdx = 22;
pub const F_TCP_WINDOW: FieldIdx = 23;
pub const F_TCP_CHECKSUM: FieldIdx = 24;
pub const F_TCP_URGENT: FieldIdx = 25;
pub const F_TCP_OPTIONS: FieldIdx = 26;
pub const F_TLS_CONTENT_TYPE: FieldIdx = 27;
pub const F_TLS_VERSION: FieldIdx = 28;
pub const F_TLS_LENGTH: FieldIdx = 29;
pub const F_HS_TYPE: FieldIdx = 30;
pub const F_HS_LENGTH: FieldIdx = 31;
pub const F_HS_VERSION: FieldIdx = 32;
pub const F_HS_RANDOM: FieldIdx = 33;
pub const F_HS_SESSION_ID_LEN: FieldIdx = 34;
pub const F_HS_SESSION_ID: FieldIdx = 35;
pub const F_HS_CIPHER_SUITES_LEN: FieldIdx = 36;
pub const F_HS_CIPHER_SUITE: FieldIdx = 37;

const FIELDS: [FieldSpec; FIELD_COUNT] = [
    FieldSpec { path: "eth.dst", layer: Layer::Eth, codec: FieldCodec::Bytes { len: 6 }, recomputable: false },
    FieldSpec { path: "eth.src", layer: Layer::Eth, codec: FieldCodec::Bytes { len: 6 }, recomputable: false },
    FieldSpec { path: "eth.type", layer: Layer::Eth, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "ip.version", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 4 }, recomputable: false },
    FieldSpec { path: "ip.ihl", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 4 }, recomputable: true },
    FieldSpec { path: "ip.tos", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 8 }, recomputable: false },
    FieldSpec { path: "ip.len", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 16 }, recomputable: true },
    FieldSpec { path: "ip.id", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "ip.flags", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 3 }, recomputable: false },
    FieldSpec { path: "ip.frag_offset", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 13 }, recomputable: false },
    FieldSpec { path: "ip.ttl", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 8 }, recomputable: false },
    FieldSpec { path: "ip.protocol", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 8 }, recomputable: false },
    FieldSpec { path: "ip.checksum", layer: Layer::Ip, codec: FieldCodec::UInt { bits: 16 }, recomputable: true },
    FieldSpec { path: "ip.src", layer: Layer::Ip, codec: FieldCodec::Bytes { len: 4 }, recomputable: false },
    FieldSpec { path: "ip.dst", layer: Layer::Ip, codec: FieldCodec::Bytes { len: 4 }, recomputable: false },
    FieldSpec { path: "ip.options", layer: Layer::Ip, codec: FieldCodec::VarBytes { max: 40 }, recomputable: false },
    FieldSpec { path: "tcp.sport", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tcp.dport", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tcp.seq", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 32 }, recomputable: false },
    FieldSpec { path: "tcp.ack", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 32 }, recomputable: false },
    FieldSpec { path: "tcp.data_offset", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 4 }, recomputable: true },
    FieldSpec { path: "tcp.reserved", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 4 }, recomputable: false },
    FieldSpec { path: "tcp.flags", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 8 }, recomputable: false },
    FieldSpec { path: "tcp.window", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tcp.checksum", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 16 }, recomputable: true },
    FieldSpec { path: "tcp.urgent", layer: Layer::Tcp, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tcp.options", layer: Layer::Tcp, codec: FieldCodec::VarBytes { max: 40 }, recomputable: false },
    FieldSpec { path: "tls.record.content_type", layer: Layer::TlsRecord, codec: FieldCodec::UInt { bits: 8 }, recomputable: false },
    FieldSpec { path: "tls.record.version", layer: Layer::TlsRecord, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tls.record.length", layer: Layer::TlsRecord, codec: FieldCodec::UInt { bits: 16 }, recomputable: true },
    FieldSpec { path: "tls.hs.type", layer: Layer::TlsHandshake, codec: FieldCodec::UInt { bits: 8 }, recomputable: false },
    FieldSpec { path: "tls.hs.length", layer: Layer::TlsHandshake, codec: FieldCodec::UInt { bits: 24 }, recomputable: true },
    FieldSpec { path: "tls.hs.version", layer: Layer::TlsHandshake, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tls.hs.random", layer: Layer::TlsHandshake, codec: FieldCodec::Bytes { len: 32 }, recomputable: false },
    FieldSpec { path: "tls.hs.session_id_len", layer: Layer::TlsHandshake, codec: FieldCodec::UInt { bits: 8 }, recomputable: true },
    FieldSpec { path: "tls.hs.session_id", layer: Layer::TlsHandshake, codec: FieldCodec::VarBytes { max: 255 }, recomputable: false },
    FieldSpec { path: "tls.hs.cipher_suites_len", layer: Layer::TlsHandshake, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
    FieldSpec { path: "tls.hs.cipher_suite", layer: Layer::TlsHandshake, codec: FieldCodec::UInt { bits: 16 }, recomputable: false },
];

/// EtherType value that dispatches into the IPv4 layer.
pub const ETHERTYPE_IPV4: u64 = 0x0800;
/// IP protocol number that dispatches into the TCP layer.
pub const IPPROTO_TCP: u64 = 6;
/// TLS content types considered plausible record starts.
pub const TLS_CONTENT_TYPES: [u8; 4] = [20, 21, 22, 23];
/// Handshake message types with fixed fields in the schema.
pub const HS_CLIENT_HELLO: u64 = 1;
pub const HS_SERVER_HELLO: u64 = 2;

/// The protocol schema: an ordered field table plus layer dispatch rules.
///
/// There is a single built-in instance; the type exists so signatures track
/// which schema produced a record and so the table can be dumped for humans.
#[derive(Debug, Clone)]
pub struct ProtocolSchema {
    fields: &'static [FieldSpec],
}

impl Default for ProtocolSchema {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ProtocolSchema {
    /// The built-in Ethernet II / IPv4 / TCP / TLS-record schema.
    pub fn builtin() -> Self {
        ProtocolSchema { fields: &FIELDS }
    }

    pub fn fields(&self) -> &'static [FieldSpec] {
        self.fields
    }

    pub fn field(&self, idx: FieldIdx) -> &'static FieldSpec {
        &self.fields[idx]
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Look up a field index by its dot path.
    pub fn index_of(&self, path: &str) -> Option<FieldIdx> {
        self.fields.iter().position(|f| f.path == path)
    }

    /// Field indices belonging to a layer, in wire order.
    pub fn layer_fields(&self, layer: Layer) -> impl Iterator<Item = FieldIdx> + '_ {
        self.fields
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.layer == layer)
            .map(|(i, _)| i)
    }

    /// Human-readable listing of the schema table and dispatch rules.
    ///
    /// The listing is canonical: its bytes are stable across runs and are
    /// what the schema hash is computed over.
    pub fn dump(&self) -> String {
        use core::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "schema tls-over-tcp v1");
        let _ = writeln!(out, "layers: eth ip tcp tls.record tls.hs");
        let _ = writeln!(out, "dispatch: eth.type==0x0800 -> ip");
        let _ = writeln!(out, "dispatch: ip.protocol==6 -> tcp");
        let _ = writeln!(
            out,
            "dispatch: tcp payload starts with content_type in {{20,21,22,23}} and version 0x03xx (xx<=0x04) -> tls.record"
        );
        let _ = writeln!(
            out,
            "dispatch: tls.record.content_type==22 and handshake type in {{1,2}} -> tls.hs"
        );
        let _ = writeln!(out, "idx\tpath\tcodec\trecompute");
        for (i, f) in self.fields.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", i, f.path, f.codec, if f.recomputable { "yes" } else { "no" });
        }
        out
    }
}

impl fmt::Display for FieldCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldCodec::UInt { bits } => write!(f, "uint{}", bits),
            FieldCodec::Bytes { len } => write!(f, "bytes[{}]", len),
            FieldCodec::VarBytes { max } => write!(f, "bytes[..={}]", max),
        }
    }
}

/// Field paths used by distribution evaluation shorthand.
pub fn resolve_field_alias(name: &str) -> &str {
    match name {
        "sport" => "tcp.sport",
        "dport" => "tcp.dport",
        "len" => "ip.len",
        other => other,
    }
}

/// All field paths in schema order (convenience for vocabulary building).
pub fn field_paths(schema: &ProtocolSchema) -> Vec<&'static str> {
    schema.fields().iter().map(|f| f.path).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_consistent() {
        let s = ProtocolSchema::builtin();
        assert_eq!(s.len(), FIELD_COUNT);
        // Paths unique and in ascending layer order.
        for w in s.fields().windows(2) {
            assert!(w[0].layer <= w[1].layer, "layers out of order");
            assert_ne!(w[0].path, w[1].path);
        }
        for (i, f) in s.fields().iter().enumerate() {
            assert_eq!(s.index_of(f.path), Some(i));
        }
        assert_eq!(s.index_of("tcp.dport"), Some(F_TCP_DPORT));
        assert_eq!(s.field(F_TLS_VERSION).path, "tls.record.version");
    }

    #[test]
    fn dump_lists_every_field_once() {
        let s = ProtocolSchema::builtin();
        let dump = s.dump();
        for f in s.fields() {
            assert_eq!(dump.matches(f.path).count() >= 1, true, "{} missing", f.path);
        }
        // Canonical: identical across calls.
        assert_eq!(dump, s.dump());
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!(resolve_field_alias("sport"), "tcp.sport");
        assert_eq!(resolve_field_alias("len"), "ip.len");
        assert_eq!(resolve_field_alias("ip.ttl"), "ip.ttl");
    }
}
