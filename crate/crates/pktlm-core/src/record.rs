//! Field records: one packet as an ordered list of field values plus an
//! opaque payload blob, and flow bookkeeping on top of them.

use alloc::vec::Vec;
use core::fmt;

use crate::schema::{
    FieldIdx, ProtocolSchema, F_ETH_DST, F_ETH_SRC, F_IP_DST, F_IP_SRC, F_TCP_DPORT, F_TCP_SPORT,
};

/// Value of one schema field.
///
/// `Absent` is a first-class sentinel for "not on the wire" — distinct from
/// numeric zero and from an empty byte string. It contributes zero bytes at
/// assembly and must never enter checksum math. `Recompute` marks derived
/// fields (lengths, checksums) that assembly fills in for synthetic records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Int(u64),
    Bytes(Vec<u8>),
    Absent,
    Recompute,
}

impl FieldValue {
    pub fn is_absent(&self) -> bool {
        matches!(self, FieldValue::Absent)
    }

    pub fn as_int(&self) -> Option<u64> {
        match self {
            FieldValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            FieldValue::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Int(v) => write!(f, "{}", v),
            FieldValue::Bytes(b) => {
                for byte in b {
                    write!(f, "{:02x}", byte)?;
                }
                Ok(())
            }
            FieldValue::Absent => write!(f, "<absent>"),
            FieldValue::Recompute => write!(f, "<recompute>"),
        }
    }
}

/// The opaque payload attached to a record.
///
/// Dissection always yields concrete bytes. Decoded generated sequences
/// carry only a length bucket until payload synthesis runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Bytes(Vec<u8>),
    Bucket(u8),
}

impl Payload {
    pub fn empty() -> Self {
        Payload::Bytes(Vec::new())
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Payload::Bytes(b) => Some(b),
            Payload::Bucket(_) => None,
        }
    }

    pub fn len_bytes(&self) -> Option<usize> {
        self.as_bytes().map(|b| b.len())
    }
}

/// Why a packet was dissected only up to the Ethernet layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// EtherType is not IPv4 (ARP, IPv6, ...).
    NonIpv4,
    /// IPv4 but the transport is not TCP (UDP, ICMP, ...).
    NonTcp,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NonIpv4 => write!(f, "non-ipv4"),
            SkipReason::NonTcp => write!(f, "non-tcp"),
        }
    }
}

/// Direction of a packet relative to its flow's first packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Forward,
    Reverse,
}

/// Ingest warnings that do not reject a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Warnings(pub u8);

impl Warnings {
    pub const IP_CHECKSUM_MISMATCH: u8 = 1;
    pub const TCP_CHECKSUM_MISMATCH: u8 = 2;

    pub fn set(&mut self, flag: u8) {
        self.0 |= flag;
    }

    pub fn has(&self, flag: u8) -> bool {
        self.0 & flag != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

/// Per-record link metadata carried alongside the field values.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RecordMeta {
    pub ts_sec: u64,
    pub ts_usec: u32,
    pub direction: Direction,
    pub skip: Option<SkipReason>,
    pub warnings: Warnings,
}

/// One packet as ordered (field, value) pairs plus the payload blob.
///
/// The value vector always has exactly one entry per schema field, in schema
/// order, so the pair list is implicit: index `i` pairs with
/// `schema.field(i).path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldRecord {
    pub values: Vec<FieldValue>,
    pub payload: Payload,
    pub meta: RecordMeta,
}

impl FieldRecord {
    /// A record with every field absent and an empty payload.
    pub fn all_absent(schema: &ProtocolSchema) -> Self {
        FieldRecord {
            values: alloc::vec![FieldValue::Absent; schema.len()],
            payload: Payload::empty(),
            meta: RecordMeta::default(),
        }
    }

    pub fn get(&self, idx: FieldIdx) -> &FieldValue {
        &self.values[idx]
    }

    pub fn set(&mut self, idx: FieldIdx, value: FieldValue) {
        self.values[idx] = value;
    }

    pub fn get_by_path(&self, schema: &ProtocolSchema, path: &str) -> Option<&FieldValue> {
        schema.index_of(path).map(|i| &self.values[i])
    }

    /// Iterate `(field_path, value)` pairs in schema order.
    pub fn pairs<'a>(
        &'a self,
        schema: &'a ProtocolSchema,
    ) -> impl Iterator<Item = (&'static str, &'a FieldValue)> + 'a {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (schema.field(i).path, v))
    }
}

/// Replace hardware and network addresses by the absent sentinel.
///
/// Idempotent; leaves every other field untouched.
pub fn anonymize(record: &FieldRecord) -> FieldRecord {
    let mut out = record.clone();
    for idx in [F_ETH_SRC, F_ETH_DST, F_IP_SRC, F_IP_DST] {
        out.values[idx] = FieldValue::Absent;
    }
    out
}

/// Bidirectional five-tuple key. `endpoints` is ordered so that the two
/// directions of one conversation map to the same key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlowKey {
    pub endpoint_a: (Vec<u8>, u16),
    pub endpoint_b: (Vec<u8>, u16),
    pub transport: u8,
}

/// A five-tuple flow: ordered member records sharing one key.
#[derive(Debug, Clone)]
pub struct Flow {
    /// `None` for the residual flow collecting records without a full
    /// five-tuple.
    pub key: Option<FlowKey>,
    pub records: Vec<FieldRecord>,
}

fn five_tuple(record: &FieldRecord) -> Option<((Vec<u8>, u16), (Vec<u8>, u16), u8)> {
    let src = record.get(F_IP_SRC).as_bytes()?.to_vec();
    let dst = record.get(F_IP_DST).as_bytes()?.to_vec();
    let sport = record.get(F_TCP_SPORT).as_int()? as u16;
    let dport = record.get(F_TCP_DPORT).as_int()? as u16;
    Some(((src, sport), (dst, dport), 6))
}

/// Partition records into bidirectional five-tuple flows.
///
/// Records lacking any five-tuple component go to a single residual flow
/// (returned last when present). Within each flow, records keep a stable
/// timestamp order: ties preserve input order. The direction tag is set
/// relative to the flow's first packet.
pub fn group_flows(records: &[FieldRecord]) -> Vec<Flow> {
    use alloc::collections::BTreeMap;

    let mut flows: BTreeMap<FlowKey, Vec<(usize, FieldRecord)>> = BTreeMap::new();
    let mut order: Vec<FlowKey> = Vec::new();
    let mut residual: Vec<(usize, FieldRecord)> = Vec::new();

    for (pos, rec) in records.iter().enumerate() {
        match five_tuple(rec) {
            Some((src, dst, transport)) => {
                let (a, b) = if src <= dst { (src.clone(), dst.clone()) } else { (dst.clone(), src.clone()) };
                let key = FlowKey { endpoint_a: a, endpoint_b: b, transport };
                let entry = flows.entry(key.clone()).or_insert_with(|| {
                    order.push(key.clone());
                    Vec::new()
                });
                let mut rec = rec.clone();
                // Direction: forward if this packet's source matches the
                // first packet's source, reverse otherwise.
                rec.meta.direction = match entry.first() {
                    None => Direction::Forward,
                    Some((_, first)) => {
                        if five_tuple(first).map(|(s, _, _)| s) == Some(src) {
                            Direction::Forward
                        } else {
                            Direction::Reverse
                        }
                    }
                };
                entry.push((pos, rec));
            }
            None => residual.push((pos, rec.clone())),
        }
    }

    let mut out = Vec::new();
    for key in order {
        let mut members = flows.remove(&key).expect("flow recorded in order list");
        members.sort_by(|(pa, ra), (pb, rb)| {
            (ra.meta.ts_sec, ra.meta.ts_usec, *pa).cmp(&(rb.meta.ts_sec, rb.meta.ts_usec, *pb))
        });
        out.push(Flow {
            key: Some(key),
            records: members.into_iter().map(|(_, r)| r).collect(),
        });
    }
    if !residual.is_empty() {
        residual.sort_by(|(pa, ra), (pb, rb)| {
            (ra.meta.ts_sec, ra.meta.ts_usec, *pa).cmp(&(rb.meta.ts_sec, rb.meta.ts_usec, *pb))
        });
        out.push(Flow {
            key: None,
            records: residual.into_iter().map(|(_, r)| r).collect(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ProtocolSchema;
    use alloc::vec;

    fn record_with_tuple(src: [u8; 4], dst: [u8; 4], sport: u16, dport: u16, ts: u64) -> FieldRecord {
        let schema = ProtocolSchema::builtin();
        let mut r = FieldRecord::all_absent(&schema);
        r.set(F_IP_SRC, FieldValue::Bytes(src.to_vec()));
        r.set(F_IP_DST, FieldValue::Bytes(dst.to_vec()));
        r.set(F_TCP_SPORT, FieldValue::Int(sport as u64));
        r.set(F_TCP_DPORT, FieldValue::Int(dport as u64));
        r.meta.ts_sec = ts;
        r
    }

    #[test]
    fn anonymize_is_idempotent_and_targeted() {
        let schema = ProtocolSchema::builtin();
        let mut r = FieldRecord::all_absent(&schema);
        r.set(F_IP_SRC, FieldValue::Bytes(vec![10, 0, 0, 1]));
        r.set(F_TCP_DPORT, FieldValue::Int(443));
        let a = anonymize(&r);
        assert_eq!(*a.get(F_IP_SRC), FieldValue::Absent);
        assert_eq!(*a.get(F_TCP_DPORT), FieldValue::Int(443));
        assert_eq!(anonymize(&a), a);
    }

    #[test]
    fn anonymize_no_ip_layer_is_noop() {
        let schema = ProtocolSchema::builtin();
        let r = FieldRecord::all_absent(&schema);
        assert_eq!(anonymize(&r), r);
    }

    #[test]
    fn bidirectional_packets_share_a_flow() {
        let a = record_with_tuple([10, 0, 0, 1], [10, 0, 0, 2], 50000, 443, 1);
        let b = record_with_tuple([10, 0, 0, 2], [10, 0, 0, 1], 443, 50000, 2);
        let flows = group_flows(&[a, b]);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].records.len(), 2);
        assert_eq!(flows[0].records[0].meta.direction, Direction::Forward);
        assert_eq!(flows[0].records[1].meta.direction, Direction::Reverse);
    }

    #[test]
    fn empty_input_yields_no_flows() {
        assert!(group_flows(&[]).is_empty());
    }

    #[test]
    fn partition_covers_all_records() {
        // 10 packets over 3 distinct tuples; brute-force partition oracle.
        let mut records = Vec::new();
        let tuples = [
            ([1, 1, 1, 1], [2, 2, 2, 2], 1000u16, 443u16),
            ([3, 3, 3, 3], [2, 2, 2, 2], 1001, 443),
            ([1, 1, 1, 1], [4, 4, 4, 4], 1002, 8443),
        ];
        for i in 0..10usize {
            let (s, d, sp, dp) = tuples[i % 3];
            records.push(record_with_tuple(s, d, sp, dp, i as u64));
        }
        let flows = group_flows(&records);
        assert_eq!(flows.len(), 3);
        assert_eq!(flows.iter().map(|f| f.records.len()).sum::<usize>(), 10);

        // Oracle: naive O(n^2) partition by symmetric tuple equality.
        let mut oracle_groups: Vec<Vec<usize>> = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let t = five_tuple(r).unwrap();
            let norm = |(s, d, _p): &((Vec<u8>, u16), (Vec<u8>, u16), u8)| {
                if s <= d { (s.clone(), d.clone()) } else { (d.clone(), s.clone()) }
            };
            let key = norm(&t);
            match oracle_groups.iter_mut().find(|g| {
                let other = five_tuple(&records[g[0]]).unwrap();
                norm(&other) == key
            }) {
                Some(g) => g.push(i),
                None => oracle_groups.push(vec![i]),
            }
        }
        let mut sizes: Vec<usize> = oracle_groups.iter().map(|g| g.len()).collect();
        sizes.sort_unstable();
        let mut got: Vec<usize> = flows.iter().map(|f| f.records.len()).collect();
        got.sort_unstable();
        assert_eq!(sizes, got);
    }

    #[test]
    fn records_without_tuple_go_to_residual_flow() {
        let schema = ProtocolSchema::builtin();
        let r = FieldRecord::all_absent(&schema);
        let a = record_with_tuple([1, 1, 1, 1], [2, 2, 2, 2], 1, 2, 0);
        let flows = group_flows(&[r, a]);
        assert_eq!(flows.len(), 2);
        assert!(flows.last().unwrap().key.is_none());
        assert_eq!(flows.last().unwrap().records.len(), 1);
    }
}
