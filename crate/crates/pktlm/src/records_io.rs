//! Field-record persistence: JSON lines with a header carrying the schema
//! hash, one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pktlm_core::record::{Direction, FieldRecord, FieldValue, Payload, RecordMeta, SkipReason, Warnings};
use pktlm_core::schema::ProtocolSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::schema_hash;

pub const RECORDS_FORMAT: &str = "pktlm-records";
pub const RECORDS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordsIoError {
    #[error("records: {0}")]
    Io(#[from] std::io::Error),
    #[error("records: {0}")]
    Json(#[from] serde_json::Error),
    #[error("records: missing or invalid header")]
    BadHeader,
    #[error("records: schema hash mismatch (file {file}, current {current})")]
    SchemaMismatch { file: String, current: String },
    #[error("records: line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    schema_hash: String,
}

/// One field value on disk: absent is `null`, integers `{"i": n}`, byte
/// strings `{"b": "hex"}`, recompute markers `"r"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ValueJson {
    Absent(Option<()>),
    Marker(String),
    Int { i: u64 },
    Bytes { b: String },
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    ts_sec: u64,
    ts_usec: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    skip: Option<String>,
    #[serde(default)]
    warnings: u8,
    #[serde(default)]
    reverse: bool,
    fields: Vec<ValueJson>,
    /// Payload: hex bytes, or a bucket id for not-yet-synthesized payloads.
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bucket: Option<u8>,
}

fn to_json(rec: &FieldRecord) -> RecordJson {
    let fields = rec
        .values
        .iter()
        .map(|v| match v {
            FieldValue::Absent => ValueJson::Absent(None),
            FieldValue::Recompute => ValueJson::Marker("r".into()),
            FieldValue::Int(i) => ValueJson::Int { i: *i },
            FieldValue::Bytes(b) => ValueJson::Bytes { b: hex::encode(b) },
        })
        .collect();
    let (payload, bucket) = match &rec.payload {
        Payload::Bytes(b) => (Some(hex::encode(b)), None),
        Payload::Bucket(b) => (None, Some(*b)),
    };
    RecordJson {
        ts_sec: rec.meta.ts_sec,
        ts_usec: rec.meta.ts_usec,
        skip: rec.meta.skip.map(|s| s.to_string()),
        warnings: rec.meta.warnings.0,
        reverse: rec.meta.direction == Direction::Reverse,
        fields,
        payload,
        bucket,
    }
}

fn from_json(j: RecordJson, schema: &ProtocolSchema, line: usize) -> Result<FieldRecord, RecordsIoError> {
    if j.fields.len() != schema.len() {
        return Err(RecordsIoError::BadRecord {
            line,
            reason: format!("expected {} fields, found {}", schema.len(), j.fields.len()),
        });
    }
    let mut values = Vec::with_capacity(j.fields.len());
    for v in j.fields {
        values.push(match v {
            ValueJson::Absent(_) => FieldValue::Absent,
            ValueJson::Marker(m) if m == "r" => FieldValue::Recompute,
            ValueJson::Marker(m) => {
                return Err(RecordsIoError::BadRecord { line, reason: format!("bad marker {:?}", m) })
            }
            ValueJson::Int { i } => FieldValue::Int(i),
            ValueJson::Bytes { b } => FieldValue::Bytes(hex::decode(&b).map_err(|e| {
                RecordsIoError::BadRecord { line, reason: format!("bad hex: {}", e) }
            })?),
        });
    }
    let payload = match (j.payload, j.bucket) {
        (Some(hexs), _) => Payload::Bytes(hex::decode(&hexs).map_err(|e| {
            RecordsIoError::BadRecord { line, reason: format!("bad payload hex: {}", e) }
        })?),
        (None, Some(b)) => Payload::Bucket(b),
        (None, None) => Payload::Bytes(Vec::new()),
    };
    let skip = match j.skip.as_deref() {
        None => None,
        Some("non-ipv4") => Some(SkipReason::NonIpv4),
        Some("non-tcp") => Some(SkipReason::NonTcp),
        Some(other) => {
            return Err(RecordsIoError::BadRecord { line, reason: format!("bad skip {:?}", other) })
        }
    };
    Ok(FieldRecord {
        values,
        payload,
        meta: RecordMeta {
            ts_sec: j.ts_sec,
            ts_usec: j.ts_usec,
            direction: if j.reverse { Direction::Reverse } else { Direction::Forward },
            skip,
            warnings: Warnings(j.warnings),
        },
    })
}

pub fn write_records(
    records: &[FieldRecord],
    schema: &ProtocolSchema,
    path: impl AsRef<Path>,
) -> Result<(), RecordsIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: RECORDS_FORMAT.into(),
        version: RECORDS_VERSION,
        schema_hash: schema_hash(schema),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, &to_json(rec))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(
    path: impl AsRef<Path>,
    schema: &ProtocolSchema,
) -> Result<Vec<FieldRecord>, RecordsIoError> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header_line = lines.next().ok_or(RecordsIoError::BadHeader)??;
    let header: Header = serde_json::from_str(&header_line).map_err(|_| RecordsIoError::BadHeader)?;
    if header.format != RECORDS_FORMAT || header.version != RECORDS_VERSION {
        return Err(RecordsIoError::BadHeader);
    }
    let current = schema_hash(schema);
    if header.schema_hash != current {
        return Err(RecordsIoError::SchemaMismatch { file: header.schema_hash, current });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j: RecordJson = serde_json::from_str(&line)?;
        out.push(from_json(j, schema, i + 2)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pktlm_core::schema::{F_TCP_DPORT, F_TLS_VERSION};

    #[test]
    fn roundtrip_preserves_records() {
        let schema = ProtocolSchema::builtin();
        let mut a = FieldRecord::all_absent(&schema);
        a.set(F_TCP_DPORT, FieldValue::Int(443));
        a.set(F_TLS_VERSION, FieldValue::Recompute);
        a.payload = Payload::Bytes(vec![1, 2, 3]);
        a.meta.ts_sec = 7;
        a.meta.skip = Some(SkipReason::NonTcp);
        let mut b = FieldRecord::all_absent(&schema);
        b.payload = Payload::Bucket(65);
        b.meta.warnings = Warnings(Warnings::IP_CHECKSUM_MISMATCH);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(&[a.clone(), b.clone()], &schema, &path).unwrap();
        let back = read_records(&path, &schema).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn header_mismatch_is_detected() {
        let schema = ProtocolSchema::builtin();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, b"{\"format\":\"other\",\"version\":1,\"schema_hash\":\"x\"}\n").unwrap();
        assert!(matches!(read_records(&path, &schema), Err(RecordsIoError::BadHeader)));
    }
}
