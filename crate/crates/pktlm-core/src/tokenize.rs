//! Token sequence grammar: records to ids and back, plus validation.
//!
//! Sequence shape, for a record under the built-in schema:
//!
//! ```text
//! <bos> [CLS_label] (FIELD_NAME (value | <absent> | <raw> BYTE*))*
//!       <plen> (bucket-value | <raw> BYTE) <eos>
//! ```
//!
//! Field names act as unambiguous boundaries, every field appears exactly
//! once in schema order, and one field's content never crosses a value
//! token boundary.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::record::{FieldRecord, FieldValue, Payload, RecordMeta};
use crate::schema::{FieldCodec, ProtocolSchema, FIELD_COUNT};
use crate::vocab::{
    FieldRef, TokenId, TokenKind, TokenValue, Vocabulary, ABSENT, BOS, EOS, PLEN, RAW,
};

/// Payload length buckets: exact 0..=64, then power-of-two edges up to
/// 16384, then one tail bucket.
pub const BUCKET_COUNT: u8 = 74;

/// Bucket id for a payload byte length.
pub fn bucket_for_len(len: usize) -> u8 {
    match len {
        0..=64 => len as u8,
        65..=128 => 65,
        129..=256 => 66,
        257..=512 => 67,
        513..=1024 => 68,
        1025..=2048 => 69,
        2049..=4096 => 70,
        4097..=8192 => 71,
        8193..=16384 => 72,
        _ => 73,
    }
}

/// Inclusive byte-length range represented by a bucket id.
pub fn bucket_range(bucket: u8) -> (usize, usize) {
    match bucket {
        0..=64 => (bucket as usize, bucket as usize),
        65 => (65, 128),
        66 => (129, 256),
        67 => (257, 512),
        68 => (513, 1024),
        69 => (1025, 2048),
        70 => (2049, 4096),
        71 => (4097, 8192),
        72 => (8193, 16384),
        _ => (16385, 65535),
    }
}

/// Bucket for a record payload, whatever its state.
pub fn bucket_for_payload(payload: &Payload) -> u8 {
    match payload {
        Payload::Bytes(b) => bucket_for_len(b.len()),
        Payload::Bucket(b) => *b,
    }
}

/// One packet as a token id sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub label: Option<String>,
    /// Payload blob handle for lossless decoding; generated sequences have
    /// none until payload synthesis.
    pub payload: Option<Vec<u8>>,
    /// Link metadata carried through for in-memory round trips; not part
    /// of the token stream.
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodeError {
    /// Sequence would exceed the context cap.
    Overflow { len: usize, cap: usize },
    UnknownClass { label: String },
    /// `Recompute` markers cannot be tokenized.
    Unrepresentable { field: &'static str },
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeError::Overflow { len, cap } => {
                write!(f, "encode: sequence length {} exceeds context cap {}", len, cap)
            }
            EncodeError::UnknownClass { label } => write!(f, "encode: unknown class {:?}", label),
            EncodeError::Unrepresentable { field } => {
                write!(f, "encode: field {} holds a recompute marker", field)
            }
        }
    }
}

/// Big-endian raw spelling of an integer field value.
fn int_raw_bytes(value: u64, codec: &FieldCodec) -> Vec<u8> {
    let width = codec.raw_width().unwrap_or(8);
    let all = value.to_be_bytes();
    all[8 - width..].to_vec()
}

/// Encode a record into a token sequence.
pub fn encode(
    record: &FieldRecord,
    vocab: &Vocabulary,
    schema: &ProtocolSchema,
    label: Option<&str>,
    context_cap: usize,
) -> Result<TokenSequence, EncodeError> {
    let mut ids: Vec<TokenId> = Vec::with_capacity(2 * FIELD_COUNT + 8);
    ids.push(BOS);
    if let Some(l) = label {
        let t = vocab
            .class_token(l)
            .ok_or_else(|| EncodeError::UnknownClass { label: l.into() })?;
        ids.push(t);
    }
    for (idx, value) in record.values.iter().enumerate() {
        ids.push(vocab.field_name_token(idx));
        match value {
            FieldValue::Absent => ids.push(ABSENT),
            FieldValue::Recompute => {
                return Err(EncodeError::Unrepresentable { field: schema.field(idx).path })
            }
            FieldValue::Int(v) => {
                let tv = TokenValue::Int(*v);
                match vocab.value_token(schema, FieldRef::Schema(idx), &tv) {
                    Some(t) => ids.push(t),
                    None => {
                        ids.push(RAW);
                        for b in int_raw_bytes(*v, &schema.field(idx).codec) {
                            ids.push(vocab.byte_token(b));
                        }
                    }
                }
            }
            FieldValue::Bytes(bytes) => {
                let tv = TokenValue::Bytes(bytes.clone());
                match vocab.value_token(schema, FieldRef::Schema(idx), &tv) {
                    Some(t) => ids.push(t),
                    None => {
                        ids.push(RAW);
                        for &b in bytes {
                            ids.push(vocab.byte_token(b));
                        }
                    }
                }
            }
        }
    }
    // payload length bucket
    ids.push(PLEN);
    let bucket = bucket_for_payload(&record.payload);
    let tv = TokenValue::Int(bucket as u64);
    match vocab.value_token(schema, FieldRef::PayloadLen, &tv) {
        Some(t) => ids.push(t),
        None => {
            ids.push(RAW);
            ids.push(vocab.byte_token(bucket));
        }
    }
    ids.push(EOS);

    if ids.len() > context_cap {
        return Err(EncodeError::Overflow { len: ids.len(), cap: context_cap });
    }
    Ok(TokenSequence {
        ids,
        label: label.map(|s| s.into()),
        payload: record.payload.as_bytes().map(|b| b.to_vec()),
        meta: record.meta.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub position: usize,
    pub reason: &'static str,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "decode: {} at position {}", self.reason, self.position)
    }
}

fn derr(position: usize, reason: &'static str) -> DecodeError {
    DecodeError { position, reason }
}

/// Decode a token sequence back into a field record.
///
/// When the sequence carries a payload blob it is restored verbatim (its
/// bucket must agree with the encoded one); otherwise the record keeps the
/// length bucket for later synthesis.
pub fn decode(
    seq: &TokenSequence,
    vocab: &Vocabulary,
    schema: &ProtocolSchema,
) -> Result<FieldRecord, DecodeError> {
    let ids = &seq.ids;
    let n = ids.len();
    if n < 2 {
        return Err(derr(0, "sequence too short"));
    }
    let mut rec = FieldRecord::all_absent(schema);
    rec.meta = seq.meta.clone();
    let mut pos = 0usize;

    let kind = |p: usize| -> Result<&TokenKind, DecodeError> {
        vocab
            .token(ids[p])
            .map(|t| &t.kind)
            .ok_or(derr(p, "unknown token id"))
    };

    if ids[pos] != BOS {
        return Err(derr(pos, "missing bos"));
    }
    pos += 1;
    let mut label = None;
    if pos < n {
        if let TokenKind::Class(c) = kind(pos)? {
            label = Some(vocab.class_labels()[*c].clone());
            pos += 1;
        }
    }

    for idx in 0..FIELD_COUNT {
        if pos >= n {
            return Err(derr(n - 1, "truncated before field name"));
        }
        match kind(pos)? {
            TokenKind::FieldName(f) if *f == idx => {}
            _ => return Err(derr(pos, "expected field name in schema order")),
        }
        pos += 1;
        if pos >= n {
            return Err(derr(n - 1, "truncated after field name"));
        }
        let spec = schema.field(idx);
        match kind(pos)? {
            TokenKind::Special(s) if *s == ABSENT as u8 => {
                pos += 1;
            }
            TokenKind::Special(s) if *s == RAW as u8 => {
                pos += 1;
                let mut bytes = Vec::new();
                while pos < n {
                    match kind(pos)? {
                        TokenKind::Byte(b) => {
                            bytes.push(*b);
                            pos += 1;
                        }
                        _ => break,
                    }
                }
                let value = raw_to_value(&bytes, &spec.codec)
                    .ok_or(derr(pos.saturating_sub(1), "raw spelling does not fit field"))?;
                rec.set(idx, value);
            }
            TokenKind::FieldValue { field: FieldRef::Schema(f), value } if *f == idx => {
                rec.set(
                    idx,
                    match value {
                        TokenValue::Int(v) => FieldValue::Int(*v),
                        TokenValue::Bytes(b) => FieldValue::Bytes(b.clone()),
                    },
                );
                pos += 1;
            }
            _ => return Err(derr(pos, "expected value, absent, or raw")),
        }
    }

    // payload bucket
    if pos >= n || ids[pos] != PLEN {
        return Err(derr(pos.min(n - 1), "expected payload length marker"));
    }
    pos += 1;
    if pos >= n {
        return Err(derr(n - 1, "truncated payload bucket"));
    }
    let bucket: u8 = match kind(pos)? {
        TokenKind::FieldValue { field: FieldRef::PayloadLen, value: TokenValue::Int(v) }
            if *v < BUCKET_COUNT as u64 =>
        {
            pos += 1;
            *v as u8
        }
        TokenKind::Special(s) if *s == RAW as u8 => {
            pos += 1;
            match kind(pos)? {
                TokenKind::Byte(b) if *b < BUCKET_COUNT => {
                    pos += 1;
                    *b
                }
                _ => return Err(derr(pos, "bad payload bucket byte")),
            }
        }
        _ => return Err(derr(pos, "expected payload bucket value")),
    };
    if pos >= n || ids[pos] != EOS {
        return Err(derr(pos.min(n - 1), "missing eos"));
    }
    pos += 1;
    if pos != n {
        return Err(derr(pos, "trailing tokens after eos"));
    }

    rec.payload = match &seq.payload {
        Some(bytes) => {
            if bucket_for_len(bytes.len()) != bucket {
                return Err(derr(n - 1, "payload blob disagrees with bucket"));
            }
            Payload::Bytes(bytes.clone())
        }
        None => Payload::Bucket(bucket),
    };
    let _ = label; // label is carried on the sequence itself
    Ok(rec)
}

/// Interpret a raw byte spelling against a field codec.
fn raw_to_value(bytes: &[u8], codec: &FieldCodec) -> Option<FieldValue> {
    match codec {
        FieldCodec::UInt { bits } => {
            let width = ((*bits as usize) + 7) / 8;
            if bytes.len() != width {
                return None;
            }
            let mut v = 0u64;
            for &b in bytes {
                v = (v << 8) | b as u64;
            }
            if *bits < 64 && v > (1u64 << bits) - 1 {
                return None;
            }
            Some(FieldValue::Int(v))
        }
        FieldCodec::Bytes { len } => {
            if bytes.len() != *len as usize {
                return None;
            }
            Some(FieldValue::Bytes(bytes.to_vec()))
        }
        FieldCodec::VarBytes { max } => {
            if bytes.len() > *max as usize || bytes.is_empty() {
                return None;
            }
            Some(FieldValue::Bytes(bytes.to_vec()))
        }
    }
}

/// What a validation violation is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    UnknownId,
    Framing,
    Order,
    Mismatch,
    RawWidth,
    Domain,
    Syntax,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::UnknownId => "unknown-id",
            ViolationKind::Framing => "framing",
            ViolationKind::Order => "order",
            ViolationKind::Mismatch => "mismatch",
            ViolationKind::RawWidth => "raw-width",
            ViolationKind::Domain => "domain",
            ViolationKind::Syntax => "syntax",
        };
        write!(f, "{}", s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Validate a raw id sequence against the grammar. Always returns a report;
/// an empty violation list means the sequence is well-formed.
pub fn validate(ids: &[TokenId], vocab: &Vocabulary, schema: &ProtocolSchema) -> ValidationReport {
    let mut v: Vec<Violation> = Vec::new();
    let n = ids.len();

    for (p, id) in ids.iter().enumerate() {
        if vocab.token(*id).is_none() {
            v.push(Violation { kind: ViolationKind::UnknownId, position: p });
        }
    }
    if !v.is_empty() {
        return ValidationReport { valid: false, violations: v };
    }

    if n == 0 || ids[0] != BOS {
        v.push(Violation { kind: ViolationKind::Framing, position: 0 });
    }
    if n == 0 || *ids.last().unwrap() != EOS {
        v.push(Violation { kind: ViolationKind::Framing, position: n.saturating_sub(1) });
    }
    for (p, id) in ids.iter().enumerate() {
        let inner = p > 0 && p + 1 < n;
        if inner && (*id == BOS || *id == EOS) {
            v.push(Violation { kind: ViolationKind::Framing, position: p });
        }
    }
    if n < 2 {
        return ValidationReport { valid: false, violations: v };
    }

    // Grammar walk with resynchronization so every violation is reported.
    let mut pos = 1usize;
    if let Some(TokenKind::Class(_)) = vocab.token(ids[pos.min(n - 1)]).map(|t| &t.kind) {
        pos += 1;
    }
    let mut next_field = 0usize;
    let mut seen = [false; FIELD_COUNT];
    let mut payload_done = false;

    while pos + 1 < n {
        let t = vocab.token(ids[pos]).unwrap();
        match &t.kind {
            TokenKind::FieldName(f) => {
                if payload_done {
                    v.push(Violation { kind: ViolationKind::Syntax, position: pos });
                }
                if seen[*f] || *f != next_field {
                    v.push(Violation { kind: ViolationKind::Order, position: pos });
                }
                seen[*f] = true;
                next_field = *f + 1;
                pos += 1;
                if pos + 1 >= n {
                    v.push(Violation { kind: ViolationKind::Syntax, position: pos.min(n - 1) });
                    break;
                }
                pos = check_field_value(ids, vocab, schema, *f, pos, &mut v);
            }
            TokenKind::Special(s) if *s == PLEN as u8 => {
                if payload_done {
                    v.push(Violation { kind: ViolationKind::Syntax, position: pos });
                }
                payload_done = true;
                if next_field != FIELD_COUNT {
                    v.push(Violation { kind: ViolationKind::Order, position: pos });
                }
                pos += 1;
                if pos + 1 >= n {
                    v.push(Violation { kind: ViolationKind::Syntax, position: pos.min(n - 1) });
                    break;
                }
                pos = check_payload_value(ids, vocab, pos, &mut v);
            }
            _ => {
                v.push(Violation { kind: ViolationKind::Syntax, position: pos });
                pos += 1;
            }
        }
    }
    if !payload_done || next_field != FIELD_COUNT {
        v.push(Violation { kind: ViolationKind::Framing, position: n - 1 });
    }

    ValidationReport { valid: v.is_empty(), violations: v }
}

/// Check one field's value tokens starting at `pos`; returns the position
/// after the value.
fn check_field_value(
    ids: &[TokenId],
    vocab: &Vocabulary,
    schema: &ProtocolSchema,
    field: usize,
    pos: usize,
    v: &mut Vec<Violation>,
) -> usize {
    let spec = schema.field(field);
    let t = vocab.token(ids[pos]).unwrap();
    match &t.kind {
        TokenKind::Special(s) if *s == ABSENT as u8 => pos + 1,
        TokenKind::Special(s) if *s == RAW as u8 => {
            let mut p = pos + 1;
            let mut count = 0usize;
            let mut bytes: Vec<u8> = Vec::new();
            while p + 1 < ids.len() {
                match vocab.token(ids[p]).map(|t| &t.kind) {
                    Some(TokenKind::Byte(b)) => {
                        bytes.push(*b);
                        count += 1;
                        p += 1;
                    }
                    _ => break,
                }
            }
            let width_ok = match spec.codec {
                FieldCodec::UInt { .. } | FieldCodec::Bytes { .. } => {
                    Some(count) == spec.codec.raw_width()
                }
                FieldCodec::VarBytes { max } => count >= 1 && count <= max as usize,
            };
            if !width_ok {
                v.push(Violation { kind: ViolationKind::RawWidth, position: pos });
            } else if raw_to_value(&bytes, &spec.codec).is_none() {
                v.push(Violation { kind: ViolationKind::Domain, position: pos });
            }
            p
        }
        TokenKind::FieldValue { field: fref, value } => {
            match fref {
                FieldRef::Schema(f) if *f == field => {
                    if !value_in_domain(value, &spec.codec) {
                        v.push(Violation { kind: ViolationKind::Domain, position: pos });
                    }
                }
                _ => v.push(Violation { kind: ViolationKind::Mismatch, position: pos }),
            }
            pos + 1
        }
        _ => {
            v.push(Violation { kind: ViolationKind::Syntax, position: pos });
            pos + 1
        }
    }
}

fn check_payload_value(
    ids: &[TokenId],
    vocab: &Vocabulary,
    pos: usize,
    v: &mut Vec<Violation>,
) -> usize {
    let t = vocab.token(ids[pos]).unwrap();
    match &t.kind {
        TokenKind::FieldValue { field: FieldRef::PayloadLen, value: TokenValue::Int(b) } => {
            if *b >= BUCKET_COUNT as u64 {
                v.push(Violation { kind: ViolationKind::Domain, position: pos });
            }
            pos + 1
        }
        TokenKind::Special(s) if *s == RAW as u8 => {
            let mut p = pos + 1;
            match vocab.token(ids[p.min(ids.len() - 1)]).map(|t| &t.kind) {
                Some(TokenKind::Byte(b)) if p + 1 < ids.len() => {
                    if *b >= BUCKET_COUNT {
                        v.push(Violation { kind: ViolationKind::Domain, position: p });
                    }
                    p += 1;
                }
                _ => {
                    v.push(Violation { kind: ViolationKind::RawWidth, position: pos });
                }
            }
            p
        }
        TokenKind::FieldValue { .. } => {
            v.push(Violation { kind: ViolationKind::Mismatch, position: pos });
            pos + 1
        }
        _ => {
            v.push(Violation { kind: ViolationKind::Syntax, position: pos });
            pos + 1
        }
    }
}

fn value_in_domain(value: &TokenValue, codec: &FieldCodec) -> bool {
    match (value, codec) {
        (TokenValue::Int(v), FieldCodec::UInt { bits }) => {
            *bits >= 64 || *v <= (1u64 << bits) - 1
        }
        (TokenValue::Bytes(b), FieldCodec::Bytes { len }) => b.len() == *len as usize,
        (TokenValue::Bytes(b), FieldCodec::VarBytes { max }) => {
            !b.is_empty() && b.len() <= *max as usize
        }
        _ => false,
    }
}

/// Incremental grammar automaton for grammar-masked sampling.
///
/// Strict: `advance` only accepts tokens that keep the prefix extendable to
/// a valid sequence. A sequence accepted token-by-token to completion is
/// exactly one that `validate` reports clean.
#[derive(Debug, Clone)]
pub struct GrammarState {
    state: GState,
    /// Bytes consumed so far in the current raw spelling.
    raw_count: usize,
    raw_bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GState {
    Start,
    AfterBos,
    ExpectName(usize),
    ExpectValue(usize),
    RawBytes(usize),
    ExpectPlen,
    ExpectBucket,
    RawBucket,
    ExpectEos,
    Done,
}

impl Default for GrammarState {
    fn default() -> Self {
        Self::new()
    }
}

impl GrammarState {
    pub fn new() -> Self {
        GrammarState { state: GState::Start, raw_count: 0, raw_bytes: Vec::new() }
    }

    pub fn is_done(&self) -> bool {
        self.state == GState::Done
    }

    /// Advance by one token; `Err(())` means the token is not legal here.
    pub fn advance(
        &mut self,
        id: TokenId,
        vocab: &Vocabulary,
        schema: &ProtocolSchema,
    ) -> Result<(), ()> {
        let kind = vocab.token(id).map(|t| t.kind.clone()).ok_or(())?;
        let next = match (self.state, &kind) {
            (GState::Start, TokenKind::Special(s)) if *s == BOS as u8 => GState::AfterBos,
            (GState::AfterBos, TokenKind::Class(_)) => GState::ExpectName(0),
            (GState::AfterBos, TokenKind::FieldName(0)) => GState::ExpectValue(0),
            (GState::ExpectName(f), TokenKind::FieldName(g)) if *g == f => GState::ExpectValue(f),
            (GState::ExpectValue(f), TokenKind::Special(s)) if *s == ABSENT as u8 => {
                self.after_field(f)
            }
            (GState::ExpectValue(f), TokenKind::FieldValue { field: FieldRef::Schema(g), value })
                if *g == f && value_in_domain(value, &schema.field(f).codec) =>
            {
                self.after_field(f)
            }
            (GState::ExpectValue(f), TokenKind::Special(s)) if *s == RAW as u8 => {
                self.raw_count = 0;
                self.raw_bytes.clear();
                GState::RawBytes(f)
            }
            (GState::RawBytes(f), TokenKind::Byte(b)) => {
                let spec = schema.field(f);
                self.raw_bytes.push(*b);
                self.raw_count += 1;
                match spec.codec {
                    FieldCodec::UInt { .. } | FieldCodec::Bytes { .. } => {
                        let w = spec.codec.raw_width().unwrap();
                        if self.raw_count > w {
                            return Err(());
                        }
                        if self.raw_count == w {
                            if raw_to_value(&self.raw_bytes, &spec.codec).is_none() {
                                return Err(());
                            }
                            self.after_field(f)
                        } else {
                            GState::RawBytes(f)
                        }
                    }
                    FieldCodec::VarBytes { max } => {
                        if self.raw_count > max as usize {
                            return Err(());
                        }
                        GState::RawBytes(f)
                    }
                }
            }
            // Variable-width raw spellings end implicitly at the next
            // field name (or the payload marker after the last field).
            (GState::RawBytes(f), TokenKind::FieldName(g))
                if matches!(schema.field(f).codec, FieldCodec::VarBytes { .. })
                    && self.raw_count >= 1
                    && *g == f + 1 =>
            {
                GState::ExpectValue(*g)
            }
            (GState::RawBytes(f), TokenKind::Special(s))
                if *s == PLEN as u8
                    && matches!(schema.field(f).codec, FieldCodec::VarBytes { .. })
                    && self.raw_count >= 1
                    && f + 1 == FIELD_COUNT =>
            {
                GState::ExpectBucket
            }
            (GState::ExpectPlen, TokenKind::Special(s)) if *s == PLEN as u8 => GState::ExpectBucket,
            (
                GState::ExpectBucket,
                TokenKind::FieldValue { field: FieldRef::PayloadLen, value: TokenValue::Int(b) },
            ) if *b < BUCKET_COUNT as u64 => GState::ExpectEos,
            (GState::ExpectBucket, TokenKind::Special(s)) if *s == RAW as u8 => GState::RawBucket,
            (GState::RawBucket, TokenKind::Byte(b)) if *b < BUCKET_COUNT => GState::ExpectEos,
            (GState::ExpectEos, TokenKind::Special(s)) if *s == EOS as u8 => GState::Done,
            _ => return Err(()),
        };
        self.state = next;
        Ok(())
    }

    fn after_field(&self, f: usize) -> GState {
        if f + 1 == FIELD_COUNT {
            GState::ExpectPlen
        } else {
            GState::ExpectName(f + 1)
        }
    }

    /// Mark every grammar-legal next token in `mask` (length = vocab size).
    pub fn legal_mask(&self, vocab: &Vocabulary, schema: &ProtocolSchema, mask: &mut [bool]) {
        for m in mask.iter_mut() {
            *m = false;
        }
        for id in 0..vocab.size() as TokenId {
            let mut probe = self.clone();
            if probe.advance(id, vocab, schema).is_ok() {
                mask[id as usize] = true;
            }
        }
    }
}

/// Independent token-count oracle used by tests and ingest accounting:
/// 2 framing tokens, one class token when labeled, per-field cost, and the
/// payload marker plus its value spelling.
pub fn expected_token_count(
    record: &FieldRecord,
    vocab: &Vocabulary,
    schema: &ProtocolSchema,
    labeled: bool,
) -> usize {
    let mut count = 2 + usize::from(labeled);
    for (idx, value) in record.values.iter().enumerate() {
        count += 1; // field name
        count += match value {
            FieldValue::Absent => 1,
            FieldValue::Recompute => 1,
            FieldValue::Int(v) => {
                let tv = TokenValue::Int(*v);
                if vocab.value_token(schema, FieldRef::Schema(idx), &tv).is_some() {
                    1
                } else {
                    1 + schema.field(idx).codec.raw_width().unwrap_or(0)
                }
            }
            FieldValue::Bytes(b) => {
                let tv = TokenValue::Bytes(b.clone());
                if vocab.value_token(schema, FieldRef::Schema(idx), &tv).is_some() {
                    1
                } else {
                    1 + b.len()
                }
            }
        };
    }
    let bucket = bucket_for_payload(&record.payload);
    let tv = TokenValue::Int(bucket as u64);
    count += 1; // plen
    count += if vocab.value_token(schema, FieldRef::PayloadLen, &tv).is_some() { 1 } else { 2 };
    count
}
