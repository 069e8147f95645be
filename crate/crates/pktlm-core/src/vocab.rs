//! Vocabulary induction: special tokens, field names, raw bytes, class
//! conditions, and frequency-selected field values.
//!
//! Identifier layout is fixed so that the mandatory part of the vocabulary
//! never depends on the corpus: specials first, then one token per schema
//! field path, then the 256 byte tokens, then class tokens (sorted by
//! label), then induced field-value tokens ordered by descending count with
//! lexicographic tie-breaks.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::record::{FieldRecord, FieldValue};
use crate::schema::{FieldIdx, ProtocolSchema, FIELD_COUNT, PAYLOAD_LEN_PATH};
use crate::tokenize::bucket_for_payload;

pub type TokenId = u32;

/// The seven special tokens, in id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Special {
    Pad = 0,
    Bos = 1,
    Eos = 2,
    Sep = 3,
    Absent = 4,
    Raw = 5,
    Plen = 6,
}

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const ABSENT: TokenId = 4;
pub const RAW: TokenId = 5;
pub const PLEN: TokenId = 6;

pub const SPECIAL_COUNT: usize = 7;
pub const FIELD_NAME_BASE: usize = SPECIAL_COUNT;
pub const BYTE_BASE: usize = FIELD_NAME_BASE + FIELD_COUNT;
pub const CLASS_BASE: usize = BYTE_BASE + 256;

const SPECIAL_TEXT: [&str; SPECIAL_COUNT] =
    ["<pad>", "<bos>", "<eos>", "<sep>", "<absent>", "<raw>", "<plen>"];

/// Which field a value token binds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRef {
    Schema(FieldIdx),
    /// The pseudo field for the payload length bucket.
    PayloadLen,
}

impl FieldRef {
    pub fn path(&self, schema: &ProtocolSchema) -> &'static str {
        match self {
            FieldRef::Schema(i) => schema.field(*i).path,
            FieldRef::PayloadLen => PAYLOAD_LEN_PATH,
        }
    }
}

/// Parsed payload of a field-value token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenValue {
    Int(u64),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Special(u8),
    FieldName(FieldIdx),
    Byte(u8),
    Class(usize),
    FieldValue { field: FieldRef, value: TokenValue },
}

#[derive(Debug, Clone)]
pub struct TokenInfo {
    pub text: String,
    pub kind: TokenKind,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabConfig {
    /// A value qualifies for its own token once it occurs this often.
    pub min_count: u64,
    /// Per-field mass that value tokens must cover even below `min_count`.
    pub coverage_target: f64,
    /// Hard cap on total vocabulary size.
    pub size_cap: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { min_count: 10, coverage_target: 0.99, size_cap: 8192 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VocabError {
    EmptyCorpus,
    /// `size_cap` is below the mandatory token count.
    CapTooSmall { cap: usize, mandatory: usize },
    /// A class label contains characters outside `[A-Za-z0-9_-]`.
    BadClassLabel { label: String },
}

impl fmt::Display for VocabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VocabError::EmptyCorpus => write!(f, "vocabulary: empty induction corpus"),
            VocabError::CapTooSmall { cap, mandatory } => {
                write!(f, "vocabulary: size cap {} below mandatory token count {}", cap, mandatory)
            }
            VocabError::BadClassLabel { label } => {
                write!(f, "vocabulary: invalid class label {:?}", label)
            }
        }
    }
}

/// Render the canonical token text for a field value.
pub fn render_value(path: &str, value: &TokenValue) -> String {
    match value {
        TokenValue::Int(v) => alloc::format!("{}={}", path, v),
        TokenValue::Bytes(b) => {
            let mut s = String::with_capacity(path.len() + 1 + b.len() * 2);
            s.push_str(path);
            s.push('=');
            for byte in b {
                let _ = core::fmt::write(&mut s, format_args!("{:02x}", byte));
            }
            s
        }
    }
}

/// Bidirectional token map with frequency stats.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<TokenInfo>,
    by_text: BTreeMap<String, TokenId>,
    class_labels: Vec<String>,
    config: VocabConfig,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn config(&self) -> &VocabConfig {
        &self.config
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn token(&self, id: TokenId) -> Option<&TokenInfo> {
        self.tokens.get(id as usize)
    }

    pub fn tokens(&self) -> &[TokenInfo] {
        &self.tokens
    }

    pub fn lookup(&self, text: &str) -> Option<TokenId> {
        self.by_text.get(text).copied()
    }

    pub fn field_name_token(&self, idx: FieldIdx) -> TokenId {
        (FIELD_NAME_BASE + idx) as TokenId
    }

    pub fn byte_token(&self, b: u8) -> TokenId {
        (BYTE_BASE + b as usize) as TokenId
    }

    pub fn class_token(&self, label: &str) -> Option<TokenId> {
        self.class_labels
            .iter()
            .position(|l| l == label)
            .map(|i| (CLASS_BASE + i) as TokenId)
    }

    /// Value token for a schema field value, if one was induced.
    pub fn value_token(&self, schema: &ProtocolSchema, field: FieldRef, value: &TokenValue) -> Option<TokenId> {
        self.lookup(&render_value(field.path(schema), value))
    }

    /// Construct from an entry list (the file-loader path). Entries must be
    /// in id order and satisfy the layout invariants.
    pub fn from_entries(
        entries: Vec<TokenInfo>,
        class_labels: Vec<String>,
        config: VocabConfig,
    ) -> Result<Self, String> {
        let mut by_text = BTreeMap::new();
        for (i, t) in entries.iter().enumerate() {
            if by_text.insert(t.text.clone(), i as TokenId).is_some() {
                return Err(alloc::format!("duplicate token text {:?}", t.text));
            }
        }
        if by_text.len() != entries.len() {
            return Err("token texts not bijective".to_string());
        }
        let v = Vocabulary { tokens: entries, by_text, class_labels, config };
        v.check_layout()?;
        Ok(v)
    }

    fn check_layout(&self) -> Result<(), String> {
        if self.tokens.len() < CLASS_BASE + self.class_labels.len() {
            return Err("vocabulary smaller than mandatory layout".to_string());
        }
        for (i, text) in SPECIAL_TEXT.iter().enumerate() {
            if self.tokens[i].text != *text {
                return Err(alloc::format!("special token {} out of place", text));
            }
        }
        for i in 0..FIELD_COUNT {
            match self.tokens[FIELD_NAME_BASE + i].kind {
                TokenKind::FieldName(f) if f == i => {}
                _ => return Err(alloc::format!("field name token {} out of place", i)),
            }
        }
        for b in 0..256usize {
            match self.tokens[BYTE_BASE + b].kind {
                TokenKind::Byte(x) if x as usize == b => {}
                _ => return Err(alloc::format!("byte token {} out of place", b)),
            }
        }
        Ok(())
    }
}

fn class_label_ok(label: &str) -> bool {
    !label.is_empty()
        && label
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Observed value of one field, in token-text form, with its count.
struct Candidate {
    text: String,
    field: FieldRef,
    value: TokenValue,
    count: u64,
}

/// Induce a vocabulary from a record corpus.
///
/// A field value receives its own token iff its count reaches `min_count`
/// or it is needed (highest-count first) to cover `coverage_target` of its
/// field's non-absent mass; the global `size_cap` trims the candidate set
/// by descending count with lexicographic tie-breaks. Everything else will
/// be spelled with `RAW` + byte tokens at encode time.
pub fn build_vocab(
    corpus: &[FieldRecord],
    classes: &[String],
    config: &VocabConfig,
    schema: &ProtocolSchema,
) -> Result<Vocabulary, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    for label in classes {
        if !class_label_ok(label) {
            return Err(VocabError::BadClassLabel { label: label.clone() });
        }
    }
    let mut class_labels: Vec<String> = classes.to_vec();
    class_labels.sort();
    class_labels.dedup();

    let mandatory = CLASS_BASE + class_labels.len();
    if config.size_cap < mandatory {
        return Err(VocabError::CapTooSmall { cap: config.size_cap, mandatory });
    }

    // Count observed values per field (absent values are not counted; they
    // are encoded by the dedicated special token).
    let field_slots = FIELD_COUNT + 1; // + payload bucket pseudo field
    let mut counts: Vec<BTreeMap<String, (TokenValue, u64)>> =
        (0..field_slots).map(|_| BTreeMap::new()).collect();
    for rec in corpus {
        for (idx, value) in rec.values.iter().enumerate() {
            let tv = match value {
                FieldValue::Int(v) => TokenValue::Int(*v),
                FieldValue::Bytes(b) => TokenValue::Bytes(b.clone()),
                FieldValue::Absent | FieldValue::Recompute => continue,
            };
            let text = render_value(schema.field(idx).path, &tv);
            counts[idx].entry(text).or_insert((tv, 0)).1 += 1;
        }
        let bucket = bucket_for_payload(&rec.payload);
        let tv = TokenValue::Int(bucket as u64);
        let text = render_value(PAYLOAD_LEN_PATH, &tv);
        counts[FIELD_COUNT].entry(text).or_insert((tv, 0)).1 += 1;
    }

    // Per-field candidate selection.
    let mut candidates: Vec<Candidate> = Vec::new();
    for (slot, field_counts) in counts.iter().enumerate() {
        if field_counts.is_empty() {
            continue;
        }
        let field = if slot < FIELD_COUNT {
            FieldRef::Schema(slot)
        } else {
            FieldRef::PayloadLen
        };
        let total: u64 = field_counts.values().map(|(_, c)| *c).sum();
        let mut by_count: Vec<(&String, &(TokenValue, u64))> = field_counts.iter().collect();
        by_count.sort_by(|a, b| b.1 .1.cmp(&a.1 .1).then_with(|| a.0.cmp(b.0)));
        let mut cum = 0u64;
        let mut covered = false;
        for (text, (value, count)) in by_count {
            let needed_for_coverage = !covered;
            cum += count;
            if (cum as f64) / (total as f64) >= config.coverage_target {
                covered = true;
            }
            if *count >= config.min_count || needed_for_coverage {
                candidates.push(Candidate {
                    text: text.clone(),
                    field,
                    value: value.clone(),
                    count: *count,
                });
            }
        }
    }

    // Global trim under the size cap.
    candidates.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.text.cmp(&b.text)));
    let budget = config.size_cap - mandatory;
    candidates.truncate(budget);

    // Materialize the token table.
    let mut tokens: Vec<TokenInfo> = Vec::with_capacity(mandatory + candidates.len());
    for (i, text) in SPECIAL_TEXT.iter().enumerate() {
        tokens.push(TokenInfo { text: text.to_string(), kind: TokenKind::Special(i as u8), count: 0 });
    }
    for i in 0..FIELD_COUNT {
        tokens.push(TokenInfo {
            text: schema.field(i).path.to_string(),
            kind: TokenKind::FieldName(i),
            count: 0,
        });
    }
    for b in 0..=255u8 {
        tokens.push(TokenInfo {
            text: alloc::format!("0x{:02x}", b),
            kind: TokenKind::Byte(b),
            count: 0,
        });
    }
    for (i, label) in class_labels.iter().enumerate() {
        tokens.push(TokenInfo {
            text: alloc::format!("CLS_{}", label),
            kind: TokenKind::Class(i),
            count: 0,
        });
    }
    for c in candidates {
        tokens.push(TokenInfo {
            text: c.text,
            kind: TokenKind::FieldValue { field: c.field, value: c.value },
            count: c.count,
        });
    }

    let mut by_text = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        by_text.insert(t.text.clone(), i as TokenId);
    }
    debug_assert_eq!(by_text.len(), tokens.len(), "token texts must be unique");

    Ok(Vocabulary { tokens, by_text, class_labels, config: config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Payload;
    use crate::schema::{F_TCP_DPORT, F_TCP_SPORT};
    use alloc::vec;

    fn schema() -> ProtocolSchema {
        ProtocolSchema::builtin()
    }

    fn record_with_dport(dport: u64) -> FieldRecord {
        let s = schema();
        let mut r = FieldRecord::all_absent(&s);
        r.set(F_TCP_DPORT, FieldValue::Int(dport));
        r
    }

    #[test]
    fn frequent_value_gets_single_token() {
        let mut corpus = Vec::new();
        for i in 0..1000u64 {
            corpus.push(record_with_dport(if i < 900 { 443 } else { 30000 + i }));
        }
        let v = build_vocab(&corpus, &[], &VocabConfig::default(), &schema()).unwrap();
        assert!(v.lookup("tcp.dport=443").is_some());
    }

    #[test]
    fn single_record_corpus_tokenizes_every_observed_value() {
        let s = schema();
        let mut r = record_with_dport(51723);
        r.set(F_TCP_SPORT, FieldValue::Int(1234));
        r.payload = Payload::Bytes(vec![0u8; 10]);
        let v = build_vocab(&[r], &[], &VocabConfig::default(), &s).unwrap();
        // counts are 1 < min_count, but coverage requires the head value
        assert!(v.lookup("tcp.dport=51723").is_some());
        assert!(v.lookup("tcp.sport=1234").is_some());
        assert!(v.lookup("payload.len=10").is_some());
    }

    #[test]
    fn vocabulary_size_matches_frequency_threshold_oracle() {
        // Zipf-ish synthetic counts; oracle recounts with a plain map.
        let mut corpus = Vec::new();
        let mut state = 99u64;
        for _ in 0..2000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            // ranks 0..49, heavy head
            let r = (((state >> 33) as f64 / 2f64.powi(31)).powi(3) * 50.0) as u64;
            corpus.push(record_with_dport(1000 + r));
        }
        let cfg = VocabConfig { min_count: 10, coverage_target: 0.0, size_cap: 8192 };
        let v = build_vocab(&corpus, &[], &cfg, &schema()).unwrap();

        // Oracle: count dport values and payload buckets independently.
        let mut dport_counts: BTreeMap<u64, u64> = BTreeMap::new();
        for r in &corpus {
            *dport_counts.entry(r.get(F_TCP_DPORT).as_int().unwrap()).or_insert(0) += 1;
        }
        let mut expected = dport_counts.values().filter(|&&c| c >= 10).count();
        // coverage_target 0 still forces the single highest-count value
        if dport_counts.values().all(|&c| c < 10) {
            expected += 1;
        }
        // payload bucket 0 occurs 2000 times -> one token
        expected += 1;
        let value_tokens = v.size() - CLASS_BASE;
        assert_eq!(value_tokens, expected);
    }

    #[test]
    fn cap_below_mandatory_is_an_error() {
        let cfg = VocabConfig { size_cap: 10, ..Default::default() };
        let err = build_vocab(&[record_with_dport(1)], &[], &cfg, &schema()).unwrap_err();
        assert!(matches!(err, VocabError::CapTooSmall { .. }));
    }

    #[test]
    fn class_tokens_present_and_sorted() {
        let v = build_vocab(
            &[record_with_dport(1)],
            &["zeta".to_string(), "alpha".to_string()],
            &VocabConfig::default(),
            &schema(),
        )
        .unwrap();
        assert_eq!(v.class_token("alpha"), Some(CLASS_BASE as TokenId));
        assert_eq!(v.class_token("zeta"), Some((CLASS_BASE + 1) as TokenId));
        assert_eq!(v.token(v.class_token("alpha").unwrap()).unwrap().text, "CLS_alpha");
    }

    #[test]
    fn determinism_same_corpus_same_tokens() {
        let corpus: Vec<_> = (0..50).map(|i| record_with_dport(440 + (i % 5))).collect();
        let a = build_vocab(&corpus, &[], &VocabConfig::default(), &schema()).unwrap();
        let b = build_vocab(&corpus, &[], &VocabConfig::default(), &schema()).unwrap();
        let ta: Vec<_> = a.tokens().iter().map(|t| (&t.text, t.count)).collect();
        let tb: Vec<_> = b.tokens().iter().map(|t| (&t.text, t.count)).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn coverage_target_pulls_in_rare_values() {
        // 3 values: 60%, 30%, 10%; min_count high so only coverage matters.
        let mut corpus = Vec::new();
        for _ in 0..60 {
            corpus.push(record_with_dport(1));
        }
        for _ in 0..30 {
            corpus.push(record_with_dport(2));
        }
        for _ in 0..10 {
            corpus.push(record_with_dport(3));
        }
        let cfg = VocabConfig { min_count: 1000, coverage_target: 0.85, size_cap: 8192 };
        let v = build_vocab(&corpus, &[], &cfg, &schema()).unwrap();
        assert!(v.lookup("tcp.dport=1").is_some());
        assert!(v.lookup("tcp.dport=2").is_some()); // needed to reach 0.9 >= 0.85
        assert!(v.lookup("tcp.dport=3").is_none()); // coverage already met
    }
}
