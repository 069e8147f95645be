//! Content hashes used to pin artifacts (schema, vocabulary, configs) to
//! the runs that produced them.

use pktlm_core::schema::ProtocolSchema;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash of the canonical schema listing.
pub fn schema_hash(schema: &ProtocolSchema) -> String {
    sha256_hex(schema.dump().as_bytes())
}
