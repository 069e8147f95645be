//! Core algorithms for modeling network traffic as a token language.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that does not
//! need a filesystem or OS services:
//!
//! * [`schema`] — the declarative field table for Ethernet/IPv4/TCP/TLS
//!   record headers, plus dispatch rules between layers.
//! * [`dissect`] / [`assemble`] — lossless conversion between raw packet
//!   bytes and ordered field records, including checksum recomputation.
//! * [`vocab`] / [`tokenize`] — vocabulary induction over field values and
//!   the encode/decode/validate grammar for packet token sequences.
//! * [`model`] / [`optim`] — a decoder-only transformer with exact analytic
//!   gradients and an adaptive-moment optimizer, generic over `f32`/`f64`.
//! * [`sample`] — temperature/top-k autoregressive sampling with an
//!   incremental KV cache and optional grammar masking.
//! * [`metrics`] — classification metrics, ROC/AUC, discretized field
//!   distributions, Jensen-Shannon divergence, and KDE curves.
//!
//! File formats, training orchestration, and the CLI live in the companion
//! `pktlm` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assemble;
pub mod checksum;
pub mod dissect;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod real;
pub mod record;
pub mod rng;
pub mod sample;
pub mod schema;
pub mod tensor;
pub mod tokenize;
pub mod vocab;

pub use record::{FieldRecord, FieldValue, Payload};
pub use schema::{ProtocolSchema, FIELD_COUNT};
