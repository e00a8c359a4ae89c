//! Bi-level KV-cache compression with task-aware selective reloading.
//!
//! A prefill stage compresses every chunk of a long token sequence twice,
//! into fine-grained low-ratio KVs and abstract high-ratio KVs, and offloads
//! both to a cold store. Before decoding, a relevance oracle scores the
//! chunks for the task; the top-k chunks are reloaded at the low ratio and
//! the rest at the high ratio, merged in temporal order and renumbered, and
//! decoding runs over that hybrid context.

pub mod chunking;
pub mod cli;
pub mod compressor;
pub mod embeddings;
pub mod engine;
pub mod harness;
mod error;
pub mod hybrid;
pub mod kvstore;
pub mod oracle;

pub use error::{Error, Result};
