//! Recursive neural knowledge network.
//!
//! Records of annotated symptom and disease entities are compiled into
//! per-record Huffman knowledge trees ([`tree`]), whose leaves are entity
//! embeddings and whose internal nodes compose their children through a
//! shared matrix ([`network`]). Every node carries a softmax over the
//! diagnosable diseases, trained against co-occurrence targets
//! ([`corpus`]) by plain SGD ([`trainer`]). The root distribution ranks
//! diseases for a new record ([`eval`]).

pub mod corpus;
pub mod error;
pub mod eval;
pub mod network;
pub mod toolkit;
pub mod trainer;
pub mod tree;

pub use error::{Error, Result};
