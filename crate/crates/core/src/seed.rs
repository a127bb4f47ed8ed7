//! Seed derivation.
//!
//! A run has one master seed. Every random stream (initialization, triple
//! sampling, dropout masks, graph perturbation) gets its own seed from
//! `derive_seed(master, tag)`: the first eight bytes, little-endian, of
//! `SHA-256(master.to_le_bytes() || tag)`. Runs that share a master seed and
//! a tag therefore share that stream, whatever else differs between them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The per-purpose seeds of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub master: u64,
    pub init: u64,
    pub sampling: u64,
    pub dropout: u64,
}

impl SeedSet {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            init: derive_seed(master, "init"),
            sampling: derive_seed(master, "sampling"),
            dropout: derive_seed(master, "dropout"),
        }
    }
}
