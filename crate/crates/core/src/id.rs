//! Deterministic identifiers.
//!
//! Every id in a run is a pure function of `(run seed, parent id, ordinal)`,
//! so replaying a run with the same seed yields the same ids.

use alloc::format;
use alloc::string::String;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Number of hex digits kept from the digest.
const ID_HEX_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdGen {
    pub seed: u64,
}

impl IdGen {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Derive an id of the form `<prefix>-<16 hex digits>`.
    pub fn derive(&self, prefix: &str, parent: &str, ordinal: u64) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update([0u8]);
        hasher.update(prefix.as_bytes());
        hasher.update([0u8]);
        hasher.update(parent.as_bytes());
        hasher.update([0u8]);
        hasher.update(ordinal.to_le_bytes());
        let digest = hasher.finalize();
        let mut out = format!("{prefix}-");
        for byte in digest.iter().take(ID_HEX_LEN / 2) {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    pub fn trajectory(&self, parent: &str, ordinal: u64) -> String {
        self.derive("t", parent, ordinal)
    }

    pub fn node(&self, trajectory: &str, ordinal: u64) -> String {
        self.derive("n", trajectory, ordinal)
    }

    pub fn goal(&self, parent_goal: &str, ordinal: u64) -> String {
        self.derive("g", parent_goal, ordinal)
    }
}
