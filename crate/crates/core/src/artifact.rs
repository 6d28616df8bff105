//! Shared versioning stamp carried by every file this crate writes.

use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Where an artifact came from: the hash of the run configuration that
/// produced it and the seed in force.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}
