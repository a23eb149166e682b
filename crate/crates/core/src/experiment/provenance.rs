//! Run provenance embedded in every report.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const CODE_VERSION: &str = concat!("mmrec ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    /// SHA-256 of the run config serialized as compact JSON.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
    /// Set when any reported model is one of the reconstructed graph models.
    pub simplified_reimplementation: bool,
}

impl RunProvenance {
    pub fn new<T: Serialize>(config: &T, seeds: Vec<u64>, simplified: bool) -> Result<Self> {
        Ok(Self {
            config_hash: config_hash(config)?,
            seeds,
            code_version: CODE_VERSION.to_string(),
            simplified_reimplementation: simplified,
        })
    }
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    // Round-trip through Value so map keys come out sorted.
    let value = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
