//! Portable JSON parameter snapshots.
//!
//! Both the scorer and the policy serialize to the same document shape: a
//! schema tag, the declared dimensions, and row-major number arrays. Loaders
//! reject any document whose array lengths disagree with its header, so a
//! truncated or mis-shaped snapshot cannot be silently loaded.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::scorer::{ScorerParams, CLASSES};

pub const SCORER_SCHEMA: &str = "arf.scorer.v1";
pub const POLICY_SCHEMA: &str = "arf.policy.v1";

#[derive(Debug, Serialize, Deserialize)]
pub struct ScorerSnapshot {
    pub schema: String,
    pub vocab_size: usize,
    pub dim: usize,
    pub embed: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub schema: String,
    pub vocab_size: usize,
    pub dim: usize,
    pub embed: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

fn expect_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidInput(format!(
            "snapshot field {name} has {got} entries, header implies {want}"
        )));
    }
    Ok(())
}

impl ScorerSnapshot {
    pub fn from_params(params: &ScorerParams) -> Self {
        ScorerSnapshot {
            schema: SCORER_SCHEMA.into(),
            vocab_size: params.vocab_size,
            dim: params.dim,
            embed: params.embed.clone(),
            head_w: params.head_w.clone(),
            head_b: params.head_b.clone(),
        }
    }

    pub fn into_params(self) -> Result<ScorerParams> {
        if self.schema != SCORER_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "expected schema {SCORER_SCHEMA}, got {}",
                self.schema
            )));
        }
        expect_len("embed", self.embed.len(), self.vocab_size * self.dim)?;
        expect_len("head_w", self.head_w.len(), self.dim * CLASSES)?;
        expect_len("head_b", self.head_b.len(), CLASSES)?;
        Ok(ScorerParams {
            vocab_size: self.vocab_size,
            dim: self.dim,
            embed: self.embed,
            head_w: self.head_w,
            head_b: self.head_b,
        })
    }
}

impl PolicySnapshot {
    pub fn from_params(params: &PolicyParams) -> Self {
        PolicySnapshot {
            schema: POLICY_SCHEMA.into(),
            vocab_size: params.vocab_size,
            dim: params.dim,
            embed: params.embed.clone(),
            out_w: params.out_w.clone(),
            out_b: params.out_b.clone(),
        }
    }

    pub fn into_params(self) -> Result<PolicyParams> {
        if self.schema != POLICY_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "expected schema {POLICY_SCHEMA}, got {}",
                self.schema
            )));
        }
        expect_len("embed", self.embed.len(), self.vocab_size * self.dim)?;
        expect_len("out_w", self.out_w.len(), self.dim * self.vocab_size)?;
        expect_len("out_b", self.out_b.len(), self.vocab_size)?;
        Ok(PolicyParams {
            vocab_size: self.vocab_size,
            dim: self.dim,
            embed: self.embed,
            out_w: self.out_w,
            out_b: self.out_b,
        })
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value)
        .map_err(|e| Error::persistence(path, format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::persistence(path, format!("parse: {e}")))
}

/// Hex SHA-256 of a value's canonical JSON encoding; used to pin the frozen
/// evaluation scorer across a comparison run.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("snapshot serialization cannot fail");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn scorer_fingerprint(params: &ScorerParams) -> String {
    fingerprint(&ScorerSnapshot::from_params(params))
}

pub fn save_scorer(params: &ScorerParams, path: &Path) -> Result<()> {
    save_json(&ScorerSnapshot::from_params(params), path)
}

pub fn load_scorer(path: &Path) -> Result<ScorerParams> {
    load_json::<ScorerSnapshot>(path)?.into_params()
}

pub fn save_policy(params: &PolicyParams, path: &Path) -> Result<()> {
    save_json(&PolicySnapshot::from_params(params), path)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    load_json::<PolicySnapshot>(path)?.into_params()
}
