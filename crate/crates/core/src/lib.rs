//! Self-supervised preference pipeline at desk scale.
//!
//! The crate wires together a satisfaction scorer trained on soft labels, an
//! augmentation database with preference-biased scoring and periodic
//! re-scoring, the TraceBias policy trainer with the double-average (DAM)
//! ratio, PPO and DPO baselines over the same toy policy, a simulated
//! feedback environment, and an experiment harness that runs the whole thing
//! deterministically from a seed.

pub mod augment;
pub mod baselines;
pub mod config;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod policy;
pub mod scorer;
pub mod sim_env;
pub mod snapshot;
pub mod tokens;
pub mod tracebias;

pub use error::{Error, Result};
