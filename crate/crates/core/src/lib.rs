//! Funnel-shaped rewards for Signal Temporal Logic tasks and a time-aware deep Q-learning agent
//! that learns to satisfy them.
//!
//! The pipeline is: parse a formula ([`stl`]), size its funnels from robustness bounds
//! ([`robustness`], [`funnel`]), turn the schedule into a time-varying reward ([`reward`]), train
//! on one of the simulators ([`envs`], [`dqn`]) and check the learned behaviour offline
//! ([`evalmon`]).

pub mod robustness;
pub mod stl;
pub mod envs;
pub mod funnel;
pub mod reward;

/// Random number generator used for every seeded stream in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;
pub mod dqn;
pub mod evalmon;

/// Hex SHA-256 of a value's JSON encoding, used to tie artifacts to the config that made them.
pub fn config_digest<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}
