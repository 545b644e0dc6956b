//! Key pools, trusted-repeater relay and device pairing.

mod pairing;
mod pool;
mod relay;

pub use pairing::{
    best_pairing, pairing_objectives, symmetry_check, Assignment, BottleneckAssignment,
    MatrixError, MinSumAssignment, PairingMatrix, PairingObjective, SymmetryReport,
};
pub use pool::{KeyBits, KeyPool, NodePair, PoolSnapshot};
pub use relay::{
    relay_throughput, xor_bits, KeyStore, RelayHop, RelayOutcome, RelayRoute, SharedKeyStore,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("insufficient key in pool {pair}: need {needed} bits, {available} available")]
    InsufficientKey {
        pair: NodePair,
        needed: u64,
        available: u64,
    },
    #[error("relay hop {hop} ({pair}) is under-provisioned: need {needed} bits, {available} available")]
    HopUnderProvisioned {
        hop: usize,
        pair: NodePair,
        needed: u64,
        available: u64,
    },
    #[error("relay hop {hop}: no key pool between {pair}")]
    NoPool { hop: usize, pair: NodePair },
    #[error("invalid route: {0}")]
    InvalidRoute(String),
}

pub type Result<T> = std::result::Result<T, KeyError>;
