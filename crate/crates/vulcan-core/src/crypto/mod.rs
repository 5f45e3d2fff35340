//! Pluggable aggregate-signature schemes.
//!
//! The consensus layer only needs four operations — key generation, signing,
//! single verification, and same-or-mixed-message aggregation — expressed by
//! [`SignatureScheme`]. Two implementations are provided:
//!
//! * [`SchemeKind::Bls`]: BLS over BLS12-381 (public keys in G1, signatures
//!   in G2, pairing-checked aggregation);
//! * [`SchemeKind::HashFold`]: a fast deterministic scheme for simulation,
//!   where a signature is a keyed hash and aggregation is an XOR fold. It is
//!   *not* unforgeable against an adversary who knows secret keys are hashes,
//!   but it preserves every functional contract the protocol relies on
//!   (round-trips verify, any single-component mutation fails).
//!
//! All key generation is deterministic from a 32-byte seed so that simulation
//! runs are reproducible.

mod bls;
mod hashfold;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecretKey(pub Vec<u8>);

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub Vec<u8>);

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature(pub Vec<u8>);

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AggregateSignature(pub Vec<u8>);

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

macro_rules! hex_debug {
    ($t:ty, $name:literal) => {
        impl std::fmt::Debug for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                let h = hex::encode(&self.0);
                write!(f, concat!($name, "({}…)"), &h[..h.len().min(12)])
            }
        }
    };
}
hex_debug!(PublicKey, "PublicKey");
hex_debug!(Signature, "Signature");
hex_debug!(AggregateSignature, "AggregateSignature");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("nothing to aggregate")]
    EmptyAggregation,
    #[error("malformed signature bytes")]
    MalformedSignature,
}

/// Which signature scheme a scenario runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    HashFold,
    Bls,
}

pub trait SignatureScheme: Send + Sync {
    fn kind(&self) -> SchemeKind;

    /// Deterministic key pair from a seed.
    fn keygen(&self, seed: &[u8; 32]) -> KeyPair;

    fn sign(&self, secret: &SecretKey, message: &[u8]) -> Signature;

    fn verify(&self, public: &PublicKey, message: &[u8], signature: &Signature) -> bool;

    /// Combine individually valid signatures into one aggregate. The caller
    /// is responsible for having verified the parts.
    fn combine(&self, parts: &[Signature]) -> Result<AggregateSignature, CryptoError>;

    /// Verify an aggregate against its (public key, message) multiset. The
    /// pairs must be distinct; duplicates are rejected outright.
    fn verify_aggregate(&self, pairs: &[(PublicKey, Vec<u8>)], agg: &AggregateSignature) -> bool;
}

/// Look up the implementation for a configured scheme.
pub fn scheme(kind: SchemeKind) -> &'static dyn SignatureScheme {
    match kind {
        SchemeKind::HashFold => &hashfold::HashFold,
        SchemeKind::Bls => &bls::Bls,
    }
}

/// Shared guard: aggregates over zero pairs or duplicate (key, message)
/// pairs are never valid.
fn pairs_are_usable(pairs: &[(PublicKey, Vec<u8>)]) -> bool {
    if pairs.is_empty() {
        return false;
    }
    let mut seen = pairs.to_vec();
    seen.sort();
    seen.windows(2).all(|w| w[0] != w[1])
}
