//! Deterministic test scheme: signatures are keyed SHA-256 digests and
//! aggregation is a byte-wise XOR fold. Constant 32-byte artifacts make runs
//! fast and reproducible; see the module docs in `crypto` for the security
//! caveat.

use super::{
    pairs_are_usable, AggregateSignature, CryptoError, KeyPair, PublicKey, SchemeKind, SecretKey,
    Signature, SignatureScheme,
};
use crate::merkle::sha256_parts;

pub struct HashFold;

const SK_TAG: &[u8] = b"vulcan.hashfold.sk";
const PK_TAG: &[u8] = b"vulcan.hashfold.pk";
const SIG_TAG: &[u8] = b"vulcan.hashfold.sig";

fn public_of(secret: &SecretKey) -> Vec<u8> {
    sha256_parts(&[PK_TAG, &secret.0]).to_vec()
}

fn expected_signature(public: &PublicKey, message: &[u8]) -> [u8; 32] {
    sha256_parts(&[SIG_TAG, &public.0, message])
}

impl SignatureScheme for HashFold {
    fn kind(&self) -> SchemeKind {
        SchemeKind::HashFold
    }

    fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        let secret = SecretKey(sha256_parts(&[SK_TAG, seed]).to_vec());
        let public = PublicKey(public_of(&secret));
        KeyPair { secret, public }
    }

    fn sign(&self, secret: &SecretKey, message: &[u8]) -> Signature {
        let public = PublicKey(public_of(secret));
        Signature(expected_signature(&public, message).to_vec())
    }

    fn verify(&self, public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
        signature.0 == expected_signature(public, message)
    }

    fn combine(&self, parts: &[Signature]) -> Result<AggregateSignature, CryptoError> {
        if parts.is_empty() {
            return Err(CryptoError::EmptyAggregation);
        }
        let mut acc = [0u8; 32];
        for p in parts {
            if p.0.len() != 32 {
                return Err(CryptoError::MalformedSignature);
            }
            for (a, b) in acc.iter_mut().zip(&p.0) {
                *a ^= b;
            }
        }
        Ok(AggregateSignature(acc.to_vec()))
    }

    fn verify_aggregate(&self, pairs: &[(PublicKey, Vec<u8>)], agg: &AggregateSignature) -> bool {
        if !pairs_are_usable(pairs) || agg.0.len() != 32 {
            return false;
        }
        let mut acc = [0u8; 32];
        for (pk, msg) in pairs {
            let sig = expected_signature(pk, msg);
            for (a, b) in acc.iter_mut().zip(&sig) {
                *a ^= b;
            }
        }
        acc[..] == agg.0
    }
}
