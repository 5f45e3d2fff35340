//! BLS signatures over BLS12-381: public keys in G1 (48-byte compressed),
//! signatures in G2 (96-byte compressed), messages hashed to G2 with the
//! XMD:SHA-256 suite.
//!
//! Aggregate verification uses one multi-Miller loop over the claimed
//! (key, message) pairs plus the aggregate paired with `-g1`:
//! `∏ e(pk_i, H(m_i)) · e(-g1, σ) == 1`. Same-message keys are summed first
//! so the common all-sign-the-block-hash case costs two pairings.

use std::collections::BTreeMap;

use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{
    multi_miller_loop, G1Affine, G1Projective, G2Affine, G2Prepared, G2Projective, Gt, Scalar,
};
use sha2::{Digest as _, Sha512};

use super::{
    pairs_are_usable, AggregateSignature, CryptoError, KeyPair, PublicKey, SchemeKind, SecretKey,
    Signature, SignatureScheme,
};

pub struct Bls;

const DST: &[u8] = b"VULCAN_BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_";
const KEYGEN_TAG: &[u8] = b"vulcan.bls.keygen";

fn scalar_from_seed(seed: &[u8; 32]) -> Scalar {
    let mut h = Sha512::new();
    h.update(KEYGEN_TAG);
    h.update(seed);
    let wide: [u8; 64] = h.finalize().into();
    let s = Scalar::from_bytes_wide(&wide);
    // A zero scalar would make the public key the identity; the chance is
    // negligible but the fallback keeps keygen total.
    if s.to_bytes() == [0u8; 32] {
        Scalar::from(1u64)
    } else {
        s
    }
}

fn hash_to_g2(message: &[u8]) -> G2Projective {
    <G2Projective as HashToCurve<ExpandMsgXmd<sha2_v09::Sha256>>>::hash_to_curve(message, DST)
}

fn decode_pk(bytes: &[u8]) -> Option<G1Affine> {
    let arr: [u8; 48] = bytes.try_into().ok()?;
    let p = Option::<G1Affine>::from(G1Affine::from_compressed(&arr))?;
    // The identity key would verify against anything aggregated with it.
    (!bool::from(p.is_identity())).then_some(p)
}

fn decode_sig(bytes: &[u8]) -> Option<G2Affine> {
    let arr: [u8; 96] = bytes.try_into().ok()?;
    Option::<G2Affine>::from(G2Affine::from_compressed(&arr))
}

impl SignatureScheme for Bls {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Bls
    }

    fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        let sk = scalar_from_seed(seed);
        let pk = G1Affine::from(G1Projective::generator() * sk);
        KeyPair {
            secret: SecretKey(sk.to_bytes().to_vec()),
            public: PublicKey(pk.to_compressed().to_vec()),
        }
    }

    fn sign(&self, secret: &SecretKey, message: &[u8]) -> Signature {
        let arr: [u8; 32] = secret
            .0
            .as_slice()
            .try_into()
            .expect("secret key must be 32 bytes");
        let sk = Option::<Scalar>::from(Scalar::from_bytes(&arr))
            .expect("secret key must be a canonical scalar");
        let sig = G2Affine::from(hash_to_g2(message) * sk);
        Signature(sig.to_compressed().to_vec())
    }

    fn verify(&self, public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
        let (Some(pk), Some(sig)) = (decode_pk(&public.0), decode_sig(&signature.0)) else {
            return false;
        };
        let h = G2Affine::from(hash_to_g2(message));
        let check = multi_miller_loop(&[
            (&pk, &G2Prepared::from(h)),
            (&-G1Affine::generator(), &G2Prepared::from(sig)),
        ])
        .final_exponentiation();
        check == Gt::identity()
    }

    fn combine(&self, parts: &[Signature]) -> Result<AggregateSignature, CryptoError> {
        if parts.is_empty() {
            return Err(CryptoError::EmptyAggregation);
        }
        let mut acc = G2Projective::identity();
        for p in parts {
            let sig = decode_sig(&p.0).ok_or(CryptoError::MalformedSignature)?;
            acc += G2Projective::from(sig);
        }
        Ok(AggregateSignature(
            G2Affine::from(acc).to_compressed().to_vec(),
        ))
    }

    fn verify_aggregate(&self, pairs: &[(PublicKey, Vec<u8>)], agg: &AggregateSignature) -> bool {
        if !pairs_are_usable(pairs) {
            return false;
        }
        let Some(agg) = decode_sig(&agg.0) else {
            return false;
        };
        // Sum public keys per distinct message.
        let mut by_message: BTreeMap<&[u8], G1Projective> = BTreeMap::new();
        for (pk, msg) in pairs {
            let Some(p) = decode_pk(&pk.0) else {
                return false;
            };
            *by_message
                .entry(msg.as_slice())
                .or_insert_with(G1Projective::identity) += G1Projective::from(p);
        }
        let prepared: Vec<(G1Affine, G2Prepared)> = by_message
            .into_iter()
            .map(|(msg, pk_sum)| {
                (
                    G1Affine::from(pk_sum),
                    G2Prepared::from(G2Affine::from(hash_to_g2(msg))),
                )
            })
            .collect();
        let neg_g1 = -G1Affine::generator();
        let agg_prepared = G2Prepared::from(agg);
        let mut terms: Vec<(&G1Affine, &G2Prepared)> =
            prepared.iter().map(|(a, b)| (a, b)).collect();
        terms.push((&neg_g1, &agg_prepared));
        multi_miller_loop(&terms).final_exponentiation() == Gt::identity()
    }
}
