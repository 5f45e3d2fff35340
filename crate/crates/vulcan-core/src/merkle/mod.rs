//! Hashing primitives and the two authenticated structures used by blocks:
//! a transaction tree ([`TxTree`]) and a binary Patricia trie over account
//! balances ([`AccountTrie`]).
//!
//! Everything here hashes with SHA-256. Leaf and interior nodes are
//! domain-separated with a one-byte tag so that no leaf encoding can collide
//! with an interior-node encoding.

mod trie;
mod tx_tree;

pub use trie::{verify_path, AccountTrie, BranchMask, MerklePath};
pub use tx_tree::{verify_tx_proof, TxProof, TxTree};

use sha2::{Digest as _, Sha256};

/// 256-bit hash output used everywhere in the protocol.
pub type Digest = [u8; 32];

/// The all-zero digest, used as genesis back-references in block headers.
pub const ZERO_DIGEST: Digest = [0u8; 32];

pub fn sha256(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

pub fn sha256_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Root of an empty tree (either structure): the hash of the empty string.
pub fn empty_root() -> Digest {
    sha256(b"")
}

pub fn to_hex(d: &Digest) -> String {
    hex::encode(d)
}

/// Bit `i` of a digest, counting from the most significant bit of byte 0.
#[inline]
pub(crate) fn digest_bit(d: &Digest, i: u16) -> bool {
    let byte = (i / 8) as usize;
    let shift = 7 - (i % 8);
    (d[byte] >> shift) & 1 == 1
}

/// Index of the first bit at which two digests differ. `None` if equal.
pub(crate) fn first_diff_bit(a: &Digest, b: &Digest) -> Option<u16> {
    for i in 0..32 {
        if a[i] != b[i] {
            let x = a[i] ^ b[i];
            return Some((i * 8) as u16 + x.leading_zeros() as u16);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_root_is_hash_of_empty_string() {
        // SHA-256("") is a fixed, well-known constant.
        assert_eq!(
            to_hex(&empty_root()),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn digest_bits_count_from_msb() {
        let mut d = ZERO_DIGEST;
        d[0] = 0b1000_0000;
        assert!(digest_bit(&d, 0));
        assert!(!digest_bit(&d, 1));
        let mut e = ZERO_DIGEST;
        e[1] = 0b0000_0001;
        assert!(digest_bit(&e, 15));
        assert!(!digest_bit(&e, 14));
    }

    #[test]
    fn first_diff_bit_finds_highest_order_difference() {
        let a = ZERO_DIGEST;
        let mut b = ZERO_DIGEST;
        b[2] = 0b0010_0000;
        assert_eq!(first_diff_bit(&a, &b), Some(18));
        assert_eq!(first_diff_bit(&a, &a), None);
    }
}
