//! Bitcoin-style binary hash tree over the ordered transaction hashes of a
//! block. Odd levels are padded by duplicating the last node.

use super::{empty_root, sha256_parts, Digest};

const INTERIOR_TAG: [u8; 1] = [0x01];

fn parent(left: &Digest, right: &Digest) -> Digest {
    sha256_parts(&[&INTERIOR_TAG, left, right])
}

/// Merkle tree over transaction hashes, in block order.
///
/// The empty tree has the sentinel root `sha256("")`. A non-empty tree always
/// performs at least one pairing round, so a single-leaf tree has root
/// `H(tag || h || h)` rather than the leaf itself; this keeps leaves and roots
/// in disjoint domains.
#[derive(Debug, Clone)]
pub struct TxTree {
    /// levels[0] is the (unpadded) leaf level; the last level has one node.
    levels: Vec<Vec<Digest>>,
    root: Digest,
}

/// Inclusion proof for one leaf: sibling hashes from the leaf level upward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxProof {
    pub leaf_index: usize,
    pub siblings: Vec<Digest>,
}

impl TxTree {
    pub fn build(leaves: &[Digest]) -> TxTree {
        if leaves.is_empty() {
            return TxTree {
                levels: Vec::new(),
                root: empty_root(),
            };
        }
        let mut levels = vec![leaves.to_vec()];
        loop {
            let cur = levels.last().unwrap();
            if cur.len() == 1 && levels.len() > 1 {
                break;
            }
            let mut padded = cur.clone();
            if padded.len() % 2 == 1 {
                padded.push(*padded.last().unwrap());
            }
            let next: Vec<Digest> = padded
                .chunks(2)
                .map(|pair| parent(&pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        let root = levels.last().unwrap()[0];
        TxTree { levels, root }
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn len(&self) -> usize {
        self.levels.first().map_or(0, |l| l.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Proof of inclusion for the leaf at `index`, or `None` if out of range.
    pub fn prove(&self, index: usize) -> Option<TxProof> {
        if index >= self.len() {
            return None;
        }
        let mut siblings = Vec::new();
        let mut i = index;
        // Walk all levels below the root.
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = if i.is_multiple_of(2) {
                // Right sibling; a duplicated last node is its own sibling.
                *level.get(i + 1).unwrap_or(&level[i])
            } else {
                level[i - 1]
            };
            siblings.push(sib);
            i /= 2;
        }
        Some(TxProof {
            leaf_index: index,
            siblings,
        })
    }
}

/// Recompute the root implied by `proof` for `leaf` and compare with `root`.
pub fn verify_tx_proof(root: &Digest, leaf: &Digest, proof: &TxProof) -> bool {
    if proof.siblings.is_empty() {
        return false;
    }
    let mut h = *leaf;
    let mut i = proof.leaf_index;
    for sib in &proof.siblings {
        h = if i.is_multiple_of(2) {
            parent(&h, sib)
        } else {
            parent(sib, &h)
        };
        i /= 2;
    }
    h == *root
}
