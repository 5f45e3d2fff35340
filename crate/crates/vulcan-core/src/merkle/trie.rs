//! Binary Patricia trie over hashed account keys, with path compression.
//!
//! Keys are arbitrary byte strings (account identifiers); the trie positions
//! each entry by the bits of `sha256(key)`, most significant bit first. Runs
//! of bits with no siblings are compressed away: an interior node exists only
//! at a depth where at least two keys actually diverge. The depth of every
//! interior node is bound into its hash, so a proof cannot silently relocate
//! a branch.
//!
//! Node hashes:
//! * leaf:   `H(0x00 || key_hash || value_le8)`
//! * branch: `H(0x01 || depth_be2 || left_hash || right_hash)`

use std::rc::Rc;

use super::{digest_bit, empty_root, first_diff_bit, sha256, sha256_parts, Digest};

const LEAF_TAG: [u8; 1] = [0x00];
const BRANCH_TAG: [u8; 1] = [0x01];

fn leaf_hash(key_hash: &Digest, value: u64) -> Digest {
    sha256_parts(&[&LEAF_TAG, key_hash, &value.to_le_bytes()])
}

fn branch_hash(depth: u16, left: &Digest, right: &Digest) -> Digest {
    sha256_parts(&[&BRANCH_TAG, &depth.to_be_bytes(), left, right])
}

/// 256-bit set marking the depths at which a proof path crosses a branch
/// node. Bit `d` (counting from the MSB of byte 0) corresponds to depth `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchMask(pub [u8; 32]);

impl BranchMask {
    pub fn empty() -> Self {
        BranchMask([0u8; 32])
    }

    fn set(&mut self, depth: u16) {
        self.0[(depth / 8) as usize] |= 1 << (7 - depth % 8);
    }

    /// Depths of set bits, ascending (root-most first).
    pub fn depths(&self) -> Vec<u16> {
        let mut out = Vec::new();
        for d in 0..256u16 {
            if (self.0[(d / 8) as usize] >> (7 - d % 8)) & 1 == 1 {
                out.push(d);
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|b| b.count_ones() as usize).sum()
    }
}

/// Proof that `key` holds `value` in the trie with a given root.
///
/// `siblings` are ordered deepest-first (leaf upward) and pair with the set
/// bits of `branch_mask` taken in descending depth order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerklePath {
    pub key: Vec<u8>,
    pub value: u64,
    pub branch_mask: BranchMask,
    pub siblings: Vec<Digest>,
}

#[derive(Debug)]
enum Node {
    Leaf {
        key_hash: Digest,
        value: u64,
        hash: Digest,
    },
    Branch {
        depth: u16,
        rep: Digest,
        left: Rc<Node>,
        right: Rc<Node>,
        hash: Digest,
    },
}

impl Node {
    fn hash(&self) -> Digest {
        match self {
            Node::Leaf { hash, .. } | Node::Branch { hash, .. } => *hash,
        }
    }

    /// The hash of any key stored under this node. All keys below a branch at
    /// depth `d` agree on bits `[0, d)`, so any representative works for
    /// prefix comparisons.
    fn representative(&self) -> Digest {
        match self {
            Node::Leaf { key_hash, .. } => *key_hash,
            Node::Branch { rep, .. } => *rep,
        }
    }

    fn leaf(key_hash: Digest, value: u64) -> Rc<Node> {
        let hash = leaf_hash(&key_hash, value);
        Rc::new(Node::Leaf {
            key_hash,
            value,
            hash,
        })
    }

    fn branch(depth: u16, left: Rc<Node>, right: Rc<Node>) -> Rc<Node> {
        let hash = branch_hash(depth, &left.hash(), &right.hash());
        let rep = left.representative();
        Rc::new(Node::Branch {
            depth,
            rep,
            left,
            right,
            hash,
        })
    }
}

/// Account-balance trie. Cloning is cheap: subtrees are shared and only the
/// spine touched by an update is rebuilt.
#[derive(Debug, Clone, Default)]
pub struct AccountTrie {
    root: Option<Rc<Node>>,
    len: usize,
}

impl AccountTrie {
    pub fn new() -> Self {
        AccountTrie { root: None, len: 0 }
    }

    pub fn from_entries<'a, I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (&'a [u8], u64)>,
    {
        let mut t = AccountTrie::new();
        for (k, v) in entries {
            t.set(k, v);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root(&self) -> Digest {
        match &self.root {
            None => empty_root(),
            Some(n) => n.hash(),
        }
    }

    /// Insert or update `key` with `value`.
    pub fn set(&mut self, key: &[u8], value: u64) {
        let kh = sha256(key);
        let (root, added) = match self.root.take() {
            None => (Node::leaf(kh, value), true),
            Some(n) => insert(n, &kh, value),
        };
        self.root = Some(root);
        if added {
            self.len += 1;
        }
    }

    /// Remove `key` if present; returns whether it was.
    pub fn remove(&mut self, key: &[u8]) -> bool {
        let kh = sha256(key);
        match self.root.take() {
            None => false,
            Some(n) => {
                let (rest, removed) = delete(n, &kh);
                self.root = rest;
                if removed {
                    self.len -= 1;
                }
                removed
            }
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<u64> {
        let kh = sha256(key);
        let mut cur = self.root.as_ref()?;
        loop {
            match cur.as_ref() {
                Node::Leaf {
                    key_hash, value, ..
                } => {
                    return (*key_hash == kh).then_some(*value);
                }
                Node::Branch {
                    depth, left, right, ..
                } => {
                    cur = if digest_bit(&kh, *depth) { right } else { left };
                }
            }
        }
    }

    /// Membership proof for `key`, or `None` if absent.
    pub fn prove(&self, key: &[u8]) -> Option<MerklePath> {
        let kh = sha256(key);
        let mut cur = self.root.as_ref()?;
        let mut mask = BranchMask::empty();
        let mut siblings = Vec::new(); // gathered root-most first
        loop {
            match cur.as_ref() {
                Node::Leaf {
                    key_hash, value, ..
                } => {
                    if *key_hash != kh {
                        return None;
                    }
                    siblings.reverse(); // deepest-first
                    return Some(MerklePath {
                        key: key.to_vec(),
                        value: *value,
                        branch_mask: mask,
                        siblings,
                    });
                }
                Node::Branch {
                    depth, left, right, ..
                } => {
                    mask.set(*depth);
                    if digest_bit(&kh, *depth) {
                        siblings.push(left.hash());
                        cur = right;
                    } else {
                        siblings.push(right.hash());
                        cur = left;
                    }
                }
            }
        }
    }
}

/// Recompute the root implied by `path` and compare with `root`.
pub fn verify_path(root: &Digest, path: &MerklePath) -> bool {
    let depths = path.branch_mask.depths();
    if depths.len() != path.siblings.len() {
        return false;
    }
    let kh = sha256(&path.key);
    let mut h = leaf_hash(&kh, path.value);
    for (d, sib) in depths.iter().rev().zip(path.siblings.iter()) {
        h = if digest_bit(&kh, *d) {
            branch_hash(*d, sib, &h)
        } else {
            branch_hash(*d, &h, sib)
        };
    }
    h == *root
}

/// Returns the new subtree and whether a key was added (vs. updated).
fn insert(node: Rc<Node>, kh: &Digest, value: u64) -> (Rc<Node>, bool) {
    // Divergence from any key below `node` above the node's own depth means
    // the new key belongs in a fresh branch straddling the whole subtree.
    let rep = node.representative();
    let diff = first_diff_bit(kh, &rep);
    match node.as_ref() {
        Node::Leaf { key_hash, .. } => match diff {
            None => {
                debug_assert_eq!(key_hash, kh);
                (Node::leaf(*kh, value), false)
            }
            Some(d) => {
                let new = Node::leaf(*kh, value);
                let (l, r) = order(d, kh, new, node.clone());
                (Node::branch(d, l, r), true)
            }
        },
        Node::Branch {
            depth, left, right, ..
        } => {
            match diff {
                Some(d) if d < *depth => {
                    let new = Node::leaf(*kh, value);
                    let (l, r) = order(d, kh, new, node.clone());
                    (Node::branch(d, l, r), true)
                }
                _ => {
                    // Agrees with the subtree prefix; descend by our bit.
                    if digest_bit(kh, *depth) {
                        let (nr, added) = insert(right.clone(), kh, value);
                        (Node::branch(*depth, left.clone(), nr), added)
                    } else {
                        let (nl, added) = insert(left.clone(), kh, value);
                        (Node::branch(*depth, nl, right.clone()), added)
                    }
                }
            }
        }
    }
}

/// Order `new` (whose key bit at `d` decides the side) against `old`.
fn order(d: u16, kh: &Digest, new: Rc<Node>, old: Rc<Node>) -> (Rc<Node>, Rc<Node>) {
    if digest_bit(kh, d) {
        (old, new)
    } else {
        (new, old)
    }
}

/// Returns the remaining subtree (if any) and whether the key was found.
fn delete(node: Rc<Node>, kh: &Digest) -> (Option<Rc<Node>>, bool) {
    match node.as_ref() {
        Node::Leaf { key_hash, .. } => {
            if key_hash == kh {
                (None, true)
            } else {
                (Some(node), false)
            }
        }
        Node::Branch {
            depth, left, right, ..
        } => {
            let (descend_right, child, other) = if digest_bit(kh, *depth) {
                (true, right.clone(), left.clone())
            } else {
                (false, left.clone(), right.clone())
            };
            let (rest, removed) = delete(child, kh);
            if !removed {
                return (Some(node), false);
            }
            match rest {
                // Lone sibling collapses upward, erasing the branch.
                None => (Some(other), true),
                Some(sub) => {
                    let (l, r) = if descend_right {
                        (other, sub)
                    } else {
                        (sub, other)
                    };
                    (Some(Node::branch(*depth, l, r)), true)
                }
            }
        }
    }
}
