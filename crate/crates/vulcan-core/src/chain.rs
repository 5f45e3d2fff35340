//! Block and checkpoint structure, deterministic transaction execution, and
//! the proofs clients use to withdraw against a checkpoint.
//!
//! An account id is the account's public key bytes, so a transaction is
//! valid only if its signature verifies under its own sender id. Balances
//! are plain integers with no fees; every accepted transfer conserves the
//! total supply.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec;
use crate::crypto::{AggregateSignature, PublicKey, Signature, SignatureScheme};
use crate::merkle::{self, AccountTrie, Digest, MerklePath, TxTree};

/// Account identifier: the account's public key bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(pub Vec<u8>);

impl AccountId {
    pub fn as_public_key(&self) -> PublicKey {
        PublicKey(self.0.clone())
    }
}

impl std::fmt::Debug for AccountId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let h = hex::encode(&self.0);
        write!(f, "AccountId({}…)", &h[..h.len().min(12)])
    }
}

/// A signed transfer. `epoch_tag` is the epoch the sender believed was
/// current; blocks accept tags from their own epoch or the one before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: u64,
    pub epoch_tag: u64,
    pub signature: Signature,
}

impl Transaction {
    pub fn signing_bytes(&self) -> Vec<u8> {
        codec::tx_signing_bytes(self)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::tx_bytes(self)
    }

    pub fn hash(&self) -> Digest {
        merkle::sha256(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub epoch: u64,
    /// Hash of the previous finalized block's header; zero at genesis.
    pub prev_block_hash: Digest,
    /// Hash of the checkpoint this block builds on; zero at genesis.
    pub last_checkpoint: Digest,
    pub tx_root: Digest,
    pub account_root: Digest,
}

impl BlockHeader {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::header_bytes(self)
    }

    pub fn hash(&self) -> Digest {
        merkle::sha256(&self.canonical_bytes())
    }
}

/// A block: header plus full contents. `accounts` is the complete post-state
/// binding list, sorted by account id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
    pub accounts: Vec<(AccountId, u64)>,
}

impl Block {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::block_bytes(self)
    }

    pub fn balance_of(&self, id: &AccountId) -> Option<u64> {
        self.accounts
            .binary_search_by(|(a, _)| a.cmp(id))
            .ok()
            .map(|i| self.accounts[i].1)
    }
}

/// A follower's endorsement: its signature over the block header hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Approval {
    pub validator: u16,
    pub block_hash: Digest,
    pub signature: Signature,
}

/// Compact bitmap naming which of the `n` validators signed a checkpoint.
/// Bit `j` counts from the most significant of `n` bits, so for `n = 5` the
/// signer set `{1, 3, 4}` is binary `01011`, value 11.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignerIndex {
    pub value: u64,
    pub n: u16,
}

impl SignerIndex {
    pub fn encode(signers: &BTreeSet<u16>, n: u16) -> Result<SignerIndex, ChainError> {
        if n == 0 || n > 64 {
            return Err(ChainError::RosterSize(n));
        }
        let mut value = 0u64;
        for &j in signers {
            if j >= n {
                return Err(ChainError::SignerOutOfRange { signer: j, n });
            }
            value |= 1u64 << (n - 1 - j);
        }
        Ok(SignerIndex { value, n })
    }

    pub fn decode(&self) -> Result<BTreeSet<u16>, ChainError> {
        if self.n == 0 || self.n > 64 {
            return Err(ChainError::RosterSize(self.n));
        }
        if self.n < 64 && self.value >> self.n != 0 {
            return Err(ChainError::IndexOverflow {
                value: self.value,
                n: self.n,
            });
        }
        Ok((0..self.n)
            .filter(|j| (self.value >> (self.n - 1 - j)) & 1 == 1)
            .collect())
    }

    pub fn count(&self) -> u32 {
        self.value.count_ones()
    }
}

/// What the parent chain stores per epoch: a block hash, the aggregate
/// approval signature over it, and the signer bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub block_hash: Digest,
    pub qc: AggregateSignature,
    pub index: SignerIndex,
}

impl Checkpoint {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::checkpoint_bytes(self)
    }

    pub fn hash(&self) -> Digest {
        merkle::sha256(&self.canonical_bytes())
    }
}

/// Proof of possession: everything needed to show an account held a balance
/// in a checkpointed block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofOfPossession {
    pub header: BlockHeader,
    pub balance: u64,
    pub path: MerklePath,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("validator roster size {0} unsupported (need 1..=64)")]
    RosterSize(u16),
    #[error("signer {signer} out of range for n={n}")]
    SignerOutOfRange { signer: u16, n: u16 },
    #[error("index value {value} has bits beyond n={n}")]
    IndexOverflow { value: u64, n: u16 },
    #[error("{got} approvals, quorum needs {need}")]
    InsufficientApprovals { got: usize, need: usize },
    #[error("approvals reference different block hashes")]
    MixedBlockHashes,
    #[error("account not present in block")]
    AccountMissing,
    #[error("aggregation failed: {0}")]
    Crypto(#[from] crate::crypto::CryptoError),
}

/// Minimum approvals for a checkpoint: strictly more than half the roster.
pub fn quorum(n: usize) -> usize {
    n / 2 + 1
}

/// The epoch tags a block with epoch `e` accepts: `e` and `e - 1`.
pub fn tag_ok(block_epoch: u64, tag: u64) -> bool {
    tag == block_epoch || tag + 1 == block_epoch
}

/// Apply `queue` in order against `prev` balances. A transfer is applied iff
/// the sender and receiver differ, the amount is non-zero, the signature
/// verifies under the sender's key, and the sender's running balance covers
/// the amount. Rejected transactions are skipped, not errors. Returns the
/// post-state and the accepted transactions in order.
///
/// Balances that reach zero stay in the state; accounts are only deleted at
/// exit, which happens outside block execution.
pub fn execute_queue(
    scheme: &dyn SignatureScheme,
    prev: &BTreeMap<AccountId, u64>,
    queue: &[Transaction],
) -> (BTreeMap<AccountId, u64>, Vec<Transaction>) {
    let mut post = prev.clone();
    let mut accepted = Vec::new();
    for tx in queue {
        if tx.sender == tx.receiver || tx.amount == 0 {
            continue;
        }
        let balance = post.get(&tx.sender).copied().unwrap_or(0);
        if balance < tx.amount {
            continue;
        }
        if !scheme.verify(
            &tx.sender.as_public_key(),
            &tx.signing_bytes(),
            &tx.signature,
        ) {
            continue;
        }
        *post.get_mut(&tx.sender).unwrap() = balance - tx.amount;
        *post.entry(tx.receiver.clone()).or_insert(0) += tx.amount;
        accepted.push(tx.clone());
    }
    (post, accepted)
}

/// Execute the queue and assemble the canonical block for `epoch`.
pub fn build_block(
    scheme: &dyn SignatureScheme,
    epoch: u64,
    prev_block_hash: Digest,
    last_checkpoint: Digest,
    prev_balances: &BTreeMap<AccountId, u64>,
    queue: &[Transaction],
) -> Block {
    let (post, accepted) = execute_queue(scheme, prev_balances, queue);
    let leaves: Vec<Digest> = accepted.iter().map(Transaction::hash).collect();
    let tx_root = TxTree::build(&leaves).root();
    let accounts: Vec<(AccountId, u64)> = post.into_iter().collect();
    let account_root = account_trie(&accounts).root();
    Block {
        header: BlockHeader {
            epoch,
            prev_block_hash,
            last_checkpoint,
            tx_root,
            account_root,
        },
        txs: accepted,
        accounts,
    }
}

pub fn account_trie(accounts: &[(AccountId, u64)]) -> AccountTrie {
    AccountTrie::from_entries(accounts.iter().map(|(id, b)| (id.0.as_slice(), *b)))
}

/// Full re-validation of a proposed block against this validator's own view.
///
/// True iff the header references match expectations, every transaction is
/// one the validator has itself seen (`queue_view`, by signature identity),
/// re-execution from `prev_balances` accepts every transaction, and the
/// resulting state and roots reproduce the block exactly. The queue-view
/// check is what stops a leader replaying a transaction from an already
/// finalized block: honest validators drop their queues at finalization, so
/// a replayed signature is no longer in anyone's view.
pub fn validate_block(
    scheme: &dyn SignatureScheme,
    block: &Block,
    prev_balances: &BTreeMap<AccountId, u64>,
    queue_view: &BTreeSet<Signature>,
    expected_epoch: u64,
    expected_prev_hash: Digest,
    expected_last_checkpoint: Digest,
) -> bool {
    let h = &block.header;
    if h.epoch != expected_epoch
        || h.prev_block_hash != expected_prev_hash
        || h.last_checkpoint != expected_last_checkpoint
    {
        return false;
    }
    let mut seen = BTreeSet::new();
    for tx in &block.txs {
        if !tag_ok(h.epoch, tx.epoch_tag)
            || !queue_view.contains(&tx.signature)
            || !seen.insert(tx.signature.clone())
        {
            return false;
        }
    }
    let (post, accepted) = execute_queue(scheme, prev_balances, &block.txs);
    if accepted.len() != block.txs.len() {
        return false;
    }
    // The binding list must be the post-state in canonical (sorted) order.
    if block.accounts.windows(2).any(|w| w[0].0 >= w[1].0) {
        return false;
    }
    if block.accounts.len() != post.len()
        || block.accounts.iter().any(|(id, b)| post.get(id) != Some(b))
    {
        return false;
    }
    let leaves: Vec<Digest> = block.txs.iter().map(Transaction::hash).collect();
    TxTree::build(&leaves).root() == h.tx_root
        && account_trie(&block.accounts).root() == h.account_root
}

/// Assemble a checkpoint from collected approvals. The caller must already
/// have verified each approval signature; this enforces distinct signers on
/// one block hash and the quorum size.
pub fn make_checkpoint(
    scheme: &dyn SignatureScheme,
    block_hash: Digest,
    approvals: &[Approval],
    n: u16,
) -> Result<Checkpoint, ChainError> {
    let mut by_validator: BTreeMap<u16, &Approval> = BTreeMap::new();
    for a in approvals {
        if a.block_hash != block_hash {
            return Err(ChainError::MixedBlockHashes);
        }
        if a.validator >= n {
            return Err(ChainError::SignerOutOfRange {
                signer: a.validator,
                n,
            });
        }
        by_validator.entry(a.validator).or_insert(a);
    }
    let need = quorum(n as usize);
    if by_validator.len() < need {
        return Err(ChainError::InsufficientApprovals {
            got: by_validator.len(),
            need,
        });
    }
    let signers: BTreeSet<u16> = by_validator.keys().copied().collect();
    let parts: Vec<Signature> = by_validator.values().map(|a| a.signature.clone()).collect();
    Ok(Checkpoint {
        block_hash,
        qc: scheme.combine(&parts)?,
        index: SignerIndex::encode(&signers, n)?,
    })
}

/// Verify a checkpoint against the validator roster: the signer bitmap must
/// decode within the roster, reach quorum, and the aggregate must verify as
/// those validators' signatures over the block hash.
pub fn verify_checkpoint(
    scheme: &dyn SignatureScheme,
    cp: &Checkpoint,
    roster: &[PublicKey],
) -> bool {
    if cp.index.n as usize != roster.len() {
        return false;
    }
    let Ok(signers) = cp.index.decode() else {
        return false;
    };
    if signers.len() < quorum(roster.len()) {
        return false;
    }
    let pairs: Vec<(PublicKey, Vec<u8>)> = signers
        .iter()
        .map(|&j| (roster[j as usize].clone(), cp.block_hash.to_vec()))
        .collect();
    scheme.verify_aggregate(&pairs, &cp.qc)
}

/// Build the proof that `account` holds its balance in `block`.
pub fn make_pop(account: &AccountId, block: &Block) -> Result<ProofOfPossession, ChainError> {
    let trie = account_trie(&block.accounts);
    let path = trie.prove(&account.0).ok_or(ChainError::AccountMissing)?;
    Ok(ProofOfPossession {
        header: block.header.clone(),
        balance: path.value,
        path,
    })
}

/// Check a proof of possession against the checkpoint it claims, and that the
/// claimed withdrawal does not exceed the proven balance. Identity of the
/// prover (path key vs. requesting account) is the caller's check.
pub fn verify_pop(cp: &Checkpoint, pop: &ProofOfPossession, claimed: u64) -> bool {
    pop.header.hash() == cp.block_hash
        && pop.balance == pop.path.value
        && claimed <= pop.balance
        && merkle::verify_path(&pop.header.account_root, &pop.path)
}
