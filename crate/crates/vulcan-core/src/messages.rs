//! Message vocabulary: sidechain messages between validators and clients,
//! parent-chain transactions, and contract status notifications.
//!
//! Delivery semantics live in `simnet`: sidechain messages take exactly one
//! time unit, parent-chain transactions finalize `Δ` units after submission,
//! and notifications model instantaneous reads of finalized contract state.

use crate::chain::{
    AccountId, Approval, Block, Checkpoint, ProofOfPossession, SignerIndex, Transaction,
};
use crate::crypto::{AggregateSignature, PublicKey, Signature};
use crate::merkle::Digest;

/// Sidechain (validator network) messages.
#[derive(Debug, Clone)]
pub enum Msg {
    /// Client submits a transfer to a validator it trusts.
    TransferFunds(Transaction),
    /// Validator gossips a newly accepted transaction to its peers.
    TxRequest(Transaction),
    TxAck {
        tx_hash: Digest,
    },
    TxNotAck {
        tx_hash: Digest,
    },
    /// Intake rejection back to the submitting client.
    TxNotValid {
        tx_hash: Digest,
    },
    /// Leader broadcasts its block; the signature is over the header hash.
    ProposedBlock {
        round: u32,
        block: Block,
        leader_sig: Signature,
    },
    BlockApproved(Approval),
    BlockNotApproved {
        epoch: u64,
        round: u32,
        validator: u16,
    },
    /// Leader aborts the round and restarts collection for the same epoch.
    EpochRestart {
        epoch: u64,
        round: u32,
    },
    /// Gossiped leader-timeout vote; aggregated into a non-commit challenge.
    VoteAgainstLeader {
        epoch: u64,
        slot: u16,
        generation: u32,
        voter: u16,
        signature: Signature,
    },
}

impl Msg {
    /// Short kind tag for audit records.
    pub fn kind(&self) -> &'static str {
        match self {
            Msg::TransferFunds(_) => "transferFunds",
            Msg::TxRequest(_) => "txRequest",
            Msg::TxAck { .. } => "txAck",
            Msg::TxNotAck { .. } => "txNotAck",
            Msg::TxNotValid { .. } => "txNotValid",
            Msg::ProposedBlock { .. } => "proposedBlock",
            Msg::BlockApproved(_) => "blockApproved",
            Msg::BlockNotApproved { .. } => "blockNotApproved",
            Msg::EpochRestart { .. } => "epochRestart",
            Msg::VoteAgainstLeader { .. } => "voteAgainstLeader",
        }
    }
}

/// Canonical bytes signed by a leader-timeout vote.
pub fn vote_message(epoch: u64, slot: u16, generation: u32) -> Vec<u8> {
    let mut out = b"vulcan.vote-against-leader".to_vec();
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&slot.to_le_bytes());
    out.extend_from_slice(&generation.to_le_bytes());
    out
}

/// A transaction counted during an interactive exit. The inner transaction
/// signature already binds the sender; `client_sig` is the client's
/// co-signature when it is the receiver, and `leader_sig` is the epoch
/// leader's endorsement. Both co-signatures sign the transaction's full
/// canonical bytes.
#[derive(Debug, Clone)]
pub struct CosignedTx {
    pub tx: Transaction,
    pub client_sig: Option<Signature>,
    pub leader_sig: Option<Signature>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionParty {
    Client,
    Leader,
}

#[derive(Debug, Clone)]
pub enum ChallengeKind {
    /// Demand verification of the pending checkpoint.
    Checkpoint,
    /// Evidence that the epoch leader timed out: an aggregate of more than
    /// `f` validators' votes against it.
    NonCommit {
        epoch: u64,
        slot: u16,
        generation: u32,
        votes: AggregateSignature,
        voters: SignerIndex,
    },
}

/// Transactions submitted to the parent chain. Each finalizes `Δ` after
/// submission; money legs (deposit amounts, challenge wagers) are debited at
/// finalization by the ledger.
#[derive(Debug, Clone)]
pub enum MainchainTx {
    Deposit {
        client: AccountId,
        amount: u64,
    },
    Commit {
        slot: u16,
        generation: u32,
        epoch: u64,
        round: u32,
        checkpoint: Checkpoint,
    },
    Withdraw {
        client: AccountId,
        amount: u64,
        pop: ProofOfPossession,
    },
    Exit {
        client: AccountId,
        pop: ProofOfPossession,
    },
    Challenge {
        payer: Vec<u8>,
        kind: ChallengeKind,
    },
    /// Open an interactive exit: proof of the client's balance at the last
    /// finalized checkpoint (absent only before the first finalization).
    SessionOpen {
        client: AccountId,
        prev: Option<ProofOfPossession>,
    },
    /// Leader's response: the client's path in the pending checkpoint.
    SessionLeaderPath {
        slot: u16,
        client: AccountId,
        pop: ProofOfPossession,
    },
    /// Either party's co-signed transaction set for the disputed epoch.
    SessionTxs {
        party: SessionParty,
        client: AccountId,
        txs: Vec<CosignedTx>,
    },
}

impl MainchainTx {
    pub fn kind(&self) -> &'static str {
        match self {
            MainchainTx::Deposit { .. } => "deposit",
            MainchainTx::Commit { .. } => "commit",
            MainchainTx::Withdraw { .. } => "withdraw",
            MainchainTx::Exit { .. } => "exit",
            MainchainTx::Challenge {
                kind: ChallengeKind::Checkpoint,
                ..
            } => "challenge-cp",
            MainchainTx::Challenge {
                kind: ChallengeKind::NonCommit { .. },
                ..
            } => "challenge-ncp",
            MainchainTx::SessionOpen { .. } => "sessionOpen",
            MainchainTx::SessionLeaderPath { .. } => "sessionLeaderPath",
            MainchainTx::SessionTxs { .. } => "sessionTxs",
        }
    }

    /// Upfront money leg applied by the ledger at finalization:
    /// (payer account, amount), with challenge wagers filled in by config.
    pub fn upfront(&self, wager: u64) -> Option<(Vec<u8>, u64)> {
        match self {
            MainchainTx::Deposit { client, amount } => Some((client.0.clone(), *amount)),
            MainchainTx::Challenge { payer, .. } => Some((payer.clone(), wager)),
            _ => None,
        }
    }
}

/// Contract state notifications, delivered with zero delay: entities read
/// finalized parent-chain state instantaneously.
#[derive(Debug, Clone)]
pub enum Notification {
    DepositReceived {
        client: AccountId,
        amount: u64,
    },
    CannotDeposit {
        client: AccountId,
        amount: u64,
    },
    /// A commit finalized: the pending term for `epoch` begins.
    CommitReceived {
        epoch: u64,
        round: u32,
        checkpoint: Checkpoint,
    },
    /// The pending checkpoint survived its term; `next_epoch` begins.
    EpochChanged {
        epoch: u64,
        checkpoint: Checkpoint,
        next_epoch: u64,
    },
    /// A challenge was upheld: the leader at `slot` was replaced.
    ChallengeValid {
        epoch: u64,
        slot: u16,
        generation: u32,
        replacement: PublicKey,
    },
    /// A challenge failed; the wager was forfeited and the term extended.
    ChallengeRejected {
        epoch: u64,
        new_deadline: u64,
    },
    WithdrawOk {
        client: AccountId,
        amount: u64,
    },
    WithdrawNotOk {
        client: AccountId,
        amount: u64,
    },
    /// The client fully exited; validators drop its account.
    ClientExit {
        client: AccountId,
        amount: u64,
    },
    /// Interactive exit: the contract demands the leader's path for `client`.
    LeaderPathDemand {
        client: AccountId,
        deadline: u64,
    },
    /// Interactive exit: both parties may now submit co-signed transactions.
    SessionTxWindow {
        client: AccountId,
        deadline: u64,
    },
    SessionResolved {
        client: AccountId,
        recovered: u64,
    },
    SessionRejected {
        client: AccountId,
    },
    /// Irrecoverable dispute: the chain halts and only exits against the
    /// last finalized checkpoint are served.
    MassExit,
    /// Validity endpoint reached: no further epochs, exits still served.
    Halted {
        residual_zero: bool,
    },
}

impl Notification {
    pub fn kind(&self) -> &'static str {
        match self {
            Notification::DepositReceived { .. } => "depositReceived",
            Notification::CannotDeposit { .. } => "cannotDeposit",
            Notification::CommitReceived { .. } => "commitReceived",
            Notification::EpochChanged { .. } => "epochChanged",
            Notification::ChallengeValid { .. } => "challengeValid",
            Notification::ChallengeRejected { .. } => "challengeRejected",
            Notification::WithdrawOk { .. } => "withdrawOK",
            Notification::WithdrawNotOk { .. } => "withdrawNotOK",
            Notification::ClientExit { .. } => "clientExit",
            Notification::LeaderPathDemand { .. } => "leaderPathDemand",
            Notification::SessionTxWindow { .. } => "sessionTxWindow",
            Notification::SessionResolved { .. } => "sessionResolved",
            Notification::SessionRejected { .. } => "sessionRejected",
            Notification::MassExit => "massExit",
            Notification::Halted { .. } => "halted",
        }
    }
}
