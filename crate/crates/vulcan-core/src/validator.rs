//! The honest validator state machine.
//!
//! A validator is a pure event handler: messages, contract notifications,
//! and its own timers go in; effects (sends, broadcasts, parent-chain
//! submissions, timer requests, block publications) come out. All state
//! transitions are deterministic functions of the input sequence, which is
//! what makes whole-network runs reproducible.
//!
//! # Balance model
//!
//! `base` is the account table of the last finalized block. Contract
//! notifications (deposits, paid withdrawals, exits) are journaled as they
//! arrive and folded into `base` at each `EpochChanged`: the finalized
//! block's table is adopted first, then every op journaled since the
//! previous fold is applied on top. The contract orders payout
//! notifications before `EpochChanged`, so one fold window cleanly maps to
//! one block's successor base.
//!
//! # Transaction intake
//!
//! A transaction is admitted to the live queue only while the collection
//! window is open (with epoch overlap enabled that is the pending term of
//! the previous epoch, which is when the next block's base is already
//! determined); otherwise it is staged after shape checks and fully
//! validated at the next window. Admission checks spendable funds against
//! the *effective* balance: the upcoming block's base, plus journaled
//! contract ops, plus the net effect of every queued-but-unbaked
//! transaction. Signatures of finalized transactions are remembered for two
//! epochs — exactly the lifetime of a valid epoch tag — so a replayed
//! transaction can never re-enter any honest queue, and therefore never
//! validates in a proposed block.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::chain::{
    make_checkpoint, make_pop, quorum, tag_ok, validate_block, AccountId, Approval, Block,
    Checkpoint, Transaction,
};
use crate::crypto::{scheme, KeyPair, PublicKey, SchemeKind, Signature, SignatureScheme};
use crate::merkle::{Digest, ZERO_DIGEST};
use crate::messages::{vote_message, CosignedTx, MainchainTx, Msg, Notification, SessionParty};

/// Blocks published by approvers, addressable by header hash.
pub type BlockRegistry = BTreeMap<Digest, Block>;

#[derive(Debug, Clone)]
pub struct ValidatorConfig {
    pub n: u16,
    pub f: u16,
    pub delta: u64,
    /// Timeout budget unit: deadlines scale with it, message delay does not.
    pub tau: u64,
    /// Length of a collection window before the leader proposes.
    pub t_max: u64,
    /// Proposal attempts per leader tenure before it gives up.
    pub max_rounds: u32,
    /// Maximum transactions per block.
    pub n_max: usize,
    /// Collect for epoch e+1 during the pending term of epoch e.
    pub overlap: bool,
    pub scheme: SchemeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKind {
    /// Leader: propose the block for the current epoch.
    Propose,
    /// Leader: approval collection deadline for the current round.
    ApprovalDeadline,
    /// Follower: give up waiting for a valid proposal.
    ProposalWait,
    /// Both: give up waiting for the epoch's commit to land.
    CommitWait,
}

#[derive(Debug)]
pub enum Effect {
    Send {
        to: u16,
        msg: Msg,
    },
    /// To every other validator.
    Broadcast {
        msg: Msg,
    },
    SendClient {
        client: AccountId,
        msg: Msg,
    },
    Submit {
        tx: MainchainTx,
    },
    Timer {
        at: u64,
        kind: TimerKind,
    },
    /// Make a block fetchable by anyone (the publication feed).
    Publish {
        block: Block,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sender {
    Validator(u16),
    Client,
}

/// One journaled contract op, folded into `base` at epoch boundaries.
#[derive(Debug, Clone)]
enum JournalOp {
    Credit(AccountId, u64),
    Debit(AccountId, u64),
    Remove(AccountId),
}

fn fold_ops(base: &mut BTreeMap<AccountId, u64>, ops: &[JournalOp]) {
    for op in ops {
        match op {
            JournalOp::Credit(c, x) => *base.entry(c.clone()).or_insert(0) += x,
            JournalOp::Debit(c, x) => {
                let b = base.entry(c.clone()).or_insert(0);
                *b = b.saturating_sub(*x);
            }
            JournalOp::Remove(c) => {
                base.remove(c);
            }
        }
    }
}

/// Notification-driven mirror of the chain state every honest validator
/// converges to. The simulation keeps one to bootstrap replacement
/// validators mid-run; it sees exactly the public notification stream plus
/// the publication feed, nothing private.
#[derive(Debug, Clone)]
pub struct BalanceBook {
    pub epoch: u64,
    pub base: BTreeMap<AccountId, u64>,
    journal: Vec<JournalOp>,
    pub clients: BTreeSet<AccountId>,
    pub roster: Vec<(PublicKey, u32)>,
    pub prev_block_hash: Digest,
    pub last_checkpoint_hash: Digest,
    /// Set while a commit is pending (between CommitReceived and the next
    /// EpochChanged / voiding).
    pub pending: Option<Checkpoint>,
}

impl BalanceBook {
    pub fn new(roster: Vec<PublicKey>) -> Self {
        BalanceBook {
            epoch: 1,
            base: BTreeMap::new(),
            journal: Vec::new(),
            clients: BTreeSet::new(),
            roster: roster.into_iter().map(|k| (k, 0)).collect(),
            prev_block_hash: ZERO_DIGEST,
            last_checkpoint_hash: ZERO_DIGEST,
            pending: None,
        }
    }

    pub fn on_notification(&mut self, n: &Notification, registry: &BlockRegistry) {
        match n {
            Notification::DepositReceived { client, amount } => {
                self.clients.insert(client.clone());
                self.journal
                    .push(JournalOp::Credit(client.clone(), *amount));
            }
            Notification::WithdrawOk { client, amount } => {
                self.journal.push(JournalOp::Debit(client.clone(), *amount));
            }
            Notification::ClientExit { client, .. } => {
                self.clients.remove(client);
                self.journal.push(JournalOp::Remove(client.clone()));
            }
            Notification::CommitReceived { checkpoint, .. } => {
                self.pending = Some(checkpoint.clone());
            }
            Notification::EpochChanged {
                epoch,
                checkpoint,
                next_epoch,
            } => {
                if *epoch > 0 {
                    if let Some(block) = registry.get(&checkpoint.block_hash) {
                        self.base = block.accounts.iter().cloned().collect();
                    }
                    self.prev_block_hash = checkpoint.block_hash;
                    self.last_checkpoint_hash = checkpoint.hash();
                }
                let ops = std::mem::take(&mut self.journal);
                fold_ops(&mut self.base, &ops);
                self.epoch = *next_epoch;
                self.pending = None;
            }
            Notification::ChallengeValid {
                slot,
                generation,
                replacement,
                ..
            } => {
                self.roster[*slot as usize] = (replacement.clone(), *generation);
                self.pending = None;
            }
            _ => {}
        }
    }
}

#[derive(Debug)]
pub struct Validator {
    pub cfg: ValidatorConfig,
    pub slot: u16,
    keypair: KeyPair,
    roster: Vec<(PublicKey, u32)>,
    inert: bool,

    // Chain position.
    epoch: u64,
    round: u32,
    base: BTreeMap<AccountId, u64>,
    journal: Vec<JournalOp>,
    clients: BTreeSet<AccountId>,
    prev_block_hash: Digest,
    last_checkpoint_hash: Digest,

    // Intake.
    queue: Vec<Transaction>,
    queue_sigs: BTreeSet<Signature>,
    staged: Vec<Transaction>,
    staged_sigs: BTreeSet<Signature>,
    /// Signatures finalized in the last two blocks: replay barrier.
    recent_included: VecDeque<(u64, BTreeSet<Signature>)>,
    in_pending_term: bool,
    collect_started_at: u64,
    propose_at: u64,

    // Proposal / approval.
    pending_block: Option<Block>,
    /// Signatures of the pending block's transactions (excluded from the
    /// effective-balance view, restored if the checkpoint is voided).
    in_flight: BTreeSet<Signature>,
    approvals: BTreeMap<u16, Approval>,
    nonapprovals: BTreeSet<u16>,
    committed: bool,
    approved_hash: Option<Digest>,

    // Leader vote-out.
    votes: BTreeMap<u16, Signature>,
    voted: bool,
    ncp_submitted: bool,

    // Timers: expected fire times; stale wakeups are ignored.
    t_propose: Option<u64>,
    t_approval: Option<u64>,
    t_proposal_wait: Option<u64>,
    t_commit_wait: Option<u64>,
}

impl Validator {
    pub fn new(
        cfg: ValidatorConfig,
        slot: u16,
        keypair: KeyPair,
        roster: Vec<PublicKey>,
        now: u64,
    ) -> Self {
        let roster = roster.into_iter().map(|k| (k, 0)).collect();
        Validator {
            cfg,
            slot,
            keypair,
            roster,
            inert: false,
            epoch: 1,
            round: 1,
            base: BTreeMap::new(),
            journal: Vec::new(),
            clients: BTreeSet::new(),
            prev_block_hash: ZERO_DIGEST,
            last_checkpoint_hash: ZERO_DIGEST,
            queue: Vec::new(),
            queue_sigs: BTreeSet::new(),
            staged: Vec::new(),
            staged_sigs: BTreeSet::new(),
            recent_included: VecDeque::new(),
            // The genesis deposit window doubles as the first collection
            // window.
            in_pending_term: true,
            collect_started_at: now,
            propose_at: u64::MAX,
            pending_block: None,
            in_flight: BTreeSet::new(),
            approvals: BTreeMap::new(),
            nonapprovals: BTreeSet::new(),
            committed: false,
            approved_hash: None,
            votes: BTreeMap::new(),
            voted: false,
            ncp_submitted: false,
            t_propose: None,
            t_approval: None,
            t_proposal_wait: None,
            t_commit_wait: None,
        }
    }

    /// Bootstrap a replacement validator from the public mirror. Called
    /// right after a `ChallengeValid` installed `keypair.public` at `slot`,
    /// so no checkpoint is pending and the validator starts in the live
    /// (collection/proposal) part of epoch `book.epoch`.
    pub fn from_book(
        cfg: ValidatorConfig,
        slot: u16,
        keypair: KeyPair,
        book: &BalanceBook,
        now: u64,
    ) -> (Self, Vec<Effect>) {
        let mut v = Validator {
            cfg,
            slot,
            keypair,
            roster: book.roster.clone(),
            inert: false,
            epoch: book.epoch,
            round: 1,
            base: book.base.clone(),
            journal: Vec::new(),
            clients: book.clients.clone(),
            prev_block_hash: book.prev_block_hash,
            last_checkpoint_hash: book.last_checkpoint_hash,
            queue: Vec::new(),
            queue_sigs: BTreeSet::new(),
            staged: Vec::new(),
            staged_sigs: BTreeSet::new(),
            recent_included: VecDeque::new(),
            in_pending_term: false,
            collect_started_at: now,
            propose_at: u64::MAX,
            pending_block: None,
            in_flight: BTreeSet::new(),
            approvals: BTreeMap::new(),
            nonapprovals: BTreeSet::new(),
            committed: false,
            approved_hash: None,
            votes: BTreeMap::new(),
            voted: false,
            ncp_submitted: false,
            t_propose: None,
            t_approval: None,
            t_proposal_wait: None,
            t_commit_wait: None,
        };
        let effects = v.schedule_epoch(now);
        (v, effects)
    }

    fn sch(&self) -> &'static dyn SignatureScheme {
        scheme(self.cfg.scheme)
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keypair.public
    }

    pub fn slot(&self) -> u16 {
        self.slot
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn base(&self) -> &BTreeMap<AccountId, u64> {
        &self.base
    }

    /// Digest of the finalized balance view, for cross-validator agreement
    /// checks.
    pub fn base_digest(&self) -> [u8; 32] {
        let mut b = Vec::new();
        b.extend_from_slice(&self.epoch.to_le_bytes());
        for (id, bal) in &self.base {
            crate::codec::put_bytes(&mut b, &id.0);
            b.extend_from_slice(&bal.to_le_bytes());
        }
        crate::merkle::sha256(&b)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_inert(&self) -> bool {
        self.inert
    }

    pub fn current_leader_slot(&self) -> u16 {
        self.leader_slot()
    }

    /// Whether this validator leads the current epoch.
    pub fn leading(&self) -> bool {
        self.is_leader()
    }

    pub fn in_pending(&self) -> bool {
        self.in_pending_term
    }

    pub fn pending_block(&self) -> Option<&Block> {
        self.pending_block.as_ref()
    }

    pub fn roster_key(&self, slot: u16) -> &PublicKey {
        &self.roster[slot as usize].0
    }

    pub fn roster_generation(&self, slot: u16) -> u32 {
        self.roster[slot as usize].1
    }

    pub(crate) fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    /// Build the block an honest leader would propose right now, without
    /// touching any state.
    pub fn build_candidate_block(&self) -> Block {
        let eligible: Vec<Transaction> = self
            .queue
            .iter()
            .filter(|tx| tag_ok(self.epoch, tx.epoch_tag))
            .take(self.cfg.n_max)
            .cloned()
            .collect();
        crate::chain::build_block(
            self.sch(),
            self.epoch,
            self.prev_block_hash,
            self.last_checkpoint_hash,
            &self.base,
            &eligible,
        )
    }

    fn leader_slot(&self) -> u16 {
        (self.epoch % self.cfg.n as u64) as u16
    }

    fn is_leader(&self) -> bool {
        self.leader_slot() == self.slot
    }

    fn leader_key(&self) -> &PublicKey {
        &self.roster[self.leader_slot() as usize].0
    }

    fn leader_generation(&self) -> u32 {
        self.roster[self.leader_slot() as usize].1
    }

    /// Whether new transactions go straight to the live queue right now.
    fn window_open(&self, now: u64) -> bool {
        if self.cfg.overlap {
            self.in_pending_term
        } else {
            now < self.propose_at
        }
    }

    /// Base the *next* block builds on: the pending block's table while a
    /// checkpoint is pending, the finalized base otherwise.
    fn working_base(&self, account: &AccountId) -> u64 {
        if let Some(block) = &self.pending_block {
            if self.in_pending_term {
                return block.balance_of(account).unwrap_or(0);
            }
        }
        self.base.get(account).copied().unwrap_or(0)
    }

    /// Spendable balance: working base + journaled contract ops + net
    /// effect of queued transactions not yet baked into a pending block.
    fn effective_balance(&self, account: &AccountId) -> i128 {
        let mut bal = self.working_base(account) as i128;
        for op in &self.journal {
            match op {
                JournalOp::Credit(c, x) if c == account => bal += *x as i128,
                JournalOp::Debit(c, x) if c == account => bal -= *x as i128,
                JournalOp::Remove(c) if c == account => bal = 0,
                _ => {}
            }
        }
        for tx in &self.queue {
            if self.in_flight.contains(&tx.signature) {
                continue;
            }
            if &tx.sender == account {
                bal -= tx.amount as i128;
            }
            if &tx.receiver == account {
                bal += tx.amount as i128;
            }
        }
        bal
    }

    fn replayed(&self, sig: &Signature) -> bool {
        self.recent_included
            .iter()
            .any(|(_, sigs)| sigs.contains(sig))
    }

    fn shape_ok(&self, tx: &Transaction) -> bool {
        tx.amount > 0
            && tx.sender != tx.receiver
            && self.clients.contains(&tx.sender)
            && self.clients.contains(&tx.receiver)
            && tag_ok(self.epoch, tx.epoch_tag)
            && self.sch().verify(
                &tx.sender.as_public_key(),
                &tx.signing_bytes(),
                &tx.signature,
            )
    }

    /// Full admission: shape plus funds against the effective balance.
    fn admit_ok(&self, tx: &Transaction) -> bool {
        self.shape_ok(tx) && self.effective_balance(&tx.sender) >= tx.amount as i128
    }

    // ---- epoch lifecycle ----

    /// Arm the proposal machinery for the current epoch. Called at
    /// `EpochChanged` and after a leader replacement.
    fn schedule_epoch(&mut self, now: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        self.propose_at = now.max(self.collect_started_at + self.cfg.t_max);
        if self.is_leader() {
            self.t_propose = Some(self.propose_at);
            effects.push(Effect::Timer {
                at: self.propose_at,
                kind: TimerKind::Propose,
            });
        } else {
            let wait = self.propose_at + 2 + 2 * self.cfg.tau;
            self.t_proposal_wait = Some(wait);
            effects.push(Effect::Timer {
                at: wait,
                kind: TimerKind::ProposalWait,
            });
        }
        effects
    }

    fn clear_tenure_state(&mut self) {
        self.approvals.clear();
        self.nonapprovals.clear();
        self.committed = false;
        self.approved_hash = None;
        self.votes.clear();
        self.voted = false;
        self.ncp_submitted = false;
        self.t_propose = None;
        self.t_approval = None;
        self.t_proposal_wait = None;
        self.t_commit_wait = None;
    }

    /// Move staged transactions through full admission into the queue.
    fn promote_staged(&mut self) -> Vec<Effect> {
        let mut effects = Vec::new();
        let mut staged = std::mem::take(&mut self.staged);
        self.staged_sigs.clear();
        // Admit in a canonical order: every validator holds the same staged
        // set (contacts gossip client submissions), but arrival order differs
        // by one hop. Balance checks are cumulative over the queue, so the
        // admission order must not depend on who was the contact.
        staged.sort_by(|a, b| a.signature.0.cmp(&b.signature.0));
        for tx in staged {
            if self.admit_ok(&tx) {
                self.queue_sigs.insert(tx.signature.clone());
                self.queue.push(tx);
            } else {
                effects.push(Effect::SendClient {
                    client: tx.sender.clone(),
                    msg: Msg::TxNotValid { tx_hash: tx.hash() },
                });
            }
        }
        effects
    }

    // ---- proposing ----

    fn build_and_propose(&mut self, now: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        let block = self.build_candidate_block();
        let hash = block.header.hash();
        let leader_sig = self.sch().sign(&self.keypair.secret, &hash);
        self.pending_block = Some(block.clone());
        self.approvals.clear();
        self.nonapprovals.clear();
        self.approvals.insert(
            self.slot,
            Approval {
                validator: self.slot,
                block_hash: hash,
                signature: leader_sig.clone(),
            },
        );
        effects.push(Effect::Publish {
            block: block.clone(),
        });
        effects.push(Effect::Broadcast {
            msg: Msg::ProposedBlock {
                round: self.round,
                block,
                leader_sig,
            },
        });
        let deadline = now + 2 + 2 * self.cfg.tau;
        self.t_approval = Some(deadline);
        effects.push(Effect::Timer {
            at: deadline,
            kind: TimerKind::ApprovalDeadline,
        });
        effects
    }

    fn try_commit(&mut self, now: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        if self.committed {
            return effects;
        }
        let Some(block) = &self.pending_block else {
            return effects;
        };
        let hash = block.header.hash();
        let approvals: Vec<Approval> = self
            .approvals
            .values()
            .filter(|a| a.block_hash == hash)
            .cloned()
            .collect();
        if approvals.len() < quorum(self.cfg.n as usize) {
            return effects;
        }
        let Ok(checkpoint) = make_checkpoint(self.sch(), hash, &approvals, self.cfg.n) else {
            return effects;
        };
        self.committed = true;
        self.t_approval = None;
        effects.push(Effect::Submit {
            tx: MainchainTx::Commit {
                slot: self.slot,
                generation: self.roster[self.slot as usize].1,
                epoch: self.epoch,
                round: self.round,
                checkpoint,
            },
        });
        let deadline = now + self.cfg.delta + 2 + 2 * self.cfg.tau;
        self.t_commit_wait = Some(deadline);
        effects.push(Effect::Timer {
            at: deadline,
            kind: TimerKind::CommitWait,
        });
        effects
    }

    fn restart_round(&mut self, now: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        self.round += 1;
        if self.round > self.cfg.max_rounds {
            // Out of attempts: stay silent and let the vote-out run.
            return effects;
        }
        effects.push(Effect::Broadcast {
            msg: Msg::EpochRestart {
                epoch: self.epoch,
                round: self.round,
            },
        });
        effects.extend(self.build_and_propose(now));
        effects
    }

    // ---- voting ----

    fn cast_vote(&mut self, _now: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        if self.voted {
            return effects;
        }
        self.voted = true;
        let slot = self.leader_slot();
        let generation = self.leader_generation();
        let message = vote_message(self.epoch, slot, generation);
        let signature = self.sch().sign(&self.keypair.secret, &message);
        self.votes.insert(self.slot, signature.clone());
        effects.push(Effect::Broadcast {
            msg: Msg::VoteAgainstLeader {
                epoch: self.epoch,
                slot,
                generation,
                voter: self.slot,
                signature,
            },
        });
        effects.extend(self.maybe_submit_noncommit());
        effects
    }

    fn maybe_submit_noncommit(&mut self) -> Vec<Effect> {
        let mut effects = Vec::new();
        if self.ncp_submitted || self.votes.len() <= self.cfg.f as usize {
            return effects;
        }
        let voters: BTreeSet<u16> = self.votes.keys().copied().collect();
        let parts: Vec<Signature> = self.votes.values().cloned().collect();
        let Ok(votes) = self.sch().combine(&parts) else {
            return effects;
        };
        let Ok(index) = crate::chain::SignerIndex::encode(&voters, self.cfg.n) else {
            return effects;
        };
        self.ncp_submitted = true;
        effects.push(Effect::Submit {
            tx: MainchainTx::Challenge {
                payer: self.keypair.public.0.clone(),
                kind: crate::messages::ChallengeKind::NonCommit {
                    epoch: self.epoch,
                    slot: self.leader_slot(),
                    generation: self.leader_generation(),
                    votes,
                    voters: index,
                },
            },
        });
        effects
    }

    // ---- handlers ----

    pub fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        if self.inert {
            return Vec::new();
        }
        match msg {
            Msg::TransferFunds(tx) => self.on_transfer(now, tx, from, true),
            Msg::TxRequest(tx) => self.on_transfer(now, tx, from, false),
            Msg::ProposedBlock {
                round,
                block,
                leader_sig,
            } => self.on_proposal(now, from, round, block, leader_sig),
            Msg::BlockApproved(approval) => self.on_approval(now, approval),
            Msg::BlockNotApproved {
                epoch,
                round,
                validator,
            } => self.on_nonapproval(now, epoch, round, validator),
            Msg::EpochRestart { epoch, round } => self.on_restart_notice(now, from, epoch, round),
            Msg::VoteAgainstLeader {
                epoch,
                slot,
                generation,
                voter,
                signature,
            } => self.on_vote(now, epoch, slot, generation, voter, signature),
            Msg::TxAck { .. } | Msg::TxNotAck { .. } | Msg::TxNotValid { .. } => Vec::new(),
        }
    }

    fn on_transfer(
        &mut self,
        now: u64,
        tx: Transaction,
        from: Sender,
        from_client: bool,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        let tx_hash = tx.hash();
        let reply_ok = |effects: &mut Vec<Effect>, ok: bool| match (from_client, from, ok) {
            (true, Sender::Client, ok) => effects.push(Effect::SendClient {
                client: tx.sender.clone(),
                msg: if ok {
                    Msg::TxAck { tx_hash }
                } else {
                    Msg::TxNotValid { tx_hash }
                },
            }),
            (false, Sender::Validator(v), ok) => effects.push(Effect::Send {
                to: v,
                msg: if ok {
                    Msg::TxAck { tx_hash }
                } else {
                    Msg::TxNotAck { tx_hash }
                },
            }),
            _ => {}
        };
        // Already known or already finalized: acknowledge, change nothing.
        if self.queue_sigs.contains(&tx.signature) || self.staged_sigs.contains(&tx.signature) {
            reply_ok(&mut effects, true);
            return effects;
        }
        if self.replayed(&tx.signature) {
            reply_ok(&mut effects, false);
            return effects;
        }
        // A transaction tagged for the window that just closed can only ride
        // in the block now being built; staging it would let the tag expire
        // before the next promotion. Admitting it directly also keeps queues
        // aligned when a relay crosses the window boundary: the contact saw
        // the window open, its peers see it one unit later when it is closed.
        let straggler = tx.epoch_tag + 1 == self.epoch;
        let admitted = if self.window_open(now) || straggler {
            if self.admit_ok(&tx) {
                self.queue_sigs.insert(tx.signature.clone());
                self.queue.push(tx.clone());
                true
            } else {
                false
            }
        } else if self.shape_ok(&tx) {
            self.staged_sigs.insert(tx.signature.clone());
            self.staged.push(tx.clone());
            true
        } else {
            false
        };
        reply_ok(&mut effects, admitted);
        if admitted && from_client {
            // One-hop gossip: the client's contact broadcasts to everyone.
            effects.push(Effect::Broadcast {
                msg: Msg::TxRequest(tx),
            });
        }
        effects
    }

    fn on_proposal(
        &mut self,
        now: u64,
        from: Sender,
        round: u32,
        block: Block,
        leader_sig: Signature,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        let Sender::Validator(sender_slot) = from else {
            return effects;
        };
        if self.is_leader()
            || sender_slot != self.leader_slot()
            || block.header.epoch != self.epoch
            || round < self.round
            || round > self.cfg.max_rounds
            || self.in_pending_term
        {
            return effects;
        }
        let hash = block.header.hash();
        if !self.sch().verify(self.leader_key(), &hash, &leader_sig) {
            return effects;
        }
        self.round = round;
        if self.approved_hash == Some(hash) {
            return effects; // Already approved this exact block.
        }
        let valid = validate_block(
            self.sch(),
            &block,
            &self.base,
            &self.queue_sigs,
            self.epoch,
            self.prev_block_hash,
            self.last_checkpoint_hash,
        );
        if valid {
            let signature = self.sch().sign(&self.keypair.secret, &hash);
            let approval = Approval {
                validator: self.slot,
                block_hash: hash,
                signature,
            };
            self.pending_block = Some(block.clone());
            self.approved_hash = Some(hash);
            effects.push(Effect::Publish { block });
            effects.push(Effect::Send {
                to: sender_slot,
                msg: Msg::BlockApproved(approval),
            });
            self.t_proposal_wait = None;
            let deadline = now + self.cfg.delta + 2 + 2 * self.cfg.tau;
            self.t_commit_wait = Some(deadline);
            effects.push(Effect::Timer {
                at: deadline,
                kind: TimerKind::CommitWait,
            });
        } else {
            effects.push(Effect::Send {
                to: sender_slot,
                msg: Msg::BlockNotApproved {
                    epoch: self.epoch,
                    round,
                    validator: self.slot,
                },
            });
            // Expect a restart; extend the wait instead of voting at once.
            let wait = now + 2 + 4 * self.cfg.tau;
            self.t_proposal_wait = Some(wait);
            effects.push(Effect::Timer {
                at: wait,
                kind: TimerKind::ProposalWait,
            });
        }
        effects
    }

    fn on_approval(&mut self, now: u64, approval: Approval) -> Vec<Effect> {
        if !self.is_leader() || self.committed {
            return Vec::new();
        }
        let Some(block) = &self.pending_block else {
            return Vec::new();
        };
        if approval.block_hash != block.header.hash() {
            return Vec::new();
        }
        let v = approval.validator as usize;
        if v >= self.roster.len() {
            return Vec::new();
        }
        if !self
            .sch()
            .verify(&self.roster[v].0, &approval.block_hash, &approval.signature)
        {
            return Vec::new();
        }
        self.approvals.insert(approval.validator, approval);
        self.try_commit(now)
    }

    fn on_nonapproval(&mut self, now: u64, epoch: u64, round: u32, validator: u16) -> Vec<Effect> {
        if !self.is_leader() || self.committed || epoch != self.epoch || round != self.round {
            return Vec::new();
        }
        self.nonapprovals.insert(validator);
        // Restart early once a quorum is provably out of reach.
        let potential = self.cfg.n as usize - self.nonapprovals.len();
        if potential < quorum(self.cfg.n as usize) {
            return self.restart_round(now);
        }
        Vec::new()
    }

    fn on_restart_notice(&mut self, now: u64, from: Sender, epoch: u64, round: u32) -> Vec<Effect> {
        // Accept only forward restarts from the current leader.
        let Sender::Validator(sender_slot) = from else {
            return Vec::new();
        };
        if sender_slot != self.leader_slot()
            || self.is_leader()
            || epoch != self.epoch
            || round <= self.round
            || round > self.cfg.max_rounds
        {
            return Vec::new();
        }
        self.round = round;
        let wait = now + 2 + 4 * self.cfg.tau;
        self.t_proposal_wait = Some(wait);
        vec![Effect::Timer {
            at: wait,
            kind: TimerKind::ProposalWait,
        }]
    }

    fn on_vote(
        &mut self,
        _now: u64,
        epoch: u64,
        slot: u16,
        generation: u32,
        voter: u16,
        signature: Signature,
    ) -> Vec<Effect> {
        if epoch != self.epoch
            || slot != self.leader_slot()
            || generation != self.leader_generation()
            || voter as usize >= self.roster.len()
        {
            return Vec::new();
        }
        let message = vote_message(epoch, slot, generation);
        if !self
            .sch()
            .verify(&self.roster[voter as usize].0, &message, &signature)
        {
            return Vec::new();
        }
        self.votes.insert(voter, signature);
        self.maybe_submit_noncommit()
    }

    pub fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        if self.inert {
            return Vec::new();
        }
        match kind {
            TimerKind::Propose => {
                if self.t_propose != Some(now) {
                    return Vec::new();
                }
                self.t_propose = None;
                if !self.is_leader() || self.in_pending_term {
                    return Vec::new();
                }
                self.build_and_propose(now)
            }
            TimerKind::ApprovalDeadline => {
                if self.t_approval != Some(now) {
                    return Vec::new();
                }
                self.t_approval = None;
                if self.committed {
                    return Vec::new();
                }
                self.restart_round(now)
            }
            TimerKind::ProposalWait => {
                if self.t_proposal_wait != Some(now) {
                    return Vec::new();
                }
                self.t_proposal_wait = None;
                self.cast_vote(now)
            }
            TimerKind::CommitWait => {
                if self.t_commit_wait != Some(now) {
                    return Vec::new();
                }
                self.t_commit_wait = None;
                self.cast_vote(now)
            }
        }
    }

    pub fn on_notification(
        &mut self,
        now: u64,
        n: &Notification,
        registry: &BlockRegistry,
    ) -> Vec<Effect> {
        if self.inert {
            return Vec::new();
        }
        match n {
            Notification::DepositReceived { client, amount } => {
                self.clients.insert(client.clone());
                self.journal
                    .push(JournalOp::Credit(client.clone(), *amount));
                Vec::new()
            }
            Notification::WithdrawOk { client, amount } => {
                self.journal.push(JournalOp::Debit(client.clone(), *amount));
                Vec::new()
            }
            Notification::ClientExit { client, .. } => {
                self.clients.remove(client);
                self.journal.push(JournalOp::Remove(client.clone()));
                Vec::new()
            }
            Notification::CommitReceived {
                epoch,
                round,
                checkpoint,
            } => self.on_commit_received(now, *epoch, *round, checkpoint, registry),
            Notification::EpochChanged {
                epoch,
                checkpoint,
                next_epoch,
            } => self.on_epoch_changed(now, *epoch, checkpoint, *next_epoch),
            Notification::ChallengeValid {
                slot,
                generation,
                replacement,
                ..
            } => self.on_challenge_valid(now, *slot, *generation, replacement),
            Notification::LeaderPathDemand { client, .. } => self.on_leader_path_demand(client),
            Notification::SessionTxWindow { client, .. } => self.on_session_tx_window(client),
            Notification::MassExit | Notification::Halted { .. } => {
                self.inert = true;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn on_commit_received(
        &mut self,
        now: u64,
        epoch: u64,
        _round: u32,
        checkpoint: &Checkpoint,
        registry: &BlockRegistry,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        if epoch != self.epoch {
            return effects;
        }
        let keys: Vec<PublicKey> = self.roster.iter().map(|(k, _)| k.clone()).collect();
        if !crate::chain::verify_checkpoint(self.sch(), checkpoint, &keys) {
            // The audit rule: challenge exactly when verification fails.
            effects.push(Effect::Submit {
                tx: MainchainTx::Challenge {
                    payer: self.keypair.public.0.clone(),
                    kind: crate::messages::ChallengeKind::Checkpoint,
                },
            });
            return effects;
        }
        // A valid quorum certificate carries at least one honest approval,
        // so the block is valid and published; adopt it if we saw a
        // different (or no) proposal.
        let ours = self.pending_block.as_ref().map(|b| b.header.hash());
        if ours != Some(checkpoint.block_hash) {
            if let Some(block) = registry.get(&checkpoint.block_hash) {
                self.pending_block = Some(block.clone());
            } else {
                self.pending_block = None;
            }
        }
        self.in_flight = self
            .pending_block
            .as_ref()
            .map(|b| b.txs.iter().map(|t| t.signature.clone()).collect())
            .unwrap_or_default();
        self.in_pending_term = true;
        self.collect_started_at = now;
        self.t_proposal_wait = None;
        self.t_commit_wait = None;
        self.t_propose = None;
        self.t_approval = None;
        self.votes.clear();
        self.voted = false;
        if self.cfg.overlap {
            // The next collection window opens now.
            effects.extend(self.promote_staged());
        }
        effects
    }

    fn on_epoch_changed(
        &mut self,
        now: u64,
        epoch: u64,
        checkpoint: &Checkpoint,
        next_epoch: u64,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        // Fold the finalized block, then the journal window on top.
        if epoch > 0 {
            if let Some(block) = &self.pending_block {
                if block.header.hash() == checkpoint.block_hash {
                    self.base = block.accounts.iter().cloned().collect();
                }
                // Otherwise an unverifiable checkpoint finalized; keep the
                // previous base (the harness flags this as a violation).
            }
            self.prev_block_hash = checkpoint.block_hash;
            self.last_checkpoint_hash = checkpoint.hash();
        }
        let ops = std::mem::take(&mut self.journal);
        fold_ops(&mut self.base, &ops);

        // Retire finalized transactions and expire the replay barrier.
        if !self.in_flight.is_empty() {
            let in_flight = std::mem::take(&mut self.in_flight);
            self.queue.retain(|tx| !in_flight.contains(&tx.signature));
            self.queue_sigs.retain(|s| !in_flight.contains(s));
            self.recent_included.push_back((epoch, in_flight));
        }
        while let Some((e, _)) = self.recent_included.front() {
            if *e + 1 < epoch {
                self.recent_included.pop_front();
            } else {
                break;
            }
        }
        // Drop queued transactions whose tag can no longer enter a block.
        self.queue
            .retain(|tx| tag_ok(next_epoch, tx.epoch_tag) || tx.epoch_tag == next_epoch + 1);
        self.queue_sigs = self.queue.iter().map(|t| t.signature.clone()).collect();

        self.epoch = next_epoch;
        self.round = 1;
        self.pending_block = None;
        self.in_pending_term = false;
        self.clear_tenure_state();
        if !self.cfg.overlap {
            self.collect_started_at = now;
            effects.extend(self.promote_staged());
        }
        effects.extend(self.schedule_epoch(now));
        effects
    }

    fn on_challenge_valid(
        &mut self,
        now: u64,
        slot: u16,
        generation: u32,
        replacement: &PublicKey,
    ) -> Vec<Effect> {
        self.roster[slot as usize] = (replacement.clone(), generation);
        if slot == self.slot {
            // We were replaced: a fresh validator takes this slot over.
            self.inert = true;
            return Vec::new();
        }
        // The voided term's transactions return to the live view.
        self.in_flight.clear();
        self.pending_block = None;
        self.in_pending_term = false;
        self.round = 1;
        self.clear_tenure_state();
        self.collect_started_at = now;
        self.schedule_epoch(now)
    }

    fn on_leader_path_demand(&mut self, client: &AccountId) -> Vec<Effect> {
        if !self.is_leader() || !self.in_pending_term {
            return Vec::new();
        }
        let Some(block) = &self.pending_block else {
            return Vec::new();
        };
        let Ok(pop) = make_pop(client, block) else {
            return Vec::new();
        };
        vec![Effect::Submit {
            tx: MainchainTx::SessionLeaderPath {
                slot: self.slot,
                client: client.clone(),
                pop,
            },
        }]
    }

    fn on_session_tx_window(&mut self, client: &AccountId) -> Vec<Effect> {
        if !self.is_leader() || !self.in_pending_term {
            return Vec::new();
        }
        let Some(block) = &self.pending_block else {
            return Vec::new();
        };
        let related: Vec<CosignedTx> = block
            .txs
            .iter()
            .filter(|tx| &tx.sender == client || &tx.receiver == client)
            .map(|tx| CosignedTx {
                tx: tx.clone(),
                client_sig: None,
                leader_sig: Some(self.sch().sign(&self.keypair.secret, &tx.canonical_bytes())),
            })
            .collect();
        if related.is_empty() {
            return Vec::new();
        }
        vec![Effect::Submit {
            tx: MainchainTx::SessionTxs {
                party: SessionParty::Leader,
                client: client.clone(),
                txs: related,
            },
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{scheme, SchemeKind};

    const DELTA: u64 = 10;

    fn cfg(n: u16) -> ValidatorConfig {
        ValidatorConfig {
            n,
            f: (n - 1) / 2,
            delta: DELTA,
            tau: 1,
            t_max: 4,
            max_rounds: 3,
            n_max: 100,
            overlap: true,
            scheme: SchemeKind::HashFold,
        }
    }

    fn keypairs(n: usize) -> Vec<KeyPair> {
        let sch = scheme(SchemeKind::HashFold);
        (0..n)
            .map(|i| {
                let mut seed = [0u8; 32];
                seed[0] = 100 + i as u8;
                sch.keygen(&seed)
            })
            .collect()
    }

    fn validators(n: u16) -> (Vec<Validator>, Vec<KeyPair>) {
        let kps = keypairs(n as usize);
        let roster: Vec<PublicKey> = kps.iter().map(|k| k.public.clone()).collect();
        let vs = (0..n)
            .map(|i| Validator::new(cfg(n), i, kps[i as usize].clone(), roster.clone(), 0))
            .collect();
        (vs, kps)
    }

    fn client_keys(n: usize) -> Vec<KeyPair> {
        let sch = scheme(SchemeKind::HashFold);
        (0..n)
            .map(|i| {
                let mut seed = [0u8; 32];
                seed[0] = 200 + i as u8;
                sch.keygen(&seed)
            })
            .collect()
    }

    fn deposit(vs: &mut [Validator], client: &KeyPair, amount: u64) {
        let registry = BlockRegistry::new();
        let n = Notification::DepositReceived {
            client: AccountId(client.public.0.clone()),
            amount,
        };
        for v in vs.iter_mut() {
            v.on_notification(1, &n, &registry);
        }
    }

    fn genesis_change(vs: &mut [Validator], now: u64) -> Vec<Vec<Effect>> {
        let registry = BlockRegistry::new();
        let n = Notification::EpochChanged {
            epoch: 0,
            checkpoint: crate::contract::genesis_checkpoint(),
            next_epoch: 1,
        };
        vs.iter_mut()
            .map(|v| v.on_notification(now, &n, &registry))
            .collect()
    }

    fn signed_tx(from: &KeyPair, to: &KeyPair, amount: u64, tag: u64) -> Transaction {
        let sch = scheme(SchemeKind::HashFold);
        let mut tx = Transaction {
            sender: AccountId(from.public.0.clone()),
            receiver: AccountId(to.public.0.clone()),
            amount,
            epoch_tag: tag,
            signature: Signature(Vec::new()),
        };
        tx.signature = sch.sign(&from.secret, &tx.signing_bytes());
        tx
    }

    #[test]
    fn leader_proposes_block_with_genesis_deposits_and_queued_tx() {
        let (mut vs, _kps) = validators(3);
        let cks = client_keys(2);
        deposit(&mut vs, &cks[0], 50);
        deposit(&mut vs, &cks[1], 10);
        // A transfer submitted during the genesis window is admitted
        // against journaled deposits.
        let tx = signed_tx(&cks[0], &cks[1], 20, 1);
        let fx = vs[1].on_msg(2, Sender::Client, Msg::TransferFunds(tx.clone()));
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::SendClient {
                msg: Msg::TxAck { .. },
                ..
            }
        )));
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::Broadcast {
                msg: Msg::TxRequest(_)
            }
        )));
        // Gossip it to the leader (epoch 1 → slot 1).
        for i in [0u16, 2u16] {
            vs[i as usize].on_msg(3, Sender::Validator(1), Msg::TxRequest(tx.clone()));
        }

        let fx = genesis_change(&mut vs, DELTA);
        // Slot 1 = 1 mod 3 is the leader and set a propose timer.
        let at = fx[1]
            .iter()
            .find_map(|e| match e {
                Effect::Timer {
                    at,
                    kind: TimerKind::Propose,
                } => Some(*at),
                _ => None,
            })
            .expect("leader arms a propose timer");
        assert_eq!(at, DELTA, "collect window already elapsed during genesis");

        let fx = vs[1].on_timer(at, TimerKind::Propose);
        let block = fx
            .iter()
            .find_map(|e| match e {
                Effect::Broadcast {
                    msg: Msg::ProposedBlock { block, .. },
                } => Some(block.clone()),
                _ => None,
            })
            .expect("proposal broadcast");
        assert_eq!(block.header.epoch, 1);
        assert_eq!(block.txs.len(), 1);
        assert_eq!(
            block.balance_of(&AccountId(cks[0].public.0.clone())),
            Some(30)
        );
        assert_eq!(
            block.balance_of(&AccountId(cks[1].public.0.clone())),
            Some(30)
        );
        assert!(fx.iter().any(|e| matches!(e, Effect::Publish { .. })));
    }

    #[test]
    fn follower_approves_valid_proposal_and_rejects_tampered_one() {
        let (mut vs, _kps) = validators(3);
        let cks = client_keys(2);
        deposit(&mut vs, &cks[0], 50);
        let tx = signed_tx(&cks[0], &cks[0], 0, 1); // shape-invalid, unused
        let _ = tx;
        genesis_change(&mut vs, DELTA);
        let fx = vs[1].on_timer(DELTA, TimerKind::Propose);
        let (block, leader_sig) = fx
            .iter()
            .find_map(|e| match e {
                Effect::Broadcast {
                    msg:
                        Msg::ProposedBlock {
                            block, leader_sig, ..
                        },
                } => Some((block.clone(), leader_sig.clone())),
                _ => None,
            })
            .unwrap();

        // Honest follower approves.
        let fx = vs[0].on_msg(
            DELTA + 1,
            Sender::Validator(1),
            Msg::ProposedBlock {
                round: 1,
                block: block.clone(),
                leader_sig: leader_sig.clone(),
            },
        );
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::Send {
                to: 1,
                msg: Msg::BlockApproved(_)
            }
        )));

        // Tampered copy (inflated balance, self-consistent root) is refused
        // by the other follower.
        let mut bad = block.clone();
        bad.accounts[0].1 += 1;
        bad.header.account_root = crate::chain::account_trie(&bad.accounts).root();
        let sch = scheme(SchemeKind::HashFold);
        let forged_sig = sch.sign(&keypairs(3)[1].secret, &bad.header.hash());
        let fx = vs[2].on_msg(
            DELTA + 1,
            Sender::Validator(1),
            Msg::ProposedBlock {
                round: 1,
                block: bad,
                leader_sig: forged_sig,
            },
        );
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::Send {
                to: 1,
                msg: Msg::BlockNotApproved { .. }
            }
        )));
    }

    #[test]
    fn leader_commits_once_quorum_reached() {
        let (mut vs, _kps) = validators(3);
        let cks = client_keys(1);
        deposit(&mut vs, &cks[0], 50);
        genesis_change(&mut vs, DELTA);
        let fx = vs[1].on_timer(DELTA, TimerKind::Propose);
        let (block, leader_sig) = fx
            .iter()
            .find_map(|e| match e {
                Effect::Broadcast {
                    msg:
                        Msg::ProposedBlock {
                            block, leader_sig, ..
                        },
                } => Some((block.clone(), leader_sig.clone())),
                _ => None,
            })
            .unwrap();
        // One follower approval + the leader's own = quorum(3) = 2.
        let fx = vs[0].on_msg(
            DELTA + 1,
            Sender::Validator(1),
            Msg::ProposedBlock {
                round: 1,
                block,
                leader_sig,
            },
        );
        let approval = fx
            .iter()
            .find_map(|e| match e {
                Effect::Send {
                    msg: Msg::BlockApproved(a),
                    ..
                } => Some(a.clone()),
                _ => None,
            })
            .unwrap();
        let fx = vs[1].on_msg(
            DELTA + 2,
            Sender::Validator(0),
            Msg::BlockApproved(approval),
        );
        let commit = fx.iter().find_map(|e| match e {
            Effect::Submit {
                tx:
                    MainchainTx::Commit {
                        epoch,
                        round,
                        checkpoint,
                        ..
                    },
            } => Some((*epoch, *round, checkpoint.clone())),
            _ => None,
        });
        let (epoch, round, cp) = commit.expect("commit submitted at quorum");
        assert_eq!((epoch, round), (1, 1));
        let keys: Vec<PublicKey> = vs[1].roster.iter().map(|(k, _)| k.clone()).collect();
        assert!(crate::chain::verify_checkpoint(
            scheme(SchemeKind::HashFold),
            &cp,
            &keys
        ));
    }

    #[test]
    fn silent_leader_gets_voted_out() {
        let (mut vs, _kps) = validators(3);
        let cks = client_keys(1);
        deposit(&mut vs, &cks[0], 50);
        let fx = genesis_change(&mut vs, DELTA);
        // Followers 0 and 2 armed proposal-wait timers; leader 1 stays
        // silent.
        let wait_at = fx[0]
            .iter()
            .find_map(|e| match e {
                Effect::Timer {
                    at,
                    kind: TimerKind::ProposalWait,
                } => Some(*at),
                _ => None,
            })
            .unwrap();
        let fx0 = vs[0].on_timer(wait_at, TimerKind::ProposalWait);
        let vote0 = fx0
            .iter()
            .find_map(|e| match e {
                Effect::Broadcast {
                    msg: m @ Msg::VoteAgainstLeader { .. },
                } => Some(m.clone()),
                _ => None,
            })
            .expect("vote broadcast");
        assert!(
            !fx0.iter().any(|e| matches!(e, Effect::Submit { .. })),
            "one vote (f=1) is not enough evidence"
        );
        let fx2 = vs[2].on_timer(wait_at, TimerKind::ProposalWait);
        assert!(fx2.iter().any(|e| matches!(e, Effect::Broadcast { .. })));
        // Validator 2 receives 0's vote: now holds 2 > f votes and submits
        // the non-commit challenge.
        let fx = vs[2].on_msg(wait_at + 1, Sender::Validator(0), vote0);
        let ncp = fx.iter().find_map(|e| match e {
            Effect::Submit {
                tx:
                    MainchainTx::Challenge {
                        kind: crate::messages::ChallengeKind::NonCommit { voters, .. },
                        ..
                    },
            } => Some(*voters),
            _ => None,
        });
        let voters = ncp.expect("aggregated vote evidence submitted");
        assert_eq!(voters.decode().unwrap().len(), 2);
    }

    #[test]
    fn intake_rejects_overdraft_cumulatively_and_replays() {
        let (mut vs, _kps) = validators(3);
        let cks = client_keys(2);
        deposit(&mut vs, &cks[0], 50);
        deposit(&mut vs, &cks[1], 5);
        let v = &mut vs[0];
        let t1 = signed_tx(&cks[0], &cks[1], 30, 1);
        let t2 = signed_tx(&cks[0], &cks[1], 30, 0); // different tag → different sig
        let fx = v.on_msg(2, Sender::Client, Msg::TransferFunds(t1.clone()));
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::SendClient {
                msg: Msg::TxAck { .. },
                ..
            }
        )));
        // 50 − 30 = 20 effective: a second 30 overdraws.
        let fx = v.on_msg(3, Sender::Client, Msg::TransferFunds(t2));
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::SendClient {
                msg: Msg::TxNotValid { .. },
                ..
            }
        )));
        // Receiver's effective balance includes the queued credit.
        let back = signed_tx(&cks[1], &cks[0], 34, 1); // 5 + 30 = 35 ≥ 34
        let fx = v.on_msg(4, Sender::Client, Msg::TransferFunds(back));
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::SendClient {
                msg: Msg::TxAck { .. },
                ..
            }
        )));
        // Duplicate of t1 acks idempotently without growing the queue.
        let qlen = v.queue_len();
        let fx = v.on_msg(5, Sender::Client, Msg::TransferFunds(t1));
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::SendClient {
                msg: Msg::TxAck { .. },
                ..
            }
        )));
        assert_eq!(v.queue_len(), qlen);
    }

    #[test]
    fn journal_folds_into_base_at_epoch_change() {
        let (mut vs, kps) = validators(3);
        let cks = client_keys(2);
        deposit(&mut vs, &cks[0], 50);
        genesis_change(&mut vs, DELTA);
        let a = AccountId(cks[0].public.0.clone());
        assert_eq!(vs[0].base().get(&a), Some(&50), "genesis deposits folded");

        // Run an epoch: leader proposes empty-ish block, all approve, commit
        // received, withdrawal paid, epoch changes.
        let fx = vs[1].on_timer(DELTA, TimerKind::Propose);
        let (block, leader_sig) = fx
            .iter()
            .find_map(|e| match e {
                Effect::Broadcast {
                    msg:
                        Msg::ProposedBlock {
                            block, leader_sig, ..
                        },
                } => Some((block.clone(), leader_sig.clone())),
                _ => None,
            })
            .unwrap();
        let mut registry = BlockRegistry::new();
        registry.insert(block.header.hash(), block.clone());
        for i in [0u16, 2] {
            vs[i as usize].on_msg(
                DELTA + 1,
                Sender::Validator(1),
                Msg::ProposedBlock {
                    round: 1,
                    block: block.clone(),
                    leader_sig: leader_sig.clone(),
                },
            );
        }
        let sch = scheme(SchemeKind::HashFold);
        let hash = block.header.hash();
        let approvals: Vec<Approval> = (0..3)
            .map(|i| Approval {
                validator: i as u16,
                block_hash: hash,
                signature: sch.sign(&kps[i].secret, &hash),
            })
            .collect();
        let cp = make_checkpoint(sch, hash, &approvals, 3).unwrap();
        let commit = Notification::CommitReceived {
            epoch: 1,
            round: 1,
            checkpoint: cp.clone(),
        };
        for v in vs.iter_mut() {
            let fx = v.on_notification(DELTA + 4, &commit, &registry);
            assert!(
                !fx.iter().any(|e| matches!(e, Effect::Submit { .. })),
                "valid checkpoint must not be challenged"
            );
        }
        // Contract pays a 20 withdrawal, then the epoch changes.
        let wok = Notification::WithdrawOk {
            client: a.clone(),
            amount: 20,
        };
        for v in vs.iter_mut() {
            v.on_notification(DELTA + 14, &wok, &registry);
        }
        let change = Notification::EpochChanged {
            epoch: 1,
            checkpoint: cp,
            next_epoch: 2,
        };
        for v in vs.iter_mut() {
            v.on_notification(DELTA + 14, &change, &registry);
        }
        for v in &vs {
            assert_eq!(v.base().get(&a), Some(&30), "50 − 20 paid out");
            assert_eq!(v.epoch(), 2);
        }
    }

    #[test]
    fn invalid_checkpoint_notification_triggers_challenge() {
        let (mut vs, kps) = validators(3);
        let cks = client_keys(1);
        deposit(&mut vs, &cks[0], 50);
        genesis_change(&mut vs, DELTA);
        // Forged checkpoint: a single signature claiming a full quorum.
        let sch = scheme(SchemeKind::HashFold);
        let prev = std::collections::BTreeMap::from([(AccountId(cks[0].public.0.clone()), 50u64)]);
        let block = crate::chain::build_block(sch, 1, ZERO_DIGEST, ZERO_DIGEST, &prev, &[]);
        let hash = block.header.hash();
        let forged = Checkpoint {
            block_hash: hash,
            qc: crate::crypto::AggregateSignature(sch.sign(&kps[1].secret, &hash).0),
            index: crate::chain::SignerIndex::encode(&[0u16, 1, 2].into(), 3).unwrap(),
        };
        let registry = BlockRegistry::new();
        let commit = Notification::CommitReceived {
            epoch: 1,
            round: 1,
            checkpoint: forged,
        };
        let fx = vs[0].on_notification(DELTA + 3, &commit, &registry);
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::Submit {
                tx: MainchainTx::Challenge {
                    kind: crate::messages::ChallengeKind::Checkpoint,
                    ..
                }
            }
        )));
    }

    #[test]
    fn replacement_validator_bootstraps_from_balance_book() {
        let (mut vs, kps) = validators(3);
        let cks = client_keys(1);
        let registry = BlockRegistry::new();
        let mut book = BalanceBook::new(kps.iter().map(|k| k.public.clone()).collect());
        let dep = Notification::DepositReceived {
            client: AccountId(cks[0].public.0.clone()),
            amount: 50,
        };
        for v in vs.iter_mut() {
            v.on_notification(1, &dep, &registry);
        }
        book.on_notification(&dep, &registry);
        let change = Notification::EpochChanged {
            epoch: 0,
            checkpoint: crate::contract::genesis_checkpoint(),
            next_epoch: 1,
        };
        for v in vs.iter_mut() {
            v.on_notification(DELTA, &change, &registry);
        }
        book.on_notification(&change, &registry);
        // Replace the leader (slot 1).
        let nk = scheme(SchemeKind::HashFold).keygen(&[42u8; 32]);
        let cv = Notification::ChallengeValid {
            epoch: 1,
            slot: 1,
            generation: 1,
            replacement: nk.public.clone(),
        };
        for v in vs.iter_mut() {
            v.on_notification(DELTA + 5, &cv, &registry);
        }
        book.on_notification(&cv, &registry);
        let (nv, fx) = Validator::from_book(cfg(3), 1, nk, &book, DELTA + 5);
        assert_eq!(nv.epoch(), 1);
        assert_eq!(
            nv.base().get(&AccountId(cks[0].public.0.clone())),
            Some(&50)
        );
        // The replacement is the epoch-1 leader and schedules a proposal
        // one collection window out.
        assert!(fx.iter().any(|e| matches!(
            e,
            Effect::Timer { at, kind: TimerKind::Propose } if *at == DELTA + 5 + 4
        )));
        // Old peers now expect the new leader: their wait deadlines moved.
        for i in [0usize, 2] {
            assert!(vs[i].t_proposal_wait.unwrap() > DELTA + 5);
        }
    }

    #[test]
    fn leader_serves_session_duties_from_pending_block() {
        let (mut vs, kps) = validators(3);
        let cks = client_keys(2);
        deposit(&mut vs, &cks[0], 50);
        deposit(&mut vs, &cks[1], 10);
        let client = AccountId(cks[0].public.0.clone());
        let tx = signed_tx(&cks[0], &cks[1], 5, 1);
        vs[1].on_msg(2, Sender::Client, Msg::TransferFunds(tx));
        genesis_change(&mut vs, DELTA);
        let fx = vs[1].on_timer(DELTA, TimerKind::Propose);
        let block = fx
            .iter()
            .find_map(|e| match e {
                Effect::Broadcast {
                    msg: Msg::ProposedBlock { block, .. },
                } => Some(block.clone()),
                _ => None,
            })
            .unwrap();
        let sch = scheme(SchemeKind::HashFold);
        let hash = block.header.hash();
        let approvals: Vec<Approval> = (0..3)
            .map(|i| Approval {
                validator: i as u16,
                block_hash: hash,
                signature: sch.sign(&kps[i].secret, &hash),
            })
            .collect();
        let cp = make_checkpoint(sch, hash, &approvals, 3).unwrap();
        let mut registry = BlockRegistry::new();
        registry.insert(hash, block.clone());
        vs[1].on_notification(
            DELTA + 6,
            &Notification::CommitReceived {
                epoch: 1,
                round: 1,
                checkpoint: cp,
            },
            &registry,
        );
        // Path demand: leader proves the client's pending balance (45).
        let fx = vs[1].on_notification(
            DELTA + 7,
            &Notification::LeaderPathDemand {
                client: client.clone(),
                deadline: DELTA + 17,
            },
            &registry,
        );
        let pop = fx
            .iter()
            .find_map(|e| match e {
                Effect::Submit {
                    tx: MainchainTx::SessionLeaderPath { pop, .. },
                } => Some(pop.clone()),
                _ => None,
            })
            .expect("leader path submitted");
        assert_eq!(pop.balance, 45);
        // Tx window: leader submits the client's endorsed transaction.
        let fx = vs[1].on_notification(
            DELTA + 8,
            &Notification::SessionTxWindow {
                client: client.clone(),
                deadline: DELTA + 18,
            },
            &registry,
        );
        let txs = fx
            .iter()
            .find_map(|e| match e {
                Effect::Submit {
                    tx: MainchainTx::SessionTxs { txs, .. },
                } => Some(txs.clone()),
                _ => None,
            })
            .expect("session txs submitted");
        assert_eq!(txs.len(), 1);
        assert!(txs[0].leader_sig.is_some());
    }
}
