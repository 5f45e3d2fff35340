//! The bridge contract: the parent-chain side of the protocol.
//!
//! The contract holds deposited coins, records one checkpoint per epoch
//! *lazily* (without verifying it), and lets anyone challenge a pending
//! checkpoint during its `Δ`-long term by posting a wager. Verification
//! runs only when challenged: an upheld challenge removes the leader and
//! voids the checkpoint, a failed one forfeits the wager and extends the
//! term. Withdrawals and exits are validated on arrival against the pending
//! checkpoint but paid only when that checkpoint survives its term, so a
//! voided checkpoint can never leak coins.
//!
//! Deposits take effect only while a term is open (the genesis window or a
//! pending checkpoint); otherwise they buffer until the next term starts.
//! This gives every validator an identical, unambiguous fold window for
//! contract-driven balance changes: everything notified between two
//! `EpochChanged` events belongs to the next block's base.
//!
//! Interactive exits let a client who distrusts the pending checkpoint
//! recover its balance cooperatively: the contract demands the leader's
//! balance path, opens a co-signed transaction window, and recomputes the
//! client's balance from its previous finalized balance plus contract
//! adjustments plus the co-signed transactions. Any leader failure or
//! mismatch triggers a mass exit: the chain halts and every client exits
//! against the last finalized checkpoint.

use std::collections::{BTreeMap, BTreeSet};

use crate::chain::{tag_ok, AccountId, Checkpoint, ProofOfPossession, SignerIndex};
use crate::crypto::{scheme, PublicKey, SchemeKind, SignatureScheme};
use crate::merkle::Digest;
use crate::messages::{ChallengeKind, CosignedTx, MainchainTx, Notification, SessionParty};

#[derive(Debug, Clone)]
pub struct ContractConfig {
    pub n: u16,
    pub f: u16,
    pub delta: u64,
    pub wager: u64,
    pub scheme: SchemeKind,
    /// Epoch after which the contract stops accepting commits and serves
    /// exits only. `None` means unbounded.
    pub validity_endpoint: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RosterEntry {
    pub key: PublicKey,
    pub generation: u32,
}

#[derive(Debug, Clone)]
pub struct PendingCheckpoint {
    pub epoch: u64,
    pub round: u32,
    pub slot: u16,
    pub generation: u32,
    pub checkpoint: Checkpoint,
    pub deadline: u64,
    pub committed_at: u64,
}

#[derive(Debug, Clone)]
pub struct FinalizedCheckpoint {
    pub epoch: u64,
    pub checkpoint: Checkpoint,
    pub at: u64,
}

#[derive(Debug, Clone)]
struct QueuedPayout {
    client: AccountId,
    amount: u64,
    exit: bool,
}

#[derive(Debug, Clone, Default)]
struct CosignState {
    client_sig: Option<Vec<u8>>,
    leader_sig: Option<Vec<u8>>,
}

#[derive(Debug)]
pub struct ExitSession {
    pub client: AccountId,
    /// Client balance at the previous finalized checkpoint.
    prev_balance: u64,
    leader_deadline: u64,
    leader_balance: Option<u64>,
    tx_deadline: Option<u64>,
    /// Candidate transactions keyed by canonical bytes; signatures merge.
    txs: BTreeMap<Vec<u8>, CosignState>,
}

/// Who receives a notification. Delivery is the harness's job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Audience {
    All,
    Validators,
    Client(AccountId),
}

/// Side effects the contract asks the harness to perform.
#[derive(Debug)]
pub enum Outcome {
    Notify(Audience, Notification),
    /// Pay coins out of the contract's pool.
    Credit {
        to: Vec<u8>,
        amount: u64,
    },
    /// Mark a pooled wager as forfeited (reporting only).
    Forfeit {
        amount: u64,
    },
    /// A challenge was upheld: generate a fresh key for this slot and call
    /// [`Contract::install_replacement`].
    ReplaceLeader {
        slot: u16,
    },
}

#[derive(Debug)]
pub struct Contract {
    cfg: ContractConfig,
    roster: Vec<RosterEntry>,
    /// Next epoch to finalize (1 after deploy; 0 is the genesis window).
    epoch: u64,
    clients: BTreeSet<AccountId>,
    total_balance: u64,
    finalized: Vec<FinalizedCheckpoint>,
    pending: Option<PendingCheckpoint>,
    /// Genesis deposit window: open until `deploy + Δ`.
    genesis_deadline: Option<u64>,
    /// Commits already accepted for the current epoch, per leader tenure.
    commits_seen: BTreeSet<(u16, u32)>,
    /// Deposits that arrived outside a term, waiting for the next one.
    buffered_deposits: Vec<(AccountId, u64)>,
    queued_payouts: Vec<QueuedPayout>,
    /// Clients that already queued a withdrawal or exit this term.
    served_this_term: BTreeSet<AccountId>,
    sessions: BTreeMap<AccountId, ExitSession>,
    /// Net contract-driven balance change per client in the current term.
    term_ops: BTreeMap<AccountId, i128>,
    /// Archived `term_ops`, keyed by the epoch finalized at window close
    /// (0 = genesis window).
    ops_by_epoch: BTreeMap<u64, BTreeMap<AccountId, i128>>,
    halted: bool,
    mass_exit: bool,
    /// Set when the last client exits: whether the pool drained to zero.
    pub execution_end_residual_zero: Option<bool>,
}

impl Contract {
    pub fn new(cfg: ContractConfig, keys: Vec<PublicKey>, now: u64) -> Self {
        assert_eq!(keys.len(), cfg.n as usize, "roster size must match n");
        let roster = keys
            .into_iter()
            .map(|key| RosterEntry { key, generation: 0 })
            .collect();
        let genesis_deadline = Some(now + cfg.delta);
        Contract {
            cfg,
            roster,
            epoch: 1,
            clients: BTreeSet::new(),
            total_balance: 0,
            finalized: Vec::new(),
            pending: None,
            genesis_deadline,
            commits_seen: BTreeSet::new(),
            buffered_deposits: Vec::new(),
            queued_payouts: Vec::new(),
            served_this_term: BTreeSet::new(),
            sessions: BTreeMap::new(),
            term_ops: BTreeMap::new(),
            ops_by_epoch: BTreeMap::new(),
            halted: false,
            mass_exit: false,
            execution_end_residual_zero: None,
        }
    }

    fn scheme(&self) -> &'static dyn SignatureScheme {
        scheme(self.cfg.scheme)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn roster_keys(&self) -> Vec<PublicKey> {
        self.roster.iter().map(|e| e.key.clone()).collect()
    }

    pub fn pending(&self) -> Option<&PendingCheckpoint> {
        self.pending.as_ref()
    }

    pub fn finalized(&self) -> &[FinalizedCheckpoint] {
        &self.finalized
    }

    pub fn clients(&self) -> &BTreeSet<AccountId> {
        &self.clients
    }

    pub fn total_balance(&self) -> u64 {
        self.total_balance
    }

    /// Deposits received outside a deposit window, not yet applied.
    pub fn buffered_total(&self) -> u64 {
        self.buffered_deposits.iter().map(|(_, a)| a).sum()
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn mass_exit(&self) -> bool {
        self.mass_exit
    }

    pub fn leader_slot(&self) -> u16 {
        (self.epoch % self.cfg.n as u64) as u16
    }

    /// Whether a deposit window is currently open.
    fn term_open(&self) -> bool {
        self.pending.is_some() || self.genesis_deadline.is_some()
    }

    /// Earliest time at which `on_timer` has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        let mut next: Option<u64> = None;
        let mut consider = |t: u64| match next {
            Some(cur) if cur <= t => {}
            _ => next = Some(t),
        };
        if let Some(t) = self.genesis_deadline {
            consider(t);
        }
        if let Some(p) = &self.pending {
            consider(p.deadline);
        }
        for s in self.sessions.values() {
            if s.leader_balance.is_none() {
                consider(s.leader_deadline);
            }
            if let Some(t) = s.tx_deadline {
                consider(t);
            }
        }
        next
    }

    fn record_op(&mut self, client: &AccountId, delta: i128) {
        *self.term_ops.entry(client.clone()).or_insert(0) += delta;
    }

    fn apply_deposit(&mut self, client: AccountId, amount: u64, out: &mut Vec<Outcome>) {
        self.clients.insert(client.clone());
        self.total_balance += amount;
        self.record_op(&client, amount as i128);
        out.push(Outcome::Notify(
            Audience::All,
            Notification::DepositReceived { client, amount },
        ));
    }

    /// Once the contract stops opening deposit windows, buffered deposits can
    /// never apply; hand the coins back so they are not stranded.
    fn refund_buffered(&mut self, out: &mut Vec<Outcome>) {
        for (client, amount) in std::mem::take(&mut self.buffered_deposits) {
            out.push(Outcome::Credit {
                to: client.0.clone(),
                amount,
            });
            out.push(Outcome::Notify(
                Audience::Client(client.clone()),
                Notification::CannotDeposit { client, amount },
            ));
        }
    }

    /// Process one finalized parent-chain transaction.
    pub fn on_arrival(&mut self, now: u64, tx: MainchainTx, funded: bool) -> Vec<Outcome> {
        let mut out = Vec::new();
        match tx {
            MainchainTx::Deposit { client, amount } => {
                if !funded {
                    out.push(Outcome::Notify(
                        Audience::Client(client.clone()),
                        Notification::CannotDeposit { client, amount },
                    ));
                } else if self.halted || self.mass_exit {
                    // Too late to join: hand the coins straight back.
                    out.push(Outcome::Credit {
                        to: client.0.clone(),
                        amount,
                    });
                    out.push(Outcome::Notify(
                        Audience::Client(client.clone()),
                        Notification::CannotDeposit { client, amount },
                    ));
                } else if self.term_open() {
                    self.apply_deposit(client, amount, &mut out);
                } else {
                    self.buffered_deposits.push((client, amount));
                }
            }
            MainchainTx::Commit {
                slot,
                generation,
                epoch,
                round,
                checkpoint,
            } => {
                self.handle_commit(now, slot, generation, epoch, round, checkpoint, &mut out);
            }
            MainchainTx::Withdraw {
                client,
                amount,
                pop,
            } => {
                self.handle_withdraw(client, amount, pop, &mut out);
            }
            MainchainTx::Exit { client, pop } => {
                self.handle_exit(client, pop, &mut out);
            }
            MainchainTx::Challenge { payer, kind } => {
                if funded {
                    self.handle_challenge(now, payer, kind, &mut out);
                }
                // An unfunded challenge never reached the contract.
            }
            MainchainTx::SessionOpen { client, prev } => {
                self.handle_session_open(now, client, prev, &mut out);
            }
            MainchainTx::SessionLeaderPath { slot, client, pop } => {
                self.handle_session_leader_path(now, slot, client, pop, &mut out);
            }
            MainchainTx::SessionTxs { party, client, txs } => {
                self.handle_session_txs(now, party, client, txs, &mut out);
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)] // mirrors the commit message fields
    fn handle_commit(
        &mut self,
        now: u64,
        slot: u16,
        generation: u32,
        epoch: u64,
        round: u32,
        checkpoint: Checkpoint,
        out: &mut Vec<Outcome>,
    ) {
        if self.halted
            || self.mass_exit
            || self.pending.is_some()
            || self.genesis_deadline.is_some()
            || epoch != self.epoch
            || slot != self.leader_slot()
            || (slot as usize) >= self.roster.len()
            || generation != self.roster[slot as usize].generation
            || self.commits_seen.contains(&(slot, generation))
        {
            return; // Stale, duplicate, or out-of-turn commit: no effect.
        }
        self.commits_seen.insert((slot, generation));
        let deadline = now + self.cfg.delta;
        self.pending = Some(PendingCheckpoint {
            epoch,
            round,
            slot,
            generation,
            checkpoint: checkpoint.clone(),
            deadline,
            committed_at: now,
        });
        self.served_this_term.clear();
        out.push(Outcome::Notify(
            Audience::All,
            Notification::CommitReceived {
                epoch,
                round,
                checkpoint,
            },
        ));
        // The pending term opens a deposit window: flush the buffer.
        let buffered = std::mem::take(&mut self.buffered_deposits);
        for (client, amount) in buffered {
            self.apply_deposit(client, amount, out);
        }
    }

    fn handle_withdraw(
        &mut self,
        client: AccountId,
        amount: u64,
        pop: ProofOfPossession,
        out: &mut Vec<Outcome>,
    ) {
        let reject = |out: &mut Vec<Outcome>, client: AccountId, amount: u64| {
            out.push(Outcome::Notify(
                Audience::Client(client.clone()),
                Notification::WithdrawNotOk { client, amount },
            ));
        };
        if self.halted || self.mass_exit || amount == 0 || !self.clients.contains(&client) {
            return reject(out, client, amount);
        }
        let Some(pending) = &self.pending else {
            return reject(out, client, amount);
        };
        if self.served_this_term.contains(&client)
            || pop.path.key != client.0
            || !crate::chain::verify_pop(&pending.checkpoint, &pop, amount)
            || amount > self.total_balance
        {
            return reject(out, client, amount);
        }
        self.served_this_term.insert(client.clone());
        self.queued_payouts.push(QueuedPayout {
            client,
            amount,
            exit: false,
        });
    }

    fn handle_exit(&mut self, client: AccountId, pop: ProofOfPossession, out: &mut Vec<Outcome>) {
        if self.halted || self.mass_exit {
            return self.handle_halted_exit(client, pop, out);
        }
        let reject = |out: &mut Vec<Outcome>, client: AccountId, amount: u64| {
            out.push(Outcome::Notify(
                Audience::Client(client.clone()),
                Notification::WithdrawNotOk { client, amount },
            ));
        };
        let amount = pop.balance;
        if !self.clients.contains(&client) {
            return reject(out, client, amount);
        }
        let Some(pending) = &self.pending else {
            return reject(out, client, amount);
        };
        if self.served_this_term.contains(&client)
            || pop.path.key != client.0
            || !crate::chain::verify_pop(&pending.checkpoint, &pop, amount)
            || amount > self.total_balance
        {
            return reject(out, client, amount);
        }
        self.served_this_term.insert(client.clone());
        self.queued_payouts.push(QueuedPayout {
            client,
            amount,
            exit: true,
        });
    }

    /// Exit-only mode: serve against the last finalized checkpoint, with the
    /// client's post-block contract adjustments (withdrawals already paid,
    /// deposits made after that block) folded in.
    fn handle_halted_exit(
        &mut self,
        client: AccountId,
        pop: ProofOfPossession,
        out: &mut Vec<Outcome>,
    ) {
        let reject = |out: &mut Vec<Outcome>, client: AccountId| {
            out.push(Outcome::Notify(
                Audience::Client(client.clone()),
                Notification::WithdrawNotOk {
                    client,
                    amount: pop_balance_or_zero(&pop),
                },
            ));
        };
        if !self.clients.contains(&client) || pop.path.key != client.0 {
            return reject(out, client);
        }
        let Some(last) = self.finalized.last() else {
            // Halted before anything finalized: refund raw deposits.
            let adj = self.adjustment_since(0, &client);
            let amount = clamp_balance(adj, self.total_balance);
            return self.pay_exit(client, amount, out);
        };
        if !crate::chain::verify_pop(&last.checkpoint, &pop, pop.balance) {
            return reject(out, client);
        }
        let adj = self.adjustment_since(last.epoch, &client);
        let amount = clamp_balance(pop.balance as i128 + adj, self.total_balance);
        self.pay_exit(client, amount, out);
    }

    /// Net contract-driven change for `client` in windows after the block of
    /// `finalized_epoch` (that block already reflects windows `< epoch`).
    fn adjustment_since(&self, finalized_epoch: u64, client: &AccountId) -> i128 {
        let mut adj: i128 = 0;
        for (&e, ops) in self.ops_by_epoch.range(finalized_epoch..) {
            let _ = e;
            adj += ops.get(client).copied().unwrap_or(0);
        }
        adj + self.term_ops.get(client).copied().unwrap_or(0)
    }

    fn pay_exit(&mut self, client: AccountId, amount: u64, out: &mut Vec<Outcome>) {
        self.total_balance -= amount;
        self.record_op(&client, -(amount as i128));
        self.clients.remove(&client);
        out.push(Outcome::Credit {
            to: client.0.clone(),
            amount,
        });
        out.push(Outcome::Notify(
            Audience::All,
            Notification::ClientExit { client, amount },
        ));
        if self.clients.is_empty() && self.execution_end_residual_zero.is_none() {
            self.halted = true;
            self.refund_buffered(out);
            let residual_zero = self.total_balance == 0;
            self.execution_end_residual_zero = Some(residual_zero);
            out.push(Outcome::Notify(
                Audience::All,
                Notification::Halted { residual_zero },
            ));
        }
    }

    fn handle_challenge(
        &mut self,
        now: u64,
        payer: Vec<u8>,
        kind: ChallengeKind,
        out: &mut Vec<Outcome>,
    ) {
        let refund = |out: &mut Vec<Outcome>, payer: Vec<u8>, wager: u64| {
            out.push(Outcome::Credit {
                to: payer,
                amount: wager,
            });
        };
        let wager = self.cfg.wager;
        if self.halted || self.mass_exit {
            return refund(out, payer, wager);
        }
        match kind {
            ChallengeKind::Checkpoint => {
                let Some(pending) = &self.pending else {
                    // Nothing pending (already voided or finalized): moot.
                    return refund(out, payer, wager);
                };
                let keys = self.roster_keys();
                if crate::chain::verify_checkpoint(self.scheme(), &pending.checkpoint, &keys) {
                    // Checkpoint holds up: challenger loses the wager and
                    // the term extends by Δ.
                    let epoch = pending.epoch;
                    let new_deadline = pending.deadline + self.cfg.delta;
                    self.pending.as_mut().expect("pending checked").deadline = new_deadline;
                    out.push(Outcome::Forfeit { amount: wager });
                    out.push(Outcome::Notify(
                        Audience::All,
                        Notification::ChallengeRejected {
                            epoch,
                            new_deadline,
                        },
                    ));
                } else {
                    let slot = pending.slot;
                    refund(out, payer, wager);
                    self.void_pending(out);
                    out.push(Outcome::ReplaceLeader { slot });
                }
            }
            ChallengeKind::NonCommit {
                epoch,
                slot,
                generation,
                votes,
                voters,
            } => {
                let current_gen = self.roster.get(slot as usize).map(|e| e.generation);
                if epoch != self.epoch
                    || slot != self.leader_slot()
                    || current_gen != Some(generation)
                {
                    // Stale: the leader was already replaced or the epoch
                    // moved on. Only failed verification forfeits.
                    return refund(out, payer, wager);
                }
                if self.verify_noncommit(epoch, slot, generation, &votes, &voters) {
                    refund(out, payer, wager);
                    if self.pending.as_ref().map(|p| (p.slot, p.generation))
                        == Some((slot, generation))
                    {
                        self.void_pending(out);
                    }
                    out.push(Outcome::ReplaceLeader { slot });
                } else {
                    out.push(Outcome::Forfeit { amount: wager });
                    let new_deadline = self.pending.as_ref().map(|p| p.deadline).unwrap_or(now);
                    out.push(Outcome::Notify(
                        Audience::All,
                        Notification::ChallengeRejected {
                            epoch,
                            new_deadline,
                        },
                    ));
                }
            }
        }
    }

    fn verify_noncommit(
        &self,
        epoch: u64,
        slot: u16,
        generation: u32,
        votes: &crate::crypto::AggregateSignature,
        voters: &SignerIndex,
    ) -> bool {
        if voters.n != self.cfg.n {
            return false;
        }
        let Ok(indices) = voters.decode() else {
            return false;
        };
        if indices.len() <= self.cfg.f as usize {
            return false;
        }
        let message = crate::messages::vote_message(epoch, slot, generation);
        let pairs: Vec<(PublicKey, Vec<u8>)> = indices
            .iter()
            .map(|&i| (self.roster[i as usize].key.clone(), message.clone()))
            .collect();
        self.scheme().verify_aggregate(&pairs, votes)
    }

    /// Discard the pending checkpoint and everything staged against it.
    fn void_pending(&mut self, out: &mut Vec<Outcome>) {
        self.pending = None;
        for p in std::mem::take(&mut self.queued_payouts) {
            out.push(Outcome::Notify(
                Audience::Client(p.client.clone()),
                Notification::WithdrawNotOk {
                    client: p.client,
                    amount: p.amount,
                },
            ));
        }
        self.served_this_term.clear();
        for (client, _) in std::mem::take(&mut self.sessions) {
            out.push(Outcome::Notify(
                Audience::Client(client.clone()),
                Notification::SessionRejected { client },
            ));
        }
        // Deposits applied during the voided term stay applied: the coins
        // are frozen and the next block folds them in. `term_ops` carries
        // them forward into the next window's archive.
    }

    /// Called by the harness after `ReplaceLeader`: installs a fresh key at
    /// the slot, bumps its generation, and announces the change.
    pub fn install_replacement(&mut self, slot: u16, key: PublicKey) -> Vec<Outcome> {
        let entry = &mut self.roster[slot as usize];
        entry.key = key.clone();
        entry.generation += 1;
        vec![Outcome::Notify(
            Audience::All,
            Notification::ChallengeValid {
                epoch: self.epoch,
                slot,
                generation: entry.generation,
                replacement: key,
            },
        )]
    }

    fn handle_session_open(
        &mut self,
        now: u64,
        client: AccountId,
        prev: Option<ProofOfPossession>,
        out: &mut Vec<Outcome>,
    ) {
        let reject = |out: &mut Vec<Outcome>, client: AccountId| {
            out.push(Outcome::Notify(
                Audience::Client(client.clone()),
                Notification::SessionRejected { client },
            ));
        };
        if self.halted
            || self.mass_exit
            || self.pending.is_none()
            || !self.clients.contains(&client)
            || self.sessions.contains_key(&client)
            || self.served_this_term.contains(&client)
        {
            return reject(out, client);
        }
        let prev_balance = match (self.finalized.last(), prev) {
            (None, None) => 0,
            (Some(last), Some(pop))
                if pop.path.key == client.0
                    && crate::chain::verify_pop(&last.checkpoint, &pop, pop.balance) =>
            {
                pop.balance
            }
            _ => return reject(out, client),
        };
        let leader_deadline = now + self.cfg.delta;
        self.sessions.insert(
            client.clone(),
            ExitSession {
                client: client.clone(),
                prev_balance,
                leader_deadline,
                leader_balance: None,
                tx_deadline: None,
                txs: BTreeMap::new(),
            },
        );
        out.push(Outcome::Notify(
            Audience::Validators,
            Notification::LeaderPathDemand {
                client,
                deadline: leader_deadline,
            },
        ));
    }

    fn handle_session_leader_path(
        &mut self,
        now: u64,
        slot: u16,
        client: AccountId,
        pop: ProofOfPossession,
        out: &mut Vec<Outcome>,
    ) {
        if self.halted || self.mass_exit {
            return;
        }
        let Some(pending) = self.pending.clone() else {
            return;
        };
        if slot != pending.slot {
            return;
        }
        let Some(session) = self.sessions.get_mut(&client) else {
            return;
        };
        if session.leader_balance.is_some() || now > session.leader_deadline {
            return;
        }
        if pop.path.key != client.0
            || !crate::chain::verify_pop(&pending.checkpoint, &pop, pop.balance)
        {
            // A provably wrong response is as damning as silence.
            return self.trigger_mass_exit(out);
        }
        session.leader_balance = Some(pop.balance);
        let tx_deadline = now + self.cfg.delta;
        session.tx_deadline = Some(tx_deadline);
        out.push(Outcome::Notify(
            Audience::All,
            Notification::SessionTxWindow {
                client,
                deadline: tx_deadline,
            },
        ));
    }

    fn handle_session_txs(
        &mut self,
        now: u64,
        _party: SessionParty,
        client: AccountId,
        txs: Vec<CosignedTx>,
        out: &mut Vec<Outcome>,
    ) {
        let _ = out;
        if self.halted || self.mass_exit {
            return;
        }
        let Some(session) = self.sessions.get_mut(&client) else {
            return;
        };
        let Some(tx_deadline) = session.tx_deadline else {
            return;
        };
        if now > tx_deadline {
            return;
        }
        for cosigned in txs {
            let key = cosigned.tx.canonical_bytes();
            let entry = session.txs.entry(key).or_default();
            if entry.client_sig.is_none() {
                if let Some(sig) = &cosigned.client_sig {
                    entry.client_sig = Some(sig.0.clone());
                }
            }
            if entry.leader_sig.is_none() {
                if let Some(sig) = &cosigned.leader_sig {
                    entry.leader_sig = Some(sig.0.clone());
                }
            }
        }
    }

    /// Resolve a session whose transaction window closed: recompute the
    /// client's balance and compare with the leader's claim.
    fn resolve_session(&mut self, client: AccountId, out: &mut Vec<Outcome>) {
        let Some(session) = self.sessions.remove(&client) else {
            return;
        };
        let Some(pending) = &self.pending else { return };
        let leader_balance = session
            .leader_balance
            .expect("resolve implies path received");
        let leader_key = &self.roster[pending.slot as usize].key;
        let client_key = client.as_public_key();
        let disputed_epoch = pending.epoch;
        let adj = self
            .ops_by_epoch
            .get(&disputed_epoch.saturating_sub(1))
            .and_then(|ops| ops.get(&client))
            .copied()
            .unwrap_or(0);
        let mut recomputed: i128 = session.prev_balance as i128 + adj;
        let sch = self.scheme();
        for (canonical, sigs) in &session.txs {
            let Ok(tx) = crate::codec::decode_tx(canonical) else {
                continue;
            };
            if !tag_ok(disputed_epoch, tx.epoch_tag) {
                continue;
            }
            let Some(leader_sig) = &sigs.leader_sig else {
                continue;
            };
            if !sch.verify(
                leader_key,
                canonical,
                &crate::crypto::Signature(leader_sig.clone()),
            ) {
                continue;
            }
            if tx.sender == client {
                // The inner signature is the client's own consent.
                if sch.verify(
                    &tx.sender.as_public_key(),
                    &tx.signing_bytes(),
                    &tx.signature,
                ) {
                    recomputed -= tx.amount as i128;
                }
            } else if tx.receiver == client {
                let Some(client_sig) = &sigs.client_sig else {
                    continue;
                };
                if sch.verify(
                    &client_key,
                    canonical,
                    &crate::crypto::Signature(client_sig.clone()),
                ) {
                    recomputed += tx.amount as i128;
                }
            }
        }
        if recomputed == leader_balance as i128 {
            let recovered = leader_balance;
            self.served_this_term.insert(client.clone());
            self.queued_payouts.push(QueuedPayout {
                client: client.clone(),
                amount: recovered,
                exit: true,
            });
            out.push(Outcome::Notify(
                Audience::All,
                Notification::SessionResolved { client, recovered },
            ));
        } else {
            self.trigger_mass_exit(out);
        }
    }

    /// The cooperative path failed irrecoverably: halt everything. Exits
    /// are served against the last finalized checkpoint from now on.
    fn trigger_mass_exit(&mut self, out: &mut Vec<Outcome>) {
        if self.mass_exit {
            return;
        }
        self.mass_exit = true;
        self.halted = true;
        self.pending = None;
        self.refund_buffered(out);
        for p in std::mem::take(&mut self.queued_payouts) {
            out.push(Outcome::Notify(
                Audience::Client(p.client.clone()),
                Notification::WithdrawNotOk {
                    client: p.client,
                    amount: p.amount,
                },
            ));
        }
        self.served_this_term.clear();
        self.sessions.clear();
        out.push(Outcome::Notify(Audience::All, Notification::MassExit));
    }

    /// Fire due deadlines: session stages first, then term expiry.
    pub fn on_timer(&mut self, now: u64) -> Vec<Outcome> {
        let mut out = Vec::new();
        // Session deadlines.
        let session_clients: Vec<AccountId> = self.sessions.keys().cloned().collect();
        for client in session_clients {
            let Some(session) = self.sessions.get(&client) else {
                continue;
            };
            if session.leader_balance.is_none() && now >= session.leader_deadline {
                // Leader silent past its deadline: mass exit.
                self.trigger_mass_exit(&mut out);
                return out;
            }
            if let Some(t) = session.tx_deadline {
                if now >= t {
                    self.resolve_session(client, &mut out);
                    if self.mass_exit {
                        return out;
                    }
                }
            }
        }
        // Genesis window expiry.
        if let Some(t) = self.genesis_deadline {
            if now >= t && !self.halted {
                self.genesis_deadline = None;
                self.close_term(0, None, &mut out);
            }
        }
        // Pending term expiry (deferred while any session is open).
        if let Some(p) = &self.pending {
            if now >= p.deadline && self.sessions.is_empty() && !self.halted {
                let p = self.pending.take().expect("pending checked");
                self.finalize_pending(p, &mut out);
            }
        }
        out
    }

    fn finalize_pending(&mut self, p: PendingCheckpoint, out: &mut Vec<Outcome>) {
        // Pay everything staged against the surviving checkpoint. These
        // notifications precede `EpochChanged` so validators fold them into
        // the same window.
        for payout in std::mem::take(&mut self.queued_payouts) {
            self.total_balance -= payout.amount;
            self.record_op(&payout.client, -(payout.amount as i128));
            out.push(Outcome::Credit {
                to: payout.client.0.clone(),
                amount: payout.amount,
            });
            if payout.exit {
                self.clients.remove(&payout.client);
                out.push(Outcome::Notify(
                    Audience::All,
                    Notification::ClientExit {
                        client: payout.client,
                        amount: payout.amount,
                    },
                ));
            } else {
                out.push(Outcome::Notify(
                    Audience::All,
                    Notification::WithdrawOk {
                        client: payout.client,
                        amount: payout.amount,
                    },
                ));
            }
        }
        self.served_this_term.clear();
        self.finalized.push(FinalizedCheckpoint {
            epoch: p.epoch,
            checkpoint: p.checkpoint.clone(),
            at: p.deadline,
        });
        self.close_term(p.epoch, Some(p.checkpoint), out);
        if self.clients.is_empty() && self.execution_end_residual_zero.is_none() {
            self.halted = true;
            self.refund_buffered(out);
            let residual_zero = self.total_balance == 0;
            self.execution_end_residual_zero = Some(residual_zero);
            out.push(Outcome::Notify(
                Audience::All,
                Notification::Halted { residual_zero },
            ));
        }
    }

    /// Shared tail of genesis-window and pending-term close.
    fn close_term(&mut self, epoch: u64, checkpoint: Option<Checkpoint>, out: &mut Vec<Outcome>) {
        let ops = std::mem::take(&mut self.term_ops);
        self.ops_by_epoch.insert(epoch, ops);
        self.epoch = epoch + 1;
        self.commits_seen.clear();
        out.push(Outcome::Notify(
            Audience::All,
            Notification::EpochChanged {
                epoch,
                checkpoint: checkpoint.unwrap_or_else(genesis_checkpoint),
                next_epoch: self.epoch,
            },
        ));
        if let Some(endpoint) = self.cfg.validity_endpoint {
            if self.epoch > endpoint && !self.halted {
                self.halted = true;
                self.refund_buffered(out);
                let residual_zero = self.total_balance == 0;
                out.push(Outcome::Notify(
                    Audience::All,
                    Notification::Halted { residual_zero },
                ));
            }
        }
    }
}

fn clamp_balance(value: i128, ceiling: u64) -> u64 {
    if value <= 0 {
        0
    } else if value as u128 > ceiling as u128 {
        ceiling
    } else {
        value as u64
    }
}

fn pop_balance_or_zero(pop: &ProofOfPossession) -> u64 {
    pop.balance
}

/// Sentinel checkpoint carried by the genesis `EpochChanged`. Never
/// verified; blocks reference the zero digest until a real one finalizes.
pub fn genesis_checkpoint() -> Checkpoint {
    Checkpoint {
        block_hash: crate::merkle::ZERO_DIGEST as Digest,
        qc: crate::crypto::AggregateSignature(Vec::new()),
        index: SignerIndex { value: 0, n: 1 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_block, make_checkpoint, make_pop, Approval, Block, Transaction};
    use crate::crypto::{scheme, KeyPair, SchemeKind};

    const DELTA: u64 = 10;
    const WAGER: u64 = 5;

    fn keypairs(n: usize) -> Vec<KeyPair> {
        let sch = scheme(SchemeKind::HashFold);
        (0..n)
            .map(|i| {
                let mut seed = [0u8; 32];
                seed[0] = i as u8 + 1;
                sch.keygen(&seed)
            })
            .collect()
    }

    fn new_contract(kps: &[KeyPair], endpoint: Option<u64>) -> Contract {
        let cfg = ContractConfig {
            n: kps.len() as u16,
            f: ((kps.len() - 1) / 2) as u16,
            delta: DELTA,
            wager: WAGER,
            scheme: SchemeKind::HashFold,
            validity_endpoint: endpoint,
        };
        Contract::new(cfg, kps.iter().map(|k| k.public.clone()).collect(), 0)
    }

    fn client_id(kps: &[KeyPair], i: usize) -> AccountId {
        AccountId(kps[i].public.0.clone())
    }

    fn approve_all(kps: &[KeyPair], block: &Block) -> Vec<Approval> {
        let sch = scheme(SchemeKind::HashFold);
        let hash = block.header.hash();
        kps.iter()
            .enumerate()
            .map(|(i, kp)| Approval {
                validator: i as u16,
                block_hash: hash,
                signature: sch.sign(&kp.secret, &hash),
            })
            .collect()
    }

    fn checkpoint_for(kps: &[KeyPair], block: &Block) -> Checkpoint {
        let sch = scheme(SchemeKind::HashFold);
        make_checkpoint(
            sch,
            block.header.hash(),
            &approve_all(kps, block),
            kps.len() as u16,
        )
        .unwrap()
    }

    fn notifications(outcomes: &[Outcome]) -> Vec<&Notification> {
        outcomes
            .iter()
            .filter_map(|o| match o {
                Outcome::Notify(_, n) => Some(n),
                _ => None,
            })
            .collect()
    }

    fn has_kind(outcomes: &[Outcome], kind: &str) -> bool {
        notifications(outcomes).iter().any(|n| n.kind() == kind)
    }

    /// Deploy, deposit 100 for one client during genesis, close genesis.
    fn bootstrapped(kps: &[KeyPair], ckps: &[KeyPair]) -> (Contract, AccountId) {
        let mut c = new_contract(kps, None);
        let client = client_id(ckps, 0);
        let out = c.on_arrival(
            3,
            MainchainTx::Deposit {
                client: client.clone(),
                amount: 100,
            },
            true,
        );
        assert!(has_kind(&out, "depositReceived"));
        let out = c.on_timer(DELTA);
        assert!(has_kind(&out, "epochChanged"));
        assert_eq!(c.epoch(), 1);
        (c, client)
    }

    /// Build the epoch-1 block carrying the genesis deposit, commit it.
    fn commit_block_one(
        c: &mut Contract,
        kps: &[KeyPair],
        client: &AccountId,
        now: u64,
    ) -> (Block, Checkpoint) {
        let sch = scheme(SchemeKind::HashFold);
        let prev = std::collections::BTreeMap::from([(client.clone(), 100u64)]);
        let block = build_block(
            sch,
            1,
            crate::merkle::ZERO_DIGEST,
            crate::merkle::ZERO_DIGEST,
            &prev,
            &[],
        );
        let cp = checkpoint_for(kps, &block);
        let slot = c.leader_slot();
        let out = c.on_arrival(
            now,
            MainchainTx::Commit {
                slot,
                generation: 0,
                epoch: 1,
                round: 1,
                checkpoint: cp.clone(),
            },
            true,
        );
        assert!(has_kind(&out, "commitReceived"));
        (block, cp)
    }

    #[test]
    fn genesis_deposit_flows_into_first_term_and_withdrawal_pays_at_expiry() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        assert_eq!(c.total_balance(), 100);
        let (block, _cp) = commit_block_one(&mut c, &kps, &client, 20);

        // Withdraw 40 against the pending checkpoint.
        let pop = make_pop(&client, &block).unwrap();
        let out = c.on_arrival(
            25,
            MainchainTx::Withdraw {
                client: client.clone(),
                amount: 40,
                pop: pop.clone(),
            },
            true,
        );
        assert!(out.is_empty(), "withdrawal queues silently: {out:?}");

        // Wrong amount fails verification.
        let out = c.on_arrival(
            26,
            MainchainTx::Withdraw {
                client: client.clone(),
                amount: 41,
                pop: pop.clone(),
            },
            true,
        );
        assert!(has_kind(&out, "withdrawNotOK"));

        // Nothing pays before the deadline...
        assert!(c.on_timer(29).is_empty());
        // ...and the term closes at exactly commit + Δ.
        let out = c.on_timer(30);
        let credits: Vec<_> = out
            .iter()
            .filter_map(|o| match o {
                Outcome::Credit { to, amount } => Some((to.clone(), *amount)),
                _ => None,
            })
            .collect();
        assert_eq!(credits, vec![(client.0.clone(), 40)]);
        assert!(has_kind(&out, "withdrawOK"));
        assert!(has_kind(&out, "epochChanged"));
        assert_eq!(c.total_balance(), 60);
        assert_eq!(c.epoch(), 2);
        // The payout notification precedes the epoch change.
        let kinds: Vec<_> = notifications(&out).iter().map(|n| n.kind()).collect();
        let w = kinds.iter().position(|k| *k == "withdrawOK").unwrap();
        let e = kinds.iter().position(|k| *k == "epochChanged").unwrap();
        assert!(w < e);
    }

    #[test]
    fn second_withdrawal_same_term_rejected() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        let (block, _) = commit_block_one(&mut c, &kps, &client, 20);
        let pop = make_pop(&client, &block).unwrap();
        assert!(c
            .on_arrival(
                25,
                MainchainTx::Withdraw {
                    client: client.clone(),
                    amount: 10,
                    pop: pop.clone()
                },
                true
            )
            .is_empty());
        let out = c.on_arrival(
            26,
            MainchainTx::Withdraw {
                client: client.clone(),
                amount: 10,
                pop,
            },
            true,
        );
        assert!(
            has_kind(&out, "withdrawNotOK"),
            "one withdrawal per client per term"
        );
    }

    #[test]
    fn zero_withdrawal_rejected() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        let (block, _) = commit_block_one(&mut c, &kps, &client, 20);
        let pop = make_pop(&client, &block).unwrap();
        let out = c.on_arrival(
            25,
            MainchainTx::Withdraw {
                client: client.clone(),
                amount: 0,
                pop,
            },
            true,
        );
        assert!(has_kind(&out, "withdrawNotOK"));
    }

    #[test]
    fn forged_checkpoint_challenge_upheld_removes_leader_and_voids_payouts() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);

        // Leader forges a checkpoint: only its own signature but an index
        // claiming everyone signed.
        let sch = scheme(SchemeKind::HashFold);
        let prev = std::collections::BTreeMap::from([(client.clone(), 100u64)]);
        let block = build_block(
            sch,
            1,
            crate::merkle::ZERO_DIGEST,
            crate::merkle::ZERO_DIGEST,
            &prev,
            &[],
        );
        let hash = block.header.hash();
        let slot = c.leader_slot() as usize;
        let own = Approval {
            validator: slot as u16,
            block_hash: hash,
            signature: sch.sign(&kps[slot].secret, &hash),
        };
        let forged = Checkpoint {
            block_hash: hash,
            qc: crate::crypto::AggregateSignature(own.signature.0.clone()),
            index: SignerIndex::encode(&(0..kps.len() as u16).collect(), kps.len() as u16).unwrap(),
        };
        let out = c.on_arrival(
            20,
            MainchainTx::Commit {
                slot: slot as u16,
                generation: 0,
                epoch: 1,
                round: 1,
                checkpoint: forged,
            },
            true,
        );
        assert!(
            has_kind(&out, "commitReceived"),
            "contract stores lazily, no verification"
        );

        // A withdrawal queued against the forged pending checkpoint.
        let pop = make_pop(&client, &block).unwrap();
        c.on_arrival(
            22,
            MainchainTx::Withdraw {
                client: client.clone(),
                amount: 40,
                pop,
            },
            true,
        );

        // Honest challenger pays the wager; verification fails; upheld.
        let challenger = vec![0xAA];
        let out = c.on_arrival(
            25,
            MainchainTx::Challenge {
                payer: challenger.clone(),
                kind: ChallengeKind::Checkpoint,
            },
            true,
        );
        // Wager refunded.
        assert!(out.iter().any(|o| matches!(
            o,
            Outcome::Credit { to, amount } if *to == challenger && *amount == WAGER
        )));
        // Queued payout voided.
        assert!(has_kind(&out, "withdrawNotOK"));
        // Leader replacement demanded.
        assert!(out
            .iter()
            .any(|o| matches!(o, Outcome::ReplaceLeader { slot: s } if *s as usize == slot)));
        assert!(c.pending().is_none());
        assert_eq!(c.total_balance(), 100, "no coins left");

        // Install the replacement: generation bumps, epoch unchanged.
        let nk = scheme(SchemeKind::HashFold).keygen(&[9u8; 32]);
        let out = c.install_replacement(slot as u16, nk.public.clone());
        assert!(has_kind(&out, "challengeValid"));
        assert_eq!(c.roster()[slot].generation, 1);
        assert_eq!(c.epoch(), 1, "epoch is retried, not advanced");

        // The old leader's tenure cannot commit again, the new one can.
        let cp = checkpoint_for(&kps, &block); // stale roster → would fail verify, but commit is lazy
        let out = c.on_arrival(
            30,
            MainchainTx::Commit {
                slot: slot as u16,
                generation: 0,
                epoch: 1,
                round: 1,
                checkpoint: cp.clone(),
            },
            true,
        );
        assert!(out.is_empty(), "stale generation ignored");
        let out = c.on_arrival(
            30,
            MainchainTx::Commit {
                slot: slot as u16,
                generation: 1,
                epoch: 1,
                round: 2,
                checkpoint: cp,
            },
            true,
        );
        assert!(has_kind(&out, "commitReceived"));
    }

    #[test]
    fn valid_checkpoint_challenge_forfeits_wager_and_extends_term() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        let (_block, _cp) = commit_block_one(&mut c, &kps, &client, 20);
        let deadline_before = c.pending().unwrap().deadline;

        let challenger = vec![0xBB];
        let out = c.on_arrival(
            25,
            MainchainTx::Challenge {
                payer: challenger.clone(),
                kind: ChallengeKind::Checkpoint,
            },
            true,
        );
        assert!(out
            .iter()
            .any(|o| matches!(o, Outcome::Forfeit { amount } if *amount == WAGER)));
        assert!(has_kind(&out, "challengeRejected"));
        assert!(
            !out.iter().any(|o| matches!(o, Outcome::Credit { .. })),
            "no refund"
        );
        assert_eq!(c.pending().unwrap().deadline, deadline_before + DELTA);

        // Expiry happens at the extended deadline, not the original.
        assert!(c.on_timer(deadline_before).is_empty());
        let out = c.on_timer(deadline_before + DELTA);
        assert!(has_kind(&out, "epochChanged"));
    }

    #[test]
    fn challenge_with_nothing_pending_is_refunded() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, _client) = bootstrapped(&kps, &ckps[4..]);
        let challenger = vec![0xCC];
        let out = c.on_arrival(
            15,
            MainchainTx::Challenge {
                payer: challenger.clone(),
                kind: ChallengeKind::Checkpoint,
            },
            true,
        );
        assert!(out.iter().any(|o| matches!(
            o,
            Outcome::Credit { to, amount } if *to == challenger && *amount == WAGER
        )));
        assert!(!out.iter().any(|o| matches!(o, Outcome::Forfeit { .. })));
    }

    #[test]
    fn noncommit_challenge_with_quorum_of_votes_removes_leader() {
        let kps = keypairs(5);
        let ckps = keypairs(10);
        let (mut c, _client) = bootstrapped(&kps, &ckps[5..]);
        let sch = scheme(SchemeKind::HashFold);
        let slot = c.leader_slot();
        let message = crate::messages::vote_message(1, slot, 0);
        // f = 2, so 3 votes suffice; voters 2, 3, 4.
        let voters: std::collections::BTreeSet<u16> = [2, 3, 4].into();
        let parts: Vec<_> = voters
            .iter()
            .map(|&i| sch.sign(&kps[i as usize].secret, &message))
            .collect();
        let votes = sch.combine(&parts).unwrap();
        let index = SignerIndex::encode(&voters, 5).unwrap();
        let out = c.on_arrival(
            15,
            MainchainTx::Challenge {
                payer: vec![0x01],
                kind: ChallengeKind::NonCommit {
                    epoch: 1,
                    slot,
                    generation: 0,
                    votes: votes.clone(),
                    voters: index,
                },
            },
            true,
        );
        assert!(out
            .iter()
            .any(|o| matches!(o, Outcome::ReplaceLeader { slot: s } if *s == slot)));
        assert!(
            out.iter().any(|o| matches!(o, Outcome::Credit { .. })),
            "wager returned"
        );
        c.install_replacement(slot, scheme(SchemeKind::HashFold).keygen(&[7u8; 32]).public);

        // Re-submitting the same evidence is now stale: refund, no forfeit.
        let out = c.on_arrival(
            16,
            MainchainTx::Challenge {
                payer: vec![0x02],
                kind: ChallengeKind::NonCommit {
                    epoch: 1,
                    slot,
                    generation: 0,
                    votes,
                    voters: index,
                },
            },
            true,
        );
        assert!(out.iter().any(|o| matches!(o, Outcome::Credit { .. })));
        assert!(!out.iter().any(|o| matches!(o, Outcome::Forfeit { .. })));
        assert!(!out
            .iter()
            .any(|o| matches!(o, Outcome::ReplaceLeader { .. })));
    }

    #[test]
    fn noncommit_challenge_without_quorum_forfeits() {
        let kps = keypairs(5);
        let ckps = keypairs(10);
        let (mut c, _client) = bootstrapped(&kps, &ckps[5..]);
        let sch = scheme(SchemeKind::HashFold);
        let slot = c.leader_slot();
        let message = crate::messages::vote_message(1, slot, 0);
        // Only f = 2 votes: insufficient.
        let voters: std::collections::BTreeSet<u16> = [2, 3].into();
        let parts: Vec<_> = voters
            .iter()
            .map(|&i| sch.sign(&kps[i as usize].secret, &message))
            .collect();
        let votes = sch.combine(&parts).unwrap();
        let index = SignerIndex::encode(&voters, 5).unwrap();
        let out = c.on_arrival(
            15,
            MainchainTx::Challenge {
                payer: vec![0x03],
                kind: ChallengeKind::NonCommit {
                    epoch: 1,
                    slot,
                    generation: 0,
                    votes,
                    voters: index,
                },
            },
            true,
        );
        assert!(out
            .iter()
            .any(|o| matches!(o, Outcome::Forfeit { amount } if *amount == WAGER)));
        assert!(!out
            .iter()
            .any(|o| matches!(o, Outcome::ReplaceLeader { .. })));
    }

    #[test]
    fn deposit_between_terms_buffers_until_next_commit() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        // Genesis closed, nothing pending: deposit must buffer.
        let late = client_id(&ckps[4..], 1);
        let out = c.on_arrival(
            12,
            MainchainTx::Deposit {
                client: late.clone(),
                amount: 7,
            },
            true,
        );
        assert!(out.is_empty(), "buffered silently: {out:?}");
        assert_eq!(c.total_balance(), 100);
        // The next commit opens a term and flushes the buffer.
        let (_block, _cp) = commit_block_one(&mut c, &kps, &client, 20);
        assert_eq!(c.total_balance(), 107);
        assert!(c.clients().contains(&late));
    }

    #[test]
    fn exit_all_clients_reaches_execution_end_with_zero_residual() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        let (block, _) = commit_block_one(&mut c, &kps, &client, 20);
        let pop = make_pop(&client, &block).unwrap();
        let out = c.on_arrival(
            25,
            MainchainTx::Exit {
                client: client.clone(),
                pop,
            },
            true,
        );
        assert!(out.is_empty());
        let out = c.on_timer(30);
        assert!(has_kind(&out, "clientExit"));
        assert!(has_kind(&out, "halted"));
        assert_eq!(c.total_balance(), 0);
        assert_eq!(c.execution_end_residual_zero, Some(true));
    }

    #[test]
    fn validity_endpoint_halts_and_serves_exits_against_last_finalized() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let mut c = {
            let cfg = ContractConfig {
                n: 4,
                f: 1,
                delta: DELTA,
                wager: WAGER,
                scheme: SchemeKind::HashFold,
                validity_endpoint: Some(1),
            };
            Contract::new(cfg, kps.iter().map(|k| k.public.clone()).collect(), 0)
        };
        let client = client_id(&ckps[4..], 0);
        c.on_arrival(
            3,
            MainchainTx::Deposit {
                client: client.clone(),
                amount: 100,
            },
            true,
        );
        c.on_timer(DELTA);
        let (block, _) = commit_block_one(&mut c, &kps, &client, 20);
        let out = c.on_timer(30);
        assert!(
            has_kind(&out, "halted"),
            "endpoint 1 halts after epoch 1 finalizes"
        );
        assert!(c.halted());

        // Commits are rejected now...
        let cp2 = checkpoint_for(&kps, &block);
        let out = c.on_arrival(
            35,
            MainchainTx::Commit {
                slot: 2,
                generation: 0,
                epoch: 2,
                round: 1,
                checkpoint: cp2,
            },
            true,
        );
        assert!(out.is_empty());
        // ...but an exit against the last finalized checkpoint is served
        // immediately.
        let pop = make_pop(&client, &block).unwrap();
        let out = c.on_arrival(
            40,
            MainchainTx::Exit {
                client: client.clone(),
                pop,
            },
            true,
        );
        assert!(has_kind(&out, "clientExit"));
        assert!(out.iter().any(|o| matches!(
            o,
            Outcome::Credit { to, amount } if *to == client.0 && *amount == 100
        )));
        assert_eq!(c.total_balance(), 0);
    }

    #[test]
    fn halted_exit_adjusts_for_post_block_withdrawals() {
        // Client withdraws 40 at finalize(1) (already paid), then a mass
        // exit during epoch 2 serves the remaining 60, not the stale 100.
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        let (block, _) = commit_block_one(&mut c, &kps, &client, 20);
        let pop = make_pop(&client, &block).unwrap();
        c.on_arrival(
            25,
            MainchainTx::Withdraw {
                client: client.clone(),
                amount: 40,
                pop: pop.clone(),
            },
            true,
        );
        c.on_timer(30); // pays 40, finalizes epoch 1
        assert_eq!(c.total_balance(), 60);
        // Force a mass exit directly.
        let mut out = Vec::new();
        c.trigger_mass_exit(&mut out);
        // Exit presents the finalized block-1 proof showing 100.
        let out = c.on_arrival(
            40,
            MainchainTx::Exit {
                client: client.clone(),
                pop,
            },
            true,
        );
        assert!(out.iter().any(|o| matches!(
            o,
            Outcome::Credit { to, amount } if *to == client.0 && *amount == 60
        )));
        assert_eq!(c.total_balance(), 0);
    }

    // ---- interactive exit ----

    fn cosign(kp_signer: &KeyPair, tx: &Transaction) -> crate::crypto::Signature {
        scheme(SchemeKind::HashFold).sign(&kp_signer.secret, &tx.canonical_bytes())
    }

    #[test]
    fn interactive_exit_recovers_balance_when_txs_reconcile() {
        let sch = scheme(SchemeKind::HashFold);
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let client_kp = &ckps[4];
        let peer_kp = &ckps[5];
        let client = AccountId(client_kp.public.0.clone());
        let peer = AccountId(peer_kp.public.0.clone());

        let mut c = new_contract(&kps, None);
        c.on_arrival(
            1,
            MainchainTx::Deposit {
                client: client.clone(),
                amount: 100,
            },
            true,
        );
        c.on_arrival(
            2,
            MainchainTx::Deposit {
                client: peer.clone(),
                amount: 50,
            },
            true,
        );
        c.on_timer(DELTA);

        // Epoch 1: client pays peer 30.
        let mut tx = Transaction {
            sender: client.clone(),
            receiver: peer.clone(),
            amount: 30,
            epoch_tag: 1,
            signature: crate::crypto::Signature(Vec::new()),
        };
        tx.signature = sch.sign(&client_kp.secret, &tx.signing_bytes());
        let prev =
            std::collections::BTreeMap::from([(client.clone(), 100u64), (peer.clone(), 50u64)]);
        let block = build_block(
            sch,
            1,
            crate::merkle::ZERO_DIGEST,
            crate::merkle::ZERO_DIGEST,
            &prev,
            std::slice::from_ref(&tx),
        );
        assert_eq!(block.balance_of(&client), Some(70));
        let cp = checkpoint_for(&kps, &block);
        let slot = c.leader_slot();
        c.on_arrival(
            20,
            MainchainTx::Commit {
                slot,
                generation: 0,
                epoch: 1,
                round: 1,
                checkpoint: cp,
            },
            true,
        );

        // Client distrusts the checkpoint: opens a session (no finalized
        // checkpoint yet → no previous proof).
        let out = c.on_arrival(
            22,
            MainchainTx::SessionOpen {
                client: client.clone(),
                prev: None,
            },
            true,
        );
        assert!(has_kind(&out, "leaderPathDemand"));

        // Pending expiry is deferred while the session is open.
        assert!(!c
            .on_timer(30)
            .iter()
            .any(|o| matches!(o, Outcome::Notify(_, Notification::EpochChanged { .. }))));
        assert!(c.pending().is_some());

        // Leader responds with the client's path in the pending block.
        let leader_pop = make_pop(&client, &block).unwrap();
        let out = c.on_arrival(
            31,
            MainchainTx::SessionLeaderPath {
                slot,
                client: client.clone(),
                pop: leader_pop,
            },
            true,
        );
        assert!(has_kind(&out, "sessionTxWindow"));

        // Leader submits the spend with its endorsement; the inner client
        // signature is the client's consent (client is the sender).
        let leader_kp = &kps[slot as usize];
        c.on_arrival(
            33,
            MainchainTx::SessionTxs {
                party: SessionParty::Leader,
                client: client.clone(),
                txs: vec![CosignedTx {
                    tx: tx.clone(),
                    client_sig: None,
                    leader_sig: Some(cosign(leader_kp, &tx)),
                }],
            },
            true,
        );

        // Window closes: 0 (prev) + 100 (genesis deposit) − 30 = 70 = claim.
        // Resolution queues an exit and unblocks the deferred expiry, which
        // fires in the same timer pass.
        let out = c.on_timer(31 + DELTA);
        assert!(has_kind(&out, "sessionResolved"), "{out:?}");
        assert!(!c.mass_exit());
        assert!(has_kind(&out, "clientExit"));
        assert!(has_kind(&out, "epochChanged"));
        assert_eq!(c.total_balance(), 80, "150 − 70 recovered");
        assert!(!c.clients().contains(&client));
    }

    #[test]
    fn interactive_exit_mass_exits_on_leader_silence() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        commit_block_one(&mut c, &kps, &client, 20);
        c.on_arrival(
            22,
            MainchainTx::SessionOpen {
                client: client.clone(),
                prev: None,
            },
            true,
        );
        // No leader response by 22 + Δ.
        let out = c.on_timer(32);
        assert!(has_kind(&out, "massExit"));
        assert!(c.mass_exit());
        assert!(c.pending().is_none(), "pending checkpoint obliterated");
    }

    #[test]
    fn interactive_exit_mass_exits_on_balance_mismatch() {
        let sch = scheme(SchemeKind::HashFold);
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);

        // Leader commits a block where the client's balance was quietly cut
        // to 60 (no transaction justifies it).
        let prev = std::collections::BTreeMap::from([(client.clone(), 60u64)]);
        let block = build_block(
            sch,
            1,
            crate::merkle::ZERO_DIGEST,
            crate::merkle::ZERO_DIGEST,
            &prev,
            &[],
        );
        let cp = checkpoint_for(&kps, &block);
        let slot = c.leader_slot();
        c.on_arrival(
            20,
            MainchainTx::Commit {
                slot,
                generation: 0,
                epoch: 1,
                round: 1,
                checkpoint: cp,
            },
            true,
        );
        c.on_arrival(
            22,
            MainchainTx::SessionOpen {
                client: client.clone(),
                prev: None,
            },
            true,
        );
        let pop = make_pop(&client, &block).unwrap();
        c.on_arrival(
            25,
            MainchainTx::SessionLeaderPath {
                slot,
                client: client.clone(),
                pop,
            },
            true,
        );
        // No transactions justify 60 ≠ 100: mismatch at window close.
        let out = c.on_timer(25 + DELTA);
        assert!(has_kind(&out, "massExit"));
        assert!(c.mass_exit());
    }

    #[test]
    fn session_rejected_when_no_term_or_duplicate() {
        let kps = keypairs(4);
        let ckps = keypairs(8);
        let (mut c, client) = bootstrapped(&kps, &ckps[4..]);
        // No pending term yet.
        let out = c.on_arrival(
            12,
            MainchainTx::SessionOpen {
                client: client.clone(),
                prev: None,
            },
            true,
        );
        assert!(has_kind(&out, "sessionRejected"));
        commit_block_one(&mut c, &kps, &client, 20);
        assert!(c
            .on_arrival(
                22,
                MainchainTx::SessionOpen {
                    client: client.clone(),
                    prev: None
                },
                true
            )
            .iter()
            .any(|o| matches!(o, Outcome::Notify(_, Notification::LeaderPathDemand { .. }))));
        let out = c.on_arrival(
            23,
            MainchainTx::SessionOpen {
                client: client.clone(),
                prev: None,
            },
            true,
        );
        assert!(
            has_kind(&out, "sessionRejected"),
            "one session per client per term"
        );
    }
}
