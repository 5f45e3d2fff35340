//! Honest client behavior.
//!
//! A client holds its own key, talks to one contact validator, and keeps an
//! independent expectation of its sidechain balance derived only from
//! finalized blocks and its own contract receipts. At every checkpoint
//! commitment it compares that expectation against the balance the committed
//! block claims for it; a mismatch triggers an interactive exit on the
//! parent chain. Clients never trust validator state they cannot re-derive.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{
    make_pop, AccountId, Block, BlockHeader, Checkpoint, ProofOfPossession, Transaction,
};
use crate::crypto::{scheme, KeyPair, SchemeKind, Signature, SignatureScheme};
use crate::merkle::{BranchMask, MerklePath, ZERO_DIGEST};
use crate::messages::{CosignedTx, MainchainTx, Msg, Notification, SessionParty};
use crate::validator::BlockRegistry;

use super::scenario::WorkloadParams;

/// What a client wants the outside world to do.
#[derive(Debug)]
pub enum ClientEffect {
    /// Hand a message to the contact validator.
    Send { to: u16, msg: Msg },
    /// Submit a parent-chain transaction.
    Submit { tx: MainchainTx },
}

/// Run-level context the harness passes into client handlers.
#[derive(Debug, Clone, Copy)]
pub struct ClientCtx {
    /// The run has reached its final epoch: exit at the next opportunity.
    pub exit_all: bool,
}

#[derive(Debug)]
pub struct ClientActor {
    pub id: AccountId,
    keypair: KeyPair,
    pub contact: u16,
    kind: SchemeKind,

    /// Epoch tag for freshly signed transactions (the next block's epoch).
    epoch_view: u64,
    /// Balance in the last finalized state, per the client's own fold.
    fin_expected: u64,
    /// Net contract receipts (deposits in, payouts out) since that fold.
    window_ops: i128,
    /// Balance derived for the currently pending block, cached at commit.
    commit_derived: Option<u64>,
    /// Last finalized block this client retrieved, for exit proofs.
    last_finalized: Option<(u64, Block)>,
    /// Transactions sent but not yet observed in a finalized block.
    sent_unconfirmed: Vec<Transaction>,

    pub exited: bool,
    pub exit_paid: Option<u64>,
    pub deposited: u64,
    pub withdrawn: u64,
    pub rejected_txs: u64,
    pub acked_txs: u64,
    pub opened_session: bool,
    session_active: bool,
    wants_exit: bool,
    halted_mode: bool,
    /// Suppresses further spontaneous activity once the run winds down.
    servable: bool,
}

fn dummy_pop(client: &AccountId) -> ProofOfPossession {
    ProofOfPossession {
        header: BlockHeader {
            epoch: 0,
            prev_block_hash: ZERO_DIGEST,
            last_checkpoint: ZERO_DIGEST,
            tx_root: ZERO_DIGEST,
            account_root: ZERO_DIGEST,
        },
        balance: 0,
        path: MerklePath {
            key: client.0.clone(),
            value: 0,
            branch_mask: BranchMask::empty(),
            siblings: Vec::new(),
        },
    }
}

impl ClientActor {
    pub fn new(keypair: KeyPair, contact: u16, kind: SchemeKind) -> Self {
        ClientActor {
            id: AccountId(keypair.public.0.clone()),
            keypair,
            contact,
            kind,
            epoch_view: 1,
            fin_expected: 0,
            window_ops: 0,
            commit_derived: None,
            last_finalized: None,
            sent_unconfirmed: Vec::new(),
            exited: false,
            exit_paid: None,
            deposited: 0,
            withdrawn: 0,
            rejected_txs: 0,
            acked_txs: 0,
            opened_session: false,
            session_active: false,
            wants_exit: false,
            halted_mode: false,
            servable: true,
        }
    }

    fn sch(&self) -> &'static dyn SignatureScheme {
        scheme(self.kind)
    }

    pub fn expected_final(&self) -> u64 {
        let v = self.fin_expected as i128 + self.window_ops;
        if v < 0 {
            0
        } else {
            v as u64
        }
    }

    pub fn deposit(&mut self, amount: u64) -> ClientEffect {
        ClientEffect::Submit {
            tx: MainchainTx::Deposit {
                client: self.id.clone(),
                amount,
            },
        }
    }

    /// Spendable funds as the client estimates them: finalized expectation
    /// plus receipts, minus transfers still in flight.
    fn spendable(&self) -> i128 {
        let pending_out: i128 = self
            .sent_unconfirmed
            .iter()
            .map(|tx| tx.amount as i128)
            .sum();
        self.fin_expected as i128 + self.window_ops - pending_out
    }

    /// Environment tick: maybe start a transfer to a random peer.
    pub fn maybe_transfer(
        &mut self,
        rng: &mut ChaCha8Rng,
        peers: &[AccountId],
        wl: &WorkloadParams,
    ) -> Option<ClientEffect> {
        if self.exited || self.halted_mode || self.wants_exit || !self.servable {
            return None;
        }
        let others: Vec<&AccountId> = peers.iter().filter(|p| **p != self.id).collect();
        if others.is_empty() {
            return None;
        }
        let ceiling = self.spendable().min(wl.tx_amount_max as i128);
        if ceiling < 1 {
            return None;
        }
        let receiver = others[rng.gen_range(0..others.len())].clone();
        let amount = rng.gen_range(1..=ceiling as u64);
        let mut tx = Transaction {
            sender: self.id.clone(),
            receiver,
            amount,
            epoch_tag: self.epoch_view,
            signature: Signature(Vec::new()),
        };
        tx.signature = self.sch().sign(&self.keypair.secret, &tx.signing_bytes());
        self.sent_unconfirmed.push(tx.clone());
        Some(ClientEffect::Send {
            to: self.contact,
            msg: Msg::TransferFunds(tx),
        })
    }

    /// Sidechain messages addressed to this client (receipts from the
    /// contact validator).
    pub fn on_msg(&mut self, msg: &Msg) {
        match msg {
            Msg::TxAck { .. } => self.acked_txs += 1,
            Msg::TxNotAck { tx_hash } | Msg::TxNotValid { tx_hash } => {
                self.rejected_txs += 1;
                // The contact refused it: it will never finalize.
                self.sent_unconfirmed.retain(|tx| &tx.hash() != tx_hash);
            }
            _ => {}
        }
    }

    /// My net flow in a block's transaction list.
    fn net_in_block(&self, block: &Block) -> i128 {
        let mut net: i128 = 0;
        for tx in &block.txs {
            if tx.receiver == self.id {
                net += tx.amount as i128;
            }
            if tx.sender == self.id {
                net -= tx.amount as i128;
            }
        }
        net
    }

    fn handle_commit(
        &mut self,
        registry: &BlockRegistry,
        checkpoint: &Checkpoint,
        rng: &mut ChaCha8Rng,
        wl: &WorkloadParams,
        ctx: ClientCtx,
        out: &mut Vec<ClientEffect>,
    ) {
        if ctx.exit_all {
            self.wants_exit = true;
        }
        if self.exited || self.halted_mode {
            return;
        }
        let Some(block) = registry.get(&checkpoint.block_hash) else {
            // Withheld block: nothing to audit against; the committee's own
            // challenge machinery handles an unverifiable checkpoint.
            self.commit_derived = None;
            return;
        };
        let derived_i = self.fin_expected as i128 + self.net_in_block(block);
        let derived = if derived_i < 0 { 0 } else { derived_i as u64 };
        let claimed = block.balance_of(&self.id).unwrap_or(0);
        self.commit_derived = Some(derived);
        if claimed != derived {
            // The committed state lies about my balance: dispute it on the
            // parent chain instead of withdrawing against it.
            if !self.session_active {
                let prev = self
                    .last_finalized
                    .as_ref()
                    .and_then(|(_, b)| make_pop(&self.id, b).ok());
                self.session_active = true;
                self.opened_session = true;
                out.push(ClientEffect::Submit {
                    tx: MainchainTx::SessionOpen {
                        client: self.id.clone(),
                        prev,
                    },
                });
            }
            return;
        }
        if self.session_active {
            return;
        }
        if self.wants_exit {
            if let Ok(pop) = make_pop(&self.id, block) {
                out.push(ClientEffect::Submit {
                    tx: MainchainTx::Exit {
                        client: self.id.clone(),
                        pop,
                    },
                });
            }
            return;
        }
        // Spontaneous withdrawal against the honest pending state.
        if claimed > 0 && (rng.gen_range(0..1000) as u32) < wl.withdraw_rate_pm {
            let cap = (claimed as u128 * wl.withdraw_max_pm as u128 / 1000) as u64;
            if cap >= 1 {
                let amount = rng.gen_range(1..=cap);
                if let Ok(pop) = make_pop(&self.id, block) {
                    out.push(ClientEffect::Submit {
                        tx: MainchainTx::Withdraw {
                            client: self.id.clone(),
                            amount,
                            pop,
                        },
                    });
                }
            }
        }
    }

    fn handle_epoch_changed(
        &mut self,
        epoch: u64,
        checkpoint: &Checkpoint,
        registry: &BlockRegistry,
    ) {
        if epoch > 0 {
            if let Some(block) = registry.get(&checkpoint.block_hash) {
                let derived = self.commit_derived.unwrap_or_else(|| {
                    let d = self.fin_expected as i128 + self.net_in_block(block);
                    if d < 0 {
                        0
                    } else {
                        d as u64
                    }
                });
                self.fin_expected = derived;
                // Drop sent transactions that made it in, and ones whose tag
                // can no longer be included.
                let included: std::collections::BTreeSet<&Signature> =
                    block.txs.iter().map(|tx| &tx.signature).collect();
                self.sent_unconfirmed
                    .retain(|tx| !included.contains(&tx.signature));
                self.last_finalized = Some((epoch, block.clone()));
            }
        }
        let next = epoch + 1;
        self.sent_unconfirmed.retain(|tx| tx.epoch_tag + 1 >= next);
        self.epoch_view = next;
        self.fin_expected = self.expected_final();
        self.window_ops = 0;
        self.commit_derived = None;
    }

    /// Evidence for my own interactive exit: every transaction touching me
    /// in the disputed block, receipts co-signed for consent, plus anything
    /// I sent that the block may have hidden.
    fn session_evidence(
        &self,
        registry: &BlockRegistry,
        checkpoint_hash: Option<&[u8; 32]>,
    ) -> Vec<CosignedTx> {
        let mut by_bytes: BTreeMap<Vec<u8>, CosignedTx> = BTreeMap::new();
        if let Some(hash) = checkpoint_hash {
            if let Some(block) = registry.get(hash) {
                for tx in &block.txs {
                    if tx.sender != self.id && tx.receiver != self.id {
                        continue;
                    }
                    let canonical = tx.canonical_bytes();
                    let client_sig = (tx.receiver == self.id)
                        .then(|| self.sch().sign(&self.keypair.secret, &canonical));
                    by_bytes.insert(
                        canonical,
                        CosignedTx {
                            tx: tx.clone(),
                            client_sig,
                            leader_sig: None,
                        },
                    );
                }
            }
        }
        for tx in &self.sent_unconfirmed {
            by_bytes
                .entry(tx.canonical_bytes())
                .or_insert_with(|| CosignedTx {
                    tx: tx.clone(),
                    client_sig: None,
                    leader_sig: None,
                });
        }
        by_bytes.into_values().collect()
    }

    /// Exit against the last finalized state once the chain has halted.
    fn halted_exit(&mut self, out: &mut Vec<ClientEffect>) {
        if self.exited {
            return;
        }
        let pop = match &self.last_finalized {
            Some((_, block)) => make_pop(&self.id, block).unwrap_or_else(|_| dummy_pop(&self.id)),
            None => dummy_pop(&self.id),
        };
        out.push(ClientEffect::Submit {
            tx: MainchainTx::Exit {
                client: self.id.clone(),
                pop,
            },
        });
    }

    pub fn on_notification(
        &mut self,
        n: &Notification,
        registry: &BlockRegistry,
        rng: &mut ChaCha8Rng,
        wl: &WorkloadParams,
        ctx: ClientCtx,
        pending_cp_hash: Option<[u8; 32]>,
    ) -> Vec<ClientEffect> {
        let mut out = Vec::new();
        match n {
            Notification::DepositReceived { client, amount } if *client == self.id => {
                self.deposited += amount;
                self.window_ops += *amount as i128;
            }
            Notification::CannotDeposit { client, amount } if *client == self.id => {
                let _ = amount; // Coins were returned on the parent chain.
            }
            Notification::CommitReceived { checkpoint, .. } => {
                self.handle_commit(registry, checkpoint, rng, wl, ctx, &mut out);
            }
            Notification::EpochChanged {
                epoch, checkpoint, ..
            } => {
                self.handle_epoch_changed(*epoch, checkpoint, registry);
            }
            Notification::WithdrawOk { client, amount } if *client == self.id => {
                self.withdrawn += amount;
                self.window_ops -= *amount as i128;
            }
            Notification::WithdrawNotOk { client, .. } if *client == self.id => {
                // Rejected or voided payout; retry happens naturally at the
                // next commitment if still wanted.
            }
            Notification::ClientExit { client, amount } if *client == self.id => {
                self.exited = true;
                self.exit_paid = Some(*amount);
                self.session_active = false;
            }
            Notification::SessionTxWindow { client, .. } if *client == self.id => {
                let txs = self.session_evidence(registry, pending_cp_hash.as_ref());
                out.push(ClientEffect::Submit {
                    tx: MainchainTx::SessionTxs {
                        party: SessionParty::Client,
                        client: self.id.clone(),
                        txs,
                    },
                });
            }
            Notification::SessionResolved { client, .. } if *client == self.id => {
                self.session_active = false;
            }
            Notification::SessionRejected { client } if *client == self.id => {
                // The disputed checkpoint was voided: the threat is gone.
                self.session_active = false;
            }
            Notification::MassExit => {
                self.halted_mode = true;
                self.session_active = false;
                self.halted_exit(&mut out);
            }
            Notification::Halted { .. } => {
                self.halted_mode = true;
                if !self.exited && self.wants_exit {
                    // Validity endpoint reached before my exit was served.
                    self.halted_exit(&mut out);
                }
            }
            _ => {}
        }
        out
    }
}
