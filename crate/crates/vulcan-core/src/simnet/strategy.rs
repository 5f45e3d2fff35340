//! Fault-injection wrappers around the honest validator.
//!
//! Every simulated validator is driven through the [`Node`] trait. Honest
//! slots pass straight through to [`Validator`]; Byzantine slots wrap one and
//! alter its *outbound* behavior (and, where the attack calls for it, run
//! their own leader machinery). The inner honest machine keeps tracking the
//! chain so the attacker stays in sync like a real adversary would.

use std::collections::{BTreeMap, BTreeSet};

use crate::chain::{
    account_trie, make_checkpoint, quorum, Approval, Block, Checkpoint, SignerIndex,
};
use crate::crypto::{scheme, SignatureScheme};
use crate::messages::{CosignedTx, MainchainTx, Msg, Notification, SessionParty};
use crate::validator::{BlockRegistry, Effect, Sender, TimerKind, Validator, ValidatorConfig};

use super::scenario::StrategyKind;

/// A participant in the committee: honest or adversarial.
pub trait Node: Send {
    fn strategy(&self) -> &'static str;
    fn validator(&self) -> &Validator;
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect>;
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect>;
    fn on_notification(
        &mut self,
        now: u64,
        n: &Notification,
        registry: &BlockRegistry,
    ) -> Vec<Effect>;
}

pub fn make_node(kind: Option<StrategyKind>, v: Validator, cfg: ValidatorConfig) -> Box<dyn Node> {
    match kind {
        None => Box::new(HonestNode { v }),
        Some(StrategyKind::SilentLeader) => Box::new(SilentLeaderNode { v }),
        Some(StrategyKind::WithholdAndCommit) => Box::new(WithholdAndCommitNode {
            v,
            cfg,
            forged_for: None,
        }),
        Some(StrategyKind::Equivocate) => Box::new(EquivocateNode { v, cfg }),
        Some(StrategyKind::TamperBalances) => Box::new(TamperBalancesNode {
            v,
            cfg,
            epoch_mark: 0,
            round: 1,
            block: None,
            approvals: BTreeMap::new(),
            committed: false,
        }),
        Some(StrategyKind::ApproveAnything) => Box::new(ApproveAnythingNode { v, cfg }),
        Some(StrategyKind::DropClientTxs) => Box::new(DropClientTxsNode { v }),
    }
}

pub struct HonestNode {
    v: Validator,
}

impl Node for HonestNode {
    fn strategy(&self) -> &'static str {
        "honest"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        self.v.on_msg(now, from, msg)
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        self.v.on_timer(now, kind)
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        self.v.on_notification(now, n, reg)
    }
}

fn is_proposalish_broadcast(msg: &Msg) -> bool {
    matches!(msg, Msg::ProposedBlock { .. } | Msg::EpochRestart { .. })
}

/// Drop everything that would advance the strategy-holder's own tenure:
/// proposals, restart announcements, publications, and commits.
fn strip_leading_output(effects: Vec<Effect>) -> Vec<Effect> {
    effects
        .into_iter()
        .filter(|e| {
            !matches!(e,
                Effect::Broadcast { msg } if is_proposalish_broadcast(msg))
                && !matches!(e, Effect::Publish { .. })
                && !matches!(
                    e,
                    Effect::Submit {
                        tx: MainchainTx::Commit { .. }
                    }
                )
        })
        .collect()
}

/// Leads by doing nothing: never proposes, never commits. Behaves honestly
/// in every other role, so the committee must vote it out to make progress.
pub struct SilentLeaderNode {
    v: Validator,
}

impl SilentLeaderNode {
    fn filter(&self, effects: Vec<Effect>) -> Vec<Effect> {
        if self.v.leading() {
            strip_leading_output(effects)
        } else {
            effects
        }
    }
}

impl Node for SilentLeaderNode {
    fn strategy(&self) -> &'static str {
        "silent_leader"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        let out = self.v.on_msg(now, from, msg);
        self.filter(out)
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        let out = self.v.on_timer(now, kind);
        self.filter(out)
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        let out = self.v.on_notification(now, n, reg);
        self.filter(out)
    }
}

/// Builds a block but shows it to nobody, then commits a checkpoint whose
/// certificate carries only its own signature while claiming a full quorum.
/// The certificate cannot verify, so the commitment survives only if nobody
/// audits it.
pub struct WithholdAndCommitNode {
    v: Validator,
    cfg: ValidatorConfig,
    forged_for: Option<u64>,
}

impl WithholdAndCommitNode {
    fn sch(&self) -> &'static dyn SignatureScheme {
        scheme(self.cfg.scheme)
    }

    fn post(&mut self, effects: Vec<Effect>) -> Vec<Effect> {
        if !self.v.leading() {
            return effects;
        }
        // Also drop challenges: the attacker will not report its own forgery
        // when the inner honest machine fails to verify it.
        let mut out: Vec<Effect> = strip_leading_output(effects)
            .into_iter()
            .filter(|e| {
                !matches!(
                    e,
                    Effect::Submit {
                        tx: MainchainTx::Challenge { .. }
                    }
                )
            })
            .collect();
        let epoch = self.v.epoch();
        if self.forged_for != Some(epoch) {
            if let Some(block) = self.v.pending_block() {
                let block_hash = block.header.hash();
                let slot = self.v.slot();
                let sig = self.sch().sign(&self.v.keypair().secret, &block_hash);
                let qc = self
                    .sch()
                    .combine(&[sig])
                    .expect("single signature combines");
                let signers: BTreeSet<u16> = (0..quorum(self.cfg.n as usize) as u16).collect();
                let index = SignerIndex::encode(&signers, self.cfg.n).expect("slots in range");
                let checkpoint = Checkpoint {
                    block_hash,
                    qc,
                    index,
                };
                self.forged_for = Some(epoch);
                out.push(Effect::Submit {
                    tx: MainchainTx::Commit {
                        slot,
                        generation: self.v.roster_generation(slot),
                        epoch,
                        round: self.v.round(),
                        checkpoint,
                    },
                });
            }
        }
        out
    }
}

impl Node for WithholdAndCommitNode {
    fn strategy(&self) -> &'static str {
        "withhold_and_commit"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        let out = self.v.on_msg(now, from, msg);
        self.post(out)
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        let out = self.v.on_timer(now, kind);
        self.post(out)
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        let out = self.v.on_notification(now, n, reg);
        self.post(out)
    }
}

/// Force a different account table onto a copy of a block, rebuilding its
/// root. The total is preserved: `amount` moves from the richest account to
/// its neighbor, so only per-account claims are falsified.
fn shift_balances(block: &Block) -> Option<Block> {
    if block.accounts.len() < 2 {
        return None;
    }
    let mut t = block.clone();
    let mut victim = 0usize;
    for (i, (_, bal)) in t.accounts.iter().enumerate() {
        if *bal > t.accounts[victim].1 {
            victim = i;
        }
    }
    let bal = t.accounts[victim].1;
    if bal == 0 {
        return None;
    }
    let beneficiary = (victim + 1) % t.accounts.len();
    let amount = (bal / 10).max(1);
    t.accounts[victim].1 -= amount;
    t.accounts[beneficiary].1 += amount;
    t.header.account_root = account_trie(&t.accounts).root();
    Some(t)
}

/// Shows the honest proposal to just enough followers to certify it, and a
/// conflicting (self-inflated) block to everyone else.
pub struct EquivocateNode {
    v: Validator,
    cfg: ValidatorConfig,
}

impl EquivocateNode {
    fn fork(&self, effects: Vec<Effect>) -> Vec<Effect> {
        if !self.v.leading() {
            return effects;
        }
        let sch = scheme(self.cfg.scheme);
        let mut out = Vec::new();
        for e in effects {
            let Effect::Broadcast {
                msg:
                    Msg::ProposedBlock {
                        round,
                        block,
                        leader_sig,
                    },
            } = e
            else {
                out.push(e);
                continue;
            };
            let Some(alt) = shift_balances(&block).map(|mut b| {
                // The fork claims an extra coin for its first account, so the
                // two proposals can never be reconciled.
                b.accounts[0].1 += 1;
                b.header.account_root = account_trie(&b.accounts).root();
                b
            }) else {
                out.push(Effect::Broadcast {
                    msg: Msg::ProposedBlock {
                        round,
                        block,
                        leader_sig,
                    },
                });
                continue;
            };
            let alt_sig = sch.sign(&self.v.keypair().secret, &alt.header.hash());
            out.push(Effect::Publish { block: alt.clone() });
            let me = self.v.slot();
            let honest_needed = quorum(self.cfg.n as usize) - 1;
            for (assigned, to) in (0..self.cfg.n).filter(|s| *s != me).enumerate() {
                let msg = if assigned < honest_needed {
                    Msg::ProposedBlock {
                        round,
                        block: block.clone(),
                        leader_sig: leader_sig.clone(),
                    }
                } else {
                    Msg::ProposedBlock {
                        round,
                        block: alt.clone(),
                        leader_sig: alt_sig.clone(),
                    }
                };
                out.push(Effect::Send { to, msg });
            }
        }
        out
    }
}

impl Node for EquivocateNode {
    fn strategy(&self) -> &'static str {
        "equivocate"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        // Ignore complaints from followers who saw the fork, so the inner
        // machine keeps collecting approvals for the certified branch.
        if self.v.leading() && matches!(msg, Msg::BlockNotApproved { .. }) {
            return Vec::new();
        }
        let out = self.v.on_msg(now, from, msg);
        self.fork(out)
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        let out = self.v.on_timer(now, kind);
        self.fork(out)
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        let out = self.v.on_notification(now, n, reg);
        self.fork(out)
    }
}

/// Runs its own leader machinery proposing blocks whose balance table moves
/// coins from the richest account to a beneficiary. Honest followers reject
/// the re-execution mismatch; the attack certifies only when enough
/// followers sign blindly.
pub struct TamperBalancesNode {
    v: Validator,
    cfg: ValidatorConfig,
    epoch_mark: u64,
    round: u32,
    block: Option<Block>,
    approvals: BTreeMap<u16, Approval>,
    committed: bool,
}

impl TamperBalancesNode {
    fn sch(&self) -> &'static dyn SignatureScheme {
        scheme(self.cfg.scheme)
    }

    fn propose(&mut self, now: u64, restart: bool) -> Vec<Effect> {
        let epoch = self.v.epoch();
        if self.epoch_mark != epoch {
            self.epoch_mark = epoch;
            self.round = 1;
            self.approvals.clear();
            self.committed = false;
            self.block = None;
        }
        let honest = self.v.build_candidate_block();
        let block = shift_balances(&honest).unwrap_or(honest);
        let hash = block.header.hash();
        let me = self.v.slot();
        let sig = self.sch().sign(&self.v.keypair().secret, &hash);
        self.approvals.clear();
        self.approvals.insert(
            me,
            Approval {
                validator: me,
                block_hash: hash,
                signature: sig.clone(),
            },
        );
        self.block = Some(block.clone());
        let mut out = Vec::new();
        if restart {
            out.push(Effect::Broadcast {
                msg: Msg::EpochRestart {
                    epoch,
                    round: self.round,
                },
            });
        }
        out.push(Effect::Publish {
            block: block.clone(),
        });
        out.push(Effect::Broadcast {
            msg: Msg::ProposedBlock {
                round: self.round,
                block,
                leader_sig: sig,
            },
        });
        out.push(Effect::Timer {
            at: now + 2 + 2 * self.cfg.tau,
            kind: TimerKind::ApprovalDeadline,
        });
        out
    }

    fn try_commit(&mut self) -> Vec<Effect> {
        if self.committed {
            return Vec::new();
        }
        let Some(block) = &self.block else {
            return Vec::new();
        };
        let hash = block.header.hash();
        let approvals: Vec<Approval> = self.approvals.values().cloned().collect();
        if approvals.len() < quorum(self.cfg.n as usize) {
            return Vec::new();
        }
        let Ok(checkpoint) = make_checkpoint(self.sch(), hash, &approvals, self.cfg.n) else {
            return Vec::new();
        };
        self.committed = true;
        let slot = self.v.slot();
        vec![Effect::Submit {
            tx: MainchainTx::Commit {
                slot,
                generation: self.v.roster_generation(slot),
                epoch: self.v.epoch(),
                round: self.round,
                checkpoint,
            },
        }]
    }

    /// Session duties for the dishonest tenure, served consistently from the
    /// tampered block (the attacker cannot do better: a proof against any
    /// other table would not verify against its own checkpoint).
    fn session_duty(&self, n: &Notification) -> Vec<Effect> {
        if !self.v.leading() || !self.committed {
            return Vec::new();
        }
        let Some(block) = &self.block else {
            return Vec::new();
        };
        match n {
            Notification::LeaderPathDemand { client, .. } => {
                match crate::chain::make_pop(client, block) {
                    Ok(pop) => vec![Effect::Submit {
                        tx: MainchainTx::SessionLeaderPath {
                            slot: self.v.slot(),
                            client: client.clone(),
                            pop,
                        },
                    }],
                    Err(_) => Vec::new(),
                }
            }
            Notification::SessionTxWindow { client, .. } => {
                let txs: Vec<CosignedTx> = block
                    .txs
                    .iter()
                    .filter(|tx| tx.sender == *client || tx.receiver == *client)
                    .map(|tx| CosignedTx {
                        tx: tx.clone(),
                        client_sig: None,
                        leader_sig: Some(
                            self.sch()
                                .sign(&self.v.keypair().secret, &tx.canonical_bytes()),
                        ),
                    })
                    .collect();
                vec![Effect::Submit {
                    tx: MainchainTx::SessionTxs {
                        party: SessionParty::Leader,
                        client: client.clone(),
                        txs,
                    },
                }]
            }
            _ => Vec::new(),
        }
    }
}

impl Node for TamperBalancesNode {
    fn strategy(&self) -> &'static str {
        "tamper_balances"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        if self.v.leading() {
            match &msg {
                Msg::BlockApproved(a) => {
                    let Some(block) = &self.block else {
                        return Vec::new();
                    };
                    let hash = block.header.hash();
                    if a.block_hash == hash
                        && (a.validator as usize) < self.cfg.n as usize
                        && self
                            .sch()
                            .verify(self.v.roster_key(a.validator), &hash, &a.signature)
                    {
                        self.approvals.insert(a.validator, a.clone());
                        return self.try_commit();
                    }
                    return Vec::new();
                }
                Msg::BlockNotApproved { .. } => return Vec::new(),
                _ => {}
            }
        }
        self.v.on_msg(now, from, msg)
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        if self.v.leading() {
            match kind {
                TimerKind::Propose => return self.propose(now, false),
                TimerKind::ApprovalDeadline => {
                    if self.epoch_mark == self.v.epoch() && !self.committed {
                        if self.round < self.cfg.max_rounds {
                            self.round += 1;
                            return self.propose(now, true);
                        }
                        return Vec::new();
                    }
                    // Fall through for stale wakeups from an earlier tenure.
                    return Vec::new();
                }
                _ => {}
            }
        }
        self.v.on_timer(now, kind)
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        let mut out = self.v.on_notification(now, n, reg);
        if self.v.leading() {
            // The inner machine never proposed, so keep its tenure silent
            // and add the wrapper's own session responses.
            out = strip_leading_output(out);
        }
        out.extend(self.session_duty(n));
        out
    }
}

/// Signs whatever proposal it is shown without validating, and never votes
/// against a leader or audits a commitment.
pub struct ApproveAnythingNode {
    v: Validator,
    cfg: ValidatorConfig,
}

impl ApproveAnythingNode {
    fn filter(effects: Vec<Effect>) -> Vec<Effect> {
        effects
            .into_iter()
            .filter(|e| {
                !matches!(
                    e,
                    Effect::Broadcast {
                        msg: Msg::VoteAgainstLeader { .. }
                    }
                ) && !matches!(
                    e,
                    Effect::Submit {
                        tx: MainchainTx::Challenge { .. }
                    }
                )
            })
            .collect()
    }
}

impl Node for ApproveAnythingNode {
    fn strategy(&self) -> &'static str {
        "approve_anything"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        if let (Sender::Validator(leader), Msg::ProposedBlock { block, .. }) = (&from, &msg) {
            let hash = block.header.hash();
            let sch = scheme(self.cfg.scheme);
            let approval = Approval {
                validator: self.v.slot(),
                block_hash: hash,
                signature: sch.sign(&self.v.keypair().secret, &hash),
            };
            return vec![
                Effect::Publish {
                    block: block.clone(),
                },
                Effect::Send {
                    to: *leader,
                    msg: Msg::BlockApproved(approval),
                },
            ];
        }
        Self::filter(self.v.on_msg(now, from, msg))
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        Self::filter(self.v.on_timer(now, kind))
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        Self::filter(self.v.on_notification(now, n, reg))
    }
}

/// Discards every client-facing transaction channel: direct submissions and
/// gossip alike. Transactions whose only contact is this validator are lost.
pub struct DropClientTxsNode {
    v: Validator,
}

impl Node for DropClientTxsNode {
    fn strategy(&self) -> &'static str {
        "drop_client_txs"
    }
    fn validator(&self) -> &Validator {
        &self.v
    }
    fn on_msg(&mut self, now: u64, from: Sender, msg: Msg) -> Vec<Effect> {
        if matches!(msg, Msg::TransferFunds(_) | Msg::TxRequest(_)) {
            return Vec::new();
        }
        self.v.on_msg(now, from, msg)
    }
    fn on_timer(&mut self, now: u64, kind: TimerKind) -> Vec<Effect> {
        self.v.on_timer(now, kind)
    }
    fn on_notification(&mut self, now: u64, n: &Notification, reg: &BlockRegistry) -> Vec<Effect> {
        self.v.on_notification(now, n, reg)
    }
}
