//! Append-only audit log and an independent auditor that replays it.
//!
//! Every run emits one JSON record per line. Records carry a digest over
//! their semantic content, and records that a third party would need to
//! re-derive the chain state (finalized blocks, checkpoints, roster changes,
//! balance-moving notifications) carry the full payload in hex. The auditor
//! below rebuilds balances, Merkle roots, and quorum certificates from the
//! log alone and reports any inconsistency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::{tag_ok, AccountId, Block, Checkpoint};
use crate::codec::{self, put_bytes, Reader};
use crate::crypto::{scheme, PublicKey, SchemeKind};
use crate::merkle::{sha256, AccountTrie, TxTree, ZERO_DIGEST};
use crate::messages::{ChallengeKind, MainchainTx, Notification, SessionParty};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub t: u64,
    pub entity: String,
    pub kind: String,
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

/// Deliberately corrupt one record while writing the log, to exercise the
/// auditor and the CLI's audit-failure exit path.
#[derive(Debug, Clone)]
pub struct TamperSpec {
    /// Record kind to target, e.g. "finalizedBlock".
    pub kind: String,
    /// Which occurrence of that kind to corrupt (1-based).
    pub occurrence: usize,
    /// Payload byte to flip.
    pub byte: usize,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    lines: Vec<String>,
    pub tamper: Option<TamperSpec>,
    kind_counts: BTreeMap<String, usize>,
}

fn scheme_byte(kind: SchemeKind) -> u8 {
    match kind {
        SchemeKind::HashFold => 0,
        SchemeKind::Bls => 1,
    }
}

fn scheme_from_byte(b: u8) -> Option<SchemeKind> {
    match b {
        0 => Some(SchemeKind::HashFold),
        1 => Some(SchemeKind::Bls),
        _ => None,
    }
}

fn put_client(buf: &mut Vec<u8>, client: &AccountId) {
    put_bytes(buf, &client.0);
}

fn client_amount(client: &AccountId, amount: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    put_client(&mut buf, client);
    buf.extend_from_slice(&amount.to_le_bytes());
    buf
}

/// Compact canonical bytes identifying a parent-chain transaction.
fn mainchain_tx_bytes(tx: &MainchainTx) -> Vec<u8> {
    let mut buf = Vec::new();
    match tx {
        MainchainTx::Deposit { client, amount } => {
            buf.push(1);
            put_client(&mut buf, client);
            buf.extend_from_slice(&amount.to_le_bytes());
        }
        MainchainTx::Commit {
            slot,
            generation,
            epoch,
            round,
            checkpoint,
        } => {
            buf.push(2);
            buf.extend_from_slice(&slot.to_le_bytes());
            buf.extend_from_slice(&generation.to_le_bytes());
            buf.extend_from_slice(&epoch.to_le_bytes());
            buf.extend_from_slice(&round.to_le_bytes());
            buf.extend_from_slice(&codec::checkpoint_bytes(checkpoint));
        }
        MainchainTx::Withdraw {
            client,
            amount,
            pop,
        } => {
            buf.push(3);
            put_client(&mut buf, client);
            buf.extend_from_slice(&amount.to_le_bytes());
            buf.extend_from_slice(&pop.header.hash());
        }
        MainchainTx::Exit { client, pop } => {
            buf.push(4);
            put_client(&mut buf, client);
            buf.extend_from_slice(&pop.balance.to_le_bytes());
            buf.extend_from_slice(&pop.header.hash());
        }
        MainchainTx::Challenge { payer, kind } => {
            buf.push(5);
            put_bytes(&mut buf, payer);
            match kind {
                ChallengeKind::Checkpoint => buf.push(0),
                ChallengeKind::NonCommit {
                    epoch,
                    slot,
                    generation,
                    ..
                } => {
                    buf.push(1);
                    buf.extend_from_slice(&epoch.to_le_bytes());
                    buf.extend_from_slice(&slot.to_le_bytes());
                    buf.extend_from_slice(&generation.to_le_bytes());
                }
            }
        }
        MainchainTx::SessionOpen { client, prev } => {
            buf.push(6);
            put_client(&mut buf, client);
            match prev {
                Some(pop) => {
                    buf.push(1);
                    buf.extend_from_slice(&pop.header.hash());
                }
                None => buf.push(0),
            }
        }
        MainchainTx::SessionLeaderPath { slot, client, pop } => {
            buf.push(7);
            buf.extend_from_slice(&slot.to_le_bytes());
            put_client(&mut buf, client);
            buf.extend_from_slice(&pop.balance.to_le_bytes());
            buf.extend_from_slice(&pop.header.hash());
        }
        MainchainTx::SessionTxs { party, client, txs } => {
            buf.push(8);
            buf.push(match party {
                SessionParty::Client => 0,
                SessionParty::Leader => 1,
            });
            put_client(&mut buf, client);
            buf.extend_from_slice(&(txs.len() as u32).to_le_bytes());
            for ct in txs {
                buf.extend_from_slice(&ct.tx.hash());
            }
        }
    }
    buf
}

/// (digest input, optional replayable payload) for a notification record.
fn notification_bytes(n: &Notification) -> (Vec<u8>, Option<Vec<u8>>) {
    match n {
        Notification::DepositReceived { client, amount }
        | Notification::WithdrawOk { client, amount }
        | Notification::ClientExit { client, amount } => {
            let b = client_amount(client, *amount);
            (b.clone(), Some(b))
        }
        Notification::CannotDeposit { client, amount }
        | Notification::WithdrawNotOk { client, amount } => (client_amount(client, *amount), None),
        Notification::CommitReceived {
            epoch,
            round,
            checkpoint,
        } => {
            let mut b = Vec::new();
            b.extend_from_slice(&epoch.to_le_bytes());
            b.extend_from_slice(&round.to_le_bytes());
            b.extend_from_slice(&checkpoint.hash());
            (b, None)
        }
        Notification::EpochChanged {
            epoch,
            checkpoint,
            next_epoch,
        } => {
            let mut b = Vec::new();
            b.extend_from_slice(&epoch.to_le_bytes());
            b.extend_from_slice(&next_epoch.to_le_bytes());
            b.extend_from_slice(&codec::checkpoint_bytes(checkpoint));
            (b.clone(), Some(b))
        }
        Notification::ChallengeValid {
            epoch,
            slot,
            generation,
            replacement,
        } => {
            let mut b = Vec::new();
            b.extend_from_slice(&epoch.to_le_bytes());
            b.extend_from_slice(&slot.to_le_bytes());
            b.extend_from_slice(&generation.to_le_bytes());
            put_bytes(&mut b, &replacement.0);
            (b.clone(), Some(b))
        }
        Notification::ChallengeRejected {
            epoch,
            new_deadline,
        } => {
            let mut b = Vec::new();
            b.extend_from_slice(&epoch.to_le_bytes());
            b.extend_from_slice(&new_deadline.to_le_bytes());
            (b, None)
        }
        Notification::LeaderPathDemand { client, deadline }
        | Notification::SessionTxWindow { client, deadline } => {
            (client_amount(client, *deadline), None)
        }
        Notification::SessionResolved { client, recovered } => {
            let b = client_amount(client, *recovered);
            (b.clone(), Some(b))
        }
        Notification::SessionRejected { client } => {
            let mut b = Vec::new();
            put_client(&mut b, client);
            (b, None)
        }
        Notification::MassExit => (b"mass-exit".to_vec(), None),
        Notification::Halted { residual_zero } => (vec![*residual_zero as u8], None),
    }
}

impl AuditLog {
    pub fn new(tamper: Option<TamperSpec>) -> Self {
        AuditLog {
            lines: Vec::new(),
            tamper,
            kind_counts: BTreeMap::new(),
        }
    }

    fn push(&mut self, t: u64, entity: &str, kind: &str, payload: &[u8], data: Option<Vec<u8>>) {
        let mut data = data;
        let count = self.kind_counts.entry(kind.to_string()).or_insert(0);
        *count += 1;
        if let (Some(spec), Some(bytes)) = (&self.tamper, data.as_mut()) {
            if spec.kind == kind && *count == spec.occurrence && !bytes.is_empty() {
                let i = spec.byte % bytes.len();
                bytes[i] ^= 0x01;
            }
        }
        let record = AuditRecord {
            t,
            entity: entity.to_string(),
            kind: kind.to_string(),
            digest: hex::encode(sha256(payload)),
            data: data.map(hex::encode),
        };
        self.lines
            .push(serde_json::to_string(&record).expect("record serializes"));
    }

    /// First record of every run: committee parameters and the initial keys.
    #[allow(clippy::too_many_arguments)] // one field per deployment parameter
    pub fn deploy(
        &mut self,
        t: u64,
        n: u16,
        f: u16,
        delta: u64,
        wager: u64,
        kind: SchemeKind,
        roster: &[PublicKey],
    ) {
        let mut b = Vec::new();
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&f.to_le_bytes());
        b.extend_from_slice(&delta.to_le_bytes());
        b.extend_from_slice(&wager.to_le_bytes());
        b.push(scheme_byte(kind));
        b.extend_from_slice(&(roster.len() as u16).to_le_bytes());
        for pk in roster {
            put_bytes(&mut b, &pk.0);
        }
        self.push(t, "contract", "deploy", &b.clone(), Some(b));
    }

    pub fn submit(&mut self, t: u64, entity: &str, tx: &MainchainTx) {
        let b = mainchain_tx_bytes(tx);
        self.push(t, entity, &format!("submit:{}", tx.kind()), &b, None);
    }

    pub fn arrival(&mut self, t: u64, tx: &MainchainTx, funded: bool) {
        let mut b = mainchain_tx_bytes(tx);
        b.push(funded as u8);
        self.push(t, "ledger", &format!("mainchain:{}", tx.kind()), &b, None);
    }

    pub fn notify(&mut self, t: u64, n: &Notification) {
        let (payload, data) = notification_bytes(n);
        self.push(
            t,
            "contract",
            &format!("notify:{}", n.kind()),
            &payload,
            data,
        );
    }

    /// Body of a block whose checkpoint just survived its pending term.
    pub fn finalized_block(&mut self, t: u64, epoch: u64, block: Option<&Block>) {
        match block {
            Some(block) => {
                let mut b = Vec::new();
                b.extend_from_slice(&epoch.to_le_bytes());
                b.extend_from_slice(&codec::block_bytes(block));
                self.push(t, "registry", "finalizedBlock", &b.clone(), Some(b));
            }
            None => {
                self.push(
                    t,
                    "registry",
                    "finalizedBlockMissing",
                    &epoch.to_le_bytes(),
                    None,
                );
            }
        }
    }

    pub fn publish(&mut self, t: u64, entity: &str, block_hash: &[u8; 32]) {
        self.push(t, entity, "publish", block_hash, None);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn into_text(self) -> String {
        let mut text = self.lines.join("\n");
        text.push('\n');
        text
    }
}

/// Outcome of replaying an audit log.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub records: usize,
    pub epochs_finalized: u64,
    pub deposits_total: u64,
    pub payouts_total: u64,
    /// Sum of balances still held by the contract per the replay.
    pub final_holdings: u64,
    /// deposits - payouts - holdings; zero when money is conserved.
    pub residual: i128,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty() && self.residual == 0
    }
}

#[derive(Debug, Clone)]
enum WindowOp {
    Deposit(AccountId, u64),
    Payout(AccountId, u64),
    Exit(AccountId, u64),
}

struct Auditor {
    scheme: Option<SchemeKind>,
    n: u16,
    roster: Vec<PublicKey>,
    base: BTreeMap<AccountId, u64>,
    window: Vec<WindowOp>,
    prev_block_hash: [u8; 32],
    last_cp_hash: [u8; 32],
    last_epoch: u64,
    /// Set by an epochChanged record; consumed by the following
    /// finalizedBlock record.
    awaiting_block: Option<(u64, Checkpoint)>,
    report: AuditReport,
}

impl Auditor {
    fn new() -> Self {
        Auditor {
            scheme: None,
            n: 0,
            roster: Vec::new(),
            base: BTreeMap::new(),
            window: Vec::new(),
            prev_block_hash: ZERO_DIGEST,
            last_cp_hash: ZERO_DIGEST,
            last_epoch: 0,
            awaiting_block: None,
            report: AuditReport {
                records: 0,
                epochs_finalized: 0,
                deposits_total: 0,
                payouts_total: 0,
                final_holdings: 0,
                residual: 0,
                violations: Vec::new(),
            },
        }
    }

    fn flag(&mut self, msg: String) {
        self.report.violations.push(msg);
    }

    fn apply_window(&mut self) {
        let ops = std::mem::take(&mut self.window);
        for op in ops {
            match op {
                WindowOp::Deposit(client, amount) => {
                    *self.base.entry(client).or_insert(0) += amount;
                }
                WindowOp::Payout(client, amount) => {
                    let bal = self.base.entry(client.clone()).or_insert(0);
                    if *bal < amount {
                        let had = *bal;
                        *bal = 0;
                        self.flag(format!(
                            "withdrawal of {amount} exceeds replayed balance {had} for client {}",
                            hex::encode(&client.0)
                        ));
                    } else {
                        *bal -= amount;
                    }
                }
                WindowOp::Exit(client, amount) => {
                    let had = self.base.remove(&client).unwrap_or(0);
                    if had != amount {
                        self.flag(format!(
                            "exit paid {amount} but replayed balance was {had} for client {}",
                            hex::encode(&client.0)
                        ));
                    }
                }
            }
        }
    }

    /// Re-execute a finalized block's transactions over the replayed state.
    fn reexecute(&mut self, epoch: u64, block: &Block) {
        let Some(kind) = self.scheme else {
            self.flag("finalized block before deploy record".into());
            return;
        };
        let sch = scheme(kind);
        let mut state = self.base.clone();
        let mut seen = std::collections::BTreeSet::new();
        for (i, tx) in block.txs.iter().enumerate() {
            let ok = tx.amount > 0
                && tx.sender != tx.receiver
                && tag_ok(epoch, tx.epoch_tag)
                && seen.insert(tx.signature.clone())
                && sch.verify(
                    &tx.sender.as_public_key(),
                    &tx.signing_bytes(),
                    &tx.signature,
                )
                && state.get(&tx.sender).copied().unwrap_or(0) >= tx.amount
                && state.contains_key(&tx.receiver);
            if !ok {
                self.flag(format!(
                    "finalized block {epoch} contains inapplicable tx #{i}"
                ));
                continue;
            }
            *state.get_mut(&tx.sender).unwrap() -= tx.amount;
            *state.get_mut(&tx.receiver).unwrap() += tx.amount;
        }
        let claimed: BTreeMap<AccountId, u64> = block.accounts.iter().cloned().collect();
        if claimed.len() != block.accounts.len() {
            self.flag(format!("finalized block {epoch} lists duplicate accounts"));
        }
        if claimed != state {
            self.flag(format!(
                "finalized block {epoch} balance table does not match re-execution"
            ));
        }
        self.base = claimed;
    }

    fn fold_epoch(&mut self, epoch: u64, cp: &Checkpoint, block: Option<&Block>) {
        if let Some(block) = block {
            let header = &block.header;
            if header.epoch != epoch {
                self.flag(format!(
                    "block header epoch {} under checkpoint for {epoch}",
                    header.epoch
                ));
            }
            if header.prev_block_hash != self.prev_block_hash {
                self.flag(format!(
                    "finalized block {epoch} does not extend the previous block"
                ));
            }
            if header.last_checkpoint != self.last_cp_hash {
                self.flag(format!(
                    "finalized block {epoch} cites the wrong checkpoint"
                ));
            }
            let leaves: Vec<_> = block.txs.iter().map(|tx| tx.hash()).collect();
            let tx_root = TxTree::build(&leaves).root();
            if tx_root != header.tx_root {
                self.flag(format!("finalized block {epoch} transaction root mismatch"));
            }
            let mut trie = AccountTrie::new();
            for (acct, bal) in &block.accounts {
                trie.set(&acct.0, *bal);
            }
            if trie.root() != header.account_root {
                self.flag(format!("finalized block {epoch} account root mismatch"));
            }
            if cp.block_hash != header.hash() {
                self.flag(format!(
                    "checkpoint for epoch {epoch} names a different block"
                ));
            }
            match self.scheme {
                Some(kind) => {
                    if !crate::chain::verify_checkpoint(scheme(kind), cp, &self.roster) {
                        self.flag(format!(
                            "checkpoint for epoch {epoch} fails quorum verification"
                        ));
                    }
                }
                None => self.flag("checkpoint before deploy record".into()),
            }
            self.reexecute(epoch, block);
            self.prev_block_hash = header.hash();
        } else if epoch != 0 {
            self.flag(format!(
                "epoch {epoch} finalized without a retrievable block"
            ));
        }
        // Blocks cite the zero digest until the first real checkpoint exists;
        // the genesis close carries only a sentinel.
        if epoch > 0 {
            self.last_cp_hash = cp.hash();
            self.report.epochs_finalized += 1;
        }
        self.last_epoch = epoch;
        self.apply_window();
    }

    fn record(&mut self, line: &str, lineno: usize) {
        let rec: AuditRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                self.flag(format!("line {lineno}: unparseable record: {e}"));
                return;
            }
        };
        self.report.records += 1;
        let data = match rec.data.as_deref().map(hex::decode).transpose() {
            Ok(d) => d,
            Err(_) => {
                self.flag(format!("line {lineno}: bad hex payload"));
                return;
            }
        };
        // A payload-bearing record's digest must match its payload.
        if let Some(bytes) = &data {
            if hex::encode(sha256(bytes)) != rec.digest {
                self.flag(format!(
                    "line {lineno}: digest does not match payload ({})",
                    rec.kind
                ));
            }
        }
        if self.awaiting_block.is_some()
            && rec.kind != "finalizedBlock"
            && rec.kind != "finalizedBlockMissing"
        {
            let (epoch, cp) = self.awaiting_block.take().unwrap();
            self.flag(format!("epoch {epoch} finalized without a block record"));
            self.fold_epoch(epoch, &cp, None);
        }
        let mut r = data.as_deref().map(Reader::new);
        match rec.kind.as_str() {
            "deploy" => {
                let Some(r) = r.as_mut() else {
                    return self.flag(format!("line {lineno}: deploy record lacks payload"));
                };
                let mut parse = || -> Result<(u16, SchemeKind, Vec<PublicKey>), ()> {
                    let n = r.u16().map_err(|_| ())?;
                    let _f = r.u16().map_err(|_| ())?;
                    let _delta = r.u64().map_err(|_| ())?;
                    let _wager = r.u64().map_err(|_| ())?;
                    let kind = scheme_from_byte(r.u8().map_err(|_| ())?).ok_or(())?;
                    let count = r.u16().map_err(|_| ())?;
                    let mut keys = Vec::new();
                    for _ in 0..count {
                        keys.push(PublicKey(r.bytes().map_err(|_| ())?));
                    }
                    Ok((n, kind, keys))
                };
                match parse() {
                    Ok((n, kind, keys)) => {
                        self.n = n;
                        self.scheme = Some(kind);
                        self.roster = keys;
                    }
                    Err(()) => self.flag(format!("line {lineno}: malformed deploy record")),
                }
            }
            "notify:depositReceived" | "notify:withdrawOK" | "notify:clientExit" => {
                let Some(r) = r.as_mut() else {
                    return self.flag(format!("line {lineno}: {} lacks payload", rec.kind));
                };
                let parsed = (|| -> Result<(AccountId, u64), ()> {
                    let client = AccountId(r.bytes().map_err(|_| ())?.to_vec());
                    let amount = r.u64().map_err(|_| ())?;
                    Ok((client, amount))
                })();
                match parsed {
                    Ok((client, amount)) => match rec.kind.as_str() {
                        "notify:depositReceived" => {
                            self.report.deposits_total += amount;
                            self.window.push(WindowOp::Deposit(client, amount));
                        }
                        "notify:withdrawOK" => {
                            self.report.payouts_total += amount;
                            self.window.push(WindowOp::Payout(client, amount));
                        }
                        _ => {
                            self.report.payouts_total += amount;
                            self.window.push(WindowOp::Exit(client, amount));
                        }
                    },
                    Err(()) => self.flag(format!("line {lineno}: malformed {}", rec.kind)),
                }
            }
            "notify:challengeValid" => {
                let Some(r) = r.as_mut() else {
                    return self.flag(format!("line {lineno}: challengeValid lacks payload"));
                };
                let parsed = (|| -> Result<(u16, PublicKey), ()> {
                    let _epoch = r.u64().map_err(|_| ())?;
                    let slot = r.u16().map_err(|_| ())?;
                    let _generation = r.u32().map_err(|_| ())?;
                    let pk = PublicKey(r.bytes().map_err(|_| ())?);
                    Ok((slot, pk))
                })();
                match parsed {
                    Ok((slot, pk)) => {
                        if (slot as usize) < self.roster.len() {
                            self.roster[slot as usize] = pk;
                        } else {
                            self.flag(format!(
                                "line {lineno}: replacement for unknown slot {slot}"
                            ));
                        }
                    }
                    Err(()) => self.flag(format!("line {lineno}: malformed challengeValid")),
                }
            }
            "notify:epochChanged" => {
                let Some(r) = r.as_mut() else {
                    return self.flag(format!("line {lineno}: epochChanged lacks payload"));
                };
                let parsed = (|| -> Result<(u64, Checkpoint), ()> {
                    let epoch = r.u64().map_err(|_| ())?;
                    let _next = r.u64().map_err(|_| ())?;
                    let cp = codec::read_checkpoint(r).map_err(|_| ())?;
                    Ok((epoch, cp))
                })();
                match parsed {
                    Ok((epoch, cp)) => {
                        if epoch == 0 {
                            self.fold_epoch(0, &cp, None);
                        } else {
                            self.awaiting_block = Some((epoch, cp));
                        }
                    }
                    Err(()) => self.flag(format!("line {lineno}: malformed epochChanged")),
                }
            }
            "finalizedBlock" => {
                let Some((epoch, cp)) = self.awaiting_block.take() else {
                    return self.flag(format!("line {lineno}: block record without epochChanged"));
                };
                let Some(r) = r.as_mut() else {
                    return self.flag(format!("line {lineno}: finalizedBlock lacks payload"));
                };
                let parsed = (|| -> Result<(u64, Block), ()> {
                    let e = r.u64().map_err(|_| ())?;
                    let block = codec::read_block(r).map_err(|_| ())?;
                    Ok((e, block))
                })();
                match parsed {
                    Ok((e, block)) => {
                        if e != epoch {
                            self.flag(format!(
                                "line {lineno}: block record for epoch {e} after epochChanged {epoch}"
                            ));
                        }
                        self.fold_epoch(epoch, &cp, Some(&block));
                    }
                    Err(()) => {
                        self.flag(format!("line {lineno}: undecodable finalized block"));
                        self.fold_epoch(epoch, &cp, None);
                    }
                }
            }
            "finalizedBlockMissing" => {
                if let Some((epoch, cp)) = self.awaiting_block.take() {
                    self.flag(format!(
                        "epoch {epoch} finalized but its block was never published"
                    ));
                    self.fold_epoch(epoch, &cp, None);
                }
            }
            _ => {}
        }
    }

    fn finish(mut self) -> AuditReport {
        if let Some((epoch, cp)) = self.awaiting_block.take() {
            self.flag(format!("epoch {epoch} finalized without a block record"));
            self.fold_epoch(epoch, &cp, None);
        }
        self.apply_window();
        self.report.final_holdings = self.base.values().sum();
        self.report.residual = self.report.deposits_total as i128
            - self.report.payouts_total as i128
            - self.report.final_holdings as i128;
        self.report
    }
}

/// Replay a full audit log and cross-check every finalized state transition.
pub fn audit_text(text: &str) -> AuditReport {
    let mut auditor = Auditor::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        auditor.record(line, i + 1);
    }
    auditor.finish()
}
