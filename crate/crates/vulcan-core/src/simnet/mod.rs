//! Deterministic discrete-event harness.
//!
//! Wires validators, clients, the parent-chain ledger and the checkpoint
//! contract into one seeded run. Every source of nondeterminism is derived
//! from the scenario seed, so two runs of the same scenario produce
//! byte-identical audit logs.
//!
//! Timing model:
//! - sidechain messages (validator↔validator, client↔validator) take one
//!   time unit;
//! - contract notifications are observed by everyone in the same instant
//!   they are emitted;
//! - parent-chain transactions finalize a fixed `delta` units after
//!   submission.
//!
//! Events at the same instant are ordered by band (deliveries and
//! parent-chain arrivals before timers) and then by scheduling order. The
//! band split is load-bearing: a commit or exit that lands exactly at a
//! deadline must be processed before the deadline timer fires.

pub mod audit;
pub mod clients;
pub mod metrics;
pub mod scenario;
pub mod strategy;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chain::{verify_checkpoint, AccountId, Checkpoint, ProofOfPossession};
use crate::contract::{Audience, Contract, ContractConfig, Outcome};
use crate::crypto::{scheme, SchemeKind};
use crate::ledger::Ledger;
use crate::merkle::{sha256, AccountTrie};
use crate::messages::{ChallengeKind, MainchainTx, Msg, Notification};
use crate::validator::{
    BalanceBook, BlockRegistry, Effect, Sender, TimerKind, Validator, ValidatorConfig,
};

pub use audit::{audit_text, AuditLog, AuditReport, TamperSpec};
pub use clients::{ClientActor, ClientCtx, ClientEffect};
pub use metrics::{EpochMetrics, Metrics, SiblingStats, Totals};
pub use scenario::{Scenario, ScenarioError, ScenarioKind, StrategyKind};
pub use strategy::{make_node, Node};


/// Derive a 32-byte seed for a named role from the master run seed.
pub fn derive_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut b = Vec::with_capacity(16 + label.len());
    b.extend_from_slice(&master.to_le_bytes());
    b.extend_from_slice(label.as_bytes());
    b.extend_from_slice(&index.to_le_bytes());
    sha256(&b)
}

/// Stable name for a signature scheme, used in metrics output.
pub fn scheme_name(kind: SchemeKind) -> &'static str {
    match kind {
        SchemeKind::HashFold => "hash-fold",
        SchemeKind::Bls => "bls",
    }
}

/// Deliveries and parent-chain arrivals run before timers at one instant.
const BAND_DELIVERY: u8 = 0;
const BAND_TIMER: u8 = 1;

#[derive(Debug)]
enum Payload {
    ToValidator { to: u16, from: Sender, msg: Msg },
    ToClient { idx: usize, msg: Msg },
    ValidatorTimer { slot: u16, kind: TimerKind },
    ContractTimer,
    LedgerSweep,
    TransferTick { idx: usize },
}

#[derive(Debug)]
struct Event {
    at: u64,
    band: u8,
    seq: u64,
    payload: Payload,
}

impl Event {
    fn key(&self) -> (u64, u8, u64) {
        (self.at, self.band, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// Per-client outcome of a finished run.
#[derive(Debug, Clone, Serialize)]
pub struct ClientSummary {
    pub id: String,
    pub endowment: u64,
    pub deposited: u64,
    pub withdrawn: u64,
    pub exit_paid: u64,
    /// The client's own belief of its sidechain balance.
    pub expected_final: u64,
    pub final_ledger_balance: u64,
    pub opened_session: bool,
    pub exited: bool,
}

/// Everything a finished simulation produces.
#[derive(Debug)]
pub struct RunResult {
    pub metrics: Metrics,
    /// The audit log, one JSON record per line.
    pub audit: String,
    /// Independent replay of the audit log.
    pub report: AuditReport,
    pub clients: Vec<ClientSummary>,
    pub initial_supply: u64,
    pub final_supply: u64,
    pub contract_holdings: u64,
    /// Set when every client exited: whether the contract drained to zero.
    pub residual_zero: Option<bool>,
}

impl RunResult {
    /// No invariant violations in the live run and a clean audit replay.
    pub fn clean(&self) -> bool {
        self.metrics.totals.violations.is_empty() && self.report.clean()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub size: u64,
    pub samples: u64,
    pub mean_siblings: f64,
    pub min_siblings: u64,
    pub max_siblings: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub scenario: String,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }
}

/// Output of [`run`], matching the scenario kind.
#[derive(Debug)]
pub enum ScenarioOutput {
    Simulation(Box<RunResult>),
    Sweep(SweepResult),
}

/// Run a scenario of either kind.
pub fn run(sc: &Scenario, tamper: Option<TamperSpec>) -> Result<ScenarioOutput, ScenarioError> {
    match sc.kind {
        ScenarioKind::Simulation => Ok(ScenarioOutput::Simulation(Box::new(run_simulation(
            sc, tamper,
        )?))),
        ScenarioKind::ProofSizeSweep => Ok(ScenarioOutput::Sweep(run_proof_size_sweep(sc)?)),
    }
}

/// Run a full protocol simulation.
///
/// `tamper` optionally flips one byte in one audit record, to exercise the
/// replay's tamper detection; it does not touch the live run.
pub fn run_simulation(
    sc: &Scenario,
    tamper: Option<TamperSpec>,
) -> Result<RunResult, ScenarioError> {
    sc.validate()?;
    Ok(Sim::new(sc, tamper).run())
}

/// Measure account-proof sibling counts across tree sizes.
pub fn run_proof_size_sweep(sc: &Scenario) -> Result<SweepResult, ScenarioError> {
    sc.validate()?;
    let params = sc.sweep.clone().unwrap_or_default();
    let mut sizes: Vec<u64> = (params.exponent_lo..=params.exponent_hi)
        .map(|e| 1u64 << e)
        .collect();
    sizes.extend(params.extra_sizes.iter().copied());
    sizes.sort_unstable();
    sizes.dedup();

    let mut rng = ChaCha8Rng::from_seed(derive_seed(sc.run.seed, "sweep", 0));
    let mut points = Vec::new();
    for &size in &sizes {
        let mut trie = AccountTrie::new();
        let mut keys: Vec<[u8; 32]> = Vec::with_capacity(size as usize);
        for _ in 0..size {
            let key: [u8; 32] = rng.gen();
            let value: u64 = rng.gen_range(1..=1_000_000);
            trie.set(&key, value);
            keys.push(key);
        }
        let samples = params.samples.max(1) as u64;
        let (mut sum, mut min, mut max) = (0u64, u64::MAX, 0u64);
        for _ in 0..samples {
            let key = keys[rng.gen_range(0..keys.len())];
            let path = trie.prove(&key).expect("sampled key is present");
            let len = path.siblings.len() as u64;
            sum += len;
            min = min.min(len);
            max = max.max(len);
        }
        points.push(SweepPoint {
            size,
            samples,
            mean_siblings: sum as f64 / samples as f64,
            min_siblings: min,
            max_siblings: max,
        });
    }
    Ok(SweepResult {
        scenario: sc.name.clone(),
        seed: sc.run.seed,
        points,
    })
}

/// Mean gap between one client's transfer attempts, from a per-mille rate.
fn tick_gap(rng: &mut ChaCha8Rng, rate_pm: u32) -> u64 {
    let span = (2000 / rate_pm.max(1)).max(1) as u64;
    rng.gen_range(1..=span)
}

struct Sim<'a> {
    sc: &'a Scenario,
    vcfg: ValidatorConfig,
    now: u64,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    nodes: Vec<Box<dyn Node>>,
    contract: Contract,
    ledger: Ledger,
    registry: BlockRegistry,
    book: BalanceBook,
    clients: Vec<ClientActor>,
    client_index: BTreeMap<AccountId, usize>,
    peer_ids: Vec<AccountId>,
    rng: ChaCha8Rng,
    log: AuditLog,
    epochs: Vec<EpochMetrics>,
    totals: Totals,
    sib: SiblingStats,
    rounds_by_epoch: BTreeMap<u64, u32>,
    armed_contract: BTreeSet<u64>,
    last_final_at: u64,
    removals_this_epoch: u32,
    initial_supply: u64,
    master_seed: u64,
    target_epoch: u64,
    exit_all_armed: bool,
    done: bool,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, tamper: Option<TamperSpec>) -> Self {
        let proto = &sc.protocol;
        let n = proto.n;
        let f = proto.fault_threshold();
        let kind = proto.scheme;
        let sch = scheme(kind);
        let seed = sc.run.seed;

        let vcfg = ValidatorConfig {
            n,
            f,
            delta: proto.delta,
            tau: proto.tau,
            t_max: proto.t_max,
            max_rounds: proto.max_rounds,
            n_max: proto.n_max,
            overlap: proto.overlap,
            scheme: kind,
        };
        let ccfg = ContractConfig {
            n,
            f,
            delta: proto.delta,
            wager: proto.wager,
            scheme: kind,
            validity_endpoint: proto.validity_endpoint,
        };

        let vkeys: Vec<_> = (0..n)
            .map(|i| sch.keygen(&derive_seed(seed, "validator", i as u64)))
            .collect();
        let roster: Vec<_> = vkeys.iter().map(|kp| kp.public.clone()).collect();

        let byz: BTreeMap<u16, StrategyKind> =
            sc.byzantine.iter().map(|b| (b.slot, b.strategy)).collect();
        let nodes: Vec<Box<dyn Node>> = vkeys
            .into_iter()
            .enumerate()
            .map(|(slot, kp)| {
                let v = Validator::new(vcfg.clone(), slot as u16, kp, roster.clone(), 0);
                make_node(byz.get(&(slot as u16)).copied(), v, vcfg.clone())
            })
            .collect();

        let clients: Vec<ClientActor> = (0..sc.clients.count)
            .map(|i| {
                let kp = sch.keygen(&derive_seed(seed, "client", i as u64));
                ClientActor::new(kp, (i as usize % n as usize) as u16, kind)
            })
            .collect();
        let client_index: BTreeMap<AccountId, usize> = clients
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let peer_ids: Vec<AccountId> = clients.iter().map(|c| c.id.clone()).collect();

        // Every participant gets a parent-chain account: clients their
        // endowment, validators a float for challenge wagers.
        let float = proto.wager.saturating_mul(10).saturating_add(10);
        let endowments = clients
            .iter()
            .map(|c| (c.id.0.clone(), sc.clients.endowment))
            .chain(roster.iter().map(|pk| (pk.0.clone(), float)));
        let ledger = Ledger::new(proto.delta, proto.wager, endowments);
        let initial_supply = ledger.total_supply();

        let contract = Contract::new(ccfg, roster.clone(), 0);
        let book = BalanceBook::new(roster.clone());

        let mut log = AuditLog::new(tamper);
        log.deploy(0, n, f, proto.delta, proto.wager, kind, &roster);

        Sim {
            sc,
            vcfg,
            now: 0,
            seq: 0,
            events: BinaryHeap::new(),
            nodes,
            contract,
            ledger,
            registry: BlockRegistry::new(),
            book,
            clients,
            client_index,
            peer_ids,
            rng: ChaCha8Rng::from_seed(derive_seed(seed, "workload", 0)),
            log,
            epochs: Vec::new(),
            totals: Totals::default(),
            sib: SiblingStats::default(),
            rounds_by_epoch: BTreeMap::new(),
            armed_contract: BTreeSet::new(),
            last_final_at: 0,
            removals_this_epoch: 0,
            initial_supply,
            master_seed: seed,
            target_epoch: sc.run.epochs,
            exit_all_armed: false,
            done: false,
        }
    }

    fn run(mut self) -> RunResult {
        self.start();
        while let Some(Reverse(ev)) = self.events.pop() {
            if self.done || ev.at > self.sc.run.max_units {
                break;
            }
            self.now = ev.at;
            self.dispatch(ev.payload);
            // A halted contract only waits for stragglers to exit.
            if !self.done
                && (self.exit_all_armed || self.contract.halted())
                && self.clients.iter().all(|c| c.exited)
            {
                self.done = true;
            }
        }
        self.finish()
    }

    fn start(&mut self) {
        let dep = self.sc.clients.initial_deposit;
        for idx in 0..self.clients.len() {
            if dep > 0 {
                let eff = self.clients[idx].deposit(dep);
                self.client_effects(idx, vec![eff]);
            }
        }
        self.arm_contract_timer();
        if self.sc.workload.tx_rate_pm > 0 {
            for idx in 0..self.clients.len() {
                let gap = tick_gap(&mut self.rng, self.sc.workload.tx_rate_pm);
                self.schedule(1 + gap, BAND_DELIVERY, Payload::TransferTick { idx });
            }
        }
    }

    fn schedule(&mut self, at: u64, band: u8, payload: Payload) {
        let at = at.max(self.now);
        self.seq += 1;
        self.events.push(Reverse(Event {
            at,
            band,
            seq: self.seq,
            payload,
        }));
    }

    fn dispatch(&mut self, payload: Payload) {
        match payload {
            Payload::ToValidator { to, from, msg } => {
                let out = self.nodes[to as usize].on_msg(self.now, from, msg);
                self.effects(to, out);
            }
            Payload::ToClient { idx, msg } => self.clients[idx].on_msg(&msg),
            Payload::ValidatorTimer { slot, kind } => {
                let out = self.nodes[slot as usize].on_timer(self.now, kind);
                self.effects(slot, out);
            }
            Payload::ContractTimer => {
                self.armed_contract.remove(&self.now);
                let out = self.contract.on_timer(self.now);
                self.outcomes(out);
                self.arm_contract_timer();
            }
            Payload::LedgerSweep => self.sweep_ledger(),
            Payload::TransferTick { idx } => self.transfer_tick(idx),
        }
    }

    fn transfer_tick(&mut self, idx: usize) {
        if self.done || self.contract.halted() {
            return;
        }
        if let Some(eff) =
            self.clients[idx].maybe_transfer(&mut self.rng, &self.peer_ids, &self.sc.workload)
        {
            self.client_effects(idx, vec![eff]);
        }
        let gap = tick_gap(&mut self.rng, self.sc.workload.tx_rate_pm);
        self.schedule(self.now + gap, BAND_DELIVERY, Payload::TransferTick { idx });
    }

    /// Apply newly finalized parent-chain transactions to the contract.
    fn sweep_ledger(&mut self) {
        for arrival in self.ledger.advance(self.now) {
            self.log.arrival(self.now, &arrival.tx, arrival.funded);
            let challenge_kind = match &arrival.tx {
                MainchainTx::Challenge {
                    kind: ChallengeKind::Checkpoint,
                    ..
                } => Some(true),
                MainchainTx::Challenge {
                    kind: ChallengeKind::NonCommit { .. },
                    ..
                } => Some(false),
                _ => None,
            };
            let session_open = matches!(&arrival.tx, MainchainTx::SessionOpen { .. });
            let funded = arrival.funded;
            let outs = self.contract.on_arrival(self.now, arrival.tx, funded);
            if let (Some(cp_kind), true) = (challenge_kind, funded) {
                let upheld = outs
                    .iter()
                    .any(|o| matches!(o, Outcome::ReplaceLeader { .. }));
                let rejected = outs.iter().any(|o| matches!(o, Outcome::Forfeit { .. }));
                match (upheld, rejected, cp_kind) {
                    (true, _, true) => self.totals.challenges_cp_upheld += 1,
                    (true, _, false) => self.totals.challenges_ncp_upheld += 1,
                    (false, true, true) => self.totals.challenges_cp_rejected += 1,
                    (false, true, false) => self.totals.challenges_ncp_rejected += 1,
                    _ => self.totals.challenges_stale += 1,
                }
            }
            if session_open
                && outs
                    .iter()
                    .any(|o| matches!(o, Outcome::Notify(_, Notification::LeaderPathDemand { .. })))
            {
                self.totals.sessions_opened += 1;
            }
            self.outcomes(outs);
        }
        self.arm_contract_timer();
    }

    fn arm_contract_timer(&mut self) {
        if let Some(at) = self.contract.next_deadline() {
            // A deadline can sit in the past while something else defers it
            // (an open session blocks term expiry). Poll again next unit
            // rather than spinning within this instant.
            let at = if at <= self.now { self.now + 1 } else { at };
            if self.armed_contract.insert(at) {
                self.schedule(at, BAND_TIMER, Payload::ContractTimer);
            }
        }
    }

    fn effects(&mut self, slot: u16, effects: Vec<Effect>) {
        for e in effects {
            match e {
                Effect::Send { to, msg } => {
                    self.schedule(
                        self.now + 1,
                        BAND_DELIVERY,
                        Payload::ToValidator {
                            to,
                            from: Sender::Validator(slot),
                            msg,
                        },
                    );
                }
                Effect::Broadcast { msg } => {
                    for to in 0..self.vcfg.n {
                        if to != slot {
                            self.schedule(
                                self.now + 1,
                                BAND_DELIVERY,
                                Payload::ToValidator {
                                    to,
                                    from: Sender::Validator(slot),
                                    msg: msg.clone(),
                                },
                            );
                        }
                    }
                }
                Effect::SendClient { client, msg } => {
                    if let Some(&idx) = self.client_index.get(&client) {
                        self.schedule(self.now + 1, BAND_DELIVERY, Payload::ToClient { idx, msg });
                    }
                }
                Effect::Submit { tx } => {
                    self.submit_mainchain(&format!("validator-{slot}"), tx);
                }
                Effect::Timer { at, kind } => {
                    let at = at.max(self.now);
                    self.schedule(at, BAND_TIMER, Payload::ValidatorTimer { slot, kind });
                }
                Effect::Publish { block } => {
                    let hash = block.header.hash();
                    self.log
                        .publish(self.now, &format!("validator-{slot}"), &hash);
                    self.registry.entry(hash).or_insert(block);
                }
            }
        }
    }

    fn client_effects(&mut self, idx: usize, effects: Vec<ClientEffect>) {
        for e in effects {
            match e {
                ClientEffect::Send { to, msg } => {
                    if matches!(msg, Msg::TransferFunds(_)) {
                        self.totals.txs_submitted += 1;
                    }
                    self.schedule(
                        self.now + 1,
                        BAND_DELIVERY,
                        Payload::ToValidator {
                            to,
                            from: Sender::Client,
                            msg,
                        },
                    );
                }
                ClientEffect::Submit { tx } => {
                    self.submit_mainchain(&format!("client-{idx}"), tx);
                }
            }
        }
    }

    fn record_pop(&mut self, pop: &ProofOfPossession) {
        self.sib.push(pop.path.siblings.len() as u64);
    }

    fn submit_mainchain(&mut self, entity: &str, tx: MainchainTx) {
        match &tx {
            MainchainTx::Withdraw { pop, .. } | MainchainTx::Exit { pop, .. } => {
                self.record_pop(pop)
            }
            MainchainTx::SessionOpen {
                prev: Some(pop), ..
            } => self.record_pop(pop),
            MainchainTx::Challenge {
                kind: ChallengeKind::Checkpoint,
                ..
            } => self.totals.challenges_cp_submitted += 1,
            MainchainTx::Challenge {
                kind: ChallengeKind::NonCommit { .. },
                ..
            } => self.totals.challenges_ncp_submitted += 1,
            _ => {}
        }
        self.log.submit(self.now, entity, &tx);
        let at = self.ledger.submit(self.now, tx);
        self.schedule(at, BAND_DELIVERY, Payload::LedgerSweep);
    }

    fn outcomes(&mut self, outs: Vec<Outcome>) {
        let mut finalized: Vec<(u64, Checkpoint)> = Vec::new();
        for o in outs {
            match o {
                Outcome::Notify(aud, note) => self.deliver(aud, note, &mut finalized),
                Outcome::Credit { to, amount } => {
                    if self.ledger.credit(&to, amount).is_err() {
                        self.violation(format!("credit of {amount} to unknown account"));
                    }
                }
                Outcome::Forfeit { amount } => self.ledger.forfeit(amount),
                Outcome::ReplaceLeader { slot } => self.replace_leader(slot),
            }
        }
        // Invariants run after the whole batch: credits later in the batch
        // (refunds, payouts) must land before conservation is checked.
        for (epoch, cp) in finalized {
            self.post_finalize_checks(epoch, &cp);
        }
    }

    fn deliver(
        &mut self,
        audience: Audience,
        note: Notification,
        finalized: &mut Vec<(u64, Checkpoint)>,
    ) {
        self.log.notify(self.now, &note);
        self.metrics_note(&note, finalized);
        self.book.on_notification(&note, &self.registry);
        match &audience {
            Audience::All | Audience::Validators => {
                for slot in 0..self.vcfg.n as usize {
                    let out = self.nodes[slot].on_notification(self.now, &note, &self.registry);
                    self.effects(slot as u16, out);
                }
            }
            Audience::Client(_) => {}
        }
        match &audience {
            Audience::All => {
                for idx in 0..self.clients.len() {
                    self.deliver_client(idx, &note);
                }
            }
            Audience::Client(id) => {
                if let Some(&idx) = self.client_index.get(id) {
                    self.deliver_client(idx, &note);
                }
            }
            Audience::Validators => {}
        }
    }

    fn deliver_client(&mut self, idx: usize, note: &Notification) {
        let ctx = ClientCtx {
            exit_all: self.exit_all_armed,
        };
        let pending_hash = self.contract.pending().map(|p| p.checkpoint.block_hash);
        let out = self.clients[idx].on_notification(
            note,
            &self.registry,
            &mut self.rng,
            &self.sc.workload,
            ctx,
            pending_hash,
        );
        self.client_effects(idx, out);
    }

    fn metrics_note(&mut self, note: &Notification, finalized: &mut Vec<(u64, Checkpoint)>) {
        match note {
            Notification::CommitReceived { epoch, round, .. } => {
                self.totals.commits_observed += 1;
                self.rounds_by_epoch.insert(*epoch, *round);
                // Reaching the target epoch's commit arms the drain: clients
                // exit against the block that is about to finalize.
                if self.sc.run.exit_all_at_end && *epoch >= self.target_epoch {
                    self.exit_all_armed = true;
                }
            }
            Notification::DepositReceived { amount, .. } => {
                self.totals.deposits += 1;
                self.totals.deposit_volume += amount;
            }
            Notification::WithdrawOk { amount, .. } => {
                self.totals.withdrawals_paid += 1;
                self.totals.withdrawal_volume += amount;
            }
            Notification::WithdrawNotOk { .. } => self.totals.withdrawals_rejected += 1,
            Notification::ClientExit { amount, .. } => {
                self.totals.exits_paid += 1;
                self.totals.exit_volume += amount;
            }
            Notification::SessionResolved { .. } => self.totals.sessions_resolved += 1,
            Notification::SessionRejected { .. } => self.totals.sessions_rejected += 1,
            Notification::MassExit => self.totals.mass_exit = true,
            Notification::Halted { .. } => self.totals.halted = true,
            Notification::EpochChanged {
                epoch, checkpoint, ..
            } => {
                if *epoch > 0 {
                    let block = self.registry.get(&checkpoint.block_hash);
                    self.log.finalized_block(self.now, *epoch, block);
                    self.totals.txs_finalized += block.map(|b| b.txs.len() as u64).unwrap_or(0);
                    self.totals.finalized_checkpoints += 1;
                    let round = self.rounds_by_epoch.get(epoch).copied().unwrap_or(0);
                    self.epochs.push(EpochMetrics {
                        epoch: *epoch,
                        round,
                        units: self.now - self.last_final_at,
                        finalized_at: self.now,
                        removals: self.removals_this_epoch,
                    });
                    self.removals_this_epoch = 0;
                    finalized.push((*epoch, checkpoint.clone()));
                    if *epoch >= self.target_epoch && !self.sc.run.exit_all_at_end {
                        self.done = true;
                    }
                }
                self.last_final_at = self.now;
            }
            _ => {}
        }
    }

    fn violation(&mut self, what: String) {
        self.totals
            .violations
            .push(format!("t={} {}", self.now, what));
    }

    /// Invariants checked every time a checkpoint finalizes.
    fn post_finalize_checks(&mut self, epoch: u64, cp: &Checkpoint) {
        let sch = scheme(self.sc.protocol.scheme);
        let keys = self.contract.roster_keys();
        if !verify_checkpoint(sch, cp, &keys) {
            self.violation(format!("invalid checkpoint finalized for epoch {epoch}"));
        }

        let supply = self.ledger.total_supply();
        if supply != self.initial_supply {
            self.violation(format!(
                "coin supply drifted: {supply} vs initial {}",
                self.initial_supply
            ));
        }
        let pool = self.ledger.pool();
        let expected = self.contract.total_balance()
            + self.ledger.forfeited()
            + self.contract.buffered_total();
        if pool != expected {
            self.violation(format!(
                "contract pool {pool} does not match holdings {expected} at epoch {epoch}"
            ));
        }

        // Every honest, live validator must hold the same finalized view.
        let mut digests: Vec<[u8; 32]> = Vec::new();
        for node in &self.nodes {
            if node.strategy() == "honest" && !node.validator().is_inert() {
                digests.push(node.validator().base_digest());
            }
        }
        if !digests.windows(2).all(|w| w[0] == w[1]) {
            self.violation(format!("honest validators diverged after epoch {epoch}"));
        }
    }

    fn replace_leader(&mut self, slot: u16) {
        let generation = self.contract.roster()[slot as usize].generation + 1;
        let seed = derive_seed(
            self.master_seed,
            "replacement",
            ((generation as u64) << 16) | slot as u64,
        );
        let kp = scheme(self.sc.protocol.scheme).keygen(&seed);
        let outs = self.contract.install_replacement(slot, kp.public.clone());
        // The roster-change notification must reach the old node (it goes
        // inert) and the balance book before the replacement is built.
        self.outcomes(outs);
        let (v, effects) = Validator::from_book(self.vcfg.clone(), slot, kp, &self.book, self.now);
        self.nodes[slot as usize] = make_node(None, v, self.vcfg.clone());
        self.effects(slot, effects);
        self.totals.leader_removals += 1;
        self.removals_this_epoch += 1;
    }

    fn finish(mut self) -> RunResult {
        self.totals.stalled = !self.done;
        self.totals.supply_drift = self.ledger.total_supply() as i128 - self.initial_supply as i128;
        self.totals.contract_holdings = self.contract.total_balance();
        self.totals.forfeited = self.ledger.forfeited();
        self.totals.pop_proofs = self.sib.count();
        self.totals.pop_sibling_mean = self.sib.mean();
        self.totals.pop_sibling_max = self.sib.max();

        let proto = &self.sc.protocol;
        let metrics = Metrics {
            scenario: self.sc.name.clone(),
            seed: self.sc.run.seed,
            scheme: scheme_name(proto.scheme).to_string(),
            n: proto.n,
            f: proto.fault_threshold(),
            delta: proto.delta,
            tau: proto.tau,
            ended_at: self.now,
            epochs: self.epochs,
            totals: self.totals,
        };
        let clients = self
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| ClientSummary {
                id: format!("client-{i}"),
                endowment: self.sc.clients.endowment,
                deposited: c.deposited,
                withdrawn: c.withdrawn,
                exit_paid: c.exit_paid.unwrap_or(0),
                expected_final: c.expected_final(),
                final_ledger_balance: self.ledger.balance(&c.id.0),
                opened_session: c.opened_session,
                exited: c.exited,
            })
            .collect();
        let final_supply = self.ledger.total_supply();
        let contract_holdings = self.contract.total_balance();
        let residual_zero = self.contract.execution_end_residual_zero;
        let audit = self.log.into_text();
        let report = audit_text(&audit);
        RunResult {
            metrics,
            audit,
            report,
            clients,
            initial_supply: self.initial_supply,
            final_supply,
            contract_holdings,
            residual_zero,
        }
    }
}
