//! Scenario configuration: the JSON schema consumed by the simulator and the
//! CLI, plus built-in templates.

use serde::{Deserialize, Serialize};

use crate::crypto::SchemeKind;

/// Top-level scenario file. Unknown fields are rejected so typos surface as
/// configuration errors instead of silently running defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default)]
    pub clients: ClientParams,
    #[serde(default)]
    pub workload: WorkloadParams,
    #[serde(default)]
    pub byzantine: Vec<ByzantineSpec>,
    /// Permit more faulty slots than the nominal threshold. Required for
    /// scenarios that model a fully corrupt committee.
    #[serde(default)]
    pub allow_over_threshold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Simulation,
    ProofSizeSweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// Validator committee size.
    pub n: u16,
    /// Fault threshold; defaults to (n - 1) / 2 when omitted.
    pub f: Option<u16>,
    /// Mainchain finalization delay in time units.
    pub delta: u64,
    /// Sidechain timeout budget in time units.
    pub tau: u64,
    /// Maximum transactions per block.
    pub n_max: usize,
    /// Minimum collection phase length in time units.
    pub t_max: u64,
    /// Proposal rounds a leader may attempt within one epoch.
    pub max_rounds: u32,
    /// Collect transactions for the next epoch while a checkpoint is pending.
    pub overlap: bool,
    /// Stake burned by a challenger whose challenge is rejected.
    pub wager: u64,
    pub scheme: SchemeKind,
    /// Epoch after which the contract refuses further checkpoints.
    pub validity_endpoint: Option<u64>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            n: 5,
            f: None,
            delta: 10,
            tau: 1,
            n_max: 200,
            t_max: 4,
            max_rounds: 3,
            overlap: true,
            wager: 5,
            scheme: SchemeKind::HashFold,
            validity_endpoint: None,
        }
    }
}

impl ProtocolParams {
    pub fn fault_threshold(&self) -> u16 {
        self.f.unwrap_or((self.n.saturating_sub(1)) / 2)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunParams {
    pub seed: u64,
    /// Number of epochs to finalize before stopping.
    pub epochs: u64,
    /// Hard stop: abandon the run (and mark it stalled) past this many units.
    pub max_units: u64,
    /// Have every client exit once the target epoch's block is committed.
    pub exit_all_at_end: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            seed: 42,
            epochs: 10,
            max_units: 200_000,
            exit_all_at_end: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientParams {
    pub count: u32,
    /// Mainchain coins each client starts with.
    pub endowment: u64,
    /// Deposit each client makes during the genesis window.
    pub initial_deposit: u64,
}

impl Default for ClientParams {
    fn default() -> Self {
        ClientParams {
            count: 8,
            endowment: 1_000,
            initial_deposit: 100,
        }
    }
}

/// Workload intensities. All rates are integers in per-mille so scenario
/// files stay free of floating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadParams {
    /// Per-client chance (per-mille) of initiating a transfer each unit.
    pub tx_rate_pm: u32,
    /// Transfer amounts are drawn uniformly from [1, tx_amount_max].
    pub tx_amount_max: u64,
    /// Per-client chance (per-mille) of requesting a withdrawal at each
    /// checkpoint commitment.
    pub withdraw_rate_pm: u32,
    /// Withdrawal size cap as a per-mille fraction of the client's balance.
    pub withdraw_max_pm: u32,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            tx_rate_pm: 60,
            tx_amount_max: 5,
            withdraw_rate_pm: 80,
            withdraw_max_pm: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineSpec {
    pub slot: u16,
    pub strategy: StrategyKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SilentLeader,
    WithholdAndCommit,
    Equivocate,
    TamperBalances,
    ApproveAnything,
    DropClientTxs,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::SilentLeader => "silent_leader",
            StrategyKind::WithholdAndCommit => "withhold_and_commit",
            StrategyKind::Equivocate => "equivocate",
            StrategyKind::TamperBalances => "tamper_balances",
            StrategyKind::ApproveAnything => "approve_anything",
            StrategyKind::DropClientTxs => "drop_client_txs",
        }
    }
}

/// Parameters for the account-proof size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    /// Account-set sizes expressed as powers of two: 2^lo ..= 2^hi.
    pub exponent_lo: u32,
    pub exponent_hi: u32,
    /// Additional explicit sizes to measure.
    pub extra_sizes: Vec<u64>,
    /// Proofs sampled per size.
    pub samples: u32,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            exponent_lo: 6,
            exponent_hi: 14,
            extra_sizes: vec![2_000, 10_000],
            samples: 32,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unsupported scenario version {0} (expected 1)")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("malformed scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("scenario serializes");
        out.push('\n');
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != 1 {
            return Err(ScenarioError::Version(self.version));
        }
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        let p = &self.protocol;
        if p.n == 0 {
            return bad("protocol.n must be at least 1".into());
        }
        if p.delta == 0 {
            return bad("protocol.delta must be at least 1".into());
        }
        if p.n_max == 0 {
            return bad("protocol.n_max must be at least 1".into());
        }
        if p.max_rounds == 0 {
            return bad("protocol.max_rounds must be at least 1".into());
        }
        let threshold = (p.n - 1) / 2;
        if let Some(f) = p.f {
            if f > threshold && !self.allow_over_threshold {
                return bad(format!(
                    "protocol.f = {f} exceeds (n - 1) / 2 = {threshold}; set allow_over_threshold to model it anyway"
                ));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.byzantine {
            if b.slot >= p.n {
                return bad(format!(
                    "byzantine slot {} out of range for n = {}",
                    b.slot, p.n
                ));
            }
            if !seen.insert(b.slot) {
                return bad(format!("byzantine slot {} listed twice", b.slot));
            }
        }
        if self.byzantine.len() > self.protocol.fault_threshold() as usize
            && !self.allow_over_threshold
        {
            return bad(format!(
                "{} byzantine slots exceed the fault threshold f = {}; set allow_over_threshold to model it anyway",
                self.byzantine.len(),
                self.protocol.fault_threshold()
            ));
        }
        if self.kind == ScenarioKind::Simulation {
            if self.run.epochs == 0 {
                return bad("run.epochs must be at least 1".into());
            }
            if self.clients.count == 0 {
                return bad("clients.count must be at least 1".into());
            }
            if self.clients.endowment < self.clients.initial_deposit {
                return bad("clients.endowment must cover clients.initial_deposit".into());
            }
        }
        if self.kind == ScenarioKind::ProofSizeSweep {
            let sw = self.sweep.clone().unwrap_or_default();
            if sw.exponent_lo > sw.exponent_hi || sw.exponent_hi > 24 {
                return bad("sweep exponents must satisfy lo <= hi <= 24".into());
            }
            if sw.samples == 0 {
                return bad("sweep.samples must be at least 1".into());
            }
        }
        Ok(())
    }
}

pub const TEMPLATE_NAMES: &[&str] = &[
    "honest",
    "silent_leader",
    "withhold",
    "equivocate",
    "tamper",
    "approve_anything",
    "drop_client_txs",
    "mixed",
    "collusion",
    "mass_exit",
    "proof_size_sweep",
];

/// Produce a ready-to-run scenario for one of the built-in templates.
pub fn template(name: &str) -> Option<Scenario> {
    let base = |name: &str| Scenario {
        version: 1,
        name: name.to_string(),
        kind: ScenarioKind::Simulation,
        protocol: ProtocolParams::default(),
        run: RunParams {
            seed: 42,
            epochs: 12,
            max_units: 200_000,
            exit_all_at_end: true,
        },
        clients: ClientParams::default(),
        workload: WorkloadParams::default(),
        byzantine: Vec::new(),
        allow_over_threshold: false,
        sweep: None,
    };
    let one = |name: &str, strategy: StrategyKind| {
        let mut sc = base(name);
        sc.byzantine = vec![ByzantineSpec { slot: 0, strategy }];
        sc
    };
    match name {
        "honest" => {
            let mut sc = base("honest");
            sc.run.epochs = 20;
            Some(sc)
        }
        "silent_leader" => Some(one("silent_leader", StrategyKind::SilentLeader)),
        "withhold" => {
            // Slot 2 leads epoch 2: the forgery lands on the second epoch.
            let mut sc = base("withhold");
            sc.byzantine = vec![ByzantineSpec {
                slot: 2,
                strategy: StrategyKind::WithholdAndCommit,
            }];
            Some(sc)
        }
        "equivocate" => Some(one("equivocate", StrategyKind::Equivocate)),
        "tamper" => Some(one("tamper", StrategyKind::TamperBalances)),
        "approve_anything" => Some(one("approve_anything", StrategyKind::ApproveAnything)),
        "drop_client_txs" => Some(one("drop_client_txs", StrategyKind::DropClientTxs)),
        "mixed" => {
            let mut sc = base("mixed");
            sc.protocol.n = 7;
            sc.byzantine = vec![
                ByzantineSpec {
                    slot: 1,
                    strategy: StrategyKind::SilentLeader,
                },
                ByzantineSpec {
                    slot: 3,
                    strategy: StrategyKind::TamperBalances,
                },
                ByzantineSpec {
                    slot: 5,
                    strategy: StrategyKind::DropClientTxs,
                },
            ];
            Some(sc)
        }
        "collusion" => {
            // A fully corrupt committee: the leader rewrites balances and
            // every follower signs whatever it is shown. Client-side defenses
            // are the only protection left.
            let mut sc = base("collusion");
            sc.protocol.n = 3;
            sc.run.epochs = 6;
            sc.byzantine = vec![
                ByzantineSpec {
                    slot: 0,
                    strategy: StrategyKind::TamperBalances,
                },
                ByzantineSpec {
                    slot: 1,
                    strategy: StrategyKind::ApproveAnything,
                },
                ByzantineSpec {
                    slot: 2,
                    strategy: StrategyKind::ApproveAnything,
                },
            ];
            sc.allow_over_threshold = true;
            Some(sc)
        }
        "mass_exit" => {
            // A bare-quorum conspiracy on a five-seat committee: the epoch-2
            // leader falsifies one account and exactly enough followers
            // co-sign it. The victim's balance check fails at the commit, the
            // interactive session exposes the fraud, and the contract orders
            // everyone out at the last finalized state.
            let mut sc = base("mass_exit");
            sc.run.epochs = 4;
            sc.byzantine = vec![
                ByzantineSpec {
                    slot: 2,
                    strategy: StrategyKind::TamperBalances,
                },
                ByzantineSpec {
                    slot: 3,
                    strategy: StrategyKind::ApproveAnything,
                },
                ByzantineSpec {
                    slot: 4,
                    strategy: StrategyKind::ApproveAnything,
                },
            ];
            sc.allow_over_threshold = true;
            Some(sc)
        }
        "proof_size_sweep" => {
            let mut sc = base("proof_size_sweep");
            sc.kind = ScenarioKind::ProofSizeSweep;
            sc.sweep = Some(SweepParams::default());
            Some(sc)
        }
        _ => None,
    }
}
