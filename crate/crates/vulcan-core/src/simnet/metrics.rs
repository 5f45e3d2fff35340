//! Run metrics: per-epoch progress figures and whole-run totals, serialized
//! to `metrics.json` by the CLI.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    /// Proposal round the finalized checkpoint was committed in.
    pub round: u32,
    /// Simulation units between the previous finalization and this one.
    pub units: u64,
    pub finalized_at: u64,
    /// Leader replacements that happened while this epoch was current.
    pub removals: u32,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Totals {
    pub finalized_checkpoints: u64,
    pub commits_observed: u64,
    pub challenges_cp_submitted: u64,
    pub challenges_ncp_submitted: u64,
    pub challenges_cp_upheld: u64,
    pub challenges_cp_rejected: u64,
    pub challenges_ncp_upheld: u64,
    pub challenges_ncp_rejected: u64,
    pub challenges_stale: u64,
    pub leader_removals: u64,
    pub deposits: u64,
    pub deposit_volume: u64,
    pub withdrawals_paid: u64,
    pub withdrawal_volume: u64,
    pub withdrawals_rejected: u64,
    pub exits_paid: u64,
    pub exit_volume: u64,
    pub sessions_opened: u64,
    pub sessions_resolved: u64,
    pub sessions_rejected: u64,
    pub txs_submitted: u64,
    pub txs_finalized: u64,
    pub mass_exit: bool,
    pub halted: bool,
    /// True when the run hit its unit budget before reaching the target.
    pub stalled: bool,
    /// Final minus initial total coin supply on the parent chain ledger
    /// (must be zero: coins only move, they are never created).
    pub supply_drift: i128,
    /// Coins still held by the contract at the end of the run.
    pub contract_holdings: u64,
    /// Coins burned from rejected challenge wagers.
    pub forfeited: u64,
    pub pop_proofs: u64,
    pub pop_sibling_mean: f64,
    pub pop_sibling_max: u64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub scheme: String,
    pub n: u16,
    pub f: u16,
    pub delta: u64,
    pub tau: u64,
    pub ended_at: u64,
    pub epochs: Vec<EpochMetrics>,
    pub totals: Totals,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("metrics serialize");
        out.push('\n');
        out
    }
}

/// Accumulates proof-size samples (sibling counts of account membership
/// proofs) without keeping them all.
#[derive(Debug, Clone, Default)]
pub struct SiblingStats {
    count: u64,
    sum: u64,
    max: u64,
}

impl SiblingStats {
    pub fn push(&mut self, siblings: u64) {
        self.count += 1;
        self.sum += siblings;
        self.max = self.max.max(siblings);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    pub fn max(&self) -> u64 {
        self.max
    }
}
