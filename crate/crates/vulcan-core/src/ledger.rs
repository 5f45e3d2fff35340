//! Simulated parent-chain ledger.
//!
//! Keeps plain coin balances for every entity plus the pool of coins held by
//! the bridge contract (frozen deposits and posted wagers). Submitted
//! transactions finalize exactly `Δ` time units later, in submission order
//! for equal arrival times. Money legs (deposit amounts and challenge
//! wagers) are debited when the transaction finalizes; an unfunded leg
//! leaves the ledger untouched and the arrival is flagged so the contract
//! can void it.
//!
//! Invariant: the sum of all account balances plus the pool never changes
//! (coins move, they are not created or destroyed; forfeited wagers stay in
//! the pool and are only tracked separately for reporting).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::messages::MainchainTx;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("pool underflow: tried to pay {requested} with {available} pooled")]
    PoolUnderflow { requested: u64, available: u64 },
}

/// A finalized parent-chain transaction, ready for the contract.
#[derive(Debug)]
pub struct Arrival {
    pub at: u64,
    pub seq: u64,
    pub tx: MainchainTx,
    /// Whether the transaction's upfront money leg was covered. Always true
    /// for kinds without one.
    pub funded: bool,
}

#[derive(Debug)]
pub struct Ledger {
    delta: u64,
    wager: u64,
    accounts: BTreeMap<Vec<u8>, u64>,
    pool: u64,
    forfeited: u64,
    pending: BTreeMap<(u64, u64), MainchainTx>,
    next_seq: u64,
}

impl Ledger {
    pub fn new(
        delta: u64,
        wager: u64,
        endowments: impl IntoIterator<Item = (Vec<u8>, u64)>,
    ) -> Self {
        let mut accounts = BTreeMap::new();
        for (key, amount) in endowments {
            *accounts.entry(key).or_insert(0) += amount;
        }
        Ledger {
            delta,
            wager,
            accounts,
            pool: 0,
            forfeited: 0,
            pending: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    /// Queue a transaction; it finalizes at the returned time.
    pub fn submit(&mut self, now: u64, tx: MainchainTx) -> u64 {
        let at = now + self.delta;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert((at, seq), tx);
        at
    }

    /// Finalize every queued transaction with arrival time `≤ to`, in
    /// (time, submission) order, applying upfront debits.
    pub fn advance(&mut self, to: u64) -> Vec<Arrival> {
        let mut out = Vec::new();
        loop {
            let key = match self.pending.first_key_value() {
                Some((&(at, seq), _)) if at <= to => (at, seq),
                _ => break,
            };
            let tx = self.pending.remove(&key).expect("key just observed");
            let funded = match tx.upfront(self.wager) {
                None => true,
                Some((payer, amount)) => {
                    let balance = self.accounts.entry(payer).or_insert(0);
                    if *balance >= amount {
                        *balance -= amount;
                        self.pool += amount;
                        true
                    } else {
                        false
                    }
                }
            };
            out.push(Arrival {
                at: key.0,
                seq: key.1,
                tx,
                funded,
            });
        }
        out
    }

    /// Earliest queued finalization time, if any.
    pub fn next_arrival(&self) -> Option<u64> {
        self.pending.first_key_value().map(|(&(at, _), _)| at)
    }

    /// Pay `amount` out of the pool into an account (withdrawals, exits,
    /// wager refunds).
    pub fn credit(&mut self, to: &[u8], amount: u64) -> Result<(), LedgerError> {
        if self.pool < amount {
            return Err(LedgerError::PoolUnderflow {
                requested: amount,
                available: self.pool,
            });
        }
        self.pool -= amount;
        *self.accounts.entry(to.to_vec()).or_insert(0) += amount;
        Ok(())
    }

    /// Record a forfeited wager. The coins stay pooled; this only moves the
    /// reporting needle.
    pub fn forfeit(&mut self, amount: u64) {
        self.forfeited += amount;
    }

    pub fn balance(&self, key: &[u8]) -> u64 {
        self.accounts.get(key).copied().unwrap_or(0)
    }

    pub fn pool(&self) -> u64 {
        self.pool
    }

    pub fn forfeited(&self) -> u64 {
        self.forfeited
    }

    /// Total coins in existence: account balances plus the pool. Constant
    /// for the lifetime of the ledger.
    pub fn total_supply(&self) -> u64 {
        self.accounts.values().sum::<u64>() + self.pool
    }

    pub fn accounts(&self) -> &BTreeMap<Vec<u8>, u64> {
        &self.accounts
    }
}
