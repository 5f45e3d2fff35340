//! Protocol library and deterministic simulator for the Vulcan sidechain.
//!
//! Vulcan is an epoch-based sidechain consensus: a rotating leader batches
//! client transactions into blocks, a quorum of validators co-signs each block
//! with an aggregate signature, and the resulting checkpoint is committed to a
//! slow parent chain where it stays challengeable for one finalization window
//! before it becomes final. Verification on the parent chain is lazy: the
//! contract stores checkpoints unverified and only checks them when someone
//! stakes a wager on a challenge.
//!
//! The crate is organized in two layers:
//!
//! * pure protocol state machines and primitives — [`crypto`], [`merkle`],
//!   [`codec`], [`chain`], [`validator`], [`contract`], [`ledger`] — none of
//!   which know about wall-clock time or networking;
//! * a deterministic discrete-event harness — [`simnet`] — that wires those
//!   machines together with unit-delay messaging, a `Δ`-delay parent chain,
//!   seeded workloads, Byzantine fault injection, and an independent auditor.
//!
//! Given the same scenario configuration and seed, a simulation run produces
//! byte-identical audit logs and metrics.

pub mod chain;
pub mod codec;
pub mod contract;
pub mod crypto;
pub mod ledger;
pub mod merkle;
pub mod messages;
pub mod simnet;
pub mod validator;
