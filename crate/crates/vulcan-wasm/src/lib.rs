//! Browser bindings for the Vulcan simulator.
//!
//! Every function speaks JSON strings so the page needs no generated type
//! glue: scenarios go in as the same documents the CLI consumes, results
//! come back as plain objects. Errors surface as JavaScript exceptions
//! carrying the same diagnostics the CLI prints.
//!
//! The logic lives in [`api`], which is target-independent and tested
//! natively; the exported functions only translate its errors into
//! JavaScript exceptions.

use wasm_bindgen::prelude::*;

pub mod api {
    use std::collections::BTreeSet;

    use serde::Serialize;

    use vulcan_core::chain::{quorum, SignerIndex};
    use vulcan_core::simnet::scenario::{template, Scenario, TEMPLATE_NAMES};
    use vulcan_core::simnet::{run, ScenarioOutput};

    fn err(e: impl std::fmt::Display) -> String {
        e.to_string()
    }

    /// Names of the built-in scenario templates, as a JSON array.
    pub fn template_names() -> String {
        serde_json::to_string(TEMPLATE_NAMES).expect("static list serializes")
    }

    /// The JSON document for one built-in template, ready for editing.
    pub fn template_json(name: &str) -> Result<String, String> {
        template(name)
            .map(|sc| sc.to_json())
            .ok_or_else(|| format!("unknown template '{name}'"))
    }

    /// What the page renders after a simulation run.
    #[derive(Serialize)]
    struct RunView {
        metrics: serde_json::Value,
        clients: serde_json::Value,
        report: serde_json::Value,
        clean: bool,
        audit_records: usize,
        /// Last few audit records, so the page can show the closing trace.
        audit_tail: Vec<String>,
    }

    /// Execute a simulation scenario; returns metrics, per-client outcomes,
    /// and the independent replay's report.
    pub fn run_scenario(json: &str) -> Result<String, String> {
        let sc = Scenario::from_json(json).map_err(err)?;
        match run(&sc, None).map_err(err)? {
            ScenarioOutput::Simulation(r) => {
                let tail: Vec<String> =
                    r.audit.lines().rev().take(30).map(str::to_string).collect();
                let view = RunView {
                    metrics: serde_json::to_value(&r.metrics).map_err(err)?,
                    clients: serde_json::to_value(&r.clients).map_err(err)?,
                    report: serde_json::to_value(&r.report).map_err(err)?,
                    clean: r.clean(),
                    audit_records: r.audit.lines().count(),
                    audit_tail: tail.into_iter().rev().collect(),
                };
                serde_json::to_string(&view).map_err(err)
            }
            ScenarioOutput::Sweep(_) => {
                Err("this is a proof-size sweep scenario; use proof_size_sweep()".into())
            }
        }
    }

    /// Execute a proof-size sweep scenario; returns its measurement points.
    pub fn proof_size_sweep(json: &str) -> Result<String, String> {
        let sc = Scenario::from_json(json).map_err(err)?;
        match run(&sc, None).map_err(err)? {
            ScenarioOutput::Sweep(sw) => Ok(sw.to_json()),
            ScenarioOutput::Simulation(_) => {
                Err("this is a simulation scenario; use run_scenario()".into())
            }
        }
    }

    #[derive(Serialize)]
    struct BitmapView {
        n: u16,
        value: u64,
        /// `n`-character binary rendering, slot 0 leftmost.
        binary: String,
        slots: Vec<u16>,
        count: u32,
        quorum: usize,
        has_quorum: bool,
    }

    fn bitmap_view(index: SignerIndex) -> Result<String, String> {
        let slots: Vec<u16> = index.decode().map_err(err)?.into_iter().collect();
        let view = BitmapView {
            n: index.n,
            value: index.value,
            binary: format!("{:0width$b}", index.value, width = index.n as usize),
            count: index.count(),
            quorum: quorum(index.n as usize),
            has_quorum: index.count() as usize >= quorum(index.n as usize),
            slots,
        };
        serde_json::to_string(&view).map_err(err)
    }

    /// Encode a comma-separated list of validator slots into the on-chain
    /// signer bitmap for a committee of `n`.
    pub fn encode_signers(n: u16, slots: &str) -> Result<String, String> {
        let mut set = BTreeSet::new();
        for part in slots.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let slot: u16 = part
                .parse()
                .map_err(|_| format!("'{part}' is not a slot number"))?;
            set.insert(slot);
        }
        bitmap_view(SignerIndex::encode(&set, n).map_err(err)?)
    }

    /// Decode an on-chain signer bitmap back into validator slots.
    pub fn decode_signers(value: u64, n: u16) -> Result<String, String> {
        bitmap_view(SignerIndex { value, n })
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn template_names() -> String {
    api::template_names()
}

#[wasm_bindgen]
pub fn template_json(name: &str) -> Result<String, JsError> {
    api::template_json(name).map_err(js)
}

#[wasm_bindgen]
pub fn run_scenario(json: &str) -> Result<String, JsError> {
    api::run_scenario(json).map_err(js)
}

#[wasm_bindgen]
pub fn proof_size_sweep(json: &str) -> Result<String, JsError> {
    api::proof_size_sweep(json).map_err(js)
}

#[wasm_bindgen]
pub fn encode_signers(n: u16, slots: &str) -> Result<String, JsError> {
    api::encode_signers(n, slots).map_err(js)
}

#[wasm_bindgen]
pub fn decode_signers(value: u64, n: u16) -> Result<String, JsError> {
    api::decode_signers(value, n).map_err(js)
}
