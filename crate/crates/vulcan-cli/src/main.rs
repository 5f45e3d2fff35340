//! Scenario runner for the Vulcan sidechain simulator.
//!
//! Exit codes form a contract with CI:
//!   0 — every run completed with zero invariant violations
//!   1 — configuration error (bad flags, unreadable or invalid scenario)
//!   2 — at least one run violated an invariant (the report is printed)

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use vulcan_core::simnet::scenario::{template, Scenario, TEMPLATE_NAMES};
use vulcan_core::simnet::{run, RunResult, ScenarioOutput, TamperSpec};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(
    name = "vulcan",
    version,
    about = "Deterministic simulator for the Vulcan sidechain protocol",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one or more seeded runs of a scenario file.
    Run(RunArgs),
    /// Write a built-in scenario template to a JSON file.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a scenario JSON document (see `vulcan gen` for examples).
    #[arg(long)]
    scenario: PathBuf,

    /// Override the scenario's base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Number of repetitions; repetition i runs with seed base+i.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,

    /// Directory receiving one subdirectory per run (metrics.json, audit.log).
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Print a one-line summary per run.
    #[arg(short, long)]
    verbose: bool,

    /// Self-test hook: flip one payload byte in the audit log before the
    /// independent replay, as KIND:OCCURRENCE:BYTE (for example
    /// "notify:depositReceived:1:4"). The replay must then report a
    /// violation, so the process exits 2.
    #[arg(long, value_name = "KIND:OCCURRENCE:BYTE", value_parser = parse_tamper)]
    corrupt_audit: Option<TamperSpec>,
}

#[derive(Args)]
struct GenArgs {
    /// Template name.
    #[arg(value_parser = TEMPLATE_NAMES.to_vec())]
    template: String,

    /// Output path; defaults to <template>.json in the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse "KIND:OCCURRENCE:BYTE" from the right, since record kinds
/// themselves contain colons ("notify:depositReceived").
fn parse_tamper(s: &str) -> Result<TamperSpec, String> {
    let mut parts = s.rsplitn(3, ':');
    let byte = parts
        .next()
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or("expected KIND:OCCURRENCE:BYTE with a numeric byte offset")?;
    let occurrence = parts
        .next()
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or("expected KIND:OCCURRENCE:BYTE with a numeric occurrence")?;
    let kind = parts
        .next()
        .filter(|k| !k.is_empty())
        .ok_or("missing record kind")?;
    if occurrence == 0 {
        return Err("occurrence is 1-based".into());
    }
    Ok(TamperSpec {
        kind: kind.to_string(),
        occurrence,
        byte,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 2 for usage errors, but 2 is reserved here
            // for invariant violations; remap usage errors to 1 and keep
            // --help/--version at 0.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Gen(args) => cmd_gen(args),
    };
    ExitCode::from(code)
}

fn cmd_gen(args: GenArgs) -> u8 {
    // The value_parser restricts the name to TEMPLATE_NAMES, so this
    // lookup cannot fail; keep the message anyway for safety.
    let Some(sc) = template(&args.template) else {
        eprintln!(
            "unknown template '{}'; available: {}",
            args.template,
            TEMPLATE_NAMES.join(", ")
        );
        return EXIT_CONFIG;
    };
    let path = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.json", args.template)));
    if let Err(e) = fs::write(&path, sc.to_json()) {
        eprintln!("cannot write {}: {e}", path.display());
        return EXIT_CONFIG;
    }
    println!("wrote {}", path.display());
    EXIT_OK
}

fn cmd_run(args: RunArgs) -> u8 {
    let text = match fs::read_to_string(&args.scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.scenario.display());
            return EXIT_CONFIG;
        }
    };
    let base = match Scenario::from_json(&text) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("{}: {e}", args.scenario.display());
            return EXIT_CONFIG;
        }
    };
    let base_seed = args.seed.unwrap_or(base.run.seed);

    let mut failures: Vec<(String, Vec<String>)> = Vec::new();
    for rep in 0..args.reps {
        let mut sc = base.clone();
        sc.run.seed = base_seed.wrapping_add(rep as u64);
        let run_id = format!("rep{rep:03}-seed{}", sc.run.seed);
        let dir = args.out.join(&run_id);
        if let Err(e) = fs::create_dir_all(&dir) {
            eprintln!("cannot create {}: {e}", dir.display());
            return EXIT_CONFIG;
        }

        let output = match run(&sc, args.corrupt_audit.clone()) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("{run_id}: {e}");
                return EXIT_CONFIG;
            }
        };
        let (metrics_json, audit_text, problems) = match output {
            ScenarioOutput::Simulation(result) => {
                let problems = collect_problems(&result);
                if args.verbose {
                    println!("{run_id} {}", summarize(&result));
                }
                (result.metrics.to_json(), result.audit, problems)
            }
            ScenarioOutput::Sweep(sweep) => {
                if args.verbose {
                    println!("{run_id} sweep of {} tree sizes", sweep.points.len());
                }
                let mut json = sweep.to_json();
                json.push('\n');
                // A sweep measures static proof shapes; it emits no protocol
                // events, so its audit log is empty by construction.
                (json, String::new(), Vec::new())
            }
        };

        if let Err(e) = fs::write(dir.join("metrics.json"), metrics_json) {
            eprintln!("cannot write {}: {e}", dir.join("metrics.json").display());
            return EXIT_CONFIG;
        }
        if let Err(e) = fs::write(dir.join("audit.log"), audit_text) {
            eprintln!("cannot write {}: {e}", dir.join("audit.log").display());
            return EXIT_CONFIG;
        }
        if !problems.is_empty() {
            failures.push((run_id, problems));
        }
    }

    if failures.is_empty() {
        println!("{} run(s) clean -> {}", args.reps, args.out.display());
        return EXIT_OK;
    }
    println!(
        "violation report: {} of {} run(s) failed",
        failures.len(),
        args.reps
    );
    for (run_id, problems) in &failures {
        for p in problems {
            println!("  {run_id}: {p}");
        }
    }
    EXIT_VIOLATION
}

/// Everything that makes a completed run count as failed.
fn collect_problems(r: &RunResult) -> Vec<String> {
    let mut problems = Vec::new();
    for v in &r.metrics.totals.violations {
        problems.push(format!("invariant: {v}"));
    }
    for v in &r.report.violations {
        problems.push(format!("audit replay: {v}"));
    }
    if r.metrics.totals.stalled {
        problems.push("run stalled before reaching its epoch target".into());
    }
    problems
}

fn summarize(r: &RunResult) -> String {
    let t = &r.metrics.totals;
    let exited = r.clients.iter().filter(|c| c.exited).count();
    format!(
        "epochs={} removals={} exits={}/{} mass_exit={} violations={}",
        t.finalized_checkpoints,
        t.leader_removals,
        exited,
        r.clients.len(),
        t.mass_exit,
        t.violations.len() + r.report.violations.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tamper_flag_parses_kinds_containing_colons() {
        let t = parse_tamper("notify:depositReceived:1:4").unwrap();
        assert_eq!(t.kind, "notify:depositReceived");
        assert_eq!(t.occurrence, 1);
        assert_eq!(t.byte, 4);
    }

    #[test]
    fn tamper_flag_rejects_bad_shapes() {
        assert!(parse_tamper("justakind").is_err());
        assert!(parse_tamper("kind:0:4").is_err(), "occurrence is 1-based");
        assert!(parse_tamper("kind:one:4").is_err());
        assert!(parse_tamper(":1:4").is_err(), "empty kind");
    }
}
