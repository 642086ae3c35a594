//! Command-line front end: party key management, accountable transfers,
//! leak emission, lineage audits, scenario runs and microbenchmarks.

mod state;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use lime_core::audit::{generate_lineage, TolerancePolicy};
use lime_core::bench::{bench_vary_parts, bench_vary_size, render_table};
use lime_core::crypto::group::GroupParams;
use lime_core::crypto::SigningKeypair;
use lime_core::document::Document;
use lime_core::protocol::{
    trusted_transfer, untrusted_transfer, Role, SenderBehavior, TransferError,
};
use lime_core::scenario::{builtin_scenarios, run_scenario, Scenario};
use lime_core::synth;

use state::{DiskDirectory, StateDir};

#[derive(Parser)]
#[command(
    name = "lime",
    version,
    about = "Accountable data transfer: fingerprinted transfers and leak lineage audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupModeArg {
    Test,
    Production,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransferMode {
    Trusted,
    Untrusted,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RoleArg {
    Owner,
    Consumer,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VaryAxis {
    Parts,
    Size,
}

#[derive(Args)]
struct GroupOpt {
    /// Group backend; falls back to LIME_GROUP_MODE, then production.
    #[arg(long, value_enum)]
    group: Option<GroupModeArg>,
}

impl GroupOpt {
    fn params(&self) -> Result<GroupParams> {
        let mode = match self.group {
            Some(GroupModeArg::Test) => return Ok(GroupParams::test()),
            Some(GroupModeArg::Production) => return Ok(GroupParams::production()),
            None => std::env::var("LIME_GROUP_MODE").unwrap_or_default(),
        };
        match mode.as_str() {
            "" | "production" => Ok(GroupParams::production()),
            "test" => Ok(GroupParams::test()),
            other => bail!("LIME_GROUP_MODE must be test or production, not {other:?}"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create a party: signing keypair, role and empty counters.
    Keygen {
        /// Party label.
        #[arg(long)]
        id: String,
        #[arg(long, value_enum, default_value = "consumer")]
        role: RoleArg,
        /// State directory.
        #[arg(long, default_value = "lime-state")]
        state: PathBuf,
    },
    /// Generate a synthetic grayscale test document (binary PGM).
    GenDoc {
        #[arg(long, default_value_t = 512)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an accountable transfer, both roles executed locally.
    Transfer {
        #[arg(long, value_enum)]
        mode: TransferMode,
        /// Part count for untrusted transfers (perfect square).
        #[arg(long, default_value_t = 16)]
        parts: usize,
        /// The sender's held version of the document.
        #[arg(long, name = "in")]
        r#in: PathBuf,
        #[arg(long)]
        sender: String,
        #[arg(long)]
        recipient: String,
        #[arg(long, default_value = "lime-state")]
        state: PathBuf,
        /// Seed for all transfer randomness (keys, choices, nonces).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        group: GroupOpt,
    },
    /// Emit a version a party holds (its latest received document).
    Leak {
        #[arg(long)]
        party: String,
        /// Restrict to documents received from this sender.
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lime-state")]
        state: PathBuf,
    },
    /// Reconstruct the lineage of a leaked document and name the leaker.
    Audit {
        #[arg(long)]
        leaked: PathBuf,
        /// The owner the walk starts from.
        #[arg(long)]
        owner: String,
        #[arg(long, default_value = "lime-state")]
        state: PathBuf,
        /// Missing-bit tolerance budget.
        #[arg(long, default_value_t = 0)]
        tolerate_missing: usize,
        /// Accept one conflicting detected bit.
        #[arg(long)]
        allow_wrong_bit: bool,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scenario tooling.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Phase microbenchmarks of the untrusted transfer.
    Bench {
        #[arg(long, value_enum)]
        vary: VaryAxis,
        /// Repetitions per parameter point.
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        group: GroupOpt,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Execute a scenario file and compare the verdict to expectations.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        group: GroupOpt,
    },
    /// Write the built-in scenario files for reference.
    ExportBuiltin {
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
}

fn load_document(path: &PathBuf) -> Result<Document> {
    Document::from_pgm_bytes(
        &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    )
    .with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Keygen { id, role, state } => {
            let state = StateDir::open(state);
            let keypair = SigningKeypair::generate(&mut rand::thread_rng());
            let role = match role {
                RoleArg::Owner => Role::Owner,
                RoleArg::Consumer => Role::Consumer,
            };
            state.create_party(&id, role, &keypair)?;
            println!(
                "created {id} ({role:?}), vk {}",
                hex::encode(keypair.verifying_key().as_bytes())
            );
            Ok(0)
        }
        Command::GenDoc {
            width,
            height,
            seed,
            out,
        } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let doc = synth::random_document(&mut rng, width, height);
            fs::write(&out, doc.to_pgm_bytes())?;
            println!("wrote {width}x{height} document to {}", out.display());
            Ok(0)
        }
        Command::Transfer {
            mode,
            parts,
            r#in,
            sender,
            recipient,
            state,
            seed,
            group,
        } => {
            let params = group.params()?;
            let state = StateDir::open(state);
            let doc = load_document(&r#in)?;
            let mut sender_state = state.load_party_state(&sender)?;
            let mut recipient_state = state.load_party_state(&recipient)?;
            let mut rng = match seed {
                Some(s) => ChaCha20Rng::seed_from_u64(s),
                None => ChaCha20Rng::from_rng(rand::thread_rng())?,
            };

            let outcome = match mode {
                TransferMode::Trusted => {
                    let t = trusted_transfer(
                        &mut sender_state,
                        &doc,
                        &mut recipient_state,
                        &mut rng,
                    );
                    match t {
                        Ok(outcome) => {
                            let tau = outcome.sender_record.tau;
                            state.save_transfer(
                                &outcome.sender_record,
                                None,
                                &sender,
                                &recipient,
                                tau,
                            )?;
                            lime_core::protocol::save_transcript(
                                &state.transcript_dir(&sender, &recipient, tau),
                                &outcome.transcript,
                            )?;
                            let path = state.write_doc(
                                &format!("{recipient}.from.{sender}.tau{tau}.pgm"),
                                &outcome.delivered,
                            )?;
                            println!(
                                "trusted transfer {sender} -> {recipient} tau {tau}; delivered {}",
                                path.display()
                            );
                            Ok(())
                        }
                        Err(e) => Err(e),
                    }
                }
                TransferMode::Untrusted => {
                    let t = untrusted_transfer(
                        &params,
                        &mut sender_state,
                        &doc,
                        &mut recipient_state,
                        parts,
                        SenderBehavior::Honest,
                        &mut rng,
                    );
                    match t {
                        Ok(outcome) => {
                            let tau = outcome.sender_record.tau;
                            state.save_transfer(
                                &outcome.sender_record,
                                Some(&outcome.recipient_record),
                                &sender,
                                &recipient,
                                tau,
                            )?;
                            lime_core::protocol::save_transcript(
                                &state.transcript_dir(&sender, &recipient, tau),
                                &outcome.transcript,
                            )?;
                            let path = state.write_doc(
                                &format!("{recipient}.from.{sender}.tau{tau}.pgm"),
                                &outcome.delivered,
                            )?;
                            println!(
                                "untrusted transfer {sender} -> {recipient} tau {tau}, {parts} parts; delivered {}",
                                path.display()
                            );
                            Ok(())
                        }
                        Err(e) => Err(e),
                    }
                }
            };
            match outcome {
                Ok(()) => {
                    state.persist_party_state(&sender_state)?;
                    state.persist_party_state(&recipient_state)?;
                    Ok(0)
                }
                Err(e @ (TransferError::BadStatement(_) | TransferError::SenderCheated { .. })) => {
                    eprintln!("transfer aborted: {e}");
                    Ok(1)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Leak {
            party,
            from,
            out,
            state,
        } => {
            let state = StateDir::open(state);
            let record = state
                .latest_received(&party, from.as_deref())?
                .with_context(|| format!("{party} holds no received document"))?;
            fs::write(&out, record.received.to_pgm_bytes())?;
            println!(
                "leaked {party}'s version from {} (tau {}) to {}",
                record.sender,
                record.tau,
                out.display()
            );
            Ok(0)
        }
        Command::Audit {
            leaked,
            owner,
            state,
            tolerate_missing,
            allow_wrong_bit,
            out,
        } => {
            let state = StateDir::open(state);
            let leaked = load_document(&leaked)?;
            let policy = TolerancePolicy {
                max_missing_bits: tolerate_missing,
                allow_wrong_bits: allow_wrong_bit,
            };
            let directory = DiskDirectory { state: &state };
            let lineage = generate_lineage(&leaked, &owner, &directory, &policy)?;
            for (i, hop) in lineage.entries.iter().enumerate() {
                println!(
                    "{i}: {}{}{}{}",
                    hop.suspect,
                    if hop.trusted { " [trusted]" } else { "" },
                    hop.sigma_correlation
                        .map(|c| format!(" sigma corr {c:.2}"))
                        .unwrap_or_default(),
                    hop.termination
                        .as_ref()
                        .map(|t| format!(" <- {t:?}"))
                        .unwrap_or_default(),
                );
            }
            println!("verdict: {}", lineage.verdict);
            if let Some(path) = out {
                fs::write(&path, lineage.to_report_json())?;
                println!("report written to {}", path.display());
            }
            Ok(0)
        }
        Command::Scenario { action } => match action {
            ScenarioAction::Run {
                file,
                seed,
                out,
                group,
            } => {
                let params = group.params()?;
                let scenario = Scenario::from_json(
                    &fs::read_to_string(&file)
                        .with_context(|| format!("reading {}", file.display()))?,
                )?;
                let outcome = run_scenario(&scenario, seed, &params)?;
                if let Some(abort) = &outcome.transfer_abort {
                    println!("scenario {}: transfer aborted: {abort}", outcome.name);
                } else if let Some(lineage) = &outcome.lineage {
                    println!(
                        "scenario {}: lineage {} => verdict {} (expected {}, {})",
                        outcome.name,
                        lineage.parties().join(" -> "),
                        lineage.verdict,
                        outcome.expected_verdict,
                        if outcome.verdict_matches { "match" } else { "MISMATCH" },
                    );
                }
                if let Some(path) = out {
                    fs::write(&path, serde_json::to_string_pretty(&outcome)?)?;
                    println!("results written to {}", path.display());
                }
                Ok(if outcome.transfer_abort.is_some() { 1 } else { 0 })
            }
            ScenarioAction::ExportBuiltin { out } => {
                fs::create_dir_all(&out)?;
                for scenario in builtin_scenarios() {
                    let path = out.join(format!("{}.json", scenario.name));
                    fs::write(&path, scenario.to_json())?;
                    println!("wrote {}", path.display());
                }
                Ok(0)
            }
        },
        Command::Bench {
            vary,
            reps,
            seed,
            out,
            group,
        } => {
            let params = group.params()?;
            match vary {
                VaryAxis::Parts => {
                    let report = bench_vary_parts(&[16, 64, 256, 1024], reps, &params, seed)?;
                    print!("{}", render_table(&report.reports));
                    for (phase, fit) in &report.fits {
                        println!(
                            "{phase}: slope {:.4} ms/part, intercept {:.2} ms, R^2 {:.4}",
                            fit.slope, fit.intercept, fit.r_squared
                        );
                    }
                    if let Some(dir) = out {
                        fs::create_dir_all(&dir)?;
                        let path = dir.join("bench_vary_parts.json");
                        fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                        println!("report written to {}", path.display());
                    }
                }
                VaryAxis::Size => {
                    let report =
                        bench_vary_size(256, &[256, 512, 1024, 2048], reps, &params, seed)?;
                    print!("{}", render_table(&report.reports));
                    println!(
                        "ot max/min ratio {:.3}, signature max/min ratio {:.3}",
                        report.ot_ratio, report.signature_ratio
                    );
                    if let Some(dir) = out {
                        fs::create_dir_all(&dir)?;
                        let path = dir.join("bench_vary_size.json");
                        fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                        println!("report written to {}", path.display());
                    }
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
