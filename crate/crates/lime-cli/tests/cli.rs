//! End-to-end smoke tests of the binary: keygen, transfer, leak, audit.

use std::path::Path;
use std::process::{Command, Output};

fn lime(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lime"))
        .args(args)
        .current_dir(dir)
        .env("LIME_GROUP_MODE", "test")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn transfer_leak_audit_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    ok(&lime(&["keygen", "--id", "alice", "--role", "owner", "--state", "st"], dir));
    ok(&lime(&["keygen", "--id", "bob", "--state", "st"], dir));
    ok(&lime(
        &["gen-doc", "--width", "128", "--height", "128", "--seed", "9", "--out", "doc.pgm"],
        dir,
    ));
    ok(&lime(
        &[
            "transfer", "--mode", "untrusted", "--parts", "16", "--in", "doc.pgm", "--sender",
            "alice", "--recipient", "bob", "--state", "st", "--seed", "4",
        ],
        dir,
    ));
    ok(&lime(
        &["leak", "--party", "bob", "--out", "leaked.pgm", "--state", "st"],
        dir,
    ));
    let report = ok(&lime(
        &[
            "audit", "--leaked", "leaked.pgm", "--owner", "alice", "--state", "st", "--out",
            "report.json",
        ],
        dir,
    ));
    assert!(report.contains("verdict: bob"), "{report}");
    assert!(report.contains("0: alice"), "{report}");
    assert!(report.contains("1: bob"), "{report}");
    let json = std::fs::read_to_string(dir.join("report.json")).unwrap();
    assert!(json.contains("\"verdict\": \"bob\""));

    // auditing the unwatermarked original blames the owner
    let clean = ok(&lime(
        &["audit", "--leaked", "doc.pgm", "--owner", "alice", "--state", "st"],
        dir,
    ));
    assert!(clean.contains("verdict: alice"), "{clean}");
}

#[test]
fn trusted_transfer_and_second_hop() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&lime(&["keygen", "--id", "owner", "--role", "owner", "--state", "st"], dir));
    ok(&lime(&["keygen", "--id", "mid", "--state", "st"], dir));
    ok(&lime(&["keygen", "--id", "end", "--state", "st"], dir));
    ok(&lime(
        &["gen-doc", "--width", "128", "--height", "128", "--seed", "3", "--out", "doc.pgm"],
        dir,
    ));
    ok(&lime(
        &[
            "transfer", "--mode", "trusted", "--in", "doc.pgm", "--sender", "owner",
            "--recipient", "mid", "--state", "st", "--seed", "5",
        ],
        dir,
    ));
    // mid passes its received version on
    let mid_doc = dir.join("st/docs/mid.from.owner.tau1.pgm");
    assert!(mid_doc.exists());
    ok(&lime(
        &[
            "transfer", "--mode", "untrusted", "--parts", "16", "--in",
            "st/docs/mid.from.owner.tau1.pgm", "--sender", "mid", "--recipient", "end",
            "--state", "st", "--seed", "6",
        ],
        dir,
    ));
    ok(&lime(
        &["leak", "--party", "end", "--out", "leaked.pgm", "--state", "st"],
        dir,
    ));
    let report = ok(&lime(
        &["audit", "--leaked", "leaked.pgm", "--owner", "owner", "--state", "st"],
        dir,
    ));
    assert!(report.contains("verdict: end"), "{report}");
    assert!(report.contains("[trusted]"), "{report}");
}

#[test]
fn scenario_run_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&lime(&["scenario", "export-builtin", "--out", "sc"], dir));
    let run = ok(&lime(
        &["scenario", "run", "sc/owner-self-leak.json", "--seed", "3", "--group", "test"],
        dir,
    ));
    assert!(run.contains("match"), "{run}");
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lime(&["--definitely-not-a-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = lime(&["bench", "--vary", "sideways"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_smoke_runs_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // tiny rep count: structure and table only
    let out = ok(&lime(
        &["bench", "--vary", "parts", "--reps", "1", "--seed", "1", "--out", "bench"],
        dir,
    ));
    assert!(out.contains("parts"), "{out}");
    assert!(out.contains("R^2"), "{out}");
    assert!(dir.join("bench/bench_vary_parts.json").exists());
}
