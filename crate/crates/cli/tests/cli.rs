//! End-to-end checks of the `parsepipe` binary: exit-code contract, output
//! formats, determinism, and the oracle-check path.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parsepipe"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_ok_spec_exits_zero() {
    let out = run(&["validate", fixture("l4_parser.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("ok"));
}

#[test]
fn validate_invalid_spec_exits_two_listing_violations() {
    let out = run(&[
        "validate",
        fixture("straddle_negative.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("straddles"));
}

#[test]
fn validate_missing_file_exits_one() {
    let out = run(&["validate", "/nonexistent/spec.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_json_has_three_levels() {
    let out = run(&[
        "plan",
        fixture("l4_parser.json").to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let plan: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(plan["levels"].as_array().unwrap().len(), 3);
    assert_eq!(plan["muxes"].as_array().unwrap().len(), 2);
}

#[test]
fn plan_dot_has_two_trapezoids() {
    let out = run(&[
        "plan",
        fixture("l4_parser.json").to_str().unwrap(),
        "--format",
        "dot",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches("trapezium").count(), 2);
}

#[test]
fn plan_text_summarizes_levels_and_muxes() {
    let out = run(&["plan", fixture("l4_parser.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("levels: 3"));
    assert!(text.contains("muxes: 2"));
}

#[test]
fn sim_emits_one_json_line_per_packet() {
    let dir = tempfile::tempdir().unwrap();
    let packets = dir.path().join("pkts.hex");
    // three packets: unknown ethertype, short, and eth+ipv4+udp-ish garbage
    std::fs::write(
        &packets,
        "02000000000102000000000212340a0b\n0102\nffffffffffffffffffffffffffff\n",
    )
    .unwrap();
    let out = run(&[
        "sim",
        fixture("l4_parser.json").to_str().unwrap(),
        "--packets",
        packets.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("status").is_some());
        assert!(v.get("phv").is_some());
    }
}

#[test]
fn sim_oracle_check_over_generated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.hex");
    let gen = run(&[
        "gen-traffic",
        fixture("l4_parser.json").to_str().unwrap(),
        "--count",
        "1000",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(gen.status.code(), Some(0), "{}", stderr(&gen));

    let out = run(&[
        "sim",
        fixture("l4_parser.json").to_str().unwrap(),
        "--packets",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("results.jsonl").to_str().unwrap(),
        "--oracle-check",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let results = std::fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 1000);
}

#[test]
fn sim_rejects_nanosecond_pcap_with_clear_message() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = dir.path().join("nsec.pcap");
    let mut data = Vec::new();
    data.extend_from_slice(&0xA1B2_3C4Du32.to_be_bytes());
    data.extend_from_slice(&[0; 20]);
    std::fs::write(&pcap, data).unwrap();
    let out = run(&[
        "sim",
        fixture("l4_parser.json").to_str().unwrap(),
        "--packets",
        pcap.to_str().unwrap(),
        "--packet-format",
        "pcap",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nanosecond"));
}

#[test]
fn emit_writes_bundle_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "emit",
        fixture("l4_parser.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let gen_dir = dir.path().join("gen/l4_parser");
    for name in ["module.hpp", "pipeline.cpp", "types.hpp", "MANIFEST.json"] {
        assert!(gen_dir.join(name).is_file(), "{name} missing");
    }

    // repeat emission produces identical bytes
    let before = std::fs::read(gen_dir.join("pipeline.cpp")).unwrap();
    let again = run(&[
        "emit",
        fixture("l4_parser.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(again.status.code(), Some(0));
    let after = std::fs::read(gen_dir.join("pipeline.cpp")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn emit_honors_out_dir_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["emit", fixture("diamond.json").to_str().unwrap()])
        .env("PARSEPIPE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("gen/diamond/MANIFEST.json").is_file());
}

#[test]
fn emit_unknown_backend_lists_available() {
    let out = run(&[
        "emit",
        fixture("l4_parser.json").to_str().unwrap(),
        "--backend",
        "vhdl",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("mpo-cxx") && err.contains("plan-report"));
}

#[test]
fn gen_traffic_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.hex");
    let b = dir.path().join("b.hex");
    for out in [&a, &b] {
        let r = run(&[
            "gen-traffic",
            fixture("variable_only.json").to_str().unwrap(),
            "--count",
            "100",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same seed must give identical corpora"
    );
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 100);
}

#[test]
fn results_are_canonical_sorted_json() {
    let dir = tempfile::tempdir().unwrap();
    let packets = dir.path().join("p.hex");
    std::fs::write(&packets, "0102030405060708090a0b0c0d0e\n").unwrap();
    let out = run(&[
        "sim",
        fixture("l4_parser.json").to_str().unwrap(),
        "--packets",
        packets.to_str().unwrap(),
    ]);
    let line = stdout(&out);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted, "top-level keys must be sorted");
}
