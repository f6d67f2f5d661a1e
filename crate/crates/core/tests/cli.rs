//! End-to-end tests of the `semgraph` binary: exit codes, output schemas
//! and golden artifacts from the committed fixture scene.

use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURE_SPEC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/office_scene.json");
const GOLDEN_MAP: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden_map.json");

/// Frozen from a seed-7 run of the fixture scene.
const GOLDEN_LOG_SHA256: &str = "255a5ff877227672cf39c8687aca16c198bb3fabcd4002512f90d4e73c21feec";

fn semgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn sha256_file(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    format!("{:x}", Sha256::digest(&bytes))
}

fn simulate_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let out = dir.join("sim");
    let result = semgraph(&["simulate", FIXTURE_SPEC, "--out", out.to_str().unwrap(), "--seed", "7"]);
    assert!(result.status.success(), "simulate failed: {}", String::from_utf8_lossy(&result.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    (
        PathBuf::from(summary["log"].as_str().unwrap()),
        PathBuf::from(summary["rooms"].as_str().unwrap()),
        PathBuf::from(summary["truth"].as_str().unwrap()),
    )
}

#[test]
fn simulate_reproduces_golden_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let (log, _, truth) = simulate_fixture(dir.path());
    assert_eq!(sha256_file(&log), GOLDEN_LOG_SHA256);
    assert!(truth.exists());
    // Same seed, second run: identical output tree content.
    let (log2, _, _) = simulate_fixture(&dir.path().join("again"));
    assert_eq!(sha256_file(&log2), GOLDEN_LOG_SHA256);
}

#[test]
fn simulate_missing_spec_exits_2() {
    let result = semgraph(&["simulate", "/nonexistent/spec.json", "--out", "/tmp/x"]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!result.stderr.is_empty());
}

#[test]
fn replay_matches_golden_map() {
    let dir = tempfile::tempdir().unwrap();
    let (log, rooms, _) = simulate_fixture(dir.path());
    let out = dir.path().join("replay");
    let result = semgraph(&[
        "replay",
        log.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(result.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(summary["frames"], 6);
    assert_eq!(summary["map_objects"], 2);
    assert_eq!(summary["map_revision"], 6);
    assert!(summary["mean_ms"].is_number() && summary["max_ms"].is_number());

    assert_eq!(
        std::fs::read(out.join("map.json")).unwrap(),
        std::fs::read(GOLDEN_MAP).unwrap(),
        "map export diverged from the golden artifact"
    );
    // Scene JSONL: one line per frame, each valid JSON.
    let scenes = std::fs::read_to_string(out.join("scenes.jsonl")).unwrap();
    assert_eq!(scenes.lines().count(), 6);
    for line in scenes.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["frame_id"].is_u64());
    }
    // DOT present and well-formed at the ends.
    let dot = std::fs::read_to_string(out.join("map.dot")).unwrap();
    assert!(dot.starts_with("digraph semantic_map {") && dot.trim_end().ends_with('}'));
}

#[test]
fn replay_empty_log_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    let rooms = dir.path().join("rooms.json");
    std::fs::write(&log, "").unwrap();
    std::fs::write(&rooms, r#"{"rooms":[{"id":"r1","name":"A","polygon":[[0,0],[1,0],[1,1],[0,1]]}]}"#).unwrap();
    let out = dir.path().join("out");
    let result = semgraph(&[
        "replay",
        log.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let map: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("map.json")).unwrap()).unwrap();
    assert_eq!(map["objects"].as_array().unwrap().len(), 0);
}

#[test]
fn replay_non_monotonic_log_exits_1_naming_frame() {
    let dir = tempfile::tempdir().unwrap();
    let (log, rooms, _) = simulate_fixture(dir.path());
    let text = std::fs::read_to_string(&log).unwrap();
    let first = text.lines().next().unwrap();
    std::fs::write(&log, format!("{first}\n{first}\n")).unwrap();
    let out = dir.path().join("replay");
    let result = semgraph(&[
        "replay",
        log.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("frame 0"), "stderr should name the frame: {stderr}");
}

#[test]
fn replay_usage_error_exits_2() {
    let result = semgraph(&["replay"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn eval_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let (log, rooms, truth) = simulate_fixture(dir.path());
    let result = semgraph(&[
        "eval",
        log.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let table = String::from_utf8_lossy(&result.stdout);
    for row in ["Real position [m]", "Mean position [m]", "Mean abs error [m]", "Error std dev [m]", "No Particle", "Particle"] {
        assert!(table.contains(row), "missing row {row} in:\n{table}");
    }

    let out = dir.path().join("eval");
    let result = semgraph(&[
        "eval",
        log.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--seed",
        "7",
        "--json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let v: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert!(v["no_filter"]["mean_abs_error"].is_array());
    assert!(v["filter"]["samples"].is_u64());
    assert!(out.join("eval.json").exists());

    // Raw-only mode drops the particle report.
    let result = semgraph(&[
        "eval",
        log.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--no-filter",
        "--json",
    ]);
    assert!(result.status.success());
    let v: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert!(v["filter"].is_null());
}

#[test]
fn eval_missing_truth_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (log, rooms, _) = simulate_fixture(dir.path());
    let result = semgraph(&[
        "eval",
        log.to_str().unwrap(),
        "--truth",
        "/nonexistent/truth.json",
        "--rooms",
        rooms.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn query_commands_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (log, rooms, _) = simulate_fixture(dir.path());
    let out = dir.path().join("replay");
    assert!(semgraph(&[
        "replay",
        log.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ])
    .status
    .success());
    let map = out.join("map.json");
    let map = map.to_str().unwrap();

    let result = semgraph(&["query", map, "find", "bottle"]);
    assert!(result.status.success());
    assert_eq!(String::from_utf8_lossy(&result.stdout).trim(), "[1]");

    let result = semgraph(&["query", map, "objects-in-room", "office"]);
    assert!(result.status.success());
    assert_eq!(String::from_utf8_lossy(&result.stdout).trim(), "[1,2]");

    let result = semgraph(&["query", map, "objects-in-room", "hall"]);
    assert!(result.status.success());
    assert_eq!(String::from_utf8_lossy(&result.stdout).trim(), "[]");

    let result = semgraph(&["query", map, "path", "office", "hall"]);
    assert!(result.status.success());
    assert_eq!(String::from_utf8_lossy(&result.stdout).trim(), r#"["office","hall"]"#);

    let result = semgraph(&["query", map, "path", "office", "office"]);
    assert_eq!(String::from_utf8_lossy(&result.stdout).trim(), r#"["office"]"#);

    for args in [
        vec!["query", map, "objects-in-room", "attic"],
        vec!["query", map, "find", "sofa"],
        vec!["query", map, "path", "office", "attic"],
    ] {
        let result = semgraph(&args);
        assert_eq!(result.status.code(), Some(3), "args {args:?}");
        assert!(!result.stderr.is_empty());
    }
}

#[test]
fn config_file_flags_and_env_logging() {
    let dir = tempfile::tempdir().unwrap();
    let (log, rooms, _) = simulate_fixture(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 7, "filter.n_particles": 64, "lambda_iou": 0.25}"#).unwrap();
    let out = dir.path().join("replay");
    let result = Command::new(env!("CARGO_BIN_EXE_semgraph"))
        .args([
            "replay",
            log.to_str().unwrap(),
            "--rooms",
            rooms.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .env("SEMGRAPH_LOG", "debug")
        .output()
        .unwrap();
    assert!(result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("frame 0"), "debug logging should trace frames: {stderr}");

    // Unknown config key is a usage error.
    std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let result = semgraph(&[
        "replay",
        log.to_str().unwrap(),
        "--rooms",
        rooms.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}
