//! Runs the `shmspill` binary against the core fixtures.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn shmspill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shmspill")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = shmspill(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn predict_reports_totals() {
    let v = ok_json(&["predict", "--input", path(&fixture("pred_shared.sass"))]);
    assert_eq!(v["stall_count"], 62.0);
    assert_eq!(v["occupancy"], 1.0);
}

#[test]
fn occupancy_lists_cliffs() {
    let v = ok_json(&["occupancy", "--input", path(&fixture("wide44.sass"))]);
    assert_eq!(v["reg_count"], 44);
    assert_eq!(v["report"]["limiter"], "registers");
    let targets: Vec<u64> = v["cliff_targets"].as_array().unwrap().iter().map(|c| c["target_regs"].as_u64().unwrap()).collect();
    assert_eq!(targets, vec![42, 36]);
}

#[test]
fn demote_then_check_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.sass");
    let st = shmspill(&["demote", "--input", path(&fixture("wide34.sass")), "--target-regs", "32", "--output", path(&out)]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let sidecar = dir.path().join("d.json");
    let v = ok_json(&["check", "--input", path(&out), "--sidecar", path(&sidecar)]);
    assert_eq!(v["clean"], true);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains(".dynshared"));
}

#[test]
fn check_flags_corrupted_stride() {
    let out = shmspill(&[
        "check",
        "--input",
        path(&fixture("corrupt_stride.sass")),
        "--sidecar",
        path(&fixture("corrupt_stride.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!v["bank_findings"].as_array().unwrap().is_empty());
}

#[test]
fn run_is_deterministic_per_seed() {
    let args = ["run", "--input", "", "--seed", "5", "--mem-size", "131072"];
    let input = fixture("r32.sass");
    let mut a = args;
    a[2] = path(&input);
    let first = ok_json(&a);
    assert_eq!(first, ok_json(&a));
    assert!(first["cycles"].as_u64().unwrap() > 0);
}

#[test]
fn run_reads_hex_memory_images() {
    let dir = tempfile::tempdir().unwrap();
    let mem = dir.path().join("mem.hex");
    std::fs::write(&mem, "0x00000000 2a000000\n00000000 00000000\n").unwrap();
    let k = dir.path().join("k.sass");
    std::fs::write(&k, ".kernel k\n.blockdim 32\n.shared 0\nB--:-:W1:-:1 LDG R0, [RZ+0x4] ;\nB1:R2:-:-:1 STG [RZ+0x0], R0 ;\nB2:-:-:-:1 EXIT ;\n").unwrap();
    let v = ok_json(&["run", "--input", path(&k), "--mem", path(&mem)]);
    assert_eq!(v["global"], "2a0000002a0000000000000000000000");
}

#[test]
fn compact_keeps_the_kernel_parseable() {
    let out = shmspill(&["compact", "--input", path(&fixture("diamond.sass")), "--bank-aware"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(".kernel diamond") || text.contains(".kernel diamond"));
}

#[test]
fn pipeline_writes_variants_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = shmspill(&[
        "pipeline",
        "--input",
        path(&fixture("wide44.sass")),
        "--max-variants",
        "6",
        "--json-out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("capped at 6"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ranking"].as_array().unwrap().len(), 6);
    assert!(dir.path().join("chosen.sass").exists());
    let variants = std::fs::read_dir(dir.path().join("variants")).unwrap().count();
    assert_eq!(variants, 10);
}

#[test]
fn select_ranks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = shmspill(&[
        "select",
        "--inputs",
        path(&fixture("wide34.sass")),
        path(&fixture("r33.sass")),
        "--json-out",
        path(dir.path()),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("chosen: "));
    assert!(dir.path().join("select.json").exists());
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("bad.sass");
    std::fs::write(&k, ".kernel bad\n.blockdim 32\n.shared 0\nB--:-:-:-:1 FROB R0 ;\n").unwrap();
    let out = shmspill(&["predict", "--input", path(&k)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn shipped_profiles_match_defaults() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../profiles");
    let text = |n: &str| std::fs::read_to_string(root.join(n)).unwrap();
    assert_eq!(shmspill::occupancy::ArchProfile::parse(&text("maxwell.profile")).unwrap(), Default::default());
    assert_eq!(shmspill::asm::LatencyTable::parse(&text("latency.table")).unwrap(), Default::default());
    assert_eq!(shmspill::predict::OccupancyCurve::parse(&text("maxwell.profile")).unwrap(), Default::default());
    let (profile, table) = (root.join("maxwell.profile"), root.join("latency.table"));
    let fx = fixture("wide44.sass");
    let with = ["--profile", path(&profile), "--latency-table", path(&table), "occupancy", "--input", path(&fx)];
    assert_eq!(ok_json(&with), ok_json(&["occupancy", "--input", path(&fx)]));
}
