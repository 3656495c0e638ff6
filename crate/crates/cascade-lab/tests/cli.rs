//! End-to-end checks of the `cascade-lab` binary: exit codes, output and
//! manifest discipline, and bit-identical reruns.

use cascade_lab::config::RunManifest;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cascade-lab"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cascade-lab-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary must launch")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every non-manifest file in `dir` must be listed in the manifest, and
/// every listed file must exist: no orphans in either direction.
fn assert_manifest_covers(dir: &Path, manifest: &RunManifest) {
    let listed: BTreeSet<String> = manifest.outputs.iter().map(|o| o.path.clone()).collect();
    let mut on_disk = BTreeSet::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if !name.ends_with("_manifest.json") {
            on_disk.insert(name);
        }
    }
    assert_eq!(listed, on_disk, "outputs on disk must match the manifest exactly");
}

#[test]
fn help_and_version_exit_zero() {
    assert_exit(&run(&["--help"]), 0);
    assert_exit(&run(&["--version"]), 0);
    assert_exit(&run(&["corrector-limit", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_exit(&run(&[]), 1);
    assert_exit(&run(&["no-such-command"]), 1);
    assert_exit(&run(&["corrector-limit", "--no-such-flag"]), 1);
    assert_exit(&run(&["shell-run", "--master-seed", "not-a-number"]), 1);
}

#[test]
fn invalid_config_exits_one() {
    let dir = temp_dir("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, "{\"schema_version\":1,\"no_such_block\":{}}").unwrap();
    let out = run(&["corrector-limit", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 1);

    std::fs::write(&cfg, "{\"schema_version\":99}").unwrap();
    let out = run(&["corrector-limit", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 1);

    let out = run(&["hypotheses", "--which", "H9"]);
    assert_exit(&out, 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrector_limit_run_is_bit_identical_across_reruns() {
    let dir = temp_dir("rerun");
    let out = run(&["corrector-limit", "--out", dir.to_str().unwrap(), "--master-seed", "9"]);
    assert_exit(&out, 0);
    let csv = std::fs::read(dir.join("corrector_limit.csv")).unwrap();
    let manifest = RunManifest::load(&dir.join("corrector_limit_manifest.json")).unwrap();
    assert_manifest_covers(&dir, &manifest);
    assert_eq!(manifest.master_seed, 9);

    let out = run(&["corrector-limit", "--out", dir.to_str().unwrap(), "--master-seed", "9"]);
    assert_exit(&out, 0);
    let csv2 = std::fs::read(dir.join("corrector_limit.csv")).unwrap();
    let manifest2 = RunManifest::load(&dir.join("corrector_limit_manifest.json")).unwrap();
    assert_eq!(csv, csv2, "rerun must reproduce the CSV byte for byte");
    assert_eq!(manifest.summary_hash, manifest2.summary_hash);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn shell_run_writes_expected_columns() {
    let dir = temp_dir("shell");
    let cfg = std::env::temp_dir().join(format!("cascade-cli-shell-{}.json", std::process::id()));
    std::fs::write(
        &cfg,
        "{\"schema_version\":1,\"shell_run\":{\"n_top\":5,\"nu_d\":1.0,\
         \"initial\":[[0,0.1]],\"t_end\":0.5,\"blow_up_threshold\":null}}",
    )
    .unwrap();
    let out = run(&[
        "shell-run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let series = std::fs::read_to_string(dir.join("shell_series.csv")).unwrap();
    assert!(series.starts_with("time,energy,proxy\n"));
    let finals = std::fs::read_to_string(dir.join("shell_final.csv")).unwrap();
    // Six shells plus the header.
    assert_eq!(finals.lines().count(), 7);
    let manifest = RunManifest::load(&dir.join("shell_run_manifest.json")).unwrap();
    assert_manifest_covers(&dir, &manifest);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::remove_file(&cfg).ok();
}

#[test]
fn spde_run_records_seeds_and_reproduces() {
    let dir = temp_dir("spde");
    let cfg = std::env::temp_dir().join(format!("cascade-cli-spde-{}.json", std::process::id()));
    std::fs::write(
        &cfg,
        "{\"schema_version\":1,\"spde_run\":{\"trajectories\":3,\"t_end\":0.01}}",
    )
    .unwrap();
    let args = [
        "spde-run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--master-seed",
        "4",
        "--threads",
        "1",
    ];
    let out = run(&args);
    assert_exit(&out, 0);
    let manifest = RunManifest::load(&dir.join("spde_run_manifest.json")).unwrap();
    assert_manifest_covers(&dir, &manifest);
    assert_eq!(manifest.trajectory_seeds, vec![4 ^ 0, 4 ^ 1, 4 ^ 2]);
    let series = std::fs::read(dir.join("spde_series.csv")).unwrap();

    let out = run(&args);
    assert_exit(&out, 0);
    assert_eq!(series, std::fs::read(dir.join("spde_series.csv")).unwrap());
    let manifest2 = RunManifest::load(&dir.join("spde_run_manifest.json")).unwrap();
    assert_eq!(manifest.summary_hash, manifest2.summary_hash);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::remove_file(&cfg).ok();
}

#[test]
fn hypotheses_flags_override_the_config_block() {
    let dir = temp_dir("hyp");
    let out = run(&[
        "hypotheses",
        "--which",
        "H1,H4",
        "--rho",
        "0..0.5:0.25",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let rows = std::fs::read_to_string(dir.join("hypotheses_grid.csv")).unwrap();
    // 2 systems x 3 grid points plus the header.
    assert_eq!(rows.lines().count(), 7);
    assert!(rows.contains("H1,"));
    assert!(rows.contains("H4,"));
    assert!(!rows.contains("NSE,"));
    let manifest = RunManifest::load(&dir.join("hypotheses_manifest.json")).unwrap();
    assert_manifest_covers(&dir, &manifest);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn measured_violation_exits_two_with_outputs_sealed() {
    let dir = temp_dir("violation");
    let cfg = std::env::temp_dir().join(format!("cascade-cli-viol-{}.json", std::process::id()));
    std::fs::write(
        &cfg,
        "{\"schema_version\":1,\"cancellation_test\":{\"seeds\":2,\"flux_tolerance\":0.0}}",
    )
    .unwrap();
    let out = run(&[
        "cancellation-test",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    let manifest = RunManifest::load(&dir.join("cancellation_test_manifest.json")).unwrap();
    assert_manifest_covers(&dir, &manifest);
    assert!(dir.join("cancellation.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
    std::fs::remove_file(&cfg).ok();
}
