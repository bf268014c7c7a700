//! Black-box tests of the `augkern` binary: exit codes, output layout,
//! rerun determinism, and seed/worker overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_augkern"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "augkern {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Non-manifest files in a run directory, sorted by name.
fn result_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn list_is_stable_and_round_trips_as_config_kinds() {
    let first = run_ok(&["list"]);
    let second = run_ok(&["list"]);
    assert_eq!(first.stdout, second.stdout);

    let text = String::from_utf8(first.stdout).unwrap();
    let kinds: Vec<&str> = text
        .lines()
        .map(|l| l.split(" — ").next().unwrap())
        .collect();
    assert_eq!(kinds.len(), 10);

    // Every listed kind is accepted as a config `kind` value (validation may
    // then fail on the missing payload, but never on the kind itself).
    let dir = tempfile::tempdir().unwrap();
    for kind in kinds {
        let path = dir.path().join(format!("{kind}.json"));
        std::fs::write(&path, format!(r#"{{"kind": "{kind}"}}"#)).unwrap();
        let out = bin().arg("validate").arg(&path).output().unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(
            !stderr.contains("unknown variant"),
            "kind `{kind}` rejected: {stderr}"
        );
    }
}

#[test]
fn stationary_run_reports_the_two_state_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_ok(&[
        "run",
        bundled("chain_stationary.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("stationary.csv")).unwrap();
    assert!(csv.starts_with("state_id,probability\n"));
    assert!(csv.contains(",0.6666666666666666\n"));
    assert!(csv.contains(",0.3333333333333333\n"));
    assert!(csv.trim_end().ends_with("# manifest: manifest.json"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["kind"], "chain-stationary");
    assert_eq!(manifest["master_seed"], 17);
}

#[test]
fn reruns_are_byte_identical_except_the_manifest_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&[
            "run",
            bundled("align_rank.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(result_files(&a), result_files(&b));

    // Manifests agree on everything except the creation time.
    let read = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap()
    };
    let (mut ma, mut mb) = (read(&a), read(&b));
    ma.as_object_mut().unwrap().remove("created_unix");
    mb.as_object_mut().unwrap().remove("created_unix");
    assert_eq!(ma, mb);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("w1"), dir.path().join("w4"));
    run_ok(&[
        "run",
        bundled("knn_equivalence.json").to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    run_ok(&[
        "run",
        bundled("knn_equivalence.json").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--workers",
        "4",
    ]);
    assert_eq!(result_files(&a), result_files(&b));
}

#[test]
fn seed_env_var_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (base, same, different) = (
        dir.path().join("base"),
        dir.path().join("same"),
        dir.path().join("different"),
    );
    run_ok(&[
        "run",
        bundled("align_rank.json").to_str().unwrap(),
        "--out",
        base.to_str().unwrap(),
    ]);
    let run_with_seed = |seed: &str, out: &Path| {
        let result = bin()
            .args([
                "run",
                bundled("align_rank.json").to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .env("AUGKERN_SEED", seed)
            .output()
            .unwrap();
        assert!(result.status.success());
    };
    run_with_seed("17", &same); // matches the config seed
    run_with_seed("18", &different);
    assert_eq!(result_files(&base), result_files(&same));
    assert_ne!(result_files(&base), result_files(&different));

    let out = bin()
        .args(["run", bundled("align_rank.json").to_str().unwrap()])
        .env("AUGKERN_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("AUGKERN_SEED"));
}

#[test]
fn malformed_configs_exit_one_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, "{\"kind\": \"chain-stationary\",").unwrap();
    let out = bin().arg("run").arg(&truncated).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let bad_field = dir.path().join("bad_field.json");
    std::fs::write(
        &bad_field,
        r#"{"kind": "chain-stationary", "chain": {"source": "reference", "name": "no-such-chain"}, "out_dir": "x"}"#,
    )
    .unwrap();
    let out = bin().arg("validate").arg(&bad_field).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("chain.reference") && stderr.contains("no-such-chain"),
        "diagnostic should name the offending field: {stderr}"
    );

    let missing = dir.path().join("does_not_exist.json");
    let out = bin().arg("run").arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn nonreversible_chain_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "run",
            bundled("kernel_build_nonreversible.json").to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not reversible"));
}

#[test]
fn every_bundled_config_validates() {
    let configs_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&configs_dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            run_ok(&["validate", path.to_str().unwrap()]);
            count += 1;
        }
    }
    assert_eq!(count, 11, "expected 11 bundled configs, found {count}");
}
