use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn c2f(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2f"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = c2f(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = c2f(dir, args);
    assert_eq!(out.status.code(), Some(1), "{args:?}");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

/// Small labelled graph and a short config.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--out",
            "g",
            "--blocks",
            "15,15",
            "--p-in",
            "0.3",
            "--p-out",
            "0.05",
            "--feature-dim",
            "4",
            "--seed",
            "3",
        ],
    );
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"iterations": 4, "negatives": 8, "encoder": {"heads": 2, "units": 4, "out_dim": 8}}"#,
    )
    .unwrap();
    dir
}

fn read(dir: &Path, p: &str) -> Vec<u8> {
    std::fs::read(dir.join(p)).unwrap()
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["verify", "--seed", "5"]);
    assert_eq!(out.lines().count(), 6);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn synth_is_deterministic() {
    let dir = workspace();
    ok(
        dir.path(),
        &[
            "synth",
            "--out",
            "h",
            "--blocks",
            "15,15",
            "--p-in",
            "0.3",
            "--p-out",
            "0.05",
            "--feature-dim",
            "4",
            "--seed",
            "3",
        ],
    );
    for f in ["edges.txt", "features.csv", "labels.txt"] {
        assert_eq!(
            read(dir.path(), &format!("g/{f}")),
            read(dir.path(), &format!("h/{f}"))
        );
    }
}

#[test]
fn pretrain_is_byte_identical_and_config_round_trips() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "pretrain", "--graph", "g", "--config", "cfg.json", "--out", "a", "--seed", "7",
        ],
    );
    ok(
        d,
        &[
            "pretrain", "--graph", "g", "--config", "cfg.json", "--out", "b", "--seed", "7",
        ],
    );
    let dumped = ok(
        d,
        &[
            "pretrain",
            "--graph",
            "g",
            "--config",
            "cfg.json",
            "--seed",
            "7",
            "--dump-config",
        ],
    );
    std::fs::write(d.join("dumped.json"), &dumped).unwrap();
    ok(
        d,
        &[
            "pretrain",
            "--graph",
            "g",
            "--config",
            "dumped.json",
            "--out",
            "c",
        ],
    );
    for f in [
        "encoder.c2fp",
        "embeddings.c2fe",
        "losses.csv",
        "config.json",
    ] {
        let a = read(d, &format!("a/{f}"));
        assert_eq!(a, read(d, &format!("b/{f}")), "{f}");
        assert_eq!(a, read(d, &format!("c/{f}")), "{f}");
    }
    assert_eq!(read(d, "a/config.json"), dumped.as_bytes());
    let emb = read(d, "a/embeddings.c2fe");
    assert_eq!(&emb[..4], b"C2FE");
    assert_eq!(emb.len(), 24 + 30 * 8 * 8);
    ok(
        d,
        &[
            "pretrain", "--graph", "g", "--config", "cfg.json", "--out", "e", "--seed", "8",
        ],
    );
    assert_ne!(emb, read(d, "e/embeddings.c2fe"));
}

#[test]
fn probe_and_diagnose_emit_csv() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &[
            "pretrain", "--graph", "g", "--config", "cfg.json", "--out", "run",
        ],
    );
    let csv = ok(
        d,
        &[
            "probe",
            "--embeddings",
            "run/embeddings.c2fe",
            "--labels",
            "g/labels.txt",
            "--train-per-class",
            "5",
            "--val-per-class",
            "5",
            "--run-id",
            "tiny",
        ],
    );
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "run_id,seed,accuracy,f1,auc,recall");
    assert!(lines[1].starts_with("tiny,0,"));
    assert_eq!(lines.len(), 2);

    ok(
        d,
        &[
            "diagnose",
            "--graph",
            "g",
            "--config",
            "cfg.json",
            "--checkpoint",
            "run/encoder.c2fp",
            "--ratios",
            "0,0.5,1",
            "--draws",
            "2",
            "--out",
            "diag.csv",
        ],
    );
    let diag = String::from_utf8(read(d, "diag.csv")).unwrap();
    let rows: Vec<_> = diag.lines().collect();
    assert_eq!(rows[0], "drop_ratio,inter_view,intra_view");
    assert!(rows[1].starts_with("0.000000,1.000000,"));
    assert_eq!(rows.len(), 4);
}

#[test]
fn ablate_rows_do_not_depend_on_threads() {
    let dir = workspace();
    let d = dir.path();
    let args = |threads: &'static str| {
        vec![
            "ablate",
            "--graph",
            "g",
            "--config",
            "cfg.json",
            "--seeds",
            "2",
            "--train-per-class",
            "5",
            "--val-per-class",
            "5",
            "--threads",
            threads,
        ]
    };
    let one = ok(d, &args("1"));
    assert_eq!(one, ok(d, &args("3")));
    let ids: Vec<_> = one
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids, ["vanilla", "coarse", "fine", "c2f"]);
}

#[test]
fn failures_exit_one_with_one_line() {
    let dir = workspace();
    let d = dir.path();
    assert!(fails(
        d,
        &[
            "probe",
            "--embeddings",
            "missing.c2fe",
            "--labels",
            "g/labels.txt"
        ]
    )
    .starts_with("error: "));
    std::fs::write(d.join("typo.json"), r#"{"iteratons": 3}"#).unwrap();
    let err = fails(
        d,
        &[
            "pretrain",
            "--graph",
            "g",
            "--config",
            "typo.json",
            "--out",
            "x",
        ],
    );
    assert!(err.contains("iteratons"), "{err}");
    assert!(!d.join("x").exists());
    fails(d, &["pretrain", "--graph", "g", "--no-such-flag"]);
    fails(d, &["verify", "--threads", "0"]);
    std::fs::write(d.join("bad.json"), r#"{"mode": "coarse", "alpha": 0.5}"#).unwrap();
    fails(
        d,
        &[
            "pretrain", "--graph", "g", "--config", "bad.json", "--out", "y",
        ],
    );
    std::fs::write(d.join("junk.c2fe"), b"C2FX").unwrap();
    fails(
        d,
        &[
            "probe",
            "--embeddings",
            "junk.c2fe",
            "--labels",
            "g/labels.txt",
        ],
    );
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--help"]);
    for cmd in ["synth", "pretrain", "probe", "ablate", "diagnose", "verify"] {
        assert!(out.contains(cmd), "{cmd}");
    }
}
