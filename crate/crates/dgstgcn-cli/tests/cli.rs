//! End-to-end tests driving the `dgstgcn` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dgstgcn"));
    c.env_remove("DGSTGCN_SEED");
    c
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn dgstgcn");
    assert!(
        out.status.success(),
        "command failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny overlay so train-dependent tests finish in seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{"train": {"epochs": 2, "batch_size": 8, "base_lr": 0.01, "input_length": 8}}"#,
    )
    .unwrap();
    path
}

fn tiny_synth(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let data = dir.join(name);
    run_ok(bin().args([
        "synth",
        "--classes",
        "2",
        "--per-class",
        "8",
        "--joints",
        "5",
        "--frames",
        "12",
        "--seed",
        seed,
        "--out",
        data.to_str().unwrap(),
    ]));
    data
}

#[test]
fn synth_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "synth".to_string(),
            "--classes".into(),
            "4".into(),
            "--per-class".into(),
            "64".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let (a, b) = (dir.path().join("a.skl"), dir.path().join("b.skl"));
    run_ok(bin().args(args(&a)));
    run_ok(bin().args(args(&b)));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("skl.json")).unwrap(),
        std::fs::read(b.with_extension("skl.json")).unwrap(),
        "sidecars differ"
    );
}

#[test]
fn env_seed_matches_flag_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.skl"), dir.path().join("b.skl"));
    run_ok(bin().args(["synth", "--seed", "41", "--out", a.to_str().unwrap()]));
    run_ok(
        bin()
            .env("DGSTGCN_SEED", "41")
            .args(["synth", "--out", b.to_str().unwrap()]),
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn train_eval_ensemble_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = tiny_synth(dir.path(), "d.skl", "3");
    let ckpt = dir.path().join("m.dgw");
    let log = dir.path().join("train.jsonl");

    let out = run_ok(bin().args([
        "--preset",
        "desk",
        "--config",
        cfg.to_str().unwrap(),
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]));
    assert!(stdout_of(&out).contains("trained 2 epochs"));

    // the JSONL log leads with the fully-resolved config
    let log_text = std::fs::read_to_string(&log).unwrap();
    let mut lines = log_text.lines();
    let head: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(head["resolved"]["train"]["epochs"], 2);
    assert_eq!(head["resolved"]["model"]["num_joints"], 5, "model must follow the data");
    assert_eq!(lines.count(), 2, "one record per epoch");

    let scores = dir.path().join("s.scr");
    let report = dir.path().join("r.json");
    let out = run_ok(bin().args([
        "--preset",
        "desk",
        "--config",
        cfg.to_str().unwrap(),
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--scores",
        scores.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]));
    assert!(stdout_of(&out).contains("top1"));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["n_samples"], 16);

    let fused = dir.path().join("f.json");
    let out = run_ok(bin().args([
        "ensemble",
        "--scores",
        scores.to_str().unwrap(),
        scores.to_str().unwrap(),
        "--weights",
        "2,1",
        "--report",
        fused.to_str().unwrap(),
    ]));
    assert!(stdout_of(&out).contains("ensemble of 2"));
    let fused: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fused).unwrap()).unwrap();
    // fusing a file with itself reproduces its accuracy
    assert_eq!(fused["top1"], rep["top1"]);
}

#[test]
fn deterministic_flag_and_worker_count_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = tiny_synth(dir.path(), "d.skl", "9");
    let train = |extra: &[&str], out: &Path| {
        let mut c = bin();
        c.args([
            "--preset",
            "desk",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
        ]);
        c.args(extra);
        c.args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        run_ok(&mut c);
    };
    let (a, b) = (dir.path().join("a.dgw"), dir.path().join("b.dgw"));
    train(&["--deterministic"], &a);
    train(&["--workers", "3"], &b);
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "worker count leaked into the checkpoint"
    );
}

#[test]
fn profile_reports_the_paper_scale_model() {
    let out = run_ok(bin().args(["profile", "--preset", "paper-ablation", "--json"]));
    let rep: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let params = rep["total_params"].as_u64().unwrap() as f64;
    assert!(
        (params - 1.69e6).abs() / 1.69e6 < 0.15,
        "params {params} not within 15% of 1.69M"
    );
    assert_eq!(rep["input_frames"], 64);

    // text mode carries the per-block table and the assumptions
    let out = run_ok(bin().args(["profile", "--preset", "paper-ablation"]));
    let text = stdout_of(&out);
    assert!(text.contains("block10") && text.contains("fc"));
}

#[test]
fn modality_flag_changes_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = tiny_synth(dir.path(), "d.skl", "11");
    let ckpt = dir.path().join("m.dgw");
    run_ok(bin().args([
        "--preset",
        "desk",
        "--config",
        cfg.to_str().unwrap(),
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]));
    let eval = |modality: &str, scores: &Path| {
        run_ok(bin().args([
            "--preset",
            "desk",
            "--config",
            cfg.to_str().unwrap(),
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--modality",
            modality,
            "--scores",
            scores.to_str().unwrap(),
        ]));
    };
    let (j, b) = (dir.path().join("j.scr"), dir.path().join("b.scr"));
    eval("joint", &j);
    eval("bone", &b);
    assert_ne!(
        std::fs::read(&j).unwrap(),
        std::fs::read(&b).unwrap(),
        "bone stream scored identically to joints"
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let code = |cmd: &mut Command| cmd.output().unwrap().status.code().unwrap();

    assert_eq!(code(bin().arg("--definitely-not-a-flag")), 1);
    assert_eq!(code(bin().args(["--preset", "nope", "profile"])), 1);
    assert_eq!(
        code(bin().env("DGSTGCN_SEED", "3.5").args(["profile"])),
        1,
        "malformed env seed must be a usage error"
    );
    assert_eq!(code(bin().arg("--help")), 0);

    // data errors: missing file, then a truncated one
    assert_eq!(
        code(bin().args([
            "--preset",
            "desk",
            "train",
            "--data",
            dir.path().join("missing.skl").to_str().unwrap(),
            "--out",
            dir.path().join("x.dgw").to_str().unwrap(),
        ])),
        2
    );
    let data = tiny_synth(dir.path(), "d.skl", "3");
    let full = std::fs::read(&data).unwrap();
    let cut = dir.path().join("cut.skl");
    std::fs::write(&cut, &full[..60]).unwrap();
    let out = bin()
        .args([
            "--preset",
            "desk",
            "train",
            "--data",
            cut.to_str().unwrap(),
            "--out",
            dir.path().join("x.dgw").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code().unwrap(), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("byte"),
        "format errors should name the offending offset"
    );

    // numerical failure: an absurd learning rate diverges
    let cfg = dir.path().join("diverge.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"epochs": 1, "batch_size": 8, "base_lr": 1e9, "input_length": 8}}"#,
    )
    .unwrap();
    assert_eq!(
        code(bin().args([
            "--preset",
            "desk",
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.path().join("x.dgw").to_str().unwrap(),
        ])),
        3
    );
}

#[test]
fn gradcheck_command_reports_every_operator() {
    let out = run_ok(bin().arg("gradcheck"));
    let text = stdout_of(&out);
    let passes = text.lines().filter(|l| l.starts_with("PASS grad:")).count();
    assert!(passes >= 30, "only {passes} operator lines");
    assert!(!text.contains("FAIL"));
    assert!(text.contains("composed two-block model"));
}
