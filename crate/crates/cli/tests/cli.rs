use std::path::Path;
use std::process::{Command, Output};

fn bsl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny benchmark plus a matching config, written into `dir`.
fn small_setup(dir: &Path) {
    let out = bsl(
        &["synth-data", "--out", "data", "--side", "32", "--train", "12", "--val", "4", "--test", "6"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = serde_json::json!({
        "data": { "manifest": "data/manifest.csv", "input_side": 32 },
        "shuffle": { "s_intra": 4, "s_inter": 8 },
        "model": { "widths": [4, 8, 8] },
        "batch_size": 4,
        "max_steps": 6,
        "eval_every": 3,
    });
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bsl(&["--help"], dir.path())), 0);
    assert_eq!(code(&bsl(&["train", "--bogus"], dir.path())), 2);
    assert_eq!(code(&bsl(&["eval", "--degrade", "blur:4"], dir.path())), 2);
    assert_eq!(code(&bsl(&["train", "--set", "weights.gamma=1"], dir.path())), 2);
    assert_eq!(code(&bsl(&["train", "--set", "shuffle.s_inter=30"], dir.path())), 2);
    assert_eq!(code(&bsl(&["eval", "--run", "nowhere"], dir.path())), 2);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&bsl(&["eval", "--checkpoint", "junk.ckpt"], dir.path())), 1);
    assert_eq!(code(&bsl(&["inspect-shuffle", "missing.png"], dir.path())), 1);
}

#[test]
fn inspect_shuffle_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let args = |out: &'static str| {
        vec![
            "inspect-shuffle",
            "data/real/train_00000.png",
            "--seed",
            "5",
            "--set",
            "data.input_side=64",
            "--set",
            "shuffle.p_inter=1",
            "--out",
            out,
        ]
    };
    assert_eq!(code(&bsl(&args("a"), dir.path())), 0);
    assert_eq!(code(&bsl(&args("b"), dir.path())), 0);
    for f in ["original.png", "inter.png", "shuffled.png", "mark.png", "restored.png", "panel.png", "shuffle.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/shuffle.json")).unwrap()).unwrap();
    assert_eq!(summary["restored_exactly"], true);
    assert_eq!(summary["inter_applied"], true);
    assert_eq!(summary["P"].as_array().unwrap().len(), 4);
    assert_eq!(summary["beta"].as_array().unwrap().len(), 4);
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let out = bsl(
        &["train", "--config", "config.json", "--set", "weights.alpha=0", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let echoed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["weights"]["alpha"], 0.0);
    assert_eq!(std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 6);
    assert!(run.join("best.ckpt").is_file() && run.join("last.ckpt").is_file());

    let out = bsl(&["eval", "--run", "run", "--checkpoint", "best", "--degrade", "blur:7"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<serde_json::Value> =
        stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["tag"], "blur:7");
    assert_eq!(reports[0]["n"], 12);

    let out = bsl(&["sweep", "--run", "run", "--ladder", "blur", "--out", "sweep"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}
