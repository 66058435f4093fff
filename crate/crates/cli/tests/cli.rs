//! End-to-end runs of the `pdkt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn pdkt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdkt"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .env_remove("PDKT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
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
fn synth_is_byte_identical_and_creates_missing_dirs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let nested = b.path().join("not/yet/there");
    ok(&pdkt(
        a.path(),
        &["synth", "--students", "50", "--seed", "7"],
    ));
    ok(&pdkt(
        &nested,
        &["synth", "--students", "50", "--seed", "7"],
    ));
    let (x, y) = (
        read_dir_bytes(&a.path().join("data")),
        read_dir_bytes(&nested.join("data")),
    );
    assert_eq!(x.len(), 4);
    assert_eq!(x, y);
    ok(&pdkt(
        a.path(),
        &["synth", "--students", "50", "--seed", "8"],
    ));
    assert_ne!(read_dir_bytes(&a.path().join("data")), y);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let out = pdkt(d.path(), &["synth", "--students", "0"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("students"));

    assert_eq!(pdkt(d.path(), &["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(pdkt(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(pdkt(d.path(), &["--help"]).status.code(), Some(0));

    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let out = pdkt(d.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));

    let out = pdkt(d.path(), &["ablate", "--variants", "full,nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let d = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let out = pdkt(d.path(), &["--config", cfg, "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("problems.jsonl"), "{}", stderr(&out));

    ok(&pdkt(d.path(), &["--config", cfg, "synth"]));
    let out = pdkt(d.path(), &["--config", cfg, "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("codes-classified.emb") && stderr(&out).contains("pretrain-code"),
        "{}",
        stderr(&out)
    );

    let out = pdkt(
        d.path(),
        &["--config", cfg, "eval", "--checkpoint", "nowhere.pdkt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.pdkt"));

    // The no-code variant needs no code tables.
    ok(&pdkt(
        d.path(),
        &[
            "--config",
            cfg,
            "train",
            "--no-code",
            "--epochs",
            "1",
            "--seeds",
            "0",
        ],
    ));
}

#[test]
fn data_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pdkt"))
        .args(["synth", "--students", "30"])
        .env("PDKT_DATA_DIR", d.path())
        .output()
        .unwrap();
    ok(&out);
    assert!(d.path().join("data/events.jsonl").exists());
}

#[test]
fn ingest_filters_and_copies() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    ok(&pdkt(src.path(), &["synth", "--students", "25"]));
    let stdout = ok(&pdkt(
        dst.path(),
        &[
            "ingest",
            "--from",
            src.path().join("data").to_str().unwrap(),
        ],
    ));
    assert!(stdout.contains("kept 25 students"), "{stdout}");
    assert_eq!(
        read_dir_bytes(&src.path().join("data")),
        read_dir_bytes(&dst.path().join("data"))
    );
    let report = records(&dst.path().join("reports/ingest.jsonl"));
    assert_eq!(report[2]["data"]["kept_users"], 25);

    std::fs::write(src.path().join("data/events.jsonl"), "{not json}\n").unwrap();
    let out = pdkt(
        dst.path(),
        &[
            "ingest",
            "--from",
            src.path().join("data").to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    ok(&pdkt(
        d.path(),
        &["--config", cfg, "synth", "--students", "12"],
    ));
    let out = pdkt(
        d.path(),
        &[
            "--config",
            cfg,
            "train",
            "--no-code",
            "--lr",
            "1e308",
            "--seeds",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("divergence"));
}

#[test]
fn full_pipeline_on_fifty_students() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", cfg];
        all.extend_from_slice(args);
        ok(&pdkt(dir, &all))
    };

    run(&["synth"]);
    run(&["ingest", "--from", dir.join("data").to_str().unwrap()]);
    run(&["embed-problems"]);
    run(&["embed-problems", "--node2vec"]);
    assert!(std::fs::read_to_string(dir.join("artifacts/problems.emb"))
        .unwrap()
        .starts_with("# pdkt embedding-table v1"));
    run(&["pretrain-code"]);
    run(&["train"]);

    // Every report starts with the effective configuration.
    let train = records(&dir.join("reports/train.jsonl"));
    assert_eq!(train[0]["stage"], "train");
    assert_eq!(train[0]["config"]["synth"]["students"], 50);
    assert_eq!(train[0]["config"]["train"]["epochs"], 10);
    let runs: Vec<&Value> = train.iter().filter(|r| r["record"] == "run").collect();
    assert_eq!(runs.len(), 2);

    // Evaluating a saved checkpoint reproduces its final test AUC exactly.
    for r in &runs {
        let ckpt = r["data"]["checkpoint"].as_str().unwrap();
        run(&["eval", "--checkpoint", ckpt]);
        let eval = records(&dir.join("reports/eval.jsonl"));
        assert_eq!(
            eval[1]["data"]["auc"].as_f64().unwrap().to_bits(),
            r["data"]["report"]["final_auc"].as_f64().unwrap().to_bits()
        );
    }

    // Replaying the embedded config reproduces the report bit for bit.
    let before = std::fs::read(dir.join("reports/train.jsonl")).unwrap();
    let embedded = dir.join("embedded.json");
    std::fs::write(
        &embedded,
        serde_json::to_string(&train[0]["config"]).unwrap(),
    )
    .unwrap();
    ok(&pdkt(
        dir,
        &["--config", embedded.to_str().unwrap(), "train"],
    ));
    assert_eq!(
        std::fs::read(dir.join("reports/train.jsonl")).unwrap(),
        before
    );

    run(&[
        "ablate",
        "--variants",
        "full,no_code,no_classification",
        "--seeds",
        "0",
        "--epochs",
        "2",
    ]);
    let ablate = records(&dir.join("reports/ablate.jsonl"));
    let names: Vec<&str> = ablate[1..]
        .iter()
        .map(|r| r["data"]["variant"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["full", "no_code", "no_classification"]);

    let stdout = run(&[
        "sweep",
        "--lambdas",
        "0,0.3,0.6,1,2,30",
        "--seeds",
        "0",
        "--epochs",
        "2",
    ]);
    let csv = std::fs::read_to_string(dir.join("reports/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,mode,seed,auc");
    assert_eq!(lines.len(), 13);
    assert_eq!(
        lines.iter().filter(|l| l.contains(",decay_only,")).count(),
        6
    );
    assert!(stdout.contains("decay_only"));
    let sweep = records(&dir.join("reports/sweep.jsonl"));
    assert_eq!(sweep.iter().filter(|r| r["record"] == "run").count(), 12);
}

#[test]
fn mismatched_artifact_version_fails_loudly() {
    let d = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    ok(&pdkt(
        d.path(),
        &["--config", cfg, "synth", "--students", "12"],
    ));
    ok(&pdkt(
        d.path(),
        &[
            "--config",
            cfg,
            "train",
            "--no-code",
            "--epochs",
            "1",
            "--seeds",
            "3",
        ],
    ));
    let ckpt = d.path().join("artifacts/checkpoints/seed-3.pdkt");
    let text = std::fs::read_to_string(&ckpt).unwrap();
    std::fs::write(&ckpt, text.replacen("\"version\":1", "\"version\":99", 1)).unwrap();
    let out = pdkt(
        d.path(),
        &[
            "--config",
            cfg,
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("version"), "{}", stderr(&out));
}
