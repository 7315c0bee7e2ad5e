//! Command-line behaviour: exit codes, messages and generated files.

use std::fs;
use std::path::Path;
use std::process::Command;

use mru_harness::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn mru(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("mru").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gradcheck_single_component_passes() {
    let (code, out, _) = mru(&["gradcheck", "--component", "highway"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("component=highway status=pass"), "{out}");
    assert!(out.contains("failures=0"));
    let (code, _, err) = mru(&["gradcheck", "--component", "nonsense"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("nonsense"));
}

#[test]
fn missing_config_names_the_path() {
    let (code, _, err) = mru(&["train", "--config", "/definitely/missing.json"]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("/definitely/missing.json"), "{err}");
}

#[test]
fn bad_config_key_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"model.dimm": 3}"#).unwrap();
    let (code, _, err) = mru(&["train", "--config", s(&cfg)]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("model.dimm"), "{err}");
}

#[test]
fn unknown_subcommand_and_flags_are_usage_errors() {
    assert_eq!(mru(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(mru(&["bench", "--encoders", "transformer"]).0, EXIT_USAGE);
    assert_eq!(mru(&["bench", "--modes", "sideways"]).0, EXIT_USAGE);
    let (code, out, _) = mru(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("gen-data"));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for task in ["mcq", "span"] {
        let a = dir.path().join(format!("{task}-a.jsonl"));
        let b = dir.path().join(format!("{task}-b.jsonl"));
        let c = dir.path().join(format!("{task}-c.jsonl"));
        for (p, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
            let (code, out, err) = mru(&[
                "gen-data",
                "--task",
                task,
                "--n",
                "20",
                "--seed",
                seed,
                "--out",
                s(p),
            ]);
            assert_eq!(code, EXIT_OK, "{err}");
            assert!(out.starts_with("records=20"));
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    }
    let (code, _, err) = mru(&[
        "gen-data",
        "--task",
        "mcq",
        "--gap",
        "100",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("gap"), "{err}");
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let dev = dir.path().join("dev.jsonl");
    let ckpt = dir.path().join("model.ckpt");
    let cfg = dir.path().join("cfg.json");
    let csv = dir.path().join("report.csv");
    for (p, seed) in [(&train, "1"), (&dev, "2")] {
        let (code, _, err) = mru(&[
            "gen-data",
            "--task",
            "span",
            "--n",
            "24",
            "--len",
            "20",
            "--gap",
            "3",
            "--seed",
            seed,
            "--out",
            s(p),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    fs::write(
        &cfg,
        r#"{"model.task": "span", "model.dim": 6, "embedding.dim": 6, "encoder.ranges": [1, 2],
            "train.epochs": 2, "train.batch_size": 8}"#,
    )
    .unwrap();
    let (code, out, err) = mru(&[
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&train),
        "--dev",
        s(&dev),
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("epoch=2 loss="), "{out}");
    assert!(out.contains("checkpoint="));

    let (code, report, err) = mru(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&dev),
        "--out",
        s(&csv),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    for key in ["em", "f1", "bleu1", "bleu4", "rouge_l"] {
        assert!(report.contains(key), "{report}");
    }
    assert_eq!(
        mru(&["eval", "--checkpoint", s(&ckpt), "--data", s(&dev)]).1,
        report
    );
    assert!(fs::read_to_string(&csv).unwrap().contains("rouge_l"));

    // an mcq set cannot be read by a span model
    let mcq = dir.path().join("mcq.jsonl");
    assert_eq!(
        mru(&["gen-data", "--task", "mcq", "--n", "4", "--out", s(&mcq)]).0,
        EXIT_OK
    );
    assert_eq!(
        mru(&["eval", "--checkpoint", s(&ckpt), "--data", s(&mcq)]).0,
        EXIT_DATA
    );

    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&ckpt, bytes).unwrap();
    let (code, _, err) = mru(&["eval", "--checkpoint", s(&ckpt), "--data", s(&dev)]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("model.ckpt"), "{err}");
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let (code, out, err) = mru(&[
        "bench",
        "--encoders",
        "simple_mru,gru",
        "--seq-lens",
        "8",
        "--dim",
        "4",
        "--batch",
        "2",
        "--repeats",
        "1",
        "--modes",
        "forward",
        "--ranges",
        "1,2",
        "--out",
        s(&csv),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().count(), 2);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with(mru_harness::bench::CSV_HEADER));
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_mru");
    let ok = Command::new(bin)
        .args(["gradcheck", "--component", "pointer"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("component=pointer status=pass"));
    let status = Command::new(bin)
        .args([
            "eval",
            "--checkpoint",
            "/nope.ckpt",
            "--data",
            "/nope.jsonl",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&status.stderr).contains("/nope.ckpt"));
}
