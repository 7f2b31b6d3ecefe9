use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtl"))
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = mtl(&[
        "synth",
        "--d",
        "10",
        "--m",
        "4",
        "--groups",
        "2",
        "--n-per-task",
        "40",
        "--n-test",
        "30",
        "--undersample",
        "0:8",
        "--out-dir",
        s(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(mtl(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mtl(&["frobnicate"]).status.code(), Some(1));
    let out = mtl(&["synth", "--undersample", "0:x", "--out-dir", "unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad count"));
    assert_eq!(mtl(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = mtl(&[
        "predict",
        "--model",
        s(&dir.join("nope.mtlm")),
        "--features",
        s(&dir.join("x.mtlf")),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    fs::write(
        dir.join("x.mtlf"),
        b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00",
    )
    .unwrap();
    fs::write(dir.join("y.csv"), "a\n").unwrap();
    fs::write(dir.join("g.txt"), "G: a\n").unwrap();
    let out = mtl(&[
        "train",
        "--features",
        s(&dir.join("x.mtlf")),
        "--labels",
        s(&dir.join("y.csv")),
        "--groups",
        s(&dir.join("g.txt")),
        "--out",
        s(&dir.join("m.mtlm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn synthetic_problem_trains_predicts_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(&dir.join("data"));
    for split in ["train", "test"] {
        for t in ["t00", "t01", "t02", "t03"] {
            assert!(dir.join(format!("data/{split}/{t}.mtlf")).exists());
            assert!(dir.join(format!("data/{split}/{t}.csv")).exists());
        }
    }
    let groups = dir.join("data/groups.txt");
    assert_eq!(
        fs::read_to_string(&groups).unwrap(),
        "group0: t00, t02\ngroup1: t01, t03\n"
    );

    let model = dir.join("m.mtlm");
    let report = dir.join("trace.jsonl");
    let out = mtl(&[
        "train",
        "--data-dir",
        s(&dir.join("data/train")),
        "--groups",
        s(&groups),
        "--latent-k",
        "3",
        "--outer-max",
        "5",
        "--out",
        s(&model),
        "--report",
        s(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = fs::read_to_string(&report).unwrap();
    let lines: Vec<serde_json::Value> = trace
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty() && lines.len() <= 5);
    assert!(lines.iter().all(|l| l["objective"].as_f64().unwrap() > 0.0));

    let out = mtl(&[
        "predict",
        "--model",
        s(&model),
        "--features",
        s(&dir.join("data/test/t01.mtlf")),
        "--labels-only",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("t00,t01,t02,t03"));
    let rows: Vec<&str> = rows.collect();
    assert_eq!(rows.len(), 30);
    assert!(rows
        .iter()
        .all(|r| r.split(',').all(|v| v == "1" || v == "-1")));

    let out = mtl(&[
        "eval",
        "--model",
        s(&model),
        "--data-dir",
        s(&dir.join("data/test")),
        "--groups",
        s(&groups),
        "--format",
        "csv",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("kind,name,group,attributes,accuracy,average_precision\n"));
    assert_eq!(
        csv.lines().filter(|l| l.starts_with("attribute,")).count(),
        4
    );
    assert_eq!(csv.lines().filter(|l| l.starts_with("group,")).count(), 2);
    assert!(csv.lines().last().unwrap().starts_with("total,"));
}

#[test]
fn baselines_and_cross_validation_run_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(&dir.join("data"));
    let train = dir.join("data/train");
    for kind in ["lasso", "l21", "ridge"] {
        let out = mtl(&[
            "baseline",
            kind,
            "--data-dir",
            s(&train),
            "--out",
            s(&dir.join(format!("{kind}.mtlm"))),
        ]);
        assert!(
            out.status.success(),
            "{kind}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = mtl(&[
        "cv",
        "--data-dir",
        s(&train),
        "--groups",
        s(&dir.join("data/groups.txt")),
        "--mu-grid",
        "0.1,1",
        "--gamma-grid",
        "0.01",
        "--folds",
        "2",
        "--latent-k",
        "3",
        "--outer-max",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(last["best_mu"].as_f64().is_some() && last["best_gamma"].as_f64() == Some(0.01));
    assert_eq!(text.lines().count(), 3);

    let out = mtl(&["cv", "--data-dir", s(&train), "--folds", "2"]);
    assert_eq!(out.status.code(), Some(1), "grouped cv needs --groups");
}
