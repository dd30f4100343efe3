use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rnkn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnkn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = rnkn(
        &["gen", "--out", "c.jsonl", "--manifest", "m.jsonl", "--categories", "3", "--diseases", "3", "--records", "90", "--seed", "2"],
        d,
    );
    assert!(gen.status.success(), "{gen:?}");
    assert!(stdout(&gen).contains("90 records"));

    let train = rnkn(
        &[
            "train", "--corpus", "c.jsonl", "--out", "model.rnkn", "--holdout", "0.2", "--test-out", "test.jsonl",
            "--dim", "8", "--epochs", "6", "--step", "0.01", "--stats", "stats.csv", "--knowledge", "kb.tsv",
        ],
        d,
    );
    assert!(train.status.success(), "{train:?}");
    let stats = fs::read_to_string(d.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 7);
    assert!(fs::read_to_string(d.join("kb.tsv")).unwrap().contains("\tSID\t"));

    let eval = rnkn(&["eval", "--model", "model.rnkn", "--corpus", "test.jsonl", "--out-dir", "ev", "--mode", "present"], d);
    assert!(eval.status.success(), "{eval:?}");
    assert!(stdout(&eval).contains("P@10="));
    for f in ["report.csv", "rankings.csv", "dcg.csv"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
    let dcg_rows = fs::read_to_string(d.join("ev/dcg.csv")).unwrap().lines().count();
    assert_eq!(dcg_rows, 1 + 18);

    let diag = rnkn(&["diagnose", "--model", "model.rnkn", "--corpus", "test.jsonl", "--top", "3", "--dump-tree"], d);
    assert!(diag.status.success(), "{diag:?}");
    assert!(stdout(&diag).contains("  1. D0"));

    let export = rnkn(&["export", "--model", "model.rnkn", "--out", "emb.tsv", "--diseases-only"], d);
    assert!(export.status.success(), "{export:?}");
    let emb = fs::read_to_string(d.join("emb.tsv")).unwrap();
    assert_eq!(emb.lines().count(), 9);
    assert!(emb.lines().all(|l| l.split('\t').count() == 2 + 8));

    let project = rnkn(&["project", "--input", "emb.tsv", "--out", "proj.tsv", "--manifest", "m.jsonl"], d);
    assert!(project.status.success(), "{project:?}");
    let proj = fs::read_to_string(d.join("proj.tsv")).unwrap();
    assert_eq!(proj.lines().count(), 10);
    assert!(proj.lines().skip(1).all(|l| !l.split('\t').nth(2).unwrap().is_empty()));
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = rnkn(&["gradcheck", "--trials", "10", "--dim", "4"], dir.path());
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(rnkn(&["--help"], d).status.code(), Some(0));
    assert_eq!(rnkn(&["train"], d).status.code(), Some(1));
    assert_eq!(rnkn(&["frobnicate"], d).status.code(), Some(1));
    let missing = rnkn(&["eval", "--model", "nope.rnkn", "--corpus", "nope.jsonl"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    let bad = rnkn(&["train", "--corpus", "bad.jsonl", "--out", "m.rnkn"], d);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 1"));
}
