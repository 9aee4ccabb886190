use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prunegnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prunegnn")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_show_prints_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = prunegnn(&["config", "show"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("\"train_samples\": 2000"));
    assert!(text.lines().last().unwrap().starts_with("# config_hash: "));
    let paper = stdout(&prunegnn(&["config", "show", "--paper-scale"], dir.path()));
    assert!(paper.contains("\"train_samples\": 10000"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    let o = prunegnn(&["config", "show", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn distance_table_pipeline_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = prunegnn(&["reproduce", "--table", "1", "--output-dir", "out"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let text = fs::read_to_string(dir.path().join("out/table1.csv")).unwrap();
    assert!(text.starts_with("# config_hash: "));
    assert!(text.contains("\nratio,alpha=3,alpha=3.5,alpha=4,alpha=4.5,alpha=5,alpha=5.5\n0.9,7,4,3,2,2,2\n"));
}

#[test]
fn failing_assertion_gives_nonzero_exit() {
    // the α = 3 column of the neighbour table disagrees with its reference
    let dir = tempfile::tempdir().unwrap();
    let o = prunegnn(&["reproduce", "--table", "2", "--output-dir", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("[FAIL] neighbour thresholds match reference"));
}

#[test]
fn generate_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let gen = prunegnn(
        &["generate", "--count", "24", "--pairs", "6", "--region", "40", "--seed", "3", "--out", "train.jsonl"],
        p,
    );
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let train = prunegnn(
        &[
            "train",
            "--data",
            "train.jsonl",
            "--spec",
            "neighbour:2",
            "--epochs",
            "2",
            "--out",
            "m.json",
            "--log",
            "log.csv",
        ],
        p,
    );
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert_eq!(fs::read_to_string(p.join("log.csv")).unwrap().lines().count(), 3);
    let eval = prunegnn(
        &["eval", "--model", "m.json", "--data", "train.jsonl", "--baselines", "wmmse,heuristic", "--csv", "r.csv"],
        p,
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let rows = fs::read_to_string(p.join("r.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 24);
    assert!(stdout(&eval).contains("wmmse: normalized 1.0000"));
}
