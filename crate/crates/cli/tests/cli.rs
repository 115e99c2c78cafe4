use std::fs;
use std::path::Path;
use std::process::Command;

fn kscope() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kscope"))
}

fn dataset() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/questions.jsonl"))
}

fn mock_run(sub: &str, out: &Path, extra: &[&str]) -> std::process::Output {
    kscope()
        .arg(sub)
        .arg("--dataset")
        .arg(dataset())
        .arg("--out")
        .arg(out)
        .args(["--mock", "--seed", "3", "-m", "5", "-n", "40"])
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn characterize_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = mock_run("characterize", dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dist = fs::read_to_string(dir.path().join("status_distribution.csv")).unwrap();
    assert!(dist.starts_with("phase,n,consistent_correct,"));
    assert!(dist.contains("\nparametric,8,"));
    assert!(dist.contains("\ncontextual,7,"));
    assert!(dir.path().join("cache/manifest.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(mock_run("augment", a.path(), &["--apply", "credibility"]).status.success());
    assert!(mock_run("augment", b.path(), &["--apply", "credibility"]).status.success());
    for f in ["summary.json", "transition_matrix.csv", "augmentation_deltas.csv", "status_reports.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn analyze_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = mock_run("analyze", dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let strata = fs::read_to_string(dir.path().join("strata.csv")).unwrap();
    // six labelled questions cannot reach the minimum stratum size
    assert!(strata.lines().skip(1).all(|l| l.contains("excluded")));
    assert!(fs::read_to_string(dir.path().join("features.csv")).unwrap().lines().count() == 8);

    let again = dir.path().join("again");
    let out = kscope()
        .args(["report", "--reports"])
        .arg(dir.path().join("status_reports.jsonl"))
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(again.join("transition_matrix.csv")).unwrap(),
        fs::read(dir.path().join("transition_matrix.csv")).unwrap()
    );
}

#[test]
fn ingestion_errors_have_their_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"x\",\"question\":\"q?\"}\n").unwrap();
    let out = kscope()
        .args(["characterize", "--mock", "--dataset"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn unreachable_endpoint_is_a_transport_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = kscope()
        .args(["characterize", "--endpoint", "http://127.0.0.1:9/v1", "--model", "m", "-m", "2", "-n", "4", "--dataset"])
        .arg(dataset())
        .arg("--out")
        .arg(dir.path())
        .env("KSCOPE_API_KEY", "unused")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn study_prints_a_table() {
    let out = kscope().args(["study", "--n-values", "25,50", "--trials", "10"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("m,n,comparisons,change_rate"));
    assert_eq!(text.lines().count(), 3);
}
