use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shuffle-linucb"))
}

#[test]
fn run_then_rechart() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--T", "300", "--num-seeds", "2", "--epsilon", "1", "--algo", "linucb,sdp-vec", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("final regret"));
    for f in ["regret.csv", "regret.svg", "budget.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    assert!(csv.lines().next().unwrap().split(',').count() >= 4);

    let svg = dir.path().join("again.svg");
    let status = bin()
        .args(["chart", "--csv"])
        .arg(dir.path().join("regret.csv"))
        .arg("--svg")
        .arg(&svg)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn accounting_prints_reports() {
    let out = bin().args(["accounting", "--algo", "sdp-amp,sdp-vec", "--epsilon", "0.5"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[report]"));
    assert!(text.contains("epsilon=0.5"));
}

#[test]
fn bad_input_fails_cleanly() {
    let out = bin().args(["accounting", "--epsilon", "-1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "bogus_key = 3\n").unwrap();
    let out = bin().arg("accounting").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
}
