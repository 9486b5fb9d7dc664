use std::path::PathBuf;
use std::process::Command;

fn hessfit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hessfit"))
}

fn scratch(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("hessfit-cli-{}-{name}", std::process::id()))
}

#[test]
fn run_twice_gives_identical_bytes() {
    let (a, b) = (scratch("a.csv"), scratch("b.csv"));
    for path in [&a, &b] {
        let status = hessfit()
            .args(["run", "--scenario", "fig2b", "--method", "gl", "--iters", "1200", "--seed", "3", "--out"])
            .arg(path)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
    let _ = std::fs::remove_file(a);
    let _ = std::fs::remove_file(b);
}

#[test]
fn stdout_csv_and_overrides() {
    let out = hessfit()
        .args(["run", "--scenario", "custom", "--method", "diag", "--iters", "3", "--mu", "0.5", "--beta", "0.9"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scenario,method,seed,iter,metric,wall_ns");
    assert_eq!(lines.len(), 5);
}

#[test]
fn list_enumerates_pairs() {
    let out = hessfit().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for pair in ["fig1\tnewton", "fig2b\tbfgs", "fig3\tqep", "fig4\tlra"] {
        assert!(text.contains(pair), "{pair}");
    }
}

#[test]
fn bad_input_exits_with_usage_error() {
    let out = hessfit().args(["run", "--scenario", "nope", "--method", "gl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
    let out = hessfit().args(["run", "--scenario", "fig1", "--method", "gl", "--set", "oops"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = hessfit()
        .args(["run", "--scenario", "custom", "--method", "gl", "--n", "5", "--set", "hessian=hilbert3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_subset_reports_and_exits_cleanly() {
    let out = hessfit().args(["verify", "--only", "2,3"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[PASS]  2") && text.contains("[PASS]  3"), "{text}");
    assert!(out.status.success());
}
