use std::fs;
use std::path::Path;
use std::process::Command;

const SIR: &str = r#"
seed = 7

[model]
family = "markov-sir"
beta = 1.5
gamma = 1.0

[initial]
i0 = 0.01
g = { family = "exponential", rate = 0.5 }

[simulation]
population = 2000
replicas = 2
samples = 2000

[numerics]
horizon = 10.0
"#;

fn epi(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_epi")).current_dir(dir).env_remove("RUST_BACKTRACE").args(args).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sir.toml"), SIR).unwrap();
    dir
}

fn digest_line(text: &str) -> &str {
    text.lines().next().unwrap()
}

#[test]
fn solve_writes_header_and_digest() {
    let dir = setup();
    let out = epi(dir.path(), &["solve", "--config", "sir.toml", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o/solve.csv")).unwrap();
    assert!(digest_line(&text).starts_with("# config_digest="));
    assert_eq!(text.lines().nth(1).unwrap(), "t,b,B,S,I,R");
    assert_eq!(text.lines().count(), 2 + 1001);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = setup();
    for cmd in ["simulate", "tree", "courses-dump"] {
        for o in ["a", "b"] {
            assert!(epi(dir.path(), &[cmd, "--config", "sir.toml", "--out", o]).status.success(), "{cmd}");
        }
    }
    for f in ["individuals.csv", "series.csv", "tree_b.csv", "courses.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let a = fs::read_to_string(dir.path().join("a/series.csv")).unwrap();
    assert!(epi(dir.path(), &["simulate", "--config", "sir.toml", "--out", "c", "--seed", "8"]).status.success());
    let c = fs::read_to_string(dir.path().join("c/series.csv")).unwrap();
    assert_ne!(digest_line(&a), digest_line(&c));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = setup();
    for (o, n) in [("t1", "1"), ("t3", "3")] {
        let out = Command::new(env!("CARGO_BIN_EXE_epi"))
            .current_dir(dir.path())
            .env("EPI_THREADS", n)
            .args(["tree", "--config", "sir.toml", "--out", "t"])
            .output()
            .unwrap();
        assert!(out.status.success());
        fs::rename(dir.path().join("t"), dir.path().join(o)).unwrap();
    }
    assert_eq!(fs::read(dir.path().join("t1/tree_b.csv")).unwrap(), fs::read(dir.path().join("t3/tree_b.csv")).unwrap());
}

#[test]
fn chain_modes_write_outputs() {
    let dir = setup();
    for (mode, file) in [
        ("renewal", "renewal_paths.csv"),
        ("hchain", "hchain_paths.csv"),
        ("martingale", "martingale.csv"),
        ("survival", "survival.csv"),
    ] {
        let out = epi(dir.path(), &["chain", "--mode", mode, "--config", "sir.toml", "--out", "c"]);
        assert!(out.status.success(), "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join("c").join(file).exists(), "{mode}");
    }
}

#[test]
fn overrides_and_flags_change_the_digest() {
    let dir = setup();
    assert!(epi(dir.path(), &["solve", "--config", "sir.toml", "--out", "o"]).status.success());
    assert!(epi(dir.path(), &["solve", "--config", "sir.toml", "--out", "o2", "--set", "model.beta=2.0", "--horizon", "5"]).status.success());
    let a = fs::read_to_string(dir.path().join("o/solve.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("o2/solve.csv")).unwrap();
    assert_ne!(digest_line(&a), digest_line(&b));
    assert_eq!(b.lines().count(), 2 + 501);
}

#[test]
fn invalid_configs_fail_with_diagnostics() {
    let dir = setup();
    let out = epi(dir.path(), &["solve", "--config", "sir.toml", "--set", "contact.values=[1.2]"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("contact rate outside [0,1]"));
    let out = epi(dir.path(), &["solve", "--config", "sir.toml", "--set", "initial.i0=0.0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("I0 in (0,1) required"));
    let out = epi(dir.path(), &["solve", "--config", "sir.toml", "--set", "numerics.typo=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));
    assert!(!epi(dir.path(), &["solve", "--config", "missing.toml"]).status.success());
}
