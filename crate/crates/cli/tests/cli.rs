use std::path::Path;
use std::process::{Command, Output};

fn tabhash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabhash")).args(args).env_remove("TABHASH_THREADS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn moments_exact_example() {
    let o = tabhash(&[
        "moments",
        "--scheme",
        "simple:k=4,c=2,l=4",
        "--value",
        "bin:target=0,w=uniform",
        "--p",
        "2,4,8",
        "--mode",
        "exact",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "query_bin,count,p,estimate,std_error,bound,shape,ratio");
    assert_eq!(lines.len(), 4);
    // ‖V‖₂ = σ_v = √15 for 256 unit-weight keys and m = 16.
    let est: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((est - 15f64.sqrt()).abs() < 1e-9);
    let summary: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(summary["command"], "moments");
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_scheme_is_usage_error() {
    let o = tabhash(&["moments", "--value", "bin:target=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--scheme"));
    assert_eq!(tabhash(&["moments", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(tabhash(&["moments", "--scheme", "simple:k=4,c=2"]).status.code(), Some(2));
}

#[test]
fn exact_over_budget_exits_3() {
    let o = tabhash(&["moments", "--scheme", "simple:k=4,c=2,l=4", "--value", "bin:target=0,keys=first:5", "--mode", "exact"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selftest_quick_and_fault_hook() {
    let o = tabhash(&["selftest", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("check,status,detail"));
    let o = tabhash(&["selftest", "--quick", "--inject-fault", "table-seed"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("seed-determinism,FAIL"));
}

#[test]
fn emitted_config_replays_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).display().to_string();
    let o = tabhash(&[
        "moments",
        "--scheme",
        "mixed:k=2,c=2,d=1,l=2",
        "--value",
        "threshold:l=2,keys=first:6",
        "--mode",
        "mc",
        "--samples",
        "3000",
        "--emit-config",
        &p("run.toml"),
        "--out",
        &p("a.csv"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = tabhash(&["--config", &p("run.toml"), "--out", &p("b.csv"), "--threads", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |n: &str| std::fs::read(Path::new(&p(n))).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    let sa: serde_json::Value = serde_json::from_slice(&read("a.json")).unwrap();
    let sb: serde_json::Value = serde_json::from_slice(&read("b.json")).unwrap();
    assert_eq!(sa["config_hash"], sb["config_hash"]);
    assert_eq!(sa["seed"], sb["seed"]);
}

#[test]
fn config_and_subcommand_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "command = \"hash\"\nscheme = \"simple:k=2,c=2,l=4\"\n").unwrap();
    let c = cfg.display().to_string();
    assert_eq!(tabhash(&["--config", &c, "hash"]).status.code(), Some(2));
    let o = tabhash(&["--config", &c]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 17);
}
