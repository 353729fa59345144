use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CORRELATED: &str = r#"{"n":4,"budget":"4","root":0,
 "dist":[["0","1","1","2"],["1","0","2","1"],["1","2","0","1"],["2","1","1","0"]],
 "jobs":[{"type":"table","outcomes":[{"prob":"1/2","size":"0","reward":"3"},{"prob":"1/2","size":"2","reward":"1"}]},
         {"type":"table","outcomes":[{"prob":"1/3","size":"1","reward":"5"},{"prob":"2/3","size":"0","reward":"0"}]},
         {"type":"bernoulli","p":"1/4","size":"2","reward":"4"},
         {"type":"table","outcomes":[{"prob":"1","size":"1","reward":"2"}]}]}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stocorient"))
        .current_dir(dir)
        .env_remove("STOCORIENT_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn generated_instance_validates() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["gen-lb", "--L", "2", "--variant", "line", "--out", "i.json", "--claims", "c.json"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert_eq!(code(&run(dir.path(), &["validate", "i.json"])), 0);
    let claims: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c.json")).unwrap()).unwrap();
    assert!(claims["claims"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    let inst: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("i.json")).unwrap()).unwrap();
    assert_eq!(inst["meta"]["tool"], "stocorient");
    assert_eq!(inst["meta"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn eval_prints_rational_and_decimal() {
    let dir = TempDir::new().unwrap();
    run(dir.path(), &["gen-lb", "--L", "1", "--variant", "dtree", "--out", "i.json"]);
    fs::write(dir.path().join("p.json"), r#"{"route":[0],"attempt_prob":["1"]}"#).unwrap();
    let out = run(dir.path(), &["eval", "--instance", "i.json", "--policy", "p.json", "--exact"]);
    assert_eq!(code(&out), 0);
    // A single level collects the root job with probability one.
    assert_eq!(stdout(&out).trim(), "exact 1 1.000000000000");
}

#[test]
fn bad_policy_is_a_validation_failure() {
    let dir = TempDir::new().unwrap();
    run(dir.path(), &["gen-lb", "--L", "1", "--variant", "dtree", "--out", "i.json"]);
    fs::write(dir.path().join("p.json"), r#"{"route":[0,0],"attempt_prob":["1","1"]}"#).unwrap();
    let out = run(dir.path(), &["eval", "--instance", "i.json", "--policy", "p.json"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn invalid_instance_exits_one() {
    let dir = TempDir::new().unwrap();
    let broken = CORRELATED.replace(r#""prob":"1/3""#, r#""prob":"1/2""#);
    fs::write(dir.path().join("bad.json"), broken).unwrap();
    let out = run(dir.path(), &["validate", "bad.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid instance"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&run(dir.path(), &["gen-lb", "--L", "two", "--variant", "line", "--out", "x"])), 2);
    let out = run(dir.path(), &["gap", "--L", "4..2", "--out", "g.csv"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn gap_csv_rows() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["gap", "--L", "2", "--variant", "line", "--mode", "exhaustive", "--out", "g.csv"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("L,variant,adaptive,best_na,ratio,mode"));
    assert!(lines.next().unwrap().starts_with("2,line,3/2,3/2,1,exhaustive"));
}

#[test]
fn forced_mode_outside_limits_fails() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["gap", "--L", "5", "--variant", "line", "--mode", "exhaustive", "--out", "g.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn seeded_commands_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("r.json"), CORRELATED).unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-lb", "--L", "3", "--variant", "utree", "--out", "OUT"],
        vec!["gap", "--L", "3", "--variant", "line", "--mode", "heuristic", "--seed", "7", "--out", "OUT"],
        vec!["reduce", "--instance", "r.json", "--K", "12", "--out", "OUT"],
        vec!["corr-approx", "--instance", "r.json", "--K", "12", "--seeds", "4", "--seed", "5", "--out", "OUT"],
        vec!["corr-approx", "--instance", "r.json", "--mode", "mwu", "--guesses", "3", "--seeds", "4", "--out", "OUT"],
    ];
    for (i, cmd) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for (run_no, threads) in ["1", "4", "4"].iter().enumerate() {
            let name = format!("out_{i}_{run_no}");
            let mut args: Vec<&str> = cmd.iter().map(|a| if *a == "OUT" { name.as_str() } else { a }).collect();
            args.extend(["--threads", threads]);
            let out = run(d, &args);
            assert_eq!(code(&out), 0, "{cmd:?}: {out:?}");
            outputs.push(fs::read(d.join(&name)).unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]), "{cmd:?} differs between runs");
    }
}

#[test]
fn threads_fall_back_to_environment() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("r.json"), CORRELATED).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stocorient"))
        .current_dir(dir.path())
        .env("STOCORIENT_THREADS", "2")
        .args(["corr-approx", "--instance", "r.json", "--K", "12", "--seeds", "2", "--out", "a.json"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_stocorient"))
        .current_dir(dir.path())
        .env("STOCORIENT_THREADS", "many")
        .args(["selftest"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn corr_approx_result_fields() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("r.json"), CORRELATED).unwrap();
    let out = run(dir.path(), &["corr-approx", "--instance", "r.json", "--K", "12", "--seeds", "4", "--out", "res.json"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("res.json")).unwrap()).unwrap();
    for key in ["guesses", "policy", "value", "dp_value", "ratio", "meta"] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    assert!(v["guesses"][0]["lp_objective"].is_number());
    assert_eq!(v["dp_value"], "13/2");
}

#[test]
fn reduce_report_lists_bands() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("r.json"), CORRELATED).unwrap();
    let out = run(dir.path(), &["reduce", "--instance", "r.json", "--out", "p.json", "--report", "rep.json"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(v["star_nodes"].as_array().unwrap().len(), 3);
    assert_eq!(v["portals"]["locations"].as_array().unwrap().len(), 3);
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert!(p["route"].is_array());
}

#[test]
fn selftest_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["selftest"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
}
