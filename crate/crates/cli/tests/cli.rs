use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lpgreedy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpgreedy")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn wcga_config(weakness: f64, m_max: usize) -> String {
    format!(
        r#"{{
  "experiments": [{{
    "operation": "rate_sweep",
    "id": "wcga",
    "algorithms": [{{"id": "wcga", "weakness": {{"kind": "constant", "value": {weakness}}}}}],
    "space": {{"dim": 16, "p": 3.0}},
    "dictionary": {{"kind": "random_unit", "count": 24}},
    "data": {{"kind": "a1", "sparsity": 6}},
    "m_max": {m_max},
    "replications": 3,
    "seed": 11,
    "bounds": [{{"kind": "wbga_rate"}}]
  }}]
}}"#
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_traces_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &wcga_config(1.0, 5));
    let out = dir.path().join("out");
    let o = lpgreedy(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(out.join("wcga/traces/rep0000_wcga.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "m,index,sign,lambda,w,mu,c,residual_norm,dnorm_F,stop_reason");
    // Header, the m = 0 row, then one row per iteration.
    assert_eq!(lines.len(), 1 + 1 + 5);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("wcga/report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["passed"], true);
    assert!(stdout(&o).starts_with("experiment,check,kind,passed,worst"));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &wcga_config(0.5, 15));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(lpgreedy(&["run", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(lpgreedy(&["run", &cfg, "--out", b.to_str().unwrap()]).status.code(), Some(0));
    for rep in 0..3 {
        let name = format!("wcga/traces/rep{rep:04}_wcga.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    assert_eq!(fs::read(a.join("wcga/report.json")).unwrap(), fs::read(b.join("wcga/report.json")).unwrap());
}

#[test]
fn weakness_above_one_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &wcga_config(1.5, 10));
    let o = lpgreedy(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("weakness"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = wcga_config(1.0, 10).replace("\"m_max\"", "\"mmax_typo\": 1, \"m_max\"");
    let cfg = write_config(dir.path(), &text);
    let o = lpgreedy(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mmax_typo"), "{}", stderr(&o));
}

#[test]
fn violated_explicit_bound_exits_two() {
    // A bound with a zero constant is violated at the first iteration: the
    // WGA-rate bound uses the amplitude, which is zero for Gaussian data.
    let dir = tempfile::tempdir().unwrap();
    let text = wcga_config(1.0, 10)
        .replace(r#""p": 3.0"#, r#""p": 2.0"#)
        .replace(r#"{"kind": "a1", "sparsity": 6}"#, r#"{"kind": "gaussian"}"#)
        .replace("wbga_rate", "wga_rate");
    let cfg = write_config(dir.path(), &text);
    let o = lpgreedy(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bilinear_diagonal_example() {
    let o = lpgreedy(&["bilinear", "--diag", "3,2,1", "--m", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let last = stdout(&o).lines().last().unwrap().to_string();
    let f: Vec<f64> = last.split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(f[0], 2.0);
    assert!((f[1] - 1.0).abs() <= 1e-8 && (f[2] - 1.0).abs() <= 1e-8 && f[3] <= 1e-8);
}

#[test]
fn bilinear_reads_matrix_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    fs::write(&path, "GREEDYMAT v1 rows=2 cols=3\n1 0 2\n0 3 0\n").unwrap();
    let o = lpgreedy(&["bilinear", "--matrix", path.to_str().unwrap(), "--m", "2", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["rows"][2]["residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn lemma_example() {
    let o = lpgreedy(&["lemmas", "LeL1", "C1=1", "C2=1", "N=100000", "--trials", "3", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["max_ratio"].as_f64().unwrap() <= 1.0);
    assert_eq!(v["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn oracle_example() {
    let o = lpgreedy(&["oracle", "--signal", "1,0.5,0.25", "--m", "1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.559017).abs() < 1e-6);
}

#[test]
fn oracle_reads_dictionary_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.txt");
    fs::write(&path, "GREEDYDICT v1 n=2 p=2 N=2\n1 0\n0 1\n").unwrap();
    let o = lpgreedy(&["oracle", "--dict", path.to_str().unwrap(), "--signal", "3,-4", "--m", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("1,3,"));
}

#[test]
fn recover_prints_table() {
    let o = lpgreedy(&["recover", "--dim", "12", "--count", "12", "--trials", "4", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("t,S,runs,recovered,min_M,max_M"));
    assert!(s.contains("exact_recovery,explicit,true"));
}
