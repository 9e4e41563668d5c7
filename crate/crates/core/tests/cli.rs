use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsuggest::simulation::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qsuggest"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, format!("[provider]\nkind = \"sim\"\nsim_dimension = 64\n{extra}")).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_1_with_usage() {
    let o = run(&["evaluate", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("error[validation]:"), "{e}");
    assert!(e.contains("Usage:"), "{e}");
}

#[test]
fn bad_arguments_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["--config", c, "evaluate"]).status.code(), Some(1), "seed is mandatory");
    assert_eq!(run(&["--config", c, "--provider", "nope", "evaluate", "--seed", "1"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[retrieval]\ntheta_sim = 0.9\ntheta_div = 0.1\n").unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "evaluate", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[validation]:"));
    let o = run(&["--config", c, "--provider", "http", "evaluate", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1), "http evaluation needs --live");
}

#[test]
fn io_failures_exit_2() {
    let o = run(&["--config", "/nonexistent/cfg.toml", "evaluate", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[io]:"));
}

#[test]
fn evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for run_ix in 0..2 {
        let out = dir.path().join(format!("run{run_ix}"));
        let o = run(&["--config", c, "--provider", "sim", "--out", out.to_str().unwrap(), "evaluate", "--seed", "1,2", "--n", "120"]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push((std::fs::read(out.join("eval.csv")).unwrap(), std::fs::read(out.join("agg.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let eval = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(eval.lines().count(), 1 + 2 * 120 * 3);
}

#[test]
fn curve_sweep_and_simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();

    let r = run(&["--config", c, "--out", o, "curve", "--seed", "1,2", "--n", "80", "--window", "20", "--strategies", "dynamic_few_shot"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(curve.starts_with("ix,ansavg,ansstd,simavg,simstd,"));
    assert_eq!(curve.lines().count(), 81);

    let r = run(&["--config", c, "--out", o, "sweep", "--seed", "1", "--n", "60", "--grid", "0.6:0.9,0.9:0.5"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2, "invalid grid point is skipped");

    let r = run(&["--config", c, "--out", o, "simulate", "--seed", "3", "--n", "25"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let data = std::fs::read_to_string(out.join("dataset.jsonl")).unwrap();
    assert_eq!(data.lines().count(), 25);
}

#[test]
fn ingest_suggest_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();
    let store = dir.path().join("stores");
    let s = store.to_str().unwrap();
    let sc = Scenario::invoices();
    let traces = dir.path().join("traces.jsonl");
    let lines: String = sc
        .generate_dataset(30, 2)
        .iter()
        .map(|t| serde_json::to_string(t).unwrap() + "\n")
        .collect();
    std::fs::write(&traces, lines).unwrap();

    let r = run(&["--config", c, "--store", s, "ingest", "--traces", traces.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let summary: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let stored = summary["stored"].as_u64().unwrap() as usize;
    assert_eq!(stored + summary["skipped_no_knowledge"].as_u64().unwrap() as usize, 30);

    let trace = dir.path().join("t.json");
    std::fs::write(&trace, serde_json::to_string(&sc.execute("How many orders are there?")).unwrap()).unwrap();
    let r = run(&["--config", c, "--store", s, "suggest", "--trace", trace.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let out: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(out["verdict"]["category"], "no_workflow");

    let o = dir.path().join("emb");
    let r = run(&["--config", c, "--store", s, "--out", o.to_str().unwrap(), "export-embeddings"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let emb = std::fs::read_to_string(o.join("emb.csv")).unwrap();
    assert_eq!(emb.lines().count(), 1 + stored + 1);
    assert_eq!(emb.lines().next().unwrap().split(',').count(), 2 + 64);

    let r = run(&["--config", c, "--store", s, "suggest", "--trace", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}
