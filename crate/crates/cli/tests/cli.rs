use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use svine::estimation::VinePlan;
use svine::vine_graph::m_vine_spec;
use svine::{simulate_unconditional, BivariateCopula, SVineModel};

fn svine() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svine"))
}

fn run(args: &[&str]) -> Output {
    svine().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).expect("stderr holds one JSON object")
}

/// A three-column series with serial and cross-sectional dependence, written
/// with a leading date column.
fn sample_csv(dir: &Path, t_len: usize) -> PathBuf {
    let spec = m_vine_spec(3, 1);
    let plan = VinePlan::new(&spec).unwrap();
    let rhos = [0.5, 0.3, 0.3, 0.2, 0.1, 0.25, 0.1, 0.15, 0.05, 0.1, 0.05, 0.2];
    let copulas: BTreeMap<_, _> = plan
        .classes()
        .iter()
        .zip(rhos.iter().cycle())
        .map(|(c, &r)| (c.class.clone(), BivariateCopula::gaussian(r).unwrap()))
        .collect();
    let model = SVineModel::new(spec, copulas).unwrap();
    let u = simulate_unconditional(&model, t_len, 11).unwrap();
    let mut s = String::from("date,a,b,c\n");
    for (t, row) in u.rows().into_iter().enumerate() {
        let x: Vec<String> = row.iter().map(|&p| format!("{:.8}", (p / (1.0 - p)).ln())).collect();
        s.push_str(&format!("day{t:04},{}\n", x.join(",")));
    }
    let path = dir.join("x.csv");
    fs::write(&path, s).unwrap();
    path
}

fn fit_to(dir: &Path, data: &Path, extra: &[&str]) -> (PathBuf, String) {
    let out = dir.join("model.json");
    let mut args = vec!["fit", data.to_str().unwrap(), "-o", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (out, stdout(&o))
}

fn summary_value(summary: &str, key: &str) -> f64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in summary"))
        .parse()
        .unwrap()
}

#[test]
fn fit_writes_a_loadable_model_with_column_names() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 400);
    let (model, summary) = fit_to(dir.path(), &data, &["--mode", "par", "--families", "gaussian,clayton"]);
    assert_eq!(summary_value(&summary, "T"), 400.0);
    assert_eq!(summary_value(&summary, "d"), 3.0);
    assert!(summary.contains("a - b") || summary.contains("b - a"));
    let v: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(v["columns"], serde_json::json!(["a", "b", "c"]));
    assert_eq!(v["metadata"]["t_len"], 400);
    assert_eq!(v["metadata"]["loglik"].as_f64().unwrap(), summary_value(&summary, "loglik"));
    let mut v = v;
    v.as_object_mut().unwrap().remove("columns");
    SVineModel::from_json_str(&v.to_string()).unwrap();
}

#[test]
fn independence_only_aic_counts_the_margin_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 300);
    let (_, summary) = fit_to(dir.path(), &data, &["--mode", "par", "--families", "independence"]);
    assert_eq!(summary_value(&summary, "aic"), 2.0 * 4.0 * 3.0);
}

#[test]
fn refitting_on_the_own_structure_reproduces_the_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 400);
    let (first, _) = fit_to(dir.path(), &data, &["--families", "gaussian,frank"]);
    let a: Value = serde_json::from_str(&fs::read_to_string(&first).unwrap()).unwrap();
    let kept = dir.path().join("first.json");
    fs::rename(&first, &kept).unwrap();
    let (second, _) = fit_to(
        dir.path(),
        &data,
        &["--families", "gaussian,frank", "--structure", kept.to_str().unwrap()],
    );
    let b: Value = serde_json::from_str(&fs::read_to_string(second).unwrap()).unwrap();
    assert_eq!(a["spec"], b["spec"]);
    assert_eq!(a["copulas"], b["copulas"]);
}

#[test]
fn simulation_depends_only_on_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 300);
    let (model, _) = fit_to(dir.path(), &data, &["--families", "gaussian"]);
    let m = model.to_str().unwrap();
    let a = stdout(&run(&["simulate", m, "-n", "50", "--seed", "4"]));
    let b = stdout(&run(&["simulate", m, "-n", "50", "--seed", "4"]));
    let c = stdout(&run(&["simulate", m, "-n", "50", "--seed", "5"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("a,b,c\n"));
    assert_eq!(a.lines().count(), 51);
}

#[test]
fn forecasts_are_reproducible_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 300);
    let (model, _) = fit_to(dir.path(), &data, &["--families", "gaussian", "-p", "1"]);
    let args = [
        "forecast",
        model.to_str().unwrap(),
        data.to_str().unwrap(),
        "--horizon",
        "2",
        "-n",
        "400",
        "--functionals",
        "mean,q0.1",
        "--seed",
        "9",
    ];
    let a = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&run(&args)));
    let v: Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["columns"].as_array().unwrap().len(), 6);
    assert_eq!(v["estimates"].as_array().unwrap().len(), 2);
    assert_eq!(v["n_sims"], 400);

    let mut csv_args = args.to_vec();
    csv_args.extend(["--format", "csv"]);
    let c = stdout(&run(&csv_args));
    assert!(c.starts_with("functional,step,variable,value,level,lower,upper\n"));
    assert_eq!(c.lines().count(), 1 + 2 * 6);
}

#[test]
fn forecast_defaults_to_ten_times_the_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 120);
    let (model, _) = fit_to(dir.path(), &data, &["--families", "gaussian"]);
    let o = run(&["forecast", model.to_str().unwrap(), data.to_str().unwrap()]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_sims"], 1200);
}

#[test]
fn bootstrap_forecasts_need_the_estimation_sample() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 200);
    let (model, _) = fit_to(dir.path(), &data, &["--families", "gaussian"]);
    let (m, d) = (model.to_str().unwrap(), data.to_str().unwrap());
    let o = run(&["forecast", m, d, "-n", "200", "--bootstrap", "20"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "usage");
    let o = run(&["forecast", m, d, "-n", "200", "--bootstrap", "20", "--data", d]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let band = &v["estimates"][0]["bands"][0][0];
    assert!(band["lower"].as_f64().unwrap() <= band["upper"].as_f64().unwrap());
}

#[test]
fn backtest_reports_both_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 260);
    let series = dir.path().join("series.csv");
    let o = run(&[
        "backtest",
        data.to_str().unwrap(),
        "--window",
        "200",
        "--stride",
        "30",
        "-n",
        "200",
        "--portfolios",
        "3",
        "--families",
        "gaussian",
        "--measures",
        "crps,var95",
        "--series-out",
        series.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,measure,mean,se,n");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.ends_with(",60")));
    let s = fs::read_to_string(series).unwrap();
    assert_eq!(s.lines().count(), 1 + 4 * 60);
    assert!(s.lines().nth(1).unwrap().starts_with("200,day0200,svine,crps,"));
}

#[test]
fn backtest_config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path(), 120);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"window": 100, "stride": 50, "horizon": "week", "n_sims": 100, "portfolios": {"count": 2}, "families": ["gaussian"], "measures": ["logs"]}"#).unwrap();
    let o = run(&["backtest", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",16")));

    let o = run(&["backtest", data.to_str().unwrap(), "--portfolios", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = run(&["backtest", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "insufficient_data");
}

#[test]
fn structure_checks_report_pass_and_witness() {
    let dir = tempfile::tempdir().unwrap();
    let mv = dir.path().join("mv.json");
    let copar = dir.path().join("copar.json");
    fs::write(&mv, stdout(&run(&["fixture", "m-vine", "-d", "3", "-p", "2"]))).unwrap();
    fs::write(&copar, stdout(&run(&["fixture", "copar"]))).unwrap();

    let o = run(&["check-structure", mv.to_str().unwrap(), "--T", "6"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("PASS"));

    let chain = dir.path().join("chain.json");
    fs::write(&chain, stdout(&run(&["fixture", "m-vine", "-d", "1", "-p", "1"]))).unwrap();
    assert!(stdout(&run(&["check-structure", chain.to_str().unwrap()])).starts_with("PASS"));

    let o = run(&["check-structure", copar.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("FAIL"), "{text}");
    assert!(text.contains("t = 2, m = 1"), "{text}");
}

#[test]
fn errors_are_json_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fit", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "io");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n0.1,0.2\n0.3,NA\n0.5,0.1\n").unwrap();
    let o = run(&["fit", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"], "parse");
    assert_eq!(e["line"], 3);

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = svine().args(["fixture", "copar"]).env("SVINE_THREADS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    assert!(run(&["--help"]).status.success());
}
