use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use arnet_core::series::{SeriesFormat, SnapshotSeries};
use serde_json::Value;
use tempfile::TempDir;

const SIM: &str = r#"{"seed": 3, "model": "transitivity", "p": 10, "n": 30, "burn_in": 50,
 "params": {"globals": {"a": 2, "b": 2}, "xi": 0.8, "eta": 0.9}}"#;

fn arnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arnet"))
        .args(args)
        .env("ARNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = arnet(args);
    assert!(
        out.status.success(),
        "arnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Simulated series at `dir/sim/series.txt`, with its config at `dir/sim.json`.
fn simulated(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("sim.json");
    fs::write(&cfg, SIM).unwrap();
    ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.join("sim"))]);
    dir.join("sim/series.txt")
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn simulate_is_deterministic_and_has_declared_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, SIM).unwrap();
    for out in ["a", "b"] {
        ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join(out))]);
    }
    for f in ["series.txt", "density.csv", "u_table.csv", "v_table.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let series = SnapshotSeries::load(dir.path().join("a/series.txt"), SeriesFormat::MatrixText).unwrap();
    assert_eq!((series.p(), series.n()), (10, 30));
}

#[test]
fn invalid_model_exits_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, SIM.replace("\"transitivity\"", "\"transitivty\"")).unwrap();
    let out = arnet(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`model`"), "{err}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, SIM.replace("\"burn_in\"", "\"burnin\"")).unwrap();
    let out = arnet(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("burnin"));
}

#[test]
fn missing_data_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = arnet(&[
        "diagnose",
        "--data",
        s(&dir.path().join("absent.txt")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_thread_env_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_arnet"))
        .args(["diagnose", "--data", "x", "--out", "y"])
        .env("ARNET_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_reports_a_ci_for_every_parameter_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = simulated(dir.path());
    let cfg = dir.path().join("fit.json");
    fs::write(&cfg, r#"{"model": "transitivity", "data": "sim/series.txt",
        "estimation": {"init_grid": [0.5, 0.8]}}"#)
    .unwrap();
    ok(&["fit", "--config", s(&cfg), "--out", s(&dir.path().join("f1"))]);
    ok(&["fit", "--model", "transitivity", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("f2/report.json"))]);
    let a = read_json(&dir.path().join("f1/fit.json"));
    let b = read_json(&dir.path().join("f2/report.json"));
    assert_eq!(without_timings(a.clone()), without_timings(b));

    let params = a["params"].as_array().unwrap();
    assert_eq!(params.len(), 2 + 2 * 10);
    assert_eq!(a["names"].as_array().unwrap().len(), params.len());
    for p in params {
        let ci = p["ci"].as_array().unwrap();
        let est = p["estimate"].as_f64().unwrap();
        assert!(ci[0].as_f64().unwrap() <= est && est <= ci[1].as_f64().unwrap());
    }
    assert!(a["final"].is_array() && a["intermediate"].is_array());
}

#[test]
fn imom_fit_has_no_refined_fields() {
    let dir = TempDir::new().unwrap();
    let data = simulated(dir.path());
    let out = dir.path().join("f");
    ok(&["fit", "--model", "transitivity", "--method", "imom", "--data", s(&data), "--out", s(&out)]);
    let r = read_json(&out.join("fit.json"));
    assert_eq!(r["method"], "imom");
    for key in ["final", "intermediate", "params", "joint"] {
        assert!(r[key].is_null(), "{key} should be absent");
    }
    assert!(r["imom"].is_array());
}

#[test]
fn replications_write_reports_and_rmae_summary() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim.json");
    fs::write(&sim, SIM).unwrap();
    let cfg = dir.path().join("fit.json");
    fs::write(&cfg, r#"{"estimation": {"init_grid": [0.4, 0.8]}}"#).unwrap();
    let out = dir.path().join("reps");
    ok(&[
        "fit", "--config", s(&cfg), "--replications", "2", "--seed-base", "7", "--sim", s(&sim), "--out", s(&out),
    ]);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["replications"], 2);

    // rMAE(a) = mean over reps of mean over starts of |â - a| / a
    let (a, xi) = (2.0, 0.8);
    let (mut ra, mut rxi) = (0.0, 0.0);
    for r in 0..2 {
        let rep = read_json(&out.join(format!("rep_{r:03}.json")));
        let starts = rep["starts"].as_array().unwrap();
        assert_eq!(starts.len(), 2);
        for st in starts {
            let v: Vec<f64> = st["refined"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            ra += (v[0] - a).abs() / a / 4.0;
            rxi += v[2..12].iter().map(|x| (x - xi).abs() / xi).sum::<f64>() / 10.0 / 4.0;
        }
    }
    let fin = &summary["rmae"]["final"];
    assert!((fin["a"].as_f64().unwrap() - ra).abs() < 1e-12);
    assert!((fin["xi"].as_f64().unwrap() - rxi).abs() < 1e-12);
    assert!(summary["rmae"]["initial"]["b"].is_number());
}

#[test]
fn diagnose_matches_hand_counts() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy.csv");
    // t1: 12 23   t2: 12 13 34   t3: 13 14
    fs::write(&data, "# p=4 n=3\nt,i,j\n1,1,2\n1,2,3\n2,1,2\n2,1,3\n2,3,4\n3,1,3\n3,1,4\n").unwrap();
    let out = dir.path().join("d");
    ok(&["diagnose", "--data", s(&data), "--out", s(&out)]);

    let density = fs::read_to_string(out.join("density.csv")).unwrap();
    let rows: Vec<Vec<String>> = density
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let num = |r: usize, c: usize| rows[r][c].parse::<f64>().unwrap();
    let expect = [(2.0 / 6.0, None), (3.0 / 6.0, Some((2.0 / 6.0, 1.0 / 6.0))), (2.0 / 6.0, Some((1.0 / 6.0, 2.0 / 6.0)))];
    for (t, (d, gd)) in expect.iter().enumerate() {
        assert!((num(t, 1) - d).abs() < 1e-12);
        match gd {
            None => assert_eq!(rows[t][2], ""),
            Some((g, diss)) => {
                assert!((num(t, 2) - g).abs() < 1e-12);
                assert!((num(t, 3) - diss).abs() < 1e-12);
            }
        }
    }
    assert!((num(2, 4) - 7.0 / 18.0).abs() < 1e-12);

    // absent pairs by common neighbours: l=0 four pairs, one formed; l=1 three, two formed
    let u = fs::read_to_string(out.join("u_table.csv")).unwrap();
    assert_eq!(u.lines().nth(1).unwrap().split(',').take(3).collect::<Vec<_>>(), ["0", "4", "1"]);
    assert_eq!(u.lines().nth(2).unwrap().split(',').take(3).collect::<Vec<_>>(), ["1", "3", "2"]);
    // present pairs by disjoint neighbours: l=1 four pairs, three dissolved; l=2 one, none
    let v = fs::read_to_string(out.join("v_table.csv")).unwrap();
    assert_eq!(v.lines().nth(1).unwrap().split(',').take(3).collect::<Vec<_>>(), ["1", "4", "3"]);
    assert_eq!(v.lines().nth(2).unwrap().split(',').take(3).collect::<Vec<_>>(), ["2", "1", "0"]);
}

#[test]
fn compare_emits_criteria_for_all_five_models() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path());
    let cfg = dir.path().join("cmp.json");
    fs::write(&cfg, r#"{"seed": 5, "data": "sim/series.txt", "steps": [1, 2], "mc_paths": 20,
        "estimation": {"init_grid": [0.5]}}"#)
    .unwrap();
    let out = dir.path().join("c");
    ok(&["compare", "--config", s(&cfg), "--out", s(&out)]);
    let report = read_json(&out.join("comparison.json"));
    let models: Vec<&str> = report["models"].as_array().unwrap().iter().map(|m| m["model"].as_str().unwrap()).collect();
    assert_eq!(models, ["transitivity-ar", "global-ar", "edgewise-ar", "edgewise-mean", "degree-mean"]);
    assert_eq!(report["split"], 28);
    for m in report["models"].as_array().unwrap() {
        let c = &m["criteria"];
        let (l, k, n) = (c["loglik"].as_f64().unwrap(), c["num_params"].as_f64().unwrap(), c["num_obs"].as_f64().unwrap());
        assert!((c["aic"].as_f64().unwrap() - (2.0 * k - 2.0 * l)).abs() < 1e-9);
        assert!((c["bic"].as_f64().unwrap() - (k * n.ln() - 2.0 * l)).abs() < 1e-9);
        assert_eq!(m["auc"].as_array().unwrap().len(), 2);
    }
    let csv = fs::read_to_string(out.join("criteria.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "model,num_params,num_obs,loglik,aic,bic,auc_h1,auc_h2");
    assert_eq!(csv.lines().count(), 1 + 5 + 1);

    let again = dir.path().join("c2");
    ok(&["compare", "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(fs::read(out.join("criteria.csv")).unwrap(), fs::read(again.join("criteria.csv")).unwrap());
}

#[test]
fn forecast_writes_one_roc_per_step() {
    let dir = TempDir::new().unwrap();
    simulated(dir.path());
    let cfg = dir.path().join("fc.json");
    fs::write(&cfg, r#"{"seed": 5, "model": "transitivity-ar", "data": "sim/series.txt", "mc_paths": 20,
        "estimation": {"init_grid": [0.5]}}"#)
    .unwrap();
    let out = dir.path().join("f");
    ok(&["forecast", "--config", s(&cfg), "--steps", "1,2,3", "--out", s(&out)]);
    for h in 1..=3 {
        let roc = fs::read_to_string(out.join(format!("roc_h{h}.csv"))).unwrap();
        let mut lines = roc.lines();
        assert_eq!(lines.next(), Some("fpr,tpr"));
        assert_eq!(lines.next(), Some("0,0"));
        assert_eq!(roc.lines().last(), Some("1,1"));
    }
    let summary = read_json(&out.join("forecast.json"));
    assert_eq!(summary["split"], 27);
    assert_eq!(summary["auc"].as_array().unwrap().len(), 3);
}

#[test]
fn help_documents_every_config_key() {
    let keys = [
        ("simulate", &["seed", "model", "p", "n", "burn_in", "init", "params", "globals", "xi", "eta", "values", "format"][..]),
        ("fit", &["seed", "model", "data", "format", "method", "estimation"][..]),
        ("compare", &["seed", "data", "format", "split", "steps", "models", "mc_paths", "estimation"][..]),
        ("forecast", &["seed", "model", "data", "format", "split", "steps", "mc_paths", "estimation"][..]),
    ];
    let estimation = [
        "init_grid", "global_start", "r_tilde_local", "r_check_local", "r_tilde_global", "r_check_global",
        "tau_grid_global", "tau_grid_local", "ci_level", "imom", "joint_ascent",
    ];
    for (cmd, list) in keys {
        let out = arnet(&[cmd, "--help"]);
        let help = String::from_utf8_lossy(&out.stdout);
        let documented = |k: &str| help.lines().any(|l| l.trim_start().starts_with(&format!("{k} ")));
        for k in list {
            assert!(documented(k), "{cmd} --help misses `{k}`");
        }
        if cmd != "simulate" {
            for k in estimation {
                assert!(documented(k), "{cmd} --help misses `{k}`");
            }
        }
    }
}
