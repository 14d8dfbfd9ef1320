use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn flh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flh")).args(args).output().expect("binary runs")
}

fn simulate(out: &Path, extra: &[&str]) -> Output {
    let network = data("single_link_network.json");
    let scenario = data("single_link_scenario.json");
    let mut args = vec![
        "simulate",
        "--network",
        network.to_str().unwrap(),
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    flh(&args)
}

fn errors(out: &Output) -> Vec<serde_json::Value> {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("diagnostics are JSON");
    v["errors"].as_array().expect("error list").clone()
}

#[test]
fn boundary_rows_follow_horizon_and_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &["--model", "flh", "--horizon", "120", "--dt", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("boundary_flows.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,time_s,link_id,inflow_veh_s,outflow_veh_s,N_up_veh,N_down_veh");
    assert_eq!(lines.count(), 120 / 2 + 1);
    assert!(dir.path().join("timing.csv").exists());
    assert!(!dir.path().join("ops.csv").exists());
}

#[test]
fn cfl_link_counts_two_or_three_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &["--count-ops"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("ops.csv")).unwrap();
    let counts: Vec<u32> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), 200);
    assert!(counts.iter().all(|c| (2..=3).contains(c)), "{counts:?}");
}

#[test]
fn probes_are_written_with_nine_decimals() {
    let dir = tempfile::tempdir().unwrap();
    for model in ["flh", "lh", "ctm"] {
        let out = simulate(dir.path(), &["--model", model, "--probe", "A:500:10", "--probe", "A:250:100"]);
        assert!(out.status.success(), "{model}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(dir.path().join("probes.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "link_id,x_m,t_s,N_veh,density_veh_m");
        assert_eq!(rows.len(), 3);
        assert!(rows[1].starts_with("A,500.000000000,10.000000000,"), "{}", rows[1]);
        assert!(rows[1].split(',').skip(1).all(|f| f.split('.').nth(1).map(str::len) == Some(9)));
    }
}

#[test]
fn ltm_probes_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &["--model", "ltm", "--probe", "A:500:10"]);
    assert_eq!(out.status.code(), Some(2));
    let list = errors(&out);
    assert_eq!(list[0]["kind"], "probe_refused");
    assert!(list[0]["message"].as_str().unwrap().contains("does not converge"));
    assert!(!dir.path().join("boundary_flows.csv").exists());
}

#[test]
fn validation_failures_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &["--model", "godunov"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(errors(&out)[0]["kind"], "model");

    let out = simulate(dir.path(), &["--model", "ctm", "--dt", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(errors(&out)[0]["kind"], "cfl");

    let out = simulate(dir.path(), &["--probe", "A:5000:10"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(errors(&out)[0]["kind"], "probe_domain");

    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(data("single_link_network.json")).unwrap().replacen("\"lanes\"", "\"lanez\"", 1);
    fs::write(&bad, text).unwrap();
    let scenario = data("single_link_scenario.json");
    let out = flh(&["simulate", "--network", bad.to_str().unwrap(), "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let list = errors(&out);
    assert_eq!(list[0]["kind"], "schema");
    assert!(list[0]["location"].as_str().unwrap().ends_with("links[0].lanez"), "{list:?}");
}

#[test]
fn identical_runs_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(simulate(a.path(), &["--probe", "A:100:50"]).status.success());
    assert!(simulate(b.path(), &["--probe", "A:100:50", "--sequential"]).status.success());
    for file in ["boundary_flows.csv", "probes.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn compare_of_exact_models_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("compare.csv");
    let out = flh(&["compare", "--models", "flh,lh", "--seeds", "2", "--dt", "1", "--horizon", "60", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "model,dt_s,mean_rmse_veh_s,std_rmse_veh_s,seeds");
    assert_eq!(rows[1], "flh,1.000000000,0.000000000,0.000000000,2");
    assert_eq!(rows[2], "lh,1.000000000,0.000000000,0.000000000,2");
}

#[test]
fn bench_schema_does_not_depend_on_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let network = data("five_link_network.json");
    let mut shapes = Vec::new();
    for repeat in ["1", "3"] {
        let csv = dir.path().join(format!("timing{repeat}.csv"));
        let out = flh(&[
            "bench",
            "--network",
            network.to_str().unwrap(),
            "--models",
            "flh,ltm",
            "--horizons",
            "50,100",
            "--repeat",
            repeat,
            "--out",
            csv.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(&csv).unwrap();
        let shape: Vec<(String, usize)> = text
            .lines()
            .map(|l| (l.split(',').take(2).collect::<Vec<_>>().join(","), l.split(',').count()))
            .collect();
        shapes.push(shape);
    }
    assert_eq!(shapes[0], shapes[1]);
    assert_eq!(shapes[0].len(), 5);
    assert_eq!(shapes[0][0].0, "model,horizon_s");
}
