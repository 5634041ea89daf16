//! Black-box CLI tests: exit codes, error channel, and output reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gasflow"))
}

fn write_fixtures(dir: &Path) -> (String, String) {
    let net = dir.join("net.json");
    fs::write(
        &net,
        r#"{
        "gas": {"sound_speed_m_s": 350.0},
        "nodes": [
            {"id": "a", "p_min_bar": 60, "p_max_bar": 80, "q_lo_kg_s": 0, "q_hi_kg_s": 60},
            {"id": "b", "p_min_bar": 60, "p_max_bar": 80, "q_lo_kg_s": -50, "q_hi_kg_s": 0,
             "generator": {"eta_mw_per_kg_s": 20.0, "cost_per_kg": 0.5}}
        ],
        "pipes": [
            {"id": "p1", "from": "a", "to": "b", "length_m": 10000, "diameter_m": 0.6, "friction": 0.01}
        ]
    }"#,
    )
    .unwrap();
    let demand = dir.join("demand.csv");
    fs::write(&demand, "time_s,demand_mw\n0,200\n7200,200\n").unwrap();
    (
        net.to_str().unwrap().to_owned(),
        demand.to_str().unwrap().to_owned(),
    )
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn missing_network_exits_1_with_io_kind() {
    let out = run(&["simulate", "--network", "/no/such/file.json"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(line["error"], "io");
}

#[test]
fn rest_state_trajectory_pressures_are_constant() {
    let dir = tempfile::tempdir().unwrap();
    let (net, _) = write_fixtures(dir.path());
    let outdir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--network",
        &net,
        "--out",
        outdir.to_str().unwrap(),
        "--horizon-s",
        "3600",
        "--dx-m",
        "2500",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(outdir.join("trajectory.csv")).unwrap();
    let pressures: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert!(!pressures.is_empty());
    assert!(
        pressures.iter().all(|p| *p == pressures[0]),
        "rest-state pressures drifted"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outdir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["mass_ledger_residual_rel"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn identical_inputs_give_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (net, demand) = write_fixtures(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let outdir = dir.path().join(name);
        let out = run(&[
            "optimize-stochastic",
            "--network",
            &net,
            "--demand",
            &demand,
            "--out",
            outdir.to_str().unwrap(),
            "--horizon-s",
            "7200",
            "--dx-m",
            "2500",
            "--max-iters",
            "5",
            "--scenarios",
            "4",
            "--sigma",
            "0.05",
            "--seed",
            "11",
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((
            fs::read(outdir.join("loss_history.csv")).unwrap(),
            fs::read(outdir.join("solution_controls.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn single_scenario_zero_noise_matches_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (net, demand) = write_fixtures(dir.path());
    let common = |sub: &str, outdir: &Path| -> Vec<String> {
        let mut v: Vec<String> = vec![
            sub.into(),
            "--network".into(),
            net.clone(),
            "--demand".into(),
            demand.clone(),
            "--out".into(),
            outdir.to_str().unwrap().into(),
            "--horizon-s".into(),
            "7200".into(),
            "--dx-m".into(),
            "2500".into(),
            "--max-iters".into(),
            "8".into(),
        ];
        if sub == "optimize-stochastic" {
            v.extend([
                "--scenarios".into(),
                "1".into(),
                "--sigma".into(),
                "0".into(),
            ]);
        }
        v
    };
    let det_dir = dir.path().join("det");
    let sto_dir = dir.path().join("sto");
    let det = bin().args(common("optimize", &det_dir)).output().unwrap();
    let sto = bin()
        .args(common("optimize-stochastic", &sto_dir))
        .output()
        .unwrap();
    assert_eq!(det.status.code(), Some(0));
    assert_eq!(sto.status.code(), Some(0));
    for f in [
        "loss_history.csv",
        "solution_controls.csv",
        "trajectory.csv",
    ] {
        assert_eq!(
            fs::read(det_dir.join(f)).unwrap(),
            fs::read(sto_dir.join(f)).unwrap(),
            "{f} differs between deterministic and |S|=1, sigma=0 stochastic"
        );
    }
}

#[test]
fn controls_round_trip_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let (net, demand) = write_fixtures(dir.path());
    let first = dir.path().join("first");
    let out = run(&[
        "optimize",
        "--network",
        &net,
        "--demand",
        &demand,
        "--out",
        first.to_str().unwrap(),
        "--horizon-s",
        "7200",
        "--dx-m",
        "2500",
        "--max-iters",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    // Re-simulate from the written solution; then write controls again.
    let second = dir.path().join("second");
    let controls = first.join("solution_controls.csv");
    let out = run(&[
        "optimize",
        "--network",
        &net,
        "--demand",
        &demand,
        "--controls",
        controls.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--horizon-s",
        "7200",
        "--dx-m",
        "2500",
        "--max-iters",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(first.join("solution_controls.csv")).unwrap(),
        fs::read(second.join("solution_controls.csv")).unwrap()
    );
}
