//! Command-line front end: simulate, check gradients, and optimize nodal
//! flow schedules on a gas network, with reproducible file-based outputs.
//!
//! Pressures are reported in bar and flows in kg/s at this surface; the
//! library works in SI throughout. Every run writes `summary.json` echoing
//! the fully resolved configuration so outputs are self-describing.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gasflow::cost::{self, DemandSeries, ObjectiveSpec};
use gasflow::grid::{self, DiscreteSystem};
use gasflow::model::{self, GasNetwork, BAR};
use gasflow::opt::{self, Bounds, ControlSchedule, OptReport};
use gasflow::sim::{self, SimConfig};
use gasflow::{adjoint, Error, Result};

const EXIT_OK: i32 = 0;
const EXIT_ERROR: i32 = 1;
const EXIT_GRAD_TOLERANCE: i32 = 2;
const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "gasflow",
    about = "Transient gas-network simulation and optimal flow scheduling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Network description (JSON).
    #[arg(long)]
    network: PathBuf,
    /// Output directory; created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Target spatial cell width, m.
    #[arg(long = "dx-m", default_value_t = 1000.0)]
    dx_m: f64,
    /// CFL safety factor in (0, 1].
    #[arg(long, default_value_t = 0.4)]
    cfl: f64,
    /// Time horizon, s.
    #[arg(long = "horizon-s", default_value_t = 36000.0)]
    horizon_s: f64,
}

#[derive(Args)]
struct ObjectiveArgs {
    /// Demand time series CSV (time_s, demand_mw).
    #[arg(long)]
    demand: PathBuf,
    /// Demand-mismatch weight.
    #[arg(long, default_value_t = ObjectiveSpec::DEFAULT_ALPHA)]
    alpha: f64,
    /// Fuel-cost weight.
    #[arg(long, default_value_t = ObjectiveSpec::DEFAULT_BETA)]
    beta: f64,
    /// Pressure-window penalty weight.
    #[arg(long, default_value_t = ObjectiveSpec::DEFAULT_GAMMA)]
    gamma: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the network forward and write the trajectory.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Control schedule CSV (node, hour, q_kg_s); rest state if omitted.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Compare the adjoint gradient against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        objective: ObjectiveArgs,
        #[arg(long)]
        controls: Option<PathBuf>,
        /// Test hook: scale one adjoint gradient component to force failure.
        #[arg(long, hide = true)]
        corrupt_component: Option<usize>,
    },
    /// Deterministic optimal-gas-flow solve.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        objective: ObjectiveArgs,
        /// Starting control schedule; a heuristic warm start if omitted.
        #[arg(long)]
        controls: Option<PathBuf>,
        #[arg(long = "max-iters", default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Stochastic optimal-gas-flow solve over sampled consumption scenarios.
    OptimizeStochastic {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        objective: ObjectiveArgs,
        #[arg(long)]
        controls: Option<PathBuf>,
        #[arg(long = "max-iters", default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Number of scenarios |S|.
        #[arg(long, default_value_t = 16)]
        scenarios: usize,
        /// Relative consumption noise standard deviation.
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep grid resolution and report forward/adjoint wall time.
    BenchScaling {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        objective: ObjectiveArgs,
        /// Comma-separated list of target cell widths to sweep, m.
        #[arg(long, default_value = "4000,2000,1000,500", value_delimiter = ',')]
        dx_list: Vec<f64>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let line = json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Simulate { common, controls } => cmd_simulate(&common, controls.as_deref()),
        Command::Gradcheck {
            common,
            objective,
            controls,
            corrupt_component,
        } => cmd_gradcheck(&common, &objective, controls.as_deref(), corrupt_component),
        Command::Optimize {
            common,
            objective,
            controls,
            max_iters,
            tol,
        } => cmd_optimize(
            &common,
            &objective,
            controls.as_deref(),
            max_iters,
            tol,
            None,
        ),
        Command::OptimizeStochastic {
            common,
            objective,
            controls,
            max_iters,
            tol,
            scenarios,
            sigma,
            seed,
        } => cmd_optimize(
            &common,
            &objective,
            controls.as_deref(),
            max_iters,
            tol,
            Some((scenarios, sigma, seed)),
        ),
        Command::BenchScaling {
            common,
            objective,
            dx_list,
        } => cmd_bench_scaling(&common, &objective, &dx_list),
    }
}

struct Problem {
    net: GasNetwork,
    sys: DiscreteSystem,
    cfg: SimConfig,
    ic: Vec<f64>,
}

fn setup(common: &CommonArgs) -> Result<Problem> {
    let net = model::load_network(&common.network)?;
    let sys = grid::discretize(&net, common.dx_m)?;
    let cfg = SimConfig {
        horizon: common.horizon_s,
        cfl_safety: common.cfl,
        target_dx: common.dx_m,
        checkpoint_stride: None,
    };
    // Start from a uniform mid-window rest state.
    let p0 = net
        .nodes
        .iter()
        .map(|n| 0.5 * (n.p_min + n.p_max))
        .sum::<f64>()
        / net.nodes.len() as f64;
    let ic = grid::uniform_state(&sys, &net, p0);
    Ok(Problem { net, sys, cfg, ic })
}

fn load_controls(
    path: Option<&Path>,
    net: &GasNetwork,
    horizon: f64,
    spec: Option<&ObjectiveSpec>,
) -> Result<ControlSchedule> {
    match path {
        Some(p) => read_controls_csv(p, net, horizon),
        None => match spec {
            Some(s) => Ok(opt::default_initial_controls(net, s, horizon)),
            None => Ok(ControlSchedule::constant(
                vec![0.0; net.nodes.len()],
                horizon,
            )),
        },
    }
}

/// Controls CSV: header `node,hour,q_kg_s`, one row per (node, hour bin).
/// Missing (node, hour) pairs default to zero, so partial files are valid.
fn read_controls_csv(path: &Path, net: &GasNetwork, horizon: f64) -> Result<ControlSchedule> {
    let n_bins = ((horizon / 3600.0).ceil() as usize).max(1);
    let mut theta = vec![0.0; net.nodes.len() * n_bins];
    let mut rdr = csv::Reader::from_path(path)?;
    for record in rdr.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "{}: expected 3 columns (node, hour, q_kg_s), got {}",
                path.display(),
                record.len()
            )));
        }
        let node = net
            .node_index(&record[0])
            .ok_or_else(|| Error::validation(&record[0], "unknown node id in controls file"))?;
        let hour: usize = record[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad hour index {:?}", &record[1])))?;
        let q: f64 = record[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad flow value {:?}", &record[2])))?;
        if hour >= n_bins {
            return Err(Error::validation(
                &record[0],
                format!("hour {hour} outside the {n_bins}-bin horizon"),
            ));
        }
        theta[node * n_bins + hour] = q;
    }
    Ok(ControlSchedule::new(theta, net.nodes.len(), n_bins, 3600.0))
}

fn write_controls_csv(path: &Path, net: &GasNetwork, controls: &ControlSchedule) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "hour", "q_kg_s"])?;
    for (i, node) in net.nodes.iter().enumerate() {
        for bin in 0..controls.n_bins {
            w.write_record([
                node.id.as_str(),
                &bin.to_string(),
                &format!("{:.12e}", controls.get(i, bin)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format trajectory: one row per (sample time, node) with the nodal
/// pressure and the net pipe flow into the node from extrapolated end fluxes.
fn write_trajectory_csv(
    path: &Path,
    net: &GasNetwork,
    sys: &DiscreteSystem,
    traj: &sim::Trajectory,
    controls: &ControlSchedule,
    sample_dt: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "node", "pressure_bar", "net_pipe_inflow_kg_s"])?;
    let horizon = traj.horizon();
    let n_samples = (horizon / sample_dt).round() as usize;
    let a2 = net.gas.a2();
    for k in 0..=n_samples {
        let t = (k as f64 * sample_dt).min(horizon);
        let u = sim::query_state(traj, net, sys, controls, t)?;
        for (i, node) in net.nodes.iter().enumerate() {
            let p_bar = a2 * u[sys.node_slot(i)] / BAR;
            let inflow: f64 = sys.node_stencils[i]
                .iter()
                .map(|st| st.sign * st.area * st.boundary_flux(&u))
                .sum();
            w.write_record([
                &format!("{t:.6}"),
                node.id.as_str(),
                &format!("{p_bar:.9}"),
                &format!("{inflow:.9}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_summary(path: &Path, value: serde_json::Value) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn common_summary(common: &CommonArgs) -> serde_json::Value {
    json!({
        "network": common.network.display().to_string(),
        "dx_m": common.dx_m,
        "cfl": common.cfl,
        "horizon_s": common.horizon_s,
    })
}

fn cmd_simulate(common: &CommonArgs, controls_path: Option<&Path>) -> Result<i32> {
    fs::create_dir_all(&common.out)?;
    let prob = setup(common)?;
    let controls = load_controls(controls_path, &prob.net, common.horizon_s, None)?;
    let m0 = grid::total_mass(&prob.sys, &prob.net, &prob.ic);
    let traj = sim::simulate(&prob.net, &prob.sys, &controls, &prob.ic, &prob.cfg)?;
    let m1 = grid::total_mass(&prob.sys, &prob.net, &traj.final_state);
    let ledger_residual = ((m1 - m0) - traj.injected_mass).abs() / m0;

    write_trajectory_csv(
        &common.out.join("trajectory.csv"),
        &prob.net,
        &prob.sys,
        &traj,
        &controls,
        60.0,
    )?;
    write_summary(
        &common.out.join("summary.json"),
        json!({
            "subcommand": "simulate",
            "config": common_summary(common),
            "controls": controls_path.map(|p| p.display().to_string()),
            "n_unknowns": prob.sys.n_u,
            "n_steps": traj.schedule.n_steps,
            "mass_initial_kg": m0,
            "mass_final_kg": m1,
            "mass_injected_kg": traj.injected_mass,
            "mass_ledger_residual_rel": ledger_residual,
        }),
    )?;
    println!(
        "simulated {} steps over {} s; mass ledger residual {ledger_residual:.3e} (relative)",
        traj.schedule.n_steps, common.horizon_s
    );
    Ok(EXIT_OK)
}

fn make_spec(net: &GasNetwork, objective: &ObjectiveArgs) -> Result<ObjectiveSpec> {
    let demand = DemandSeries::from_csv(&objective.demand)?;
    ObjectiveSpec::new(
        net,
        demand,
        objective.alpha,
        objective.beta,
        objective.gamma,
    )
}

fn cmd_gradcheck(
    common: &CommonArgs,
    objective: &ObjectiveArgs,
    controls_path: Option<&Path>,
    corrupt_component: Option<usize>,
) -> Result<i32> {
    fs::create_dir_all(&common.out)?;
    let prob = setup(common)?;
    let spec = make_spec(&prob.net, objective)?;
    let controls = load_controls(controls_path, &prob.net, common.horizon_s, Some(&spec))?;

    let (_, mut grad) =
        adjoint::adjoint_gradient(&prob.net, &prob.sys, &controls, &prob.ic, &prob.cfg, &spec)?;
    if let Some(i) = corrupt_component {
        if i >= grad.len() {
            return Err(Error::Domain(format!(
                "corrupt component {i} outside the {}-parameter gradient",
                grad.len()
            )));
        }
        grad[i] = grad[i] * 1.5 + 1.0;
    }

    let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-2;
    let mut max_rel: f64 = 0.0;
    println!("param  adjoint              central_fd           rel_error");
    for i in 0..controls.n_params() {
        let mut tp = controls.theta.clone();
        tp[i] += h;
        let fp = objective_value(&prob, &controls.with_theta(tp), &spec)?;
        let mut tm = controls.theta.clone();
        tm[i] -= h;
        let fm = objective_value(&prob, &controls.with_theta(tm), &spec)?;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / fd.abs().max(1e-6 * scale).max(1e-300);
        max_rel = max_rel.max(rel);
        println!("{i:>5}  {:>+.12e}  {fd:>+.12e}  {rel:.3e}", grad[i]);
    }
    let pass = max_rel <= GRADCHECK_TOL;
    println!(
        "max relative error {max_rel:.3e} ({} tolerance {GRADCHECK_TOL:.0e})",
        if pass { "within" } else { "EXCEEDS" }
    );
    write_summary(
        &common.out.join("summary.json"),
        json!({
            "subcommand": "gradcheck",
            "config": common_summary(common),
            "alpha": objective.alpha,
            "beta": objective.beta,
            "gamma": objective.gamma,
            "n_params": controls.n_params(),
            "max_relative_error": max_rel,
            "tolerance": GRADCHECK_TOL,
            "pass": pass,
        }),
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_GRAD_TOLERANCE })
}

fn objective_value(
    prob: &Problem,
    controls: &ControlSchedule,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    let traj = sim::simulate(&prob.net, &prob.sys, controls, &prob.ic, &prob.cfg)?;
    cost::cost_total(spec, &prob.net, &prob.sys, &traj, controls)
}

fn write_loss_history(path: &Path, report: &OptReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "loss", "proj_grad_inf_norm"])?;
    for (i, (l, g)) in report
        .loss_history
        .iter()
        .zip(&report.grad_norm_history)
        .enumerate()
    {
        w.write_record([&i.to_string(), &format!("{l:.12e}"), &format!("{g:.12e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_optimize(
    common: &CommonArgs,
    objective: &ObjectiveArgs,
    controls_path: Option<&Path>,
    max_iters: usize,
    tol: f64,
    stochastic: Option<(usize, f64, u64)>,
) -> Result<i32> {
    fs::create_dir_all(&common.out)?;
    let prob = setup(common)?;
    let spec = make_spec(&prob.net, objective)?;
    let controls0 = load_controls(controls_path, &prob.net, common.horizon_s, Some(&spec))?;
    let bounds = Bounds::from_network(&prob.net, controls0.n_bins);

    let report = match stochastic {
        None => opt::optimize(
            &prob.net, &prob.sys, &spec, &bounds, &controls0, &prob.ic, &prob.cfg, max_iters, tol,
        )?,
        Some((n_scenarios, sigma, seed)) => {
            let scen = opt::sample_scenarios(
                controls0.n_nodes,
                controls0.n_bins,
                n_scenarios,
                sigma,
                seed,
            )?;
            opt::optimize_stochastic(
                &prob.net, &prob.sys, &spec, &bounds, &controls0, &prob.ic, &prob.cfg, &scen,
                max_iters, tol,
            )?
        }
    };
    let best = controls0.with_theta(report.final_theta.clone());

    write_loss_history(&common.out.join("loss_history.csv"), &report)?;
    write_controls_csv(&common.out.join("solution_controls.csv"), &prob.net, &best)?;
    let traj = sim::simulate(&prob.net, &prob.sys, &best, &prob.ic, &prob.cfg)?;
    write_trajectory_csv(
        &common.out.join("trajectory.csv"),
        &prob.net,
        &prob.sys,
        &traj,
        &best,
        60.0,
    )?;

    let (name, extra) = match stochastic {
        None => ("optimize", json!({})),
        Some((n, sigma, seed)) => (
            "optimize-stochastic",
            json!({"scenarios": n, "sigma": sigma, "seed": seed}),
        ),
    };
    write_summary(
        &common.out.join("summary.json"),
        json!({
            "subcommand": name,
            "config": common_summary(common),
            "alpha": objective.alpha,
            "beta": objective.beta,
            "gamma": objective.gamma,
            "max_iters": max_iters,
            "tol": tol,
            "stochastic": extra,
            "iterations": report.iterations,
            "termination": report.termination.as_str(),
            "initial_loss": report.loss_history.first(),
            "final_loss": report.loss_history.last(),
        }),
    )?;
    println!(
        "{name}: {} after {} iterations, loss {:.6e} -> {:.6e}",
        report.termination.as_str(),
        report.iterations,
        report.loss_history.first().copied().unwrap_or(f64::NAN),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
    );
    Ok(EXIT_OK)
}

fn cmd_bench_scaling(
    common: &CommonArgs,
    objective: &ObjectiveArgs,
    dx_list: &[f64],
) -> Result<i32> {
    fs::create_dir_all(&common.out)?;
    let net = model::load_network(&common.network)?;
    let mut w = csv::Writer::from_path(common.out.join("scaling.csv"))?;
    w.write_record(["dx_m", "n_x", "n_t", "forward_s", "forward_adjoint_s"])?;
    println!("dx_m    n_x     n_t     forward_s  forward_adjoint_s");
    let mut rows = Vec::new();
    for &dx in dx_list {
        let sys = grid::discretize(&net, dx)?;
        let cfg = SimConfig {
            horizon: common.horizon_s,
            cfl_safety: common.cfl,
            target_dx: dx,
            checkpoint_stride: None,
        };
        let spec = make_spec(&net, objective)?;
        let controls = opt::default_initial_controls(&net, &spec, common.horizon_s);
        let p0 = net
            .nodes
            .iter()
            .map(|n| 0.5 * (n.p_min + n.p_max))
            .sum::<f64>()
            / net.nodes.len() as f64;
        let ic = grid::uniform_state(&sys, &net, p0);

        let t0 = Instant::now();
        let traj = sim::simulate(&net, &sys, &controls, &ic, &cfg)?;
        let forward_s = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        adjoint::adjoint_gradient(&net, &sys, &controls, &ic, &cfg, &spec)?;
        let both_s = t1.elapsed().as_secs_f64();

        let n_t = traj.schedule.n_steps;
        println!(
            "{dx:<7} {:<7} {n_t:<7} {forward_s:<10.4} {both_s:.4}",
            sys.n_u
        );
        w.write_record([
            &format!("{dx}"),
            &sys.n_u.to_string(),
            &n_t.to_string(),
            &format!("{forward_s:.6}"),
            &format!("{both_s:.6}"),
        ])?;
        rows.push(json!({"dx_m": dx, "n_x": sys.n_u, "n_t": n_t,
                         "forward_s": forward_s, "forward_adjoint_s": both_s}));
    }
    w.flush()?;
    write_summary(
        &common.out.join("summary.json"),
        json!({
            "subcommand": "bench-scaling",
            "config": common_summary(common),
            "rows": rows,
        }),
    )?;
    Ok(EXIT_OK)
}
