//! Box-constrained LBFGS optimization of hourly nodal flow controls,
//! deterministic or as a sample average over perturbed consumption scenarios.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::adjoint;
use crate::cost::ObjectiveSpec;
use crate::grid::{DiscreteSystem, State};
use crate::model::GasNetwork;
use crate::sim::SimConfig;
use crate::{Error, Result};

/// Per-node piecewise-constant flow controls, kg/s: q_i(t) = θ[i, bin(t)].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    /// Row-major [node][bin].
    pub theta: Vec<f64>,
    pub n_nodes: usize,
    pub n_bins: usize,
    /// Control interval length, s (3600 for hourly controls).
    pub bin_seconds: f64,
}

impl ControlSchedule {
    pub fn new(theta: Vec<f64>, n_nodes: usize, n_bins: usize, bin_seconds: f64) -> Self {
        assert_eq!(theta.len(), n_nodes * n_bins);
        ControlSchedule {
            theta,
            n_nodes,
            n_bins,
            bin_seconds,
        }
    }

    /// One hourly bin structure covering `horizon`, all nodes constant.
    pub fn constant(per_node: Vec<f64>, horizon: f64) -> Self {
        Self::with_bins(per_node, horizon, 3600.0)
    }

    pub fn with_bins(per_node: Vec<f64>, horizon: f64, bin_seconds: f64) -> Self {
        let n_nodes = per_node.len();
        let n_bins = ((horizon / bin_seconds).ceil() as usize).max(1);
        let mut theta = Vec::with_capacity(n_nodes * n_bins);
        for v in &per_node {
            theta.extend(std::iter::repeat(*v).take(n_bins));
        }
        ControlSchedule::new(theta, n_nodes, n_bins, bin_seconds)
    }

    /// Matrix rows are nodes, columns are bins.
    pub fn from_matrix(rows: Vec<Vec<f64>>, bin_seconds: f64) -> Self {
        let n_nodes = rows.len();
        let n_bins = rows[0].len();
        let theta: Vec<f64> = rows.into_iter().flatten().collect();
        ControlSchedule::new(theta, n_nodes, n_bins, bin_seconds)
    }

    pub fn horizon(&self) -> f64 {
        self.n_bins as f64 * self.bin_seconds
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    #[inline]
    pub fn get(&self, node: usize, bin: usize) -> f64 {
        self.theta[node * self.n_bins + bin]
    }

    /// Flow of every node in the given bin, written into `q`.
    pub fn fill_q(&self, bin: usize, q: &mut [f64]) {
        debug_assert!(bin < self.n_bins);
        for node in 0..self.n_nodes {
            q[node] = self.theta[node * self.n_bins + bin];
        }
    }

    /// Bin index containing time t (clamped at the horizon).
    pub fn bin_of(&self, t: f64) -> usize {
        ((t / self.bin_seconds).floor() as usize).min(self.n_bins - 1)
    }

    /// Replaces θ, keeping the layout.
    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        ControlSchedule::new(theta, self.n_nodes, self.n_bins, self.bin_seconds)
    }
}

/// Per-parameter box bounds.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    /// Repeats each node's [q_lo, q_hi] across all bins, matching the
    /// ControlSchedule layout.
    pub fn from_network(net: &GasNetwork, n_bins: usize) -> Self {
        let mut lo = Vec::with_capacity(net.nodes.len() * n_bins);
        let mut hi = Vec::with_capacity(net.nodes.len() * n_bins);
        for n in &net.nodes {
            lo.extend(std::iter::repeat(n.q_lo).take(n_bins));
            hi.extend(std::iter::repeat(n.q_hi).take(n_bins));
        }
        Bounds { lo, hi }
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }
}

/// Componentwise clamp into the box.
pub fn project_box(theta: &mut [f64], bounds: &Bounds) {
    for ((x, &lo), &hi) in theta.iter_mut().zip(&bounds.lo).zip(&bounds.hi) {
        *x = x.clamp(lo, hi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Projected-gradient ∞-norm fell below tol.
    Converged,
    MaxIters,
    /// Armijo backtracking exhausted without decrease.
    LineSearchFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptReport {
    /// Loss at θ₀ followed by each accepted iterate.
    pub loss_history: Vec<f64>,
    /// Projected-gradient ∞-norm at the same points.
    pub grad_norm_history: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 100,
            tol: 1e-6,
            armijo_c1: 1e-4,
            max_backtracks: 30,
        }
    }
}

fn proj_grad_inf_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..x.len() {
        let stepped = (x[i] - g[i]).clamp(bounds.lo[i], bounds.hi[i]);
        norm = norm.max((x[i] - stepped).abs());
    }
    norm
}

/// Projected LBFGS with Armijo backtracking.
///
/// The objective closure returns (value, gradient). Curvature pairs are kept
/// only when sᵀy > 0; accepted iterates decrease the loss strictly.
pub fn minimize<F>(
    mut objective: F,
    theta0: &[f64],
    bounds: &Bounds,
    opts: &LbfgsOptions,
) -> Result<OptReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = theta0.len();
    let mut x = theta0.to_vec();
    project_box(&mut x, bounds);
    let (mut fx, mut g) = objective(&x)?;
    if !fx.is_finite() {
        return Err(Error::Domain("objective not finite at theta0".into()));
    }

    let mut s_list: Vec<Vec<f64>> = Vec::new();
    let mut y_list: Vec<Vec<f64>> = Vec::new();
    let mut rho_list: Vec<f64> = Vec::new();

    let mut loss_history = vec![fx];
    let mut grad_norm_history = vec![proj_grad_inf_norm(&x, &g, bounds)];
    let mut termination = Termination::MaxIters;
    let mut iterations = 0usize;

    for _ in 0..opts.max_iters {
        if proj_grad_inf_norm(&x, &g, bounds) <= opts.tol {
            termination = Termination::Converged;
            break;
        }

        // Two-loop recursion for d = −H·g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_list.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho_list[i] * dot(&s_list[i], &d);
            alpha[i] = a;
            axpy(-a, &y_list[i], &mut d);
        }
        if m > 0 {
            let last = m - 1;
            let scale = dot(&s_list[last], &y_list[last]) / dot(&y_list[last], &y_list[last]);
            d.iter_mut().for_each(|v| *v *= scale);
        }
        for i in 0..m {
            let b = rho_list[i] * dot(&y_list[i], &d);
            axpy(alpha[i] - b, &s_list[i], &mut d);
        }

        if dot(&d, &g) >= 0.0 {
            // Not a descent direction; fall back to steepest descent.
            s_list.clear();
            y_list.clear();
            rho_list.clear();
            d = g.iter().map(|v| -v).collect();
        }

        // Backtracking line search with projection and Armijo decrease.
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..opts.max_backtracks {
            let mut xt: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            project_box(&mut xt, bounds);
            let displacement: f64 = (0..n).map(|i| (xt[i] - x[i]).abs()).sum();
            if displacement == 0.0 {
                step *= 0.5;
                continue;
            }
            // A trial point whose simulation loses state validity is just a
            // bad step — back off rather than abort the whole solve.
            let (ft, gt) = match objective(&xt) {
                Ok(v) => v,
                Err(Error::StateValidity { .. }) => {
                    step *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let slope: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if ft.is_finite() && ft <= fx + opts.armijo_c1 * slope && ft < fx {
                accepted = Some((xt, ft, gt));
                break;
            }
            step *= 0.5;
        }

        let (xt, ft, gt) = match accepted {
            Some(v) => v,
            None => {
                termination = Termination::LineSearchFailure;
                break;
            }
        };

        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            s_list.push(s);
            y_list.push(y);
            rho_list.push(1.0 / sy);
            if s_list.len() > opts.memory {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
        }

        x = xt;
        fx = ft;
        g = gt;
        iterations += 1;
        loss_history.push(fx);
        grad_norm_history.push(proj_grad_inf_norm(&x, &g, bounds));
    }

    if termination == Termination::MaxIters && proj_grad_inf_norm(&x, &g, bounds) <= opts.tol {
        termination = Termination::Converged;
    }

    Ok(OptReport {
        loss_history,
        grad_norm_history,
        final_theta: x,
        iterations,
        termination,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Deterministic OGF: minimizes the adjoint-differentiated objective over
/// the box of nodal flow bounds.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    net: &GasNetwork,
    sys: &DiscreteSystem,
    spec: &ObjectiveSpec,
    bounds: &Bounds,
    controls0: &ControlSchedule,
    ic: &State,
    cfg: &SimConfig,
    max_iters: usize,
    tol: f64,
) -> Result<OptReport> {
    let opts = LbfgsOptions {
        max_iters,
        tol,
        ..LbfgsOptions::default()
    };
    minimize(
        |theta| {
            let controls = controls0.with_theta(theta.to_vec());
            adjoint::adjoint_gradient(net, sys, &controls, ic, cfg, spec)
        },
        &controls0.theta,
        bounds,
        &opts,
    )
}

/// Fixed sampled multiplicative consumption noise, one factor per
/// (scenario, node, bin).
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    /// 1 + ε[s][node·bins + bin], ε ~ Normal(0, σ²).
    pub factors: Vec<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Realized controls for one scenario: withdrawals (θ < 0) scale by
    /// their noise factor, injections are unperturbed.
    pub fn realize(&self, s: usize, controls: &ControlSchedule) -> ControlSchedule {
        let theta: Vec<f64> = controls
            .theta
            .iter()
            .zip(&self.factors[s])
            .map(|(&t, &f)| if t < 0.0 { t * f } else { t })
            .collect();
        controls.with_theta(theta)
    }

    /// Chain rule through the realization: dθ_realized/dθ per entry.
    fn chain(&self, s: usize, theta: &[f64], grad: &mut [f64]) {
        for ((g, &t), &f) in grad.iter_mut().zip(theta).zip(&self.factors[s]) {
            if t < 0.0 {
                *g *= f;
            }
        }
    }
}

/// Draws |S| scenarios of per-(node, bin) noise; deterministic in the seed.
pub fn sample_scenarios(
    n_nodes: usize,
    n_bins: usize,
    n_scenarios: usize,
    sigma: f64,
    seed: u64,
) -> Result<ScenarioSet> {
    if n_scenarios == 0 {
        return Err(Error::Domain("need at least one scenario".into()));
    }
    if sigma < 0.0 {
        return Err(Error::Domain("sigma must be non-negative".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Domain(format!("bad noise distribution: {e}")))?;
    let factors = (0..n_scenarios)
        .map(|_| {
            (0..n_nodes * n_bins)
                .map(|_| {
                    if sigma == 0.0 {
                        1.0
                    } else {
                        1.0 + normal.sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect();
    Ok(ScenarioSet {
        factors,
        sigma,
        seed,
    })
}

/// Sample-average objective and gradient: mean over scenarios of the
/// per-scenario adjoint result, evaluated in parallel and reduced in fixed
/// scenario order.
pub fn saa_objective(
    net: &GasNetwork,
    sys: &DiscreteSystem,
    spec: &ObjectiveSpec,
    controls: &ControlSchedule,
    ic: &State,
    cfg: &SimConfig,
    scenarios: &ScenarioSet,
) -> Result<(f64, Vec<f64>)> {
    let per_scenario: Vec<Result<(f64, Vec<f64>)>> = (0..scenarios.len())
        .into_par_iter()
        .map(|s| {
            let realized = scenarios.realize(s, controls);
            let (obj, mut grad) = adjoint::adjoint_gradient(net, sys, &realized, ic, cfg, spec)?;
            scenarios.chain(s, &controls.theta, &mut grad);
            Ok((obj, grad))
        })
        .collect();

    let inv = 1.0 / scenarios.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; controls.n_params()];
    for r in per_scenario {
        let (obj, g) = r?;
        total += obj;
        axpy(1.0, &g, &mut grad);
    }
    total *= inv;
    grad.iter_mut().for_each(|v| *v *= inv);
    Ok((total, grad))
}

/// Stochastic OGF under a fixed scenario set (common random numbers): one
/// shared control vector, objective = (1/|S|) Σ_s O⁽ˢ⁾(θ).
#[allow(clippy::too_many_arguments)]
pub fn optimize_stochastic(
    net: &GasNetwork,
    sys: &DiscreteSystem,
    spec: &ObjectiveSpec,
    bounds: &Bounds,
    controls0: &ControlSchedule,
    ic: &State,
    cfg: &SimConfig,
    scenarios: &ScenarioSet,
    max_iters: usize,
    tol: f64,
) -> Result<OptReport> {
    let opts = LbfgsOptions {
        max_iters,
        tol,
        ..LbfgsOptions::default()
    };
    minimize(
        |theta| {
            let controls = controls0.with_theta(theta.to_vec());
            saa_objective(net, sys, spec, &controls, ic, cfg, scenarios)
        },
        &controls0.theta,
        bounds,
        &opts,
    )
}

/// Default starting point: generator withdrawals proportional to efficiency
/// sized to meet the mean demand, supply nodes balancing total withdrawal.
pub fn default_initial_controls(
    net: &GasNetwork,
    spec: &ObjectiveSpec,
    horizon: f64,
) -> ControlSchedule {
    let mean_demand = {
        let n = 32;
        let sum: f64 = (0..=n)
            .map(|i| {
                let t = horizon * i as f64 / n as f64;
                spec.demand.at(t).unwrap_or(0.0)
            })
            .sum();
        sum / (n + 1) as f64
    };
    let eta_sq: f64 = net
        .nodes
        .iter()
        .filter_map(|n| n.generator.map(|g| g.efficiency * g.efficiency))
        .sum();
    let k = if eta_sq > 0.0 {
        mean_demand / eta_sq
    } else {
        0.0
    };

    let mut per_node = vec![0.0; net.nodes.len()];
    let mut total_withdrawal = 0.0;
    for (i, n) in net.nodes.iter().enumerate() {
        if let Some(g) = n.generator {
            if n.q_lo < 0.0 {
                let w = (k * g.efficiency).min(-n.q_lo);
                per_node[i] = -w;
                total_withdrawal += w;
            }
        }
    }
    // Spread the balancing injection over nodes that can inject.
    let injectors: Vec<usize> = net
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.q_hi > 0.0)
        .map(|(i, _)| i)
        .collect();
    if !injectors.is_empty() {
        let share = total_withdrawal / injectors.len() as f64;
        for i in injectors {
            per_node[i] = share.min(net.nodes[i].q_hi);
        }
    }
    let mut controls = ControlSchedule::with_bins(per_node, horizon, 3600.0);
    let bounds = Bounds::from_network(net, controls.n_bins);
    project_box(&mut controls.theta, &bounds);
    controls
}
