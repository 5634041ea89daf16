//! Operational objective: demand mismatch, generation cost, and pressure
//! penalty, integrated in time with the trapezoid rule on the step grid.

use crate::grid::DiscreteSystem;
use crate::model::{GasNetwork, GeneratorCurve, BAR};
use crate::opt::ControlSchedule;
use crate::sim::{self, Trajectory};
use crate::{Error, Result};

/// Piecewise-linear demand series, MW.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DemandSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Domain(
                "demand series needs at least two (time, value) samples".into(),
            ));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain(
                "demand sample times must be strictly increasing".into(),
            ));
        }
        Ok(DemandSeries { times, values })
    }

    pub fn constant(value: f64, horizon: f64) -> Self {
        DemandSeries {
            times: vec![0.0, horizon],
            values: vec![value, value],
        }
    }

    pub fn from_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref()).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: {e}", path.as_ref().display()),
            )),
            _ => Error::Parse(e.to_string()),
        })?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (t, v) = rec?;
            times.push(t);
            values.push(v);
        }
        DemandSeries::new(times, values)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation; exact at sample times.
    pub fn at(&self, t: f64) -> Result<f64> {
        if t < self.start() - 1e-9 || t > self.end() + 1e-9 {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.end(),
            });
        }
        let i = self
            .times
            .partition_point(|&s| s <= t)
            .clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        if t <= t0 {
            return Ok(v0);
        }
        let w = (t - t0) / (t1 - t0);
        Ok(v0 + w * (v1 - v0))
    }
}

/// Quasi-quadratic pressure-window penalty
/// V(p) = [relu(p − p_max)² + relu(p_min − p)²] / p_s².
#[inline]
pub fn pressure_penalty(p: f64, p_min: f64, p_max: f64, p_scale: f64) -> f64 {
    let over = (p - p_max).max(0.0);
    let under = (p_min - p).max(0.0);
    (over * over + under * under) / (p_scale * p_scale)
}

/// dV/dp.
#[inline]
pub fn pressure_penalty_deriv(p: f64, p_min: f64, p_max: f64, p_scale: f64) -> f64 {
    let over = (p - p_max).max(0.0);
    let under = (p_min - p).max(0.0);
    2.0 * (over - under) / (p_scale * p_scale)
}

/// Objective weights, demand series, and the per-node data the cost terms
/// read (generator curves and pressure windows copied from the network).
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub demand: DemandSeries,
    /// Penalty normalization p_s, Pa.
    pub pressure_scale: f64,
    pub generators: Vec<Option<GeneratorCurve>>,
    /// Per-node (p_min, p_max), Pa.
    pub windows: Vec<(f64, f64)>,
    /// a², Pa per (kg/m³).
    pub a2: f64,
}

impl ObjectiveSpec {
    /// Default weights γ ≫ α > β: pressure feasibility first, then demand
    /// match, then operating cost.
    pub const DEFAULT_ALPHA: f64 = 1.0;
    pub const DEFAULT_BETA: f64 = 1e-2;
    pub const DEFAULT_GAMMA: f64 = 1e3;

    pub fn new(
        net: &GasNetwork,
        demand: DemandSeries,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || gamma < 0.0 {
            return Err(Error::Domain(
                "objective weights must be non-negative".into(),
            ));
        }
        Ok(ObjectiveSpec {
            alpha,
            beta,
            gamma,
            demand,
            pressure_scale: BAR,
            generators: net.nodes.iter().map(|n| n.generator).collect(),
            windows: net.nodes.iter().map(|n| (n.p_min, n.p_max)).collect(),
            a2: net.gas.a2(),
        })
    }

    pub fn with_defaults(net: &GasNetwork, demand: DemandSeries) -> Result<Self> {
        Self::new(
            net,
            demand,
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_BETA,
            Self::DEFAULT_GAMMA,
        )
    }

    /// Total generated power ΣG_i(q_i), MW.
    pub fn generation(&self, q: &[f64]) -> f64 {
        self.generators
            .iter()
            .zip(q)
            .map(|(g, &qi)| g.map_or(0.0, |g| g.power(qi)))
            .sum()
    }
}

/// Instantaneous cost rate
/// C = α(D(t) − ΣG_i(q_i))² + β ΣE_i(q_i) + γ Σ V(p_ℓ).
pub fn cost_instant(
    spec: &ObjectiveSpec,
    sys: &DiscreteSystem,
    u: &[f64],
    q: &[f64],
    t: f64,
) -> Result<f64> {
    let mismatch = spec.demand.at(t)? - spec.generation(q);
    let mut c = spec.alpha * mismatch * mismatch;
    for (g, &qi) in spec.generators.iter().zip(q) {
        if let Some(g) = g {
            c += spec.beta * g.cost_rate(qi);
        }
    }
    for node in 0..sys.n_nodes {
        let p = spec.a2 * u[sys.node_slot(node)];
        let (lo, hi) = spec.windows[node];
        c += spec.gamma * pressure_penalty(p, lo, hi, spec.pressure_scale);
    }
    Ok(c)
}

/// ∂C/∂u scattered into `out` (added); only nodal density slots contribute.
pub fn cost_grad_u(
    spec: &ObjectiveSpec,
    sys: &DiscreteSystem,
    u: &[f64],
    weight: f64,
    out: &mut [f64],
) {
    for node in 0..sys.n_nodes {
        let slot = sys.node_slot(node);
        let p = spec.a2 * u[slot];
        let (lo, hi) = spec.windows[node];
        out[slot] +=
            weight * spec.gamma * pressure_penalty_deriv(p, lo, hi, spec.pressure_scale) * spec.a2;
    }
}

/// ∂C/∂q scattered into `out` (added). Kinks of max(0,·) at q = 0 take the
/// one-sided derivative from the withdrawal side.
pub fn cost_grad_q(
    spec: &ObjectiveSpec,
    q: &[f64],
    t: f64,
    weight: f64,
    out: &mut [f64],
) -> Result<()> {
    let mismatch = spec.demand.at(t)? - spec.generation(q);
    for (i, (g, &qi)) in spec.generators.iter().zip(q).enumerate() {
        if let Some(g) = g {
            out[i] += weight
                * (spec.alpha * 2.0 * mismatch * (-g.power_deriv(qi))
                    + spec.beta * g.cost_deriv(qi));
        }
    }
    Ok(())
}

/// One trapezoid-rule quadrature entry of the time integral: the state at
/// `step` weighted by `weight`, evaluated with the controls of `bin`.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureEntry {
    pub step: usize,
    pub time: f64,
    pub weight: f64,
    pub bin: usize,
}

/// Trapezoid entries per segment, in forward order. Segment boundary states
/// appear twice (once per adjoining control bin) with half weights.
pub fn quadrature_entries(traj: &Trajectory) -> Vec<QuadratureEntry> {
    let mut entries = Vec::new();
    for seg in &traj.schedule.segments {
        for local in 0..=seg.n_steps {
            let weight = if local == 0 || local == seg.n_steps {
                0.5 * seg.dt
            } else {
                seg.dt
            };
            entries.push(QuadratureEntry {
                step: seg.first_step + local,
                time: seg.t0 + local as f64 * seg.dt,
                weight,
                bin: seg.bin,
            });
        }
    }
    entries
}

/// Time-integrated objective over the whole trajectory, accumulated as a
/// trapezoid rule on the step grid (per control segment).
pub fn cost_total(
    spec: &ObjectiveSpec,
    net: &GasNetwork,
    sys: &DiscreteSystem,
    traj: &Trajectory,
    controls: &ControlSchedule,
) -> Result<f64> {
    let entries = quadrature_entries(traj);
    let mut q = vec![0.0; sys.n_nodes];
    let mut total = 0.0;
    let mut i = 0;
    while i < entries.len() {
        // Replay one checkpoint span at a time.
        let span_start = entries[i].step;
        let span_end =
            (span_start - span_start % traj.stride + traj.stride).min(traj.schedule.n_steps);
        let states = sim::replay_span(traj, net, sys, controls, span_start, span_end)?;
        while i < entries.len() && entries[i].step <= span_end {
            let e = &entries[i];
            controls.fill_q(e.bin, &mut q);
            let c = cost_instant(spec, sys, &states[e.step - span_start], &q, e.time)?;
            total += e.weight * c;
            i += 1;
        }
    }
    Ok(total)
}
