//! Time integration: SSPRK3 under a CFL step limit with checkpointing.
//!
//! Steps are aligned so that an integer number lands exactly on every control
//! breakpoint and on the horizon; controls are therefore exactly piecewise
//! constant over whole steps and the linear mass invariant integrates
//! exactly. The trajectory stores checkpoints every `checkpoint_stride`
//! steps (default ≈ √N_t of them) and replays short segments on query.

use crate::grid::{self, DiscreteSystem, State};
use crate::model::GasNetwork;
use crate::opt::ControlSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Horizon T, s.
    pub horizon: f64,
    /// CFL safety factor ν ∈ (0, 1].
    pub cfl_safety: f64,
    /// Target cell width, m.
    pub target_dx: f64,
    /// Steps per stored checkpoint; `None` picks ≈ √N_t checkpoints.
    pub checkpoint_stride: Option<usize>,
}

impl SimConfig {
    pub fn new(horizon: f64) -> Self {
        SimConfig {
            horizon,
            cfl_safety: 0.4,
            target_dx: 1000.0,
            checkpoint_stride: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Domain("cfl_safety must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// CFL-limited step, reduced so an integer number of steps spans each
/// control interval of length `bin_seconds` exactly.
pub fn cfl_dt(sys: &DiscreteSystem, net: &GasNetwork, nu: f64, bin_seconds: f64) -> f64 {
    let raw = nu * sys.min_dx() / net.gas.sound_speed;
    let n = (bin_seconds / raw).ceil().max(1.0);
    bin_seconds / n
}

/// One contiguous run of equal-length steps between control breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Start time, s.
    pub t0: f64,
    /// Step size inside this segment, s.
    pub dt: f64,
    pub n_steps: usize,
    /// Control bin active over (t0, t0 + n·dt].
    pub bin: usize,
    /// Global index of the first step of this segment.
    pub first_step: usize,
}

/// Deterministic step schedule over [0, T], aligned to control breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub segments: Vec<Segment>,
    pub n_steps: usize,
    pub horizon: f64,
}

impl Schedule {
    pub fn build(
        sys: &DiscreteSystem,
        net: &GasNetwork,
        controls: &ControlSchedule,
        cfg: &SimConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if controls.horizon() + 1e-9 < cfg.horizon {
            return Err(Error::Domain(format!(
                "controls cover {} s but horizon is {} s",
                controls.horizon(),
                cfg.horizon
            )));
        }
        let raw = cfg.cfl_safety * sys.min_dx() / net.gas.sound_speed;
        let bin_len = controls.bin_seconds;
        let mut segments = Vec::new();
        let mut t0 = 0.0;
        let mut bin = 0usize;
        let mut first_step = 0usize;
        while t0 < cfg.horizon - 1e-9 {
            let len = (bin_len).min(cfg.horizon - t0);
            let n = ((len / raw).ceil().max(1.0)) as usize;
            segments.push(Segment {
                t0,
                dt: len / n as f64,
                n_steps: n,
                bin,
                first_step,
            });
            first_step += n;
            bin += 1;
            t0 += len;
        }
        Ok(Schedule {
            segments,
            n_steps: first_step,
            horizon: cfg.horizon,
        })
    }

    /// Segment containing the given global step index.
    pub fn segment_of(&self, step: usize) -> &Segment {
        debug_assert!(step < self.n_steps);
        let i = self
            .segments
            .partition_point(|s| s.first_step <= step)
            .saturating_sub(1);
        &self.segments[i]
    }

    /// Time of the state at a global step boundary (0 ..= n_steps).
    pub fn time_of(&self, step: usize) -> f64 {
        if step == self.n_steps {
            return self.horizon;
        }
        let seg = self.segment_of(step);
        seg.t0 + (step - seg.first_step) as f64 * seg.dt
    }

    /// Largest step index whose time is ≤ t (with a small tolerance).
    pub fn step_at_or_before(&self, t: f64) -> Result<usize> {
        if t < -1e-9 || t > self.horizon + 1e-9 {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        if t >= self.horizon {
            return Ok(self.n_steps);
        }
        let i = self
            .segments
            .partition_point(|s| s.t0 <= t + 1e-9)
            .saturating_sub(1);
        let seg = &self.segments[i];
        let local = (((t - seg.t0) / seg.dt) + 1e-9).floor() as usize;
        Ok(seg.first_step + local.min(seg.n_steps))
    }
}

/// Scratch buffers for SSPRK3 stages.
pub struct StepWorkspace {
    u1: Vec<f64>,
    u2: Vec<f64>,
    du: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(n: usize) -> Self {
        StepWorkspace {
            u1: vec![0.0; n],
            u2: vec![0.0; n],
            du: vec![0.0; n],
        }
    }
}

/// One Shu-Osher SSPRK3 step of a generic ODE right-hand side:
/// u¹ = u + Δt f(u); u² = ¾u + ¼(u¹ + Δt f(u¹)); u⁺ = ⅓u + ⅔(u² + Δt f(u²)).
pub fn step_ssprk3_into<F>(
    mut f: F,
    u: &[f64],
    dt: f64,
    ws: &mut StepWorkspace,
    out: &mut [f64],
) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = u.len();
    f(u, &mut ws.du)?;
    for i in 0..n {
        ws.u1[i] = u[i] + dt * ws.du[i];
    }
    f(&ws.u1, &mut ws.du)?;
    for i in 0..n {
        ws.u2[i] = 0.75 * u[i] + 0.25 * (ws.u1[i] + dt * ws.du[i]);
    }
    f(&ws.u2, &mut ws.du)?;
    for i in 0..n {
        out[i] = u[i] / 3.0 + 2.0 / 3.0 * (ws.u2[i] + dt * ws.du[i]);
    }
    Ok(())
}

/// Convenience wrapper returning the advanced state.
pub fn step_ssprk3<F>(f: F, u: &[f64], dt: f64) -> Result<State>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut ws = StepWorkspace::new(u.len());
    let mut out = vec![0.0; u.len()];
    step_ssprk3_into(f, u, dt, &mut ws, &mut out)?;
    Ok(out)
}

/// Checkpointed time series of state vectors.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub schedule: Schedule,
    /// (global step index, state, du/dt at that state).
    pub checkpoints: Vec<(usize, State, State)>,
    pub stride: usize,
    pub final_state: State,
    /// Exact time integral of total nodal flow, Σ_ℓ ∫ q_ℓ dt, kg.
    pub injected_mass: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.schedule.horizon
    }

    fn checkpoint_at_or_before(&self, step: usize) -> &(usize, State, State) {
        let i = self
            .checkpoints
            .partition_point(|(s, _, _)| *s <= step)
            .saturating_sub(1);
        &self.checkpoints[i]
    }
}

fn step_network(
    sys: &DiscreteSystem,
    net: &GasNetwork,
    u: &[f64],
    q: &[f64],
    dt: f64,
    t: f64,
    ws: &mut StepWorkspace,
    out: &mut [f64],
) -> Result<()> {
    step_ssprk3_into(|s, d| grid::rhs(sys, net, s, q, d), u, dt, ws, out).map_err(|e| match e {
        Error::StateValidity { slot, value, .. } => Error::StateValidity {
            slot,
            value,
            time: t,
        },
        other => other,
    })
}

/// Integrates the network forward over [0, T], recording checkpoints.
pub fn simulate(
    net: &GasNetwork,
    sys: &DiscreteSystem,
    controls: &ControlSchedule,
    ic: &State,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let schedule = Schedule::build(sys, net, controls, cfg)?;
    let stride = cfg
        .checkpoint_stride
        .unwrap_or_else(|| ((schedule.n_steps as f64).sqrt().round() as usize).max(1));
    if stride == 0 {
        return Err(Error::Domain("checkpoint_stride must be >= 1".into()));
    }

    let mut ws = StepWorkspace::new(sys.n_u);
    let mut u = ic.clone();
    let mut next = vec![0.0; sys.n_u];
    let mut du0 = vec![0.0; sys.n_u];
    let mut q = vec![0.0; sys.n_nodes];
    let mut checkpoints = Vec::new();
    let mut injected = 0.0;

    let mut store = |step: usize, u: &State, du: &State| {
        checkpoints.push((step, u.clone(), du.clone()));
    };

    controls.fill_q(0, &mut q);
    grid::rhs(sys, net, &u, &q, &mut du0)?;
    store(0, &u, &du0);

    let mut step = 0usize;
    for seg in &schedule.segments {
        controls.fill_q(seg.bin, &mut q);
        let q_total: f64 = q.iter().sum();
        for local in 0..seg.n_steps {
            let t = seg.t0 + local as f64 * seg.dt;
            step_network(sys, net, &u, &q, seg.dt, t, &mut ws, &mut next)?;
            std::mem::swap(&mut u, &mut next);
            step += 1;
            injected += q_total * seg.dt;
            if step % stride == 0 || step == schedule.n_steps {
                grid::rhs(sys, net, &u, &q, &mut du0).map_err(|e| match e {
                    Error::StateValidity { slot, value, .. } => Error::StateValidity {
                        slot,
                        value,
                        time: seg.t0 + (local + 1) as f64 * seg.dt,
                    },
                    other => other,
                })?;
                store(step, &u, &du0);
            }
        }
    }

    Ok(Trajectory {
        schedule,
        checkpoints,
        stride,
        final_state: u,
        injected_mass: injected,
    })
}

/// Replays the exact forward states at every step boundary in
/// `[start_step, end_step]`, starting from the nearest checkpoint.
pub fn replay_span(
    traj: &Trajectory,
    net: &GasNetwork,
    sys: &DiscreteSystem,
    controls: &ControlSchedule,
    start_step: usize,
    end_step: usize,
) -> Result<Vec<State>> {
    debug_assert!(start_step <= end_step);
    let (ck_step, ck_state, _) = traj.checkpoint_at_or_before(start_step);
    let mut ws = StepWorkspace::new(sys.n_u);
    let mut u = ck_state.clone();
    let mut next = vec![0.0; sys.n_u];
    let mut q = vec![0.0; sys.n_nodes];
    let mut out = Vec::with_capacity(end_step - start_step + 1);
    for step in *ck_step..=end_step {
        if step >= start_step {
            out.push(u.clone());
        }
        if step == end_step {
            break;
        }
        let seg = traj.schedule.segment_of(step);
        controls.fill_q(seg.bin, &mut q);
        let t = traj.schedule.time_of(step);
        step_network(sys, net, &u, &q, seg.dt, t, &mut ws, &mut next)?;
        std::mem::swap(&mut u, &mut next);
    }
    Ok(out)
}

/// State at time t: the stored or exactly replayed forward state at the last
/// step boundary at or before t.
pub fn query_state(
    traj: &Trajectory,
    net: &GasNetwork,
    sys: &DiscreteSystem,
    controls: &ControlSchedule,
    t: f64,
) -> Result<State> {
    let step = traj.schedule.step_at_or_before(t)?;
    if step == traj.schedule.n_steps {
        return Ok(traj.final_state.clone());
    }
    if let Some((_, state, _)) = traj.checkpoints.iter().find(|(s, _, _)| *s == step) {
        return Ok(state.clone());
    }
    let states = replay_span(traj, net, sys, controls, step, step)?;
    Ok(states.into_iter().next().unwrap())
}
