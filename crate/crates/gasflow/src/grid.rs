//! Staggered spatial discretization and semi-discrete right-hand side.
//!
//! Every pipe of length `L` is split into `N` cells of width `Δx = L/N`.
//! Density unknowns sit at the cell edges `x = 0, Δx, …, L`; the two endpoint
//! densities are shared nodal unknowns (one per network node), the `N − 1`
//! in-between ones are pipe-interior unknowns. Flux unknowns sit staggered at
//! the half points `x = Δx/2, …, L − Δx/2`, one more than the interior
//! density count.
//!
//! State layout: slots `0..n_nodes` hold the nodal densities, then each pipe
//! contributes its interior densities followed by its fluxes.
//!
//! The semi-discrete equations are centered differences on this grid:
//! interior densities see the divergence of the two flanking fluxes, fluxes
//! see the pressure difference of the two flanking densities plus the
//! Darcy-Weisbach friction term, and each nodal density evolves by
//! conservation of mass over its half-cell control volumes, with the mass
//! balance using the flux unknown at each half-cell face so that total mass
//! changes exactly by the net nodal flow. A second-order one-sided
//! extrapolation of the flux to the node position is maintained for
//! boundary-flux reporting.

use crate::model::{GasNetwork, PipeEnd};
use crate::{Error, Result};

/// Flat state vector holding all density (kg/m³) and flux (kg/(m²·s))
/// unknowns.
pub type State = Vec<f64>;

/// Per-pipe grid layout.
#[derive(Debug, Clone)]
pub struct PipeGrid {
    pub n_cells: usize,
    pub dx: f64,
    /// First of the `n_cells − 1` interior density slots.
    pub rho0: usize,
    /// First of the `n_cells` flux slots.
    pub phi0: usize,
    /// Nodal density slots at the pipe ends.
    pub from_slot: usize,
    pub to_slot: usize,
}

/// One incident pipe end in a node's coupling stencil.
#[derive(Debug, Clone)]
pub struct NodeStencil {
    pub pipe: usize,
    /// +1 at the pipe's `to` end, −1 at `from`.
    pub sign: f64,
    /// Pipe cross-section area, m².
    pub area: f64,
    /// Half-cell volume (Δx/2)·S owned by the node for this pipe end, m³.
    pub half_volume: f64,
    /// Flux slot at the half-cell face (the unknown closest to the node).
    pub face_flux: usize,
    /// Second-closest flux slot, used by the one-sided extrapolation.
    pub next_flux: usize,
}

impl NodeStencil {
    /// Second-order one-sided extrapolation of the flux to the node
    /// position: φ(x_ℓ) ≈ (3φ_near − φ_next)/2.
    #[inline]
    pub fn boundary_flux(&self, u: &[f64]) -> f64 {
        1.5 * u[self.face_flux] - 0.5 * u[self.next_flux]
    }
}

/// Global staggered-grid layout plus precomputed node coupling stencils.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub pipes: Vec<PipeGrid>,
    pub node_stencils: Vec<Vec<NodeStencil>>,
    /// Σ over incident pipe ends of (Δx/2)·S, m³.
    pub node_volume: Vec<f64>,
    pub n_nodes: usize,
    pub n_u: usize,
}

impl DiscreteSystem {
    #[inline]
    pub fn node_slot(&self, node: usize) -> usize {
        node
    }

    /// Smallest cell width over all pipes, m.
    pub fn min_dx(&self) -> f64 {
        self.pipes
            .iter()
            .map(|p| p.dx)
            .fold(f64::INFINITY, f64::min)
    }

    /// Iterates all density slots (nodal then pipe-interior).
    pub fn density_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes).chain(
            self.pipes
                .iter()
                .flat_map(|p| p.rho0..p.rho0 + (p.n_cells - 1)),
        )
    }
}

/// Builds the staggered discretization with `N_k = max(2, ceil(L_k / target_dx))`.
pub fn discretize(net: &GasNetwork, target_dx: f64) -> Result<DiscreteSystem> {
    if !(target_dx > 0.0) {
        return Err(Error::Domain(format!(
            "target_dx must be positive, got {target_dx}"
        )));
    }
    let n_nodes = net.nodes.len();
    let mut slot = n_nodes;
    let mut pipes = Vec::with_capacity(net.pipes.len());
    for p in &net.pipes {
        let n_cells = ((p.length / target_dx).ceil() as usize).max(2);
        let dx = p.length / n_cells as f64;
        let rho0 = slot;
        slot += n_cells - 1;
        let phi0 = slot;
        slot += n_cells;
        pipes.push(PipeGrid {
            n_cells,
            dx,
            rho0,
            phi0,
            from_slot: p.from,
            to_slot: p.to,
        });
    }

    let mut node_stencils = vec![Vec::new(); n_nodes];
    let mut node_volume = vec![0.0; n_nodes];
    for (node, incs) in net.incidence.iter().enumerate() {
        for inc in incs {
            let p = &net.pipes[inc.pipe];
            let g = &pipes[inc.pipe];
            let (face, next) = match inc.end {
                PipeEnd::From => (g.phi0, g.phi0 + 1),
                PipeEnd::To => (g.phi0 + g.n_cells - 1, g.phi0 + g.n_cells - 2),
            };
            let half_volume = 0.5 * g.dx * p.area;
            node_volume[node] += half_volume;
            node_stencils[node].push(NodeStencil {
                pipe: inc.pipe,
                sign: inc.sign,
                area: p.area,
                half_volume,
                face_flux: face,
                next_flux: next,
            });
        }
    }

    Ok(DiscreteSystem {
        pipes,
        node_stencils,
        node_volume,
        n_nodes,
        n_u: slot,
    })
}

fn check_positive_densities(sys: &DiscreteSystem, u: &[f64]) -> Result<()> {
    for slot in sys.density_slots() {
        if !(u[slot] > 0.0) {
            return Err(Error::StateValidity {
                slot,
                value: u[slot],
                time: f64::NAN,
            });
        }
    }
    Ok(())
}

/// Evaluates the semi-discrete right-hand side du/dt into `du`.
///
/// `q` holds one nodal flow (kg/s) per node; q > 0 injects.
pub fn rhs(
    sys: &DiscreteSystem,
    net: &GasNetwork,
    u: &[f64],
    q: &[f64],
    du: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(u.len(), sys.n_u);
    debug_assert_eq!(q.len(), sys.n_nodes);
    debug_assert_eq!(du.len(), sys.n_u);
    check_positive_densities(sys, u)?;

    let a2 = net.gas.a2();
    for (k, g) in sys.pipes.iter().enumerate() {
        let p = &net.pipes[k];
        let inv_dx = 1.0 / g.dx;
        let fric = p.friction / (2.0 * p.diameter);
        let n = g.n_cells;

        // Interior densities: dρ_i/dt = −(φ_i − φ_{i−1})/Δx.
        for m in 0..n - 1 {
            du[g.rho0 + m] = -(u[g.phi0 + m + 1] - u[g.phi0 + m]) * inv_dx;
        }

        // Fluxes: dφ_j/dt = −(p_R − p_L)/Δx − (λ/2D)·φ|φ|/ρ̄.
        for j in 0..n {
            let rho_l = if j == 0 {
                u[g.from_slot]
            } else {
                u[g.rho0 + j - 1]
            };
            let rho_r = if j == n - 1 {
                u[g.to_slot]
            } else {
                u[g.rho0 + j]
            };
            let phi = u[g.phi0 + j];
            let rho_bar = 0.5 * (rho_l + rho_r);
            du[g.phi0 + j] = -(a2 * (rho_r - rho_l) * inv_dx + fric * phi * phi.abs() / rho_bar);
        }
    }

    // Nodal densities: conservation of mass over the half-cell volumes.
    for node in 0..sys.n_nodes {
        let mut inflow = q[node];
        for st in &sys.node_stencils[node] {
            inflow += st.sign * st.area * u[st.face_flux];
        }
        du[node] = inflow / sys.node_volume[node];
    }
    Ok(())
}

/// Transpose-Jacobian products of [`rhs`]: given a co-vector `w`, accumulates
/// `wᵀ·∂f/∂u` into `wu` and `wᵀ·∂f/∂q` into `wq` (both are added to, not
/// overwritten).
pub fn vjp_rhs(
    sys: &DiscreteSystem,
    net: &GasNetwork,
    u: &[f64],
    w: &[f64],
    wu: &mut [f64],
    wq: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(w.len(), sys.n_u);
    debug_assert_eq!(wu.len(), sys.n_u);
    debug_assert_eq!(wq.len(), sys.n_nodes);
    check_positive_densities(sys, u)?;

    let a2 = net.gas.a2();
    for (k, g) in sys.pipes.iter().enumerate() {
        let p = &net.pipes[k];
        let inv_dx = 1.0 / g.dx;
        let fric = p.friction / (2.0 * p.diameter);
        let n = g.n_cells;

        for m in 0..n - 1 {
            let wn = w[g.rho0 + m];
            wu[g.phi0 + m + 1] -= wn * inv_dx;
            wu[g.phi0 + m] += wn * inv_dx;
        }

        for j in 0..n {
            let wn = w[g.phi0 + j];
            if wn == 0.0 {
                continue;
            }
            let l_slot = if j == 0 { g.from_slot } else { g.rho0 + j - 1 };
            let r_slot = if j == n - 1 { g.to_slot } else { g.rho0 + j };
            let phi = u[g.phi0 + j];
            let rho_bar = 0.5 * (u[l_slot] + u[r_slot]);
            // ∂f/∂ρ via both the pressure difference and the friction mean.
            let d_fric_rho = 0.5 * fric * phi * phi.abs() / (rho_bar * rho_bar);
            wu[l_slot] += wn * (a2 * inv_dx + d_fric_rho);
            wu[r_slot] += wn * (-a2 * inv_dx + d_fric_rho);
            wu[g.phi0 + j] += wn * (-2.0 * fric * phi.abs() / rho_bar);
        }
    }

    for node in 0..sys.n_nodes {
        let wn = w[node];
        if wn == 0.0 {
            continue;
        }
        let inv_vol = 1.0 / sys.node_volume[node];
        wq[node] += wn * inv_vol;
        for st in &sys.node_stencils[node] {
            wu[st.face_flux] += wn * st.sign * st.area * inv_vol;
        }
    }
    Ok(())
}

/// Total gas mass represented by a state: interior cells at Δx·S plus the
/// nodal half-cell volumes.
pub fn total_mass(sys: &DiscreteSystem, net: &GasNetwork, u: &[f64]) -> f64 {
    let mut mass = 0.0;
    for (k, g) in sys.pipes.iter().enumerate() {
        let cell = g.dx * net.pipes[k].area;
        for m in 0..g.n_cells - 1 {
            mass += u[g.rho0 + m] * cell;
        }
    }
    for node in 0..sys.n_nodes {
        mass += u[node] * sys.node_volume[node];
    }
    mass
}

/// Uniform state at a given pressure with zero flux everywhere.
pub fn uniform_state(sys: &DiscreteSystem, net: &GasNetwork, pressure: f64) -> State {
    let rho = pressure / net.gas.a2();
    let mut u = vec![0.0; sys.n_u];
    for slot in sys.density_slots() {
        u[slot] = rho;
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;
    use approx::assert_relative_eq;

    fn single_pipe(length_m: f64, diameter_m: f64, friction: f64) -> GasNetwork {
        let text = format!(
            r#"{{
            "gas": {{"sound_speed_m_s": 350.0}},
            "nodes": [
                {{"id": "a", "p_min_bar": 40, "p_max_bar": 90, "q_lo_kg_s": -100, "q_hi_kg_s": 100}},
                {{"id": "b", "p_min_bar": 40, "p_max_bar": 90, "q_lo_kg_s": -100, "q_hi_kg_s": 100}}
            ],
            "pipes": [
                {{"id": "p1", "from": "a", "to": "b", "length_m": {length_m},
                  "diameter_m": {diameter_m}, "friction": {friction}}}
            ]
        }}"#
        );
        parse_network(&text).unwrap()
    }

    fn star3() -> GasNetwork {
        let text = r#"{
            "gas": {"sound_speed_m_s": 350.0},
            "nodes": [
                {"id": "c", "p_min_bar": 40, "p_max_bar": 90, "q_lo_kg_s": -100, "q_hi_kg_s": 100},
                {"id": "x", "p_min_bar": 40, "p_max_bar": 90, "q_lo_kg_s": -100, "q_hi_kg_s": 100},
                {"id": "y", "p_min_bar": 40, "p_max_bar": 90, "q_lo_kg_s": -100, "q_hi_kg_s": 100},
                {"id": "z", "p_min_bar": 40, "p_max_bar": 90, "q_lo_kg_s": -100, "q_hi_kg_s": 100}
            ],
            "pipes": [
                {"id": "px", "from": "x", "to": "c", "length_m": 10000, "diameter_m": 0.5, "friction": 0.01},
                {"id": "py", "from": "c", "to": "y", "length_m": 12000, "diameter_m": 0.6, "friction": 0.01},
                {"id": "pz", "from": "c", "to": "z", "length_m": 8000, "diameter_m": 0.4, "friction": 0.01}
            ]
        }"#;
        parse_network(text).unwrap()
    }

    #[test]
    fn single_pipe_layout_counts() {
        let net = single_pipe(10_000.0, 0.5, 0.01);
        let sys = discretize(&net, 1000.0).unwrap();
        let g = &sys.pipes[0];
        assert_eq!(g.n_cells, 10);
        assert_eq!(g.dx, 1000.0);
        // 9 interior densities + 10 fluxes + 2 nodal densities.
        assert_eq!(sys.n_u, 21);
    }

    #[test]
    fn minimum_cell_rule() {
        let net = single_pipe(2500.0, 0.5, 0.01);
        let sys = discretize(&net, 10_000.0).unwrap();
        assert_eq!(sys.pipes[0].n_cells, 2);
        assert_eq!(sys.pipes[0].dx, 1250.0);
    }

    #[test]
    fn star_center_stencil() {
        let net = star3();
        let sys = discretize(&net, 1000.0).unwrap();
        let center = net.node_index("c").unwrap();
        let st = &sys.node_stencils[center];
        assert_eq!(st.len(), 3);
        for s in st {
            let p = &net.pipes[s.pipe];
            assert_eq!(s.area, p.area);
            let expected_sign = if p.to == center { 1.0 } else { -1.0 };
            assert_eq!(s.sign, expected_sign);
        }
    }

    #[test]
    fn rest_state_is_steady() {
        let net = star3();
        let sys = discretize(&net, 1000.0).unwrap();
        let u = uniform_state(&sys, &net, 70e5);
        let q = vec![0.0; sys.n_nodes];
        let mut du = vec![0.0; sys.n_u];
        rhs(&sys, &net, &u, &q, &mut du).unwrap();
        for v in du {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn flux_pressure_gradient_term() {
        // p jump of 1000 Pa over Δx = 1000 m at a frictionless flux → −1.0.
        let net = single_pipe(3000.0, 0.5, 0.0);
        let sys = discretize(&net, 1000.0).unwrap();
        let g = &sys.pipes[0];
        let a2 = net.gas.a2();
        let mut u = uniform_state(&sys, &net, 70e5);
        // Middle flux j=1 flanked by interior densities rho0 and rho0+1.
        u[g.rho0 + 1] = u[g.rho0] + 1000.0 / a2;
        let q = vec![0.0; 2];
        let mut du = vec![0.0; sys.n_u];
        rhs(&sys, &net, &u, &q, &mut du).unwrap();
        assert_relative_eq!(du[g.phi0 + 1], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn friction_term_oracle() {
        // Hand-evaluated: λ = 0.01, D = 0.5, φ = 100, ρ̄ = 50, flat pressure
        // → dφ/dt = −(0.01/1.0)·(10000/50) = −2.0.
        let net = single_pipe(3000.0, 0.5, 0.01);
        let sys = discretize(&net, 1000.0).unwrap();
        let g = &sys.pipes[0];
        let mut u = uniform_state(&sys, &net, 50.0 * net.gas.a2());
        u[g.phi0 + 1] = 100.0;
        let q = vec![0.0; 2];
        let mut du = vec![0.0; sys.n_u];
        rhs(&sys, &net, &u, &q, &mut du).unwrap();
        assert_relative_eq!(du[g.phi0 + 1], -2.0, max_relative = 1e-12);
    }

    #[test]
    fn node_mass_balance_oracle() {
        // Hand-evaluated: q = 10 kg/s into a half-cell of volume 500·0.5 m³
        // with zero boundary flux → dρ/dt = 0.04.
        let d = (4.0 * 0.5 / std::f64::consts::PI).sqrt(); // S = 0.5 m²
        let net = single_pipe(10_000.0, d, 0.01);
        let sys = discretize(&net, 1000.0).unwrap();
        let u = uniform_state(&sys, &net, 70e5);
        let q = vec![10.0, 0.0];
        let mut du = vec![0.0; sys.n_u];
        rhs(&sys, &net, &u, &q, &mut du).unwrap();
        assert_relative_eq!(du[0], 0.04, max_relative = 1e-12);
    }

    #[test]
    fn non_positive_density_is_error() {
        let net = single_pipe(3000.0, 0.5, 0.01);
        let sys = discretize(&net, 1000.0).unwrap();
        let g = sys.pipes[0].clone();
        let mut u = uniform_state(&sys, &net, 70e5);
        u[g.rho0] = -1.0;
        let q = vec![0.0; 2];
        let mut du = vec![0.0; sys.n_u];
        match rhs(&sys, &net, &u, &q, &mut du) {
            Err(Error::StateValidity { slot, .. }) => assert_eq!(slot, g.rho0),
            other => panic!("expected state-validity error, got {other:?}"),
        }
    }

    #[test]
    fn extrapolation_reproduces_constants_and_linears() {
        let net = single_pipe(10_000.0, 0.5, 0.01);
        let sys = discretize(&net, 1000.0).unwrap();
        let g = &sys.pipes[0];
        let dx = g.dx;
        let mut u = uniform_state(&sys, &net, 70e5);
        // φ(x) = 3 + 0.002·x on the flux grid.
        for j in 0..g.n_cells {
            let x = (j as f64 + 0.5) * dx;
            u[g.phi0 + j] = 3.0 + 0.002 * x;
        }
        let from_st = sys.node_stencils[0].iter().find(|s| s.pipe == 0).unwrap();
        let to_st = sys.node_stencils[1].iter().find(|s| s.pipe == 0).unwrap();
        assert_relative_eq!(from_st.boundary_flux(&u), 3.0, max_relative = 1e-13);
        assert_relative_eq!(
            to_st.boundary_flux(&u),
            3.0 + 0.002 * 10_000.0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn frictionless_rhs_invariant_under_density_shift() {
        let net = star3();
        let mut net0 = net.clone();
        for p in &mut net0.pipes {
            p.friction = 0.0;
        }
        let sys = discretize(&net0, 1500.0).unwrap();
        let mut u = uniform_state(&sys, &net0, 70e5);
        for (i, slot) in sys.density_slots().enumerate() {
            u[slot] += (i as f64) * 0.01;
        }
        for g in &sys.pipes {
            for j in 0..g.n_cells {
                u[g.phi0 + j] = 5.0 + (j as f64) * 0.3;
            }
        }
        let q = vec![1.0, -2.0, 0.5, 0.5];
        let mut du_a = vec![0.0; sys.n_u];
        rhs(&sys, &net0, &u, &q, &mut du_a).unwrap();
        let mut u_shift = u.clone();
        for slot in sys.density_slots() {
            u_shift[slot] += 3.0;
        }
        let mut du_b = vec![0.0; sys.n_u];
        rhs(&sys, &net0, &u_shift, &q, &mut du_b).unwrap();
        for g in &sys.pipes {
            for j in 0..g.n_cells {
                assert_relative_eq!(
                    du_a[g.phi0 + j],
                    du_b[g.phi0 + j],
                    max_relative = 1e-12,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn spatial_convergence_second_order() {
        // Manufactured smooth profile on a single pipe; the semi-discrete
        // residual against the analytic spatial derivatives must shrink at
        // second order on the interior unknowns.
        let net = single_pipe(10_000.0, 0.5, 0.01);
        let l = 10_000.0;
        let rho_fn = |x: f64| 55.0 + 3.0 * (2.0 * std::f64::consts::PI * x / l).sin();
        let drho_dx = |x: f64| {
            3.0 * 2.0 * std::f64::consts::PI / l * (2.0 * std::f64::consts::PI * x / l).cos()
        };
        let phi_fn = |x: f64| 40.0 + 10.0 * (std::f64::consts::PI * x / l).cos();
        let dphi_dx =
            |x: f64| -10.0 * std::f64::consts::PI / l * (std::f64::consts::PI * x / l).sin();

        let residual = |target_dx: f64| -> f64 {
            let sys = discretize(&net, target_dx).unwrap();
            let g = &sys.pipes[0];
            let p = &net.pipes[0];
            let a2 = net.gas.a2();
            let mut u = vec![0.0; sys.n_u];
            u[0] = rho_fn(0.0);
            u[1] = rho_fn(l);
            for m in 0..g.n_cells - 1 {
                u[g.rho0 + m] = rho_fn((m as f64 + 1.0) * g.dx);
            }
            for j in 0..g.n_cells {
                u[g.phi0 + j] = phi_fn((j as f64 + 0.5) * g.dx);
            }
            let q = vec![0.0; 2];
            let mut du = vec![0.0; sys.n_u];
            rhs(&sys, &net, &u, &q, &mut du).unwrap();
            let mut err: f64 = 0.0;
            for m in 0..g.n_cells - 1 {
                let x = (m as f64 + 1.0) * g.dx;
                err = err.max((du[g.rho0 + m] + dphi_dx(x)).abs());
            }
            let fric = p.friction / (2.0 * p.diameter);
            for j in 1..g.n_cells - 1 {
                let x = (j as f64 + 0.5) * g.dx;
                let phi = phi_fn(x);
                let exact = -(a2 * drho_dx(x) + fric * phi * phi.abs() / rho_fn(x));
                err = err.max((du[g.phi0 + j] - exact).abs());
            }
            err
        };

        let e1 = residual(200.0);
        let e2 = residual(100.0);
        let order = (e1 / e2).log2();
        assert!(
            (order - 2.0).abs() <= 0.2,
            "spatial order {order}, residuals {e1} {e2}"
        );
    }

    proptest::proptest! {
        // Semi-discrete mass conservation: d(total mass)/dt == Σ q exactly,
        // for arbitrary positive states and nodal flows.
        #[test]
        fn mass_conservation_random_states(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let net = star3();
            let sys = discretize(&net, 1700.0).unwrap();
            let mut u = vec![0.0; sys.n_u];
            for slot in sys.density_slots() {
                u[slot] = rng.gen_range(30.0..80.0);
            }
            for g in &sys.pipes {
                for j in 0..g.n_cells {
                    u[g.phi0 + j] = rng.gen_range(-120.0..120.0);
                }
            }
            let q: Vec<f64> = (0..sys.n_nodes).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let mut du = vec![0.0; sys.n_u];
            rhs(&sys, &net, &u, &q, &mut du).unwrap();
            let rate = total_mass(&sys, &net, &du);
            let expected: f64 = q.iter().sum();
            let scale = q.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            proptest::prop_assert!((rate - expected).abs() <= 1e-10 * scale,
                "rate {rate} vs {expected}");
        }
    }
}
