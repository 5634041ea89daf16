//! Gas-network data model, gas properties, and file ingestion.
//!
//! Network files are JSON (see [`load_network`]); pressures cross the file
//! boundary in bar and are converted to Pa on load. The in-memory model is
//! immutable after load and safe to share read-only across workers.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::{Error, Result};

pub const BAR: f64 = 1e5;

/// Default sound speed when the network file does not specify one.
pub const DEFAULT_SOUND_SPEED: f64 = 350.0;

/// Gas properties under the ideal-gas closure: pressure and density are
/// related by the single constant factor `a².`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasProperties {
    /// Sound speed, m/s.
    pub sound_speed: f64,
}

impl GasProperties {
    pub fn new(sound_speed: f64) -> Result<Self> {
        if !(sound_speed > 0.0) {
            return Err(Error::validation("gas", "sound_speed must be positive"));
        }
        Ok(GasProperties { sound_speed })
    }

    /// `a²`, the pressure/density conversion factor, Pa per (kg/m³).
    #[inline]
    pub fn a2(&self) -> f64 {
        self.sound_speed * self.sound_speed
    }
}

/// p = a²ρ. Errors on negative density.
pub fn eos_pressure(rho: f64, gas: &GasProperties) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::Domain(format!("negative density {rho}")));
    }
    Ok(gas.a2() * rho)
}

/// ρ = p / a². Errors on negative pressure.
pub fn eos_density(p: f64, gas: &GasProperties) -> Result<f64> {
    if p < 0.0 {
        return Err(Error::Domain(format!("negative pressure {p}")));
    }
    Ok(p / gas.a2())
}

/// Constant-efficiency gas generator at a node.
///
/// `G(q) = η·max(0, −q)` maps withdrawal (q < 0) to produced power in MW;
/// `E(q) = c·max(0, −q)` is the operating cost rate. Injection never
/// produces power or cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorCurve {
    /// MW per kg/s of withdrawal.
    pub efficiency: f64,
    /// Cost per kg of withdrawn gas.
    pub unit_cost: f64,
}

impl GeneratorCurve {
    #[inline]
    pub fn power(&self, q: f64) -> f64 {
        self.efficiency * (-q).max(0.0)
    }

    #[inline]
    pub fn cost_rate(&self, q: f64) -> f64 {
        self.unit_cost * (-q).max(0.0)
    }

    /// dG/dq, one-sided from the withdrawal side at q = 0.
    #[inline]
    pub fn power_deriv(&self, q: f64) -> f64 {
        if q <= 0.0 {
            -self.efficiency
        } else {
            0.0
        }
    }

    /// dE/dq, one-sided from the withdrawal side at q = 0.
    #[inline]
    pub fn cost_deriv(&self, q: f64) -> f64 {
        if q <= 0.0 {
            -self.unit_cost
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    /// Pressure window, Pa.
    pub p_min: f64,
    pub p_max: f64,
    /// Box bounds on the nodal flow control, kg/s (q > 0 injects).
    pub q_lo: f64,
    pub q_hi: f64,
    pub generator: Option<GeneratorCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    /// Index into `GasNetwork::nodes`.
    pub from: usize,
    pub to: usize,
    /// Length, m.
    pub length: f64,
    /// Diameter, m.
    pub diameter: f64,
    /// Darcy-Weisbach friction factor.
    pub friction: f64,
    /// Cross-section area S = πD²/4, m².
    pub area: f64,
}

/// Which end of a pipe touches a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipeEnd {
    From,
    To,
}

/// One entry of a node's incidence list: (pipe index, end, sign).
///
/// sign = +1 at the pipe's `to` end, −1 at `from`, so sign·S·φ is mass flow
/// into the node when φ > 0 in the from→to direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence {
    pub pipe: usize,
    pub end: PipeEnd,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasNetwork {
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
    pub gas: GasProperties,
    /// Per-node incidence lists, same order as `nodes`.
    pub incidence: Vec<Vec<Incidence>>,
}

impl GasNetwork {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn total_pipe_length(&self) -> f64 {
        self.pipes.iter().map(|p| p.length).sum()
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GasFile {
    sound_speed_m_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorFile {
    eta_mw_per_kg_s: f64,
    cost_per_kg: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: String,
    p_min_bar: f64,
    p_max_bar: f64,
    q_lo_kg_s: f64,
    q_hi_kg_s: f64,
    #[serde(default)]
    generator: Option<GeneratorFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PipeFile {
    id: String,
    from: String,
    to: String,
    length_m: f64,
    diameter_m: f64,
    friction: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    gas: Option<GasFile>,
    nodes: Vec<NodeFile>,
    pipes: Vec<PipeFile>,
}

/// Loads and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<GasNetwork> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_network(&text)
}

/// Parses a network from JSON text. Unknown keys are rejected.
pub fn parse_network(text: &str) -> Result<GasNetwork> {
    let file: NetworkFile = serde_json::from_str(text)?;

    let gas = GasProperties::new(
        file.gas
            .and_then(|g| g.sound_speed_m_s)
            .unwrap_or(DEFAULT_SOUND_SPEED),
    )?;

    let mut nodes = Vec::with_capacity(file.nodes.len());
    let mut index: HashMap<String, usize> = HashMap::new();
    for n in &file.nodes {
        if index.insert(n.id.clone(), nodes.len()).is_some() {
            return Err(Error::validation(&n.id, "duplicate node id"));
        }
        let p_min = n.p_min_bar * BAR;
        let p_max = n.p_max_bar * BAR;
        if !(p_min > 0.0) {
            return Err(Error::validation(&n.id, "p_min must be positive"));
        }
        if !(p_min < p_max) {
            return Err(Error::validation(&n.id, "requires p_min < p_max"));
        }
        if !(n.q_lo_kg_s <= n.q_hi_kg_s) {
            return Err(Error::validation(&n.id, "requires q_lo <= q_hi"));
        }
        let generator = match &n.generator {
            Some(g) => {
                if g.eta_mw_per_kg_s < 0.0 || g.cost_per_kg < 0.0 {
                    return Err(Error::validation(
                        &n.id,
                        "generator efficiency and cost must be non-negative",
                    ));
                }
                Some(GeneratorCurve {
                    efficiency: g.eta_mw_per_kg_s,
                    unit_cost: g.cost_per_kg,
                })
            }
            None => None,
        };
        nodes.push(Node {
            id: n.id.clone(),
            p_min,
            p_max,
            q_lo: n.q_lo_kg_s,
            q_hi: n.q_hi_kg_s,
            generator,
        });
    }

    let mut pipes = Vec::with_capacity(file.pipes.len());
    let mut pipe_ids: HashMap<&str, ()> = HashMap::new();
    for p in &file.pipes {
        if pipe_ids.insert(&p.id, ()).is_some() {
            return Err(Error::validation(&p.id, "duplicate pipe id"));
        }
        let from = *index
            .get(&p.from)
            .ok_or_else(|| Error::validation(&p.id, format!("unknown node `{}`", p.from)))?;
        let to = *index
            .get(&p.to)
            .ok_or_else(|| Error::validation(&p.id, format!("unknown node `{}`", p.to)))?;
        if from == to {
            return Err(Error::validation(&p.id, "from and to must differ"));
        }
        if !(p.length_m > 0.0) {
            return Err(Error::validation(&p.id, "length must be positive"));
        }
        if !(p.diameter_m > 0.0) {
            return Err(Error::validation(&p.id, "diameter must be positive"));
        }
        if p.friction < 0.0 {
            return Err(Error::validation(&p.id, "friction must be non-negative"));
        }
        let area = std::f64::consts::PI * p.diameter_m * p.diameter_m / 4.0;
        pipes.push(Pipe {
            id: p.id.clone(),
            from,
            to,
            length: p.length_m,
            diameter: p.diameter_m,
            friction: p.friction,
            area,
        });
    }

    if nodes.is_empty() {
        return Err(Error::validation("network", "no nodes"));
    }

    let mut incidence = vec![Vec::new(); nodes.len()];
    for (k, p) in pipes.iter().enumerate() {
        incidence[p.from].push(Incidence {
            pipe: k,
            end: PipeEnd::From,
            sign: -1.0,
        });
        incidence[p.to].push(Incidence {
            pipe: k,
            end: PipeEnd::To,
            sign: 1.0,
        });
    }

    let net = GasNetwork {
        nodes,
        pipes,
        gas,
        incidence,
    };
    check_connected(&net)?;
    Ok(net)
}

fn check_connected(net: &GasNetwork) -> Result<()> {
    let n = net.nodes.len();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = count;
        while let Some(v) = stack.pop() {
            for inc in &net.incidence[v] {
                let p = &net.pipes[inc.pipe];
                let other = if p.from == v { p.to } else { p.from };
                if comp[other] == usize::MAX {
                    comp[other] = count;
                    stack.push(other);
                }
            }
        }
        count += 1;
    }
    if count > 1 {
        let mut components = vec![Vec::new(); count];
        for (i, &c) in comp.iter().enumerate() {
            components[c].push(net.nodes[i].id.clone());
        }
        return Err(Error::Disconnected { components });
    }
    Ok(())
}
