//! Steady-state network hydraulics.
//!
//! The distribution grid is a tree of twin pipes: a trunk from the plant, one
//! main per street and a service branch per building ending in the substation
//! valve. Supply and return are mirror images carrying the same flow, so the
//! solver works on the folded network where node pressure means the
//! supply-return differential and every service branch terminates at the
//! reference node. Pressure drops follow the quadratic law Δp = k·q·|q|;
//! the nodal equations are solved with Newton-Raphson on node pressures.

use serde::{Deserialize, Serialize};

use crate::consts::RHO_WATER_KG_M3;
use crate::error::{Error, Result};

/// Dynamic viscosity of network water (≈70 °C), Pa·s.
const WATER_VISCOSITY_PA_S: f64 = 4.0e-4;
/// Pipe roughness, m.
const ROUGHNESS_M: f64 = 5.0e-5;
/// Sizing limit on the pressure gradient, Pa/m.
pub const MAX_GRADIENT_PA_M: f64 = 200.0;

/// Fully open substation valve resistance, Pa/(kg/s)².
pub const VALVE_OPEN_K: f64 = 3.0e5;
/// Closed valve stand-in resistance (keeps the Jacobian structure fixed).
pub const VALVE_CLOSED_K: f64 = 1.0e12;
/// Fixed substation resistance (heat exchanger and fittings), Pa/(kg/s)².
pub const SUBSTATION_K: f64 = 4.0e5;
/// Plant circuit internal resistance, Pa/(kg/s)².
const PLANT_K: f64 = 50.0;
/// Flows below this magnitude use a linearized pressure-flow law, kg/s.
const LINEAR_FLOW_KG_S: f64 = 1.0e-4;

/// Valve resistance for a position in [0, 1]; an equal-percentage-like
/// inverse-square law between fully open and closed.
pub fn valve_k_from_pos(pos: f64) -> f64 {
    if pos <= 0.0 {
        return VALVE_CLOSED_K;
    }
    (VALVE_OPEN_K / (pos * pos)).min(VALVE_CLOSED_K)
}

/// Catalogue entry: nominal diameter with thermal data per pipe leg.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnPipe {
    pub label: String,
    pub inner_m: f64,
    /// Heat loss conductance to the ground per leg, W/(m·K).
    pub loss_w_m_k: f64,
    /// Steel wall heat capacity per leg, kJ/(m·K).
    pub wall_kj_m_k: f64,
}

/// Buried-pipe catalogue DN25..DN100 with economy-class insulation.
pub fn default_catalogue() -> Vec<DnPipe> {
    let rows: [(&str, f64, f64, f64); 7] = [
        ("DN25", 0.0273, 0.28, 1.24),
        ("DN32", 0.0360, 0.30, 1.66),
        ("DN40", 0.0419, 0.32, 2.00),
        ("DN50", 0.0539, 0.34, 2.67),
        ("DN65", 0.0703, 0.38, 3.68),
        ("DN80", 0.0825, 0.42, 4.41),
        ("DN100", 0.1071, 0.50, 6.57),
    ];
    rows.iter()
        .map(|(l, d, u, w)| DnPipe {
            label: l.to_string(),
            inner_m: *d,
            loss_w_m_k: *u,
            wall_kj_m_k: *w,
        })
        .collect()
}

/// Street-and-trunk layout parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub streets: usize,
    pub buildings_per_street: usize,
    pub trunk_length_m: f64,
    pub street_length_m: f64,
    pub service_length_m: f64,
    /// Space-heating design flow per building for main sizing, kg/s.
    pub design_flow_building_kg_s: f64,
    /// Service design flow (hot-water driven), kg/s.
    pub design_flow_service_kg_s: f64,
    /// Differential pressure held at the worst consumer, Pa.
    pub dp_setpoint_pa: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            streets: 4,
            buildings_per_street: 25,
            trunk_length_m: 260.0,
            street_length_m: 340.0,
            service_length_m: 4.8,
            design_flow_building_kg_s: 0.128,
            design_flow_service_kg_s: 0.191,
            dp_setpoint_pa: 50_000.0,
        }
    }
}

impl TopologyConfig {
    pub fn building_count(&self) -> usize {
        self.streets * self.buildings_per_street
    }

    /// Total trench length (twin pipes share a trench), m.
    pub fn trench_length_m(&self) -> f64 {
        self.trunk_length_m
            + self.streets as f64 * self.street_length_m
            + self.building_count() as f64 * self.service_length_m
    }
}

/// One pipe leg (supply or return side of a trench segment).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipeSpec {
    pub length_m: f64,
    pub inner_m: f64,
    pub dn: String,
    /// Hydraulic resistance, Pa/(kg/s)².
    pub k: f64,
    pub loss_w_m_k: f64,
    pub wall_kj_m_k: f64,
    /// Flow the leg was sized for, kg/s.
    pub design_flow_kg_s: f64,
}

impl PipeSpec {
    pub fn water_mass_kg(&self) -> f64 {
        RHO_WATER_KG_M3 * std::f64::consts::FRAC_PI_4 * self.inner_m * self.inner_m * self.length_m
    }

    /// Pressure gradient at a given flow, Pa/m.
    pub fn gradient_pa_m(&self, flow_kg_s: f64) -> f64 {
        self.k * flow_kg_s * flow_kg_s / self.length_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Pump and plant circuit from the reference node into the tree root.
    Source,
    /// Twin distribution segment between two junctions.
    Main,
    /// Service branch of one building, ending at the reference node.
    Service { building: usize },
}

/// Folded edge: both legs of a trench segment (plus the substation and valve
/// for service branches).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub supply: PipeSpec,
    pub ret: PipeSpec,
    /// Folded fixed resistance (both legs, plus substation for services).
    pub fixed_k: f64,
    pub label: String,
}

/// The hydraulic-thermal backbone: a connected tree with one source and one
/// service branch per building. Node 0 is the folded reference (pressure 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub source_edge: usize,
    /// Service edge index per building id.
    pub service_edges: Vec<usize>,
    pub dp_setpoint_pa: f64,
}

impl NetworkGraph {
    pub fn building_count(&self) -> usize {
        self.service_edges.len()
    }

    /// Junction node feeding a building's service branch.
    pub fn building_tap(&self, building: usize) -> usize {
        self.edges[self.service_edges[building]].from
    }

    /// Debug dump: one row per pipe leg.
    pub fn edge_list_csv(&self) -> String {
        let mut out = String::from("node_from,node_to,length_m,dn,k\n");
        for e in &self.edges {
            for leg in [&e.supply, &e.ret] {
                out.push_str(&format!(
                    "{},{},{:.1},{},{:.1}\n",
                    e.from, e.to, leg.length_m, leg.dn, leg.k
                ));
            }
        }
        out
    }

    /// Largest per-leg pressure gradient when every leg carries `factor`
    /// times its design flow, with the offending leg label.
    pub fn worst_gradient_at(&self, factor: f64) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for e in &self.edges {
            if e.kind == EdgeKind::Source {
                continue;
            }
            for leg in [&e.supply, &e.ret] {
                let g = leg.gradient_pa_m(factor * leg.design_flow_kg_s);
                if g > worst.0 {
                    worst = (g, e.label.clone());
                }
            }
        }
        worst
    }

    /// Check that the graph is a connected tree reaching every building.
    pub fn validate(&self) -> Result<()> {
        let mut adj = vec![Vec::new(); self.node_count];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.from].push((e.to, i));
            adj[e.to].push((e.from, i));
        }
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &(m, _) in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::config("network graph is not connected"));
        }
        let sources = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Source)
            .count();
        if sources != 1 {
            return Err(Error::config(format!("expected 1 source edge, got {sources}")));
        }
        Ok(())
    }
}

/// Darcy friction factor (Haaland) at the design flow of the segment.
fn friction_factor(inner_m: f64, flow_kg_s: f64) -> f64 {
    let area = std::f64::consts::FRAC_PI_4 * inner_m * inner_m;
    let velocity = flow_kg_s / (RHO_WATER_KG_M3 * area);
    let re = (RHO_WATER_KG_M3 * velocity * inner_m / WATER_VISCOSITY_PA_S).max(4000.0);
    let rel = ROUGHNESS_M / inner_m / 3.7;
    let inv_sqrt = -1.8 * (rel.powf(1.11) + 6.9 / re).log10();
    1.0 / (inv_sqrt * inv_sqrt)
}

fn leg_resistance(length_m: f64, inner_m: f64, design_flow_kg_s: f64) -> f64 {
    let f = friction_factor(inner_m, design_flow_kg_s);
    8.0 * f * length_m / (RHO_WATER_KG_M3 * std::f64::consts::PI.powi(2) * inner_m.powi(5))
}

/// Pick the smallest catalogue diameter keeping the design-flow gradient
/// within the limit and build the leg spec.
fn size_leg(
    catalogue: &[DnPipe],
    segment: &str,
    length_m: f64,
    design_flow_kg_s: f64,
) -> Result<PipeSpec> {
    let mut worst = 0.0;
    for dn in catalogue {
        let k = leg_resistance(length_m, dn.inner_m, design_flow_kg_s);
        let gradient = k * design_flow_kg_s * design_flow_kg_s / length_m;
        if gradient <= MAX_GRADIENT_PA_M {
            return Ok(PipeSpec {
                length_m,
                inner_m: dn.inner_m,
                dn: dn.label.clone(),
                k,
                loss_w_m_k: dn.loss_w_m_k,
                wall_kj_m_k: dn.wall_kj_m_k,
                design_flow_kg_s,
            });
        }
        worst = gradient;
    }
    Err(Error::Sizing {
        segment: segment.to_string(),
        gradient_pa_per_m: worst,
        limit_pa_per_m: MAX_GRADIENT_PA_M,
    })
}

/// Build the street-tree network and size every segment from the catalogue.
/// Deterministic for a fixed config.
pub fn build_topology(config: &TopologyConfig) -> Result<NetworkGraph> {
    if config.streets == 0 || config.buildings_per_street == 0 {
        return Err(Error::config("need at least one street and one building"));
    }
    let catalogue = default_catalogue();
    let bps = config.buildings_per_street;
    let n_buildings = config.building_count();

    // Node ids: 0 = reference, 1 = plant root, 2 = trunk hub, then one tap
    // node per building along each street.
    let hub = if config.trunk_length_m > 0.0 { 2 } else { 1 };
    let mut node_count = hub + 1;
    let mut edges = Vec::new();

    let twin = |spec: PipeSpec| (spec.clone(), spec);

    // Pump / plant circuit.
    edges.push(Edge {
        from: 0,
        to: 1,
        kind: EdgeKind::Source,
        supply: PipeSpec {
            length_m: 1.0,
            inner_m: 0.15,
            dn: "plant".into(),
            k: PLANT_K / 2.0,
            loss_w_m_k: 0.0,
            wall_kj_m_k: 0.0,
            design_flow_kg_s: n_buildings as f64 * config.design_flow_building_kg_s,
        },
        ret: PipeSpec {
            length_m: 1.0,
            inner_m: 0.15,
            dn: "plant".into(),
            k: PLANT_K / 2.0,
            loss_w_m_k: 0.0,
            wall_kj_m_k: 0.0,
            design_flow_kg_s: n_buildings as f64 * config.design_flow_building_kg_s,
        },
        fixed_k: PLANT_K,
        label: "plant".into(),
    });

    if config.trunk_length_m > 0.0 {
        let q = n_buildings as f64 * config.design_flow_building_kg_s;
        let (supply, ret) = twin(size_leg(&catalogue, "trunk", config.trunk_length_m, q)?);
        let fixed_k = supply.k + ret.k;
        edges.push(Edge {
            from: 1,
            to: 2,
            kind: EdgeKind::Main,
            supply,
            ret,
            fixed_k,
            label: "trunk".into(),
        });
    }

    let seg_len = config.street_length_m / bps as f64;
    let mut service_edges = Vec::with_capacity(n_buildings);
    for s in 0..config.streets {
        let mut upstream = hub;
        for j in 0..bps {
            let tap = node_count;
            node_count += 1;
            let downstream_buildings = (bps - j) as f64;
            let q = downstream_buildings * config.design_flow_building_kg_s;
            let label = format!("street{}-seg{}", s + 1, j + 1);
            let (supply, ret) = twin(size_leg(&catalogue, &label, seg_len, q)?);
            let fixed_k = supply.k + ret.k;
            edges.push(Edge {
                from: upstream,
                to: tap,
                kind: EdgeKind::Main,
                supply,
                ret,
                fixed_k,
                label,
            });

            let building = s * bps + j;
            let label = format!("service{}", building + 1);
            let (supply, ret) = twin(size_leg(
                &catalogue,
                &label,
                config.service_length_m,
                config.design_flow_service_kg_s,
            )?);
            let fixed_k = supply.k + ret.k + SUBSTATION_K;
            service_edges.push(edges.len());
            edges.push(Edge {
                from: tap,
                to: 0,
                kind: EdgeKind::Service { building },
                supply,
                ret,
                fixed_k,
                label,
            });
            upstream = tap;
        }
    }

    let graph = NetworkGraph {
        node_count,
        edges,
        source_edge: 0,
        service_edges,
        dp_setpoint_pa: config.dp_setpoint_pa,
    };
    graph.validate()?;
    Ok(graph)
}

/// Converged flow and pressure field.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Signed flow per edge (positive from `from` to `to`), kg/s.
    pub edge_flow_kg_s: Vec<f64>,
    /// Folded differential pressure per node, Pa (reference node = 0).
    pub node_pressure_pa: Vec<f64>,
}

impl FlowSolution {
    pub fn building_flow(&self, graph: &NetworkGraph, building: usize) -> f64 {
        self.edge_flow_kg_s[graph.service_edges[building]]
    }

    pub fn source_flow(&self, graph: &NetworkGraph) -> f64 {
        self.edge_flow_kg_s[graph.source_edge]
    }

    /// Differential pressure available at a building tap, Pa.
    pub fn building_dp(&self, graph: &NetworkGraph, building: usize) -> f64 {
        self.node_pressure_pa[graph.building_tap(building)]
    }

    /// Worst node mass imbalance, kg/s.
    pub fn mass_residual(&self, graph: &NetworkGraph) -> f64 {
        let mut residual = vec![0.0; graph.node_count];
        for (e, q) in graph.edges.iter().zip(&self.edge_flow_kg_s) {
            residual[e.from] -= q;
            residual[e.to] += q;
        }
        residual[1..]
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs()))
    }
}

/// Signed quadratic pressure-flow law with a linear core for small flows.
fn edge_flow(dp: f64, k: f64) -> f64 {
    let dp_lin = k * LINEAR_FLOW_KG_S * LINEAR_FLOW_KG_S;
    if dp.abs() <= dp_lin {
        dp / (k * LINEAR_FLOW_KG_S)
    } else {
        dp.signum() * (dp.abs() / k).sqrt()
    }
}

fn edge_flow_derivative(dp: f64, k: f64) -> f64 {
    let dp_lin = k * LINEAR_FLOW_KG_S * LINEAR_FLOW_KG_S;
    if dp.abs() <= dp_lin {
        1.0 / (k * LINEAR_FLOW_KG_S)
    } else {
        1.0 / (2.0 * (k * dp.abs()).sqrt())
    }
}

/// Edge content ∫₀^Δp q(s) ds. The nodal equations are the gradient of the
/// summed content, which is convex because q is increasing in Δp; the damped
/// Newton iteration does its line search on this energy.
fn edge_content(dp: f64, k: f64) -> f64 {
    let dp_lin = k * LINEAR_FLOW_KG_S * LINEAR_FLOW_KG_S;
    let a = dp.abs();
    if a <= dp_lin {
        dp * dp / (2.0 * k * LINEAR_FLOW_KG_S)
    } else {
        dp_lin * dp_lin / (2.0 * k * LINEAR_FLOW_KG_S)
            + 2.0 / 3.0 * (a.powf(1.5) - dp_lin.powf(1.5)) / k.sqrt()
    }
}

/// Dense LU solve with partial pivoting; `a` is row-major `n`×`n`.
fn lu_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::Hydraulics {
                iterations: 0,
                residual_kg_s: f64::NAN,
            });
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in col + 1..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * b[k];
        }
        b[row] = s / a[row * n + row];
    }
    Ok(())
}

const MAX_NEWTON_ITERATIONS: usize = 300;
const RESIDUAL_TOL_KG_S: f64 = 1e-6;

/// Solve the nodal equations for the given valve resistances and pump head.
///
/// Valve resistances are per building, Pa/(kg/s)²; a closed valve is a very
/// large resistance, never graph surgery. With every valve closed the
/// all-zero solution is returned without iterating.
pub fn solve_flows(
    graph: &NetworkGraph,
    valve_k: &[f64],
    pump_head_pa: f64,
) -> Result<FlowSolution> {
    solve_flows_warm(graph, valve_k, pump_head_pa, None)
}

pub fn solve_flows_warm(
    graph: &NetworkGraph,
    valve_k: &[f64],
    pump_head_pa: f64,
    warm_start: Option<&[f64]>,
) -> Result<FlowSolution> {
    match solve_flows_inner(graph, valve_k, pump_head_pa, warm_start) {
        // A stale warm start can take the iteration through a flat region it
        // escapes only slowly; a cold start is reliable.
        Err(Error::Hydraulics { .. }) if warm_start.is_some() => {
            solve_flows_inner(graph, valve_k, pump_head_pa, None)
        }
        other => other,
    }
}

fn solve_flows_inner(
    graph: &NetworkGraph,
    valve_k: &[f64],
    pump_head_pa: f64,
    warm_start: Option<&[f64]>,
) -> Result<FlowSolution> {
    if valve_k.len() != graph.building_count() {
        return Err(Error::contract(format!(
            "expected {} valve resistances, got {}",
            graph.building_count(),
            valve_k.len()
        )));
    }
    if pump_head_pa <= 0.0 {
        return Err(Error::contract("pump head must be positive"));
    }
    if valve_k.iter().any(|k| *k < 0.0) {
        return Err(Error::contract("valve resistances must be non-negative"));
    }

    if valve_k.iter().all(|k| *k >= VALVE_CLOSED_K) {
        return Ok(FlowSolution {
            edge_flow_kg_s: vec![0.0; graph.edges.len()],
            node_pressure_pa: vec![0.0; graph.node_count],
        });
    }

    // Effective folded resistance per edge.
    let k_eff: Vec<f64> = graph
        .edges
        .iter()
        .map(|e| match e.kind {
            EdgeKind::Service { building } => {
                (e.fixed_k + valve_k[building].min(VALVE_CLOSED_K)).min(VALVE_CLOSED_K)
            }
            _ => e.fixed_k,
        })
        .collect();

    let n = graph.node_count - 1; // unknowns: nodes 1..
    let mut p = vec![0.0; graph.node_count];
    match warm_start {
        Some(prev) if prev.len() == graph.node_count => p.copy_from_slice(prev),
        _ => {
            for v in p.iter_mut().skip(1) {
                *v = 0.7 * pump_head_pa;
            }
        }
    }

    let head = |e: &Edge| if e.kind == EdgeKind::Source { pump_head_pa } else { 0.0 };

    let residual_of = |p: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; n];
        for (e, k) in graph.edges.iter().zip(&k_eff) {
            let dp = p[e.from] + head(e) - p[e.to];
            let q = edge_flow(dp, *k);
            if e.from >= 1 {
                r[e.from - 1] -= q;
            }
            if e.to >= 1 {
                r[e.to - 1] += q;
            }
        }
        r
    };

    // Total content: node imbalances are minus its gradient, so descending
    // the content drives the imbalances to zero.
    let content_of = |p: &[f64]| -> f64 {
        graph
            .edges
            .iter()
            .zip(&k_eff)
            .map(|(e, k)| edge_content(p[e.from] + head(e) - p[e.to], *k))
            .sum()
    };

    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut r = residual_of(&p);
    let mut r_norm = norm(&r);
    let mut w = content_of(&p);
    let mut jac = vec![0.0; n * n];

    for iteration in 0..MAX_NEWTON_ITERATIONS {
        if r_norm < RESIDUAL_TOL_KG_S {
            let edge_flow_kg_s = graph
                .edges
                .iter()
                .zip(&k_eff)
                .map(|(e, k)| edge_flow(p[e.from] + head(e) - p[e.to], *k))
                .collect();
            return Ok(FlowSolution {
                edge_flow_kg_s,
                node_pressure_pa: p,
            });
        }

        jac.iter_mut().for_each(|v| *v = 0.0);
        for (e, k) in graph.edges.iter().zip(&k_eff) {
            let dp = p[e.from] + head(e) - p[e.to];
            let g = edge_flow_derivative(dp, *k);
            // q flows from -> to; residual[to] += q, residual[from] -= q.
            if e.from >= 1 {
                let i = e.from - 1;
                jac[i * n + i] += g;
                if e.to >= 1 {
                    jac[i * n + (e.to - 1)] -= g;
                }
            }
            if e.to >= 1 {
                let i = e.to - 1;
                jac[i * n + i] += g;
                if e.from >= 1 {
                    jac[i * n + (e.from - 1)] -= g;
                }
            }
        }

        // Newton step: J·δ = r; with J positive definite δ descends the
        // content (whose gradient is -r).
        let mut step = r.clone();
        lu_solve(&mut jac, &mut step, n).map_err(|_| Error::Hydraulics {
            iterations: iteration,
            residual_kg_s: r_norm,
        })?;

        // Backtracking line search on the content with a strong sufficient-
        // decrease requirement. A weak requirement lets full steps ping-pong
        // across the q·|q| kink with tiny net progress; demanding a quarter
        // of the first-order decrease forces the halving that settles it.
        let slope: f64 = r.iter().zip(&step).map(|(ri, si)| ri * si).sum();
        let mut scale = 1.0;
        let mut accepted = None;
        let mut best: Option<(f64, f64)> = None; // (w, scale)
        for _ in 0..50 {
            let mut trial = p.clone();
            for i in 0..n {
                trial[i + 1] += scale * step[i];
            }
            let w_trial = content_of(&trial);
            if best.map(|(bw, _)| w_trial < bw).unwrap_or(true) {
                best = Some((w_trial, scale));
            }
            if w_trial <= w - 0.25 * scale * slope.abs() {
                let r_trial = residual_of(&trial);
                accepted = Some((trial, r_trial, w_trial));
                break;
            }
            scale *= 0.5;
        }
        if accepted.is_none() {
            // No scale met the Armijo bound; settle for the best decrease.
            if let Some((bw, bs)) = best {
                if bw < w {
                    let mut trial = p.clone();
                    for i in 0..n {
                        trial[i + 1] += bs * step[i];
                    }
                    let r_trial = residual_of(&trial);
                    accepted = Some((trial, r_trial, bw));
                }
            }
        }
        match accepted {
            Some((trial, r_trial, w_trial)) => {
                p = trial;
                r_norm = norm(&r_trial);
                r = r_trial;
                w = w_trial;
            }
            None => {
                return Err(Error::Hydraulics {
                    iterations: iteration,
                    residual_kg_s: r_norm,
                })
            }
        }
    }

    Err(Error::Hydraulics {
        iterations: MAX_NEWTON_ITERATIONS,
        residual_kg_s: r_norm,
    })
}

/// Solve with the pump head adjusted so the worst consumer sees the
/// configured differential pressure. Returns the solution and the head.
pub fn solve_flows_dp_controlled(
    graph: &NetworkGraph,
    valve_k: &[f64],
    head_guess_pa: f64,
    warm_start: Option<&[f64]>,
) -> Result<(FlowSolution, f64)> {
    let dp_set = graph.dp_setpoint_pa;
    if valve_k.iter().all(|k| *k >= VALVE_CLOSED_K) {
        // Dead network: the pump idles at the setpoint.
        let mut sol = solve_flows(graph, valve_k, dp_set)?;
        sol.edge_flow_kg_s.iter_mut().for_each(|q| *q = 0.0);
        return Ok((sol, dp_set));
    }

    let worst_of = |sol: &FlowSolution| {
        (0..graph.building_count())
            .map(|b| sol.building_dp(graph, b))
            .fold(f64::INFINITY, f64::min)
    };

    let mut head = head_guess_pa.max(dp_set);
    let mut warm: Option<Vec<f64>> = warm_start.map(|w| w.to_vec());
    let mut sol = solve_flows_warm(graph, valve_k, head, warm.as_deref())?;
    let mut worst = worst_of(&sol);
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..30 {
        let error = dp_set - worst;
        if error.abs() < 10.0 {
            return Ok((sol, head));
        }
        // Secant on worst(head); the slope is below one because friction
        // losses grow with the extra flow the head change induces.
        let slope = match prev {
            Some((h_p, w_p)) if (head - h_p).abs() > 1.0 => {
                ((worst - w_p) / (head - h_p)).clamp(0.05, 1.0)
            }
            _ => 0.5,
        };
        prev = Some((head, worst));
        head = (head + error / slope).max(dp_set * 0.2);
        warm = Some(sol.node_pressure_pa.clone());
        sol = solve_flows_warm(graph, valve_k, head, warm.as_deref())?;
        worst = worst_of(&sol);
    }
    Ok((sol, head))
}
