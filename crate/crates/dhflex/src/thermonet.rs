//! Quasi-dynamic pipe temperature transport (node method).
//!
//! Each pipe leg tracks the water it contains as an ordered queue of slugs.
//! The outlet temperature is the time-of-flight delayed inlet temperature,
//! corrected for heat exchange with the lumped pipe wall and for losses to
//! the ground. Hydraulics are taken from a converged [`FlowSolution`]; the
//! network wrapper walks the tree so junction mixing happens in topological
//! order on the supply side and in reverse on the return side.

use std::collections::VecDeque;

use crate::audit::EnergyAudit;
use crate::consts::{CP_WATER_KJ_KG_K, CP_WATER_KWH_KG_K};
use crate::error::{Error, Result};
use crate::hydronet::{EdgeKind, FlowSolution, NetworkGraph, PipeSpec};

/// Internal water-to-wall film coefficient, W/(m²·K).
const WATER_WALL_H_W_M2_K: f64 = 1500.0;
/// Soft cap on the slug queue length per pipe.
const MAX_SLUGS: usize = 120;

#[derive(Debug, Clone, Copy)]
struct Slug {
    /// Entry timestamp; the queue stays ordered by it.
    #[allow(dead_code)]
    entered_s: f64,
    temp_c: f64,
    mass_kg: f64,
}

/// Thermal state of one pipe leg.
#[derive(Debug, Clone)]
pub struct PipeThermal {
    /// Front = outlet end (oldest water), back = inlet end.
    slugs: VecDeque<Slug>,
    pub wall_temp_c: f64,
    water_mass_kg: f64,
    /// Wall heat capacity, kJ/K.
    wall_c_kj_k: f64,
    /// Water-wall coupling, kW/K.
    g_ww_kw_k: f64,
    /// Wall (or water, for capacity-free walls) to ground conductance, kW/K.
    g_loss_kw_k: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PipeStepResult {
    pub outlet_c: f64,
    pub loss_kw: f64,
    pub audit: EnergyAudit,
}

impl PipeThermal {
    pub fn new(spec: &PipeSpec, t_init_c: f64) -> Self {
        let water_mass_kg = spec.water_mass_kg();
        Self {
            slugs: VecDeque::from([Slug {
                entered_s: 0.0,
                temp_c: t_init_c,
                mass_kg: water_mass_kg,
            }]),
            wall_temp_c: t_init_c,
            water_mass_kg,
            wall_c_kj_k: spec.wall_kj_m_k * spec.length_m,
            g_ww_kw_k: WATER_WALL_H_W_M2_K / 1000.0
                * std::f64::consts::PI
                * spec.inner_m
                * spec.length_m,
            g_loss_kw_k: spec.loss_w_m_k / 1000.0 * spec.length_m,
        }
    }

    pub fn water_mass_kg(&self) -> f64 {
        self.water_mass_kg
    }

    /// Mass-weighted mean water temperature, °C.
    pub fn mean_water_c(&self) -> f64 {
        let e: f64 = self.slugs.iter().map(|s| s.mass_kg * s.temp_c).sum();
        e / self.water_mass_kg
    }

    /// Temperature of the water standing at the outlet end, °C.
    pub fn front_c(&self) -> f64 {
        self.slugs.front().map(|s| s.temp_c).unwrap_or(self.wall_temp_c)
    }

    /// Stored energy (water plus wall), kWh.
    pub fn energy_kwh(&self) -> f64 {
        let water: f64 = self
            .slugs
            .iter()
            .map(|s| s.mass_kg * CP_WATER_KWH_KG_K * s.temp_c)
            .sum();
        water + self.wall_c_kj_k / 3600.0 * self.wall_temp_c
    }

    /// Relax slugs against the wall and the wall against the ground over
    /// `h_s` seconds. Returns the booked ground loss in kJ.
    ///
    /// Each slug-wall pair relaxes with its exact two-node solution, so both
    /// temperatures stay inside their joint range regardless of the capacity
    /// ratio; the wall then decays towards the ground temperature.
    fn exchange(&mut self, ambient_c: f64, h_s: f64) -> f64 {
        let mut loss_kj = 0.0;
        if self.wall_c_kj_k > 1e-9 {
            let c_m = self.wall_c_kj_k;
            for s in self.slugs.iter_mut() {
                let g = self.g_ww_kw_k * s.mass_kg / self.water_mass_kg;
                let c_s = s.mass_kg * CP_WATER_KJ_KG_K;
                let rate = g * (1.0 / c_s + 1.0 / c_m);
                let exchanged = (s.temp_c - self.wall_temp_c) * (1.0 - (-rate * h_s).exp());
                s.temp_c -= exchanged * c_m / (c_s + c_m);
                self.wall_temp_c += exchanged * c_s / (c_s + c_m);
            }
            let decay = (-self.g_loss_kw_k * h_s / self.wall_c_kj_k).exp();
            let t_new = ambient_c + (self.wall_temp_c - ambient_c) * decay;
            loss_kj += self.wall_c_kj_k * (self.wall_temp_c - t_new);
            self.wall_temp_c = t_new;
        } else {
            // No wall mass: slugs lose straight to the ground.
            for s in self.slugs.iter_mut() {
                let g = self.g_loss_kw_k * s.mass_kg / self.water_mass_kg;
                let c = s.mass_kg * CP_WATER_KJ_KG_K;
                let decay = (-g * h_s / c).exp();
                let t_new = ambient_c + (s.temp_c - ambient_c) * decay;
                loss_kj += c * (s.temp_c - t_new);
                s.temp_c = t_new;
            }
            self.wall_temp_c = ambient_c;
        }
        loss_kj
    }

    fn compact(&mut self) {
        if self.slugs.len() < MAX_SLUGS {
            return;
        }
        let mut merged: VecDeque<Slug> = VecDeque::with_capacity(self.slugs.len() / 2 + 1);
        for s in self.slugs.drain(..) {
            match merged.back_mut() {
                Some(last)
                    if (last.temp_c - s.temp_c).abs() < 0.05
                        || s.mass_kg < 0.005 * self.water_mass_kg =>
                {
                    let m = last.mass_kg + s.mass_kg;
                    last.temp_c = (last.temp_c * last.mass_kg + s.temp_c * s.mass_kg) / m;
                    last.mass_kg = m;
                }
                _ => merged.push_back(s),
            }
        }
        self.slugs = merged;
    }

    /// Advance the pipe by `dt_s` with the given through-flow and inlet
    /// temperature. Zero flow degenerates to standing loss decay.
    pub fn propagate(
        &mut self,
        flow_kg_s: f64,
        inlet_c: f64,
        ambient_c: f64,
        now_s: f64,
        dt_s: f64,
    ) -> PipeStepResult {
        debug_assert!(dt_s > 0.0);
        debug_assert!(flow_kg_s >= 0.0, "slug transport needs forward flow");
        let u_start = self.energy_kwh();
        let mut loss_kj = 0.0;
        let mut out_energy_kj = 0.0;
        let mut out_mass = 0.0;

        // Substep so no parcel crosses more than half the pipe unexchanged.
        let n_sub = ((flow_kg_s * dt_s) / (0.5 * self.water_mass_kg))
            .ceil()
            .clamp(1.0, 64.0) as usize;
        let h_s = dt_s / n_sub as f64;

        for sub in 0..n_sub {
            loss_kj += self.exchange(ambient_c, h_s);
            let m_step = flow_kg_s * h_s;
            if m_step <= 0.0 {
                continue;
            }
            self.slugs.push_back(Slug {
                entered_s: now_s + sub as f64 * h_s,
                temp_c: inlet_c,
                mass_kg: m_step,
            });
            let mut to_pop = m_step;
            while to_pop > 0.0 {
                let front = self.slugs.front_mut().expect("pipe never empties");
                if front.mass_kg <= to_pop + 1e-12 {
                    out_energy_kj += front.mass_kg * CP_WATER_KJ_KG_K * front.temp_c;
                    out_mass += front.mass_kg;
                    to_pop -= front.mass_kg;
                    self.slugs.pop_front();
                } else {
                    front.mass_kg -= to_pop;
                    out_energy_kj += to_pop * CP_WATER_KJ_KG_K * front.temp_c;
                    out_mass += to_pop;
                    to_pop = 0.0;
                }
            }
        }
        self.compact();

        let outlet_c = if out_mass > 0.0 {
            out_energy_kj / (out_mass * CP_WATER_KJ_KG_K)
        } else {
            self.front_c()
        };
        let in_kj = flow_kg_s * dt_s * CP_WATER_KJ_KG_K * inlet_c;
        let kwh = 1.0 / 3600.0;
        PipeStepResult {
            outlet_c,
            loss_kw: loss_kj / dt_s,
            audit: EnergyAudit {
                delta_u_kwh: self.energy_kwh() - u_start,
                net_in_kwh: (in_kj - out_energy_kj - loss_kj) * kwh,
                gross_kwh: (in_kj.abs() + out_energy_kj.abs() + loss_kj.abs()) * kwh,
            },
        }
    }
}

/// Per-pipe row of a propagation pass, for the optional trace output.
#[derive(Debug, Clone, Copy)]
pub struct PipeRow {
    pub edge: usize,
    pub inlet_c: f64,
    pub outlet_c: f64,
    pub flow_kg_s: f64,
    pub loss_kw: f64,
}

/// Per-step outcome of a network-wide propagation pass.
#[derive(Debug, Clone)]
pub struct NetworkPass {
    /// Temperature arriving at each building (supply pass) or at the plant
    /// (return pass, single value broadcast), °C.
    pub building_temps_c: Vec<f64>,
    pub plant_temp_c: f64,
    pub loss_kw: f64,
    pub pipe_rows: Vec<PipeRow>,
}

/// Thermal state of every pipe leg in the network.
#[derive(Debug, Clone)]
pub struct ThermalNetwork {
    /// Supply and return leg per edge, indexed like `graph.edges` (source
    /// edge carries no pipes and holds `None`).
    supply: Vec<Option<PipeThermal>>,
    ret: Vec<Option<PipeThermal>>,
    /// Edge indices in topological order from the root.
    topo: Vec<usize>,
    /// Edges leaving each node (supply direction).
    children: Vec<Vec<usize>>,
}

impl ThermalNetwork {
    pub fn new(graph: &NetworkGraph, t_supply_init_c: f64, t_return_init_c: f64) -> Self {
        let mut supply = Vec::with_capacity(graph.edges.len());
        let mut ret = Vec::with_capacity(graph.edges.len());
        let mut children = vec![Vec::new(); graph.node_count];
        for (i, e) in graph.edges.iter().enumerate() {
            if e.kind == EdgeKind::Source {
                supply.push(None);
                ret.push(None);
            } else {
                supply.push(Some(PipeThermal::new(&e.supply, t_supply_init_c)));
                ret.push(Some(PipeThermal::new(&e.ret, t_return_init_c)));
                children[e.from].push(i);
            }
        }
        // The edge list is already parent-before-child by construction;
        // a BFS from the root keeps that guarantee explicit.
        let mut topo = Vec::with_capacity(graph.edges.len());
        let mut queue = VecDeque::from([1usize]);
        while let Some(node) = queue.pop_front() {
            for &i in &children[node] {
                topo.push(i);
                let to = graph.edges[i].to;
                if to != 0 {
                    queue.push_back(to);
                }
            }
        }
        Self {
            supply,
            ret,
            topo,
            children,
        }
    }

    /// Total stored energy in all pipe legs, kWh.
    pub fn energy_kwh(&self) -> f64 {
        self.supply
            .iter()
            .chain(self.ret.iter())
            .flatten()
            .map(|p| p.energy_kwh())
            .sum()
    }

    /// Push the plant supply temperature through the supply legs. Junction
    /// temperatures mix in topological order; every building receives the
    /// outlet temperature of its service leg.
    pub fn propagate_supply(
        &mut self,
        graph: &NetworkGraph,
        flows: &FlowSolution,
        plant_supply_c: f64,
        ambient_c: f64,
        now_s: f64,
        dt_s: f64,
    ) -> Result<NetworkPass> {
        let mut node_temp = vec![f64::NAN; graph.node_count];
        node_temp[1] = plant_supply_c;
        let mut building_temps = vec![f64::NAN; graph.building_count()];
        let mut loss_kw = 0.0;
        let mut pipe_rows = Vec::with_capacity(self.topo.len());

        for &i in &self.topo {
            let e = &graph.edges[i];
            let inlet = node_temp[e.from];
            if inlet.is_nan() {
                return Err(Error::contract(format!(
                    "supply pass reached edge {} before its junction",
                    e.label
                )));
            }
            let q = flows.edge_flow_kg_s[i].max(0.0);
            let pipe = self.supply[i].as_mut().expect("non-source edge has pipes");
            let out = pipe.propagate(q, inlet, ambient_c, now_s, dt_s);
            loss_kw += out.loss_kw;
            pipe_rows.push(PipeRow {
                edge: i,
                inlet_c: inlet,
                outlet_c: out.outlet_c,
                flow_kg_s: q,
                loss_kw: out.loss_kw,
            });
            match e.kind {
                EdgeKind::Service { building } => building_temps[building] = out.outlet_c,
                _ => node_temp[e.to] = out.outlet_c,
            }
        }

        Ok(NetworkPass {
            building_temps_c: building_temps,
            plant_temp_c: plant_supply_c,
            loss_kw,
            pipe_rows,
        })
    }

    /// Collect building return temperatures back to the plant. Children are
    /// processed before their parent edge; junction inlet temperatures are
    /// flow-weighted mixes of the children's outlets.
    pub fn propagate_return(
        &mut self,
        graph: &NetworkGraph,
        flows: &FlowSolution,
        building_return_c: &[f64],
        ambient_c: f64,
        now_s: f64,
        dt_s: f64,
    ) -> Result<NetworkPass> {
        if building_return_c.len() != graph.building_count() {
            return Err(Error::contract("one return temperature per building"));
        }
        // Mixed return arriving at each node from downstream.
        let mut node_mix_q = vec![0.0f64; graph.node_count];
        let mut node_mix_qt = vec![0.0f64; graph.node_count];
        let mut loss_kw = 0.0;
        let mut pipe_rows = Vec::with_capacity(self.topo.len());

        for &i in self.topo.iter().rev() {
            let e = &graph.edges[i];
            let q = flows.edge_flow_kg_s[i].max(0.0);
            let inlet = match e.kind {
                EdgeKind::Service { building } => building_return_c[building],
                _ => {
                    // Mix of everything that returned into the far junction.
                    if node_mix_q[e.to] > 1e-12 {
                        node_mix_qt[e.to] / node_mix_q[e.to]
                    } else {
                        self.ret[i].as_ref().expect("pipes").front_c()
                    }
                }
            };
            let pipe = self.ret[i].as_mut().expect("non-source edge has pipes");
            let out = pipe.propagate(q, inlet, ambient_c, now_s, dt_s);
            loss_kw += out.loss_kw;
            pipe_rows.push(PipeRow {
                edge: i,
                inlet_c: inlet,
                outlet_c: out.outlet_c,
                flow_kg_s: q,
                loss_kw: out.loss_kw,
            });
            node_mix_q[e.from] += q;
            node_mix_qt[e.from] += q * out.outlet_c;
        }

        let plant_return_c = if node_mix_q[1] > 1e-12 {
            node_mix_qt[1] / node_mix_q[1]
        } else {
            // Stagnant network: report the trunk-side standing temperature.
            self.children[1]
                .first()
                .and_then(|&i| self.ret[i].as_ref())
                .map(|p| p.front_c())
                .unwrap_or(ambient_c)
        };

        Ok(NetworkPass {
            building_temps_c: Vec::new(),
            plant_temp_c: plant_return_c,
            loss_kw,
            pipe_rows,
        })
    }

    /// Optional per-pipe trace rows: `pipe_id,T_out,flow`.
    pub fn pipe_mean_temps(&self) -> Vec<(usize, f64, f64)> {
        self.supply
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p.mean_water_c(), p.wall_temp_c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydronet::{build_topology, solve_flows, valve_k_from_pos, TopologyConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn test_spec(length_m: f64, loss_w_m_k: f64, wall_kj_m_k: f64) -> PipeSpec {
        PipeSpec {
            length_m,
            inner_m: 0.0703,
            dn: "DN65".into(),
            k: 100.0,
            loss_w_m_k,
            wall_kj_m_k,
            design_flow_kg_s: 1.0,
        }
    }

    #[test]
    fn standing_loss_decays_exponentially() {
        let spec = test_spec(100.0, 0.38, 0.0);
        let mut pipe = PipeThermal::new(&spec, 70.0);
        let m_cp = pipe.water_mass_kg() * CP_WATER_KJ_KG_K;
        let tau_s = m_cp / (0.38 / 1000.0 * 100.0);
        let mut total_loss = 0.0;
        for k in 0..120 {
            let out = pipe.propagate(0.0, 0.0, 10.0, k as f64 * 60.0, 60.0);
            total_loss += out.loss_kw;
            assert!(out.loss_kw > 0.0);
            assert!(out.audit.relative_residual() < 1e-9);
        }
        let t_exact = 10.0 + 60.0 * (-7200.0 / tau_s).exp();
        assert_relative_eq!(pipe.mean_water_c(), t_exact, epsilon = 1e-6);
        assert!(total_loss > 0.0);
    }

    #[test]
    fn lossless_pipe_is_pure_plug_delay() {
        let spec = test_spec(200.0, 0.0, 0.0);
        let mut pipe = PipeThermal::new(&spec, 40.0);
        // Choose the flow for a 600 s residence time.
        let flow = pipe.water_mass_kg() / 600.0;
        let mut t = 0.0;
        while t < 1200.0 {
            let out = pipe.propagate(flow, 70.0, 10.0, t, 60.0);
            t += 60.0;
            if t < 600.0 - 1e-9 {
                assert_relative_eq!(out.outlet_c, 40.0, epsilon = 1e-9);
            }
            if t > 600.0 + 60.0 {
                assert_relative_eq!(out.outlet_c, 70.0, epsilon = 1e-9);
            }
            assert!(out.audit.relative_residual() < 1e-9);
        }
    }

    #[test]
    fn steady_state_outlet_matches_analytic_loss() {
        // Constant inlet and flow: outlet settles at ambient plus the inlet
        // excess damped by exp(-UA/(q cp)).
        let spec = test_spec(500.0, 0.38, 2.0);
        let mut pipe = PipeThermal::new(&spec, 40.0);
        let flow = 0.8;
        let mut out = PipeStepResult::default();
        for k in 0..240 {
            out = pipe.propagate(flow, 70.0, 10.0, k as f64 * 60.0, 60.0);
        }
        let ua = 0.38 / 1000.0 * 500.0;
        let expected = 10.0 + 60.0 * (-ua / (flow * CP_WATER_KJ_KG_K)).exp();
        assert_relative_eq!(out.outlet_c, expected, epsilon = 0.05);
    }

    #[test]
    fn network_supply_and_return_passes() {
        let config = TopologyConfig::default();
        let graph = build_topology(&config).unwrap();
        let mut net = ThermalNetwork::new(&graph, 60.0, 35.0);
        let valves = vec![valve_k_from_pos(0.8); graph.building_count()];
        let flows = solve_flows(&graph, &valves, 2.0e5).unwrap();

        let returns = vec![35.0; graph.building_count()];
        let mut supply_pass = None;
        let mut return_pass = None;
        for k in 0..240 {
            let t = k as f64 * 60.0;
            supply_pass = Some(
                net.propagate_supply(&graph, &flows, 75.0, 10.0, t, 60.0)
                    .unwrap(),
            );
            return_pass = Some(
                net.propagate_return(&graph, &flows, &returns, 10.0, t, 60.0)
                    .unwrap(),
            );
        }
        let pass = supply_pass.unwrap();
        // After four hours of steady feed, every building is warm but below
        // the plant temperature (losses on the way).
        for &t in &pass.building_temps_c {
            assert!(t > 70.0 && t < 75.0, "building supply {t}");
        }
        assert!(pass.loss_kw > 0.0);
        let ret_pass = return_pass.unwrap();
        assert!(
            ret_pass.plant_temp_c < 35.0 && ret_pass.plant_temp_c > 25.0,
            "plant return {}",
            ret_pass.plant_temp_c
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn outlet_bounded_by_history_and_balance_holds(
            seed in 0u64..500,
            flow in 0.0f64..3.0,
            wall in 0.0f64..4.0,
        ) {
            use rand::{Rng, SeedableRng};
            let spec = test_spec(300.0, 0.4, wall);
            let mut pipe = PipeThermal::new(&spec, 50.0);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ambient = 10.0;
            let mut min_seen = 50.0f64;
            let mut max_seen = 50.0f64;
            for k in 0..100 {
                let inlet = rng.gen_range(30.0..90.0);
                min_seen = min_seen.min(inlet);
                max_seen = max_seen.max(inlet);
                let q = if rng.gen_bool(0.2) { 0.0 } else { flow };
                let out = pipe.propagate(q, inlet, ambient, k as f64 * 60.0, 60.0);
                prop_assert!(out.audit.relative_residual() < 1e-3);
                prop_assert!(out.outlet_c <= max_seen + 1e-9);
                prop_assert!(out.outlet_c >= ambient.min(min_seen) - 1e-9);
            }
        }
    }
}
