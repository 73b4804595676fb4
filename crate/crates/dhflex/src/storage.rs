//! Multi-node stratified storage tanks.
//!
//! One model covers the central buffer and the three distributed vessel
//! types. The water column is a stack of fully mixed layers (bottom to top)
//! exchanging by plug-flow advection, inter-layer conduction and ambient
//! loss. The coil and tank-in-tank variants couple the charge stream through
//! a heat exchanger instead of injecting it into the column; buoyancy
//! inversions are removed by an energy-conserving mixing sweep.

use serde::{Deserialize, Serialize};

use crate::audit::EnergyAudit;
use crate::consts::{CP_WATER_KJ_KG_K, CP_WATER_KWH_KG_K, RHO_WATER_KG_M3};

/// Local vessel loss conductance, W/K (ErP-class insulation).
pub const LOCAL_TANK_UA_W_K: f64 = 0.85;
/// Reference local volume for the area scaling of the central vessel, l.
const UA_SCALING_REF_L: f64 = 300.0;
/// Effective vertical conductivity for destratification, W/(m·K).
const EFFECTIVE_CONDUCTIVITY_W_M_K: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TankVariant {
    /// Open vessel: the charge stream mixes directly into the column and the
    /// vessel buffers both space heating and hot water.
    Open,
    /// Immersed-coil exchanger spanning the lower layers; buffers hot water.
    Coil { ua_kw_k: f64, span_layers: usize },
    /// Inner tank heated through the wall from a small jacket volume fed by
    /// the charge stream; buffers hot water.
    TankInTank { outer_volume_l: f64, ua_kw_k: f64 },
    /// Central buffer next to the plant (open hydraulics).
    Central,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TankGeometry {
    pub volume_l: f64,
    pub layers: usize,
    pub height_m: f64,
    pub loss_ua_w_k: f64,
    pub variant: TankVariant,
}

impl TankGeometry {
    pub fn open_500l() -> Self {
        Self {
            volume_l: 500.0,
            layers: 15,
            height_m: 1.8,
            loss_ua_w_k: LOCAL_TANK_UA_W_K,
            variant: TankVariant::Open,
        }
    }

    pub fn coil_200l() -> Self {
        Self {
            volume_l: 200.0,
            layers: 15,
            height_m: 1.3,
            loss_ua_w_k: LOCAL_TANK_UA_W_K,
            variant: TankVariant::Coil {
                ua_kw_k: 0.5,
                span_layers: 9,
            },
        }
    }

    pub fn tank_in_tank() -> Self {
        Self {
            volume_l: 164.0,
            layers: 15,
            height_m: 1.2,
            loss_ua_w_k: LOCAL_TANK_UA_W_K,
            variant: TankVariant::TankInTank {
                outer_volume_l: 39.0,
                ua_kw_k: 0.5,
            },
        }
    }

    /// Central buffer sized to a given volume; the loss conductance follows
    /// an area two-thirds-power scaling from the local vessel class.
    pub fn central(volume_l: f64) -> Self {
        Self {
            volume_l,
            layers: 50,
            height_m: 4.0,
            loss_ua_w_k: LOCAL_TANK_UA_W_K * (volume_l / UA_SCALING_REF_L).powf(2.0 / 3.0),
            variant: TankVariant::Central,
        }
    }

    /// Storage volume seen by the network, l (inner volume plus jacket for
    /// the tank-in-tank type).
    pub fn total_volume_l(&self) -> f64 {
        match &self.variant {
            TankVariant::TankInTank { outer_volume_l, .. } => self.volume_l + outer_volume_l,
            _ => self.volume_l,
        }
    }

    pub fn water_mass_kg(&self) -> f64 {
        self.volume_l / 1000.0 * RHO_WATER_KG_M3
    }

    pub fn layer_mass_kg(&self) -> f64 {
        self.water_mass_kg() / self.layers as f64
    }

    pub fn thermal_mass_kwh_k(&self) -> f64 {
        (self.total_volume_l() / 1000.0 * RHO_WATER_KG_M3) * CP_WATER_KWH_KG_K
    }
}

/// Layer temperatures ordered bottom to top, plus the jacket temperature for
/// the tank-in-tank variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TankState {
    pub layer_temps_c: Vec<f64>,
    pub jacket_temp_c: Option<f64>,
}

impl TankState {
    pub fn uniform(geom: &TankGeometry, temp_c: f64) -> Self {
        Self {
            layer_temps_c: vec![temp_c; geom.layers],
            jacket_temp_c: match geom.variant {
                TankVariant::TankInTank { .. } => Some(temp_c),
                _ => None,
            },
        }
    }

    pub fn top_c(&self) -> f64 {
        *self.layer_temps_c.last().unwrap()
    }

    pub fn bottom_c(&self) -> f64 {
        self.layer_temps_c[0]
    }

    pub fn mean_c(&self) -> f64 {
        self.layer_temps_c.iter().sum::<f64>() / self.layer_temps_c.len() as f64
    }

    pub fn energy_kwh(&self, geom: &TankGeometry) -> f64 {
        let layer = geom.layer_mass_kg() * CP_WATER_KWH_KG_K;
        let mut e: f64 = self.layer_temps_c.iter().map(|t| layer * t).sum();
        if let (Some(t_j), TankVariant::TankInTank { outer_volume_l, .. }) =
            (self.jacket_temp_c, &geom.variant)
        {
            e += outer_volume_l / 1000.0 * RHO_WATER_KG_M3 * CP_WATER_KWH_KG_K * t_j;
        }
        e
    }
}

/// One hydraulic stream attached to the tank: a flow and the temperature it
/// carries into the vessel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stream {
    pub flow_kg_s: f64,
    pub temp_c: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TankStepResult {
    /// Temperature returned to the charging circuit, °C (flow-averaged).
    pub charge_return_c: f64,
    /// Temperature delivered to the discharging circuits, °C (flow-averaged).
    pub discharge_supply_c: f64,
    /// Heat absorbed from the charge stream, kW.
    pub charge_heat_kw: f64,
    /// Net heat delivered to the discharge circuits, kW.
    pub discharge_heat_kw: f64,
    /// Standing loss to ambient, kW.
    pub loss_kw: f64,
    pub audit: EnergyAudit,
}

/// Mix adjacent unstable layers (warmer below colder) until the column is
/// monotone. Pure mass-weighted merging, conserves energy exactly.
pub fn mix_inversions(temps: &mut [f64]) {
    // Stack of (group temperature, group size in layers).
    let mut groups: Vec<(f64, usize)> = Vec::with_capacity(temps.len());
    for &t in temps.iter() {
        groups.push((t, 1));
        while groups.len() > 1 {
            let upper = groups[groups.len() - 1];
            let lower = groups[groups.len() - 2];
            if lower.0 <= upper.0 + 1e-12 {
                break;
            }
            let total = lower.1 + upper.1;
            let mixed = (lower.0 * lower.1 as f64 + upper.0 * upper.1 as f64) / total as f64;
            groups.truncate(groups.len() - 2);
            groups.push((mixed, total));
        }
    }
    let mut idx = 0;
    for (t, n) in groups {
        for _ in 0..n {
            temps[idx] = t;
            idx += 1;
        }
    }
}

/// State of charge: mean layer temperature position inside `[t_min, t_max]`,
/// clamped to `[0, 1]`.
pub fn state_of_charge(state: &TankState, t_min_c: f64, t_max_c: f64) -> f64 {
    debug_assert!(t_min_c < t_max_c);
    ((state.mean_c() - t_min_c) / (t_max_c - t_min_c)).clamp(0.0, 1.0)
}

/// Advance the tank by `dt_s`.
///
/// `charge` is the network-side stream (it enters the top for open
/// hydraulics and runs through the exchanger otherwise). Each entry of
/// `discharges` draws from the top and returns at its own temperature into
/// the bottom. Flows larger than a layer volume per step are handled by
/// substep subdivision, never an error.
pub fn tank_step(
    geom: &TankGeometry,
    state: &mut TankState,
    charge: Stream,
    discharges: &[Stream],
    ambient_c: f64,
    dt_s: f64,
) -> TankStepResult {
    debug_assert!(dt_s > 0.0 && charge.flow_kg_s >= 0.0);
    let n = geom.layers;
    let layer_mass = geom.layer_mass_kg();
    let cp = CP_WATER_KJ_KG_K;
    let open_charge = matches!(geom.variant, TankVariant::Open | TankVariant::Central);

    let discharge_total: f64 = discharges.iter().map(|s| s.flow_kg_s).sum();
    let column_charge = if open_charge { charge.flow_kg_s } else { 0.0 };

    // CFL bound: no cell may turn over more than half its mass per substep.
    let worst_flow = (column_charge + discharge_total).max(1e-12);
    let n_sub = ((dt_s * worst_flow) / (0.5 * layer_mass)).ceil().max(1.0) as usize;
    let h_s = dt_s / n_sub as f64;

    let u_start = state.energy_kwh(geom);
    let mut res = TankStepResult::default();
    // kJ accumulators over the whole step.
    let mut charge_in_kj = 0.0;
    let mut discharge_net_kj = 0.0;
    let mut loss_kj = 0.0;
    // kg·°C accumulators for the flow-averaged outlet temperatures.
    let mut charge_return_acc = 0.0;
    let mut discharge_supply_acc = 0.0;

    let ua_kw = geom.loss_ua_w_k / 1000.0;
    let cond_kw_k = EFFECTIVE_CONDUCTIVITY_W_M_K / 1000.0 * (geom.volume_l / 1000.0) * n as f64
        / (geom.height_m * geom.height_m);

    for _ in 0..n_sub {
        let t = &mut state.layer_temps_c;
        let mut delta_e = vec![0.0f64; n]; // kJ per layer

        // Advection: the charge loop passes the column downwards, the
        // discharge loops upwards; the interface flow is the difference.
        let m_chg = column_charge * h_s;
        let m_dis = discharge_total * h_s;
        if m_chg > 0.0 {
            delta_e[n - 1] += m_chg * cp * charge.temp_c;
            delta_e[0] -= m_chg * cp * t[0];
            charge_return_acc += m_chg * t[0];
            charge_in_kj += m_chg * cp * (charge.temp_c - t[0]);
        }
        if m_dis > 0.0 {
            delta_e[n - 1] -= m_dis * cp * t[n - 1];
            discharge_supply_acc += m_dis * t[n - 1];
            discharge_net_kj += m_dis * cp * t[n - 1];
            for s in discharges {
                let m = s.flow_kg_s * h_s;
                delta_e[0] += m * cp * s.temp_c;
                discharge_net_kj -= m * cp * s.temp_c;
            }
        }
        let net_down = m_chg - m_dis;
        for l in 0..n - 1 {
            if net_down > 0.0 {
                delta_e[l] += net_down * cp * t[l + 1];
                delta_e[l + 1] -= net_down * cp * t[l + 1];
            } else if net_down < 0.0 {
                delta_e[l + 1] += -net_down * cp * t[l];
                delta_e[l] -= -net_down * cp * t[l];
            }
        }

        // Exchanger coupling for the closed charge variants.
        if !open_charge && charge.flow_kg_s > 0.0 {
            let q_cp = charge.flow_kg_s * cp; // kW/K
            match &geom.variant {
                TankVariant::Coil { ua_kw_k, span_layers } => {
                    let span = (*span_layers).clamp(1, n);
                    let ua_per = ua_kw_k / span as f64;
                    let eff = 1.0 - (-ua_per / q_cp).exp();
                    let mut t_stream = charge.temp_c;
                    // The coil enters at the top of its span and exits below.
                    for l in (0..span).rev() {
                        let q = q_cp * eff * (t_stream - t[l]);
                        delta_e[l] += q * h_s;
                        t_stream -= q / q_cp;
                    }
                    charge_return_acc += charge.flow_kg_s * h_s * t_stream;
                    charge_in_kj += q_cp * h_s * (charge.temp_c - t_stream);
                }
                TankVariant::TankInTank { outer_volume_l, ua_kw_k } => {
                    let t_j = state.jacket_temp_c.get_or_insert(charge.temp_c);
                    let jacket_c = outer_volume_l / 1000.0 * RHO_WATER_KG_M3 * cp; // kJ/K
                    // The stream sweeps the jacket with a loop NTU of one.
                    let eff = 1.0 - (-1.0f64).exp();
                    let q_stream = q_cp * eff * (charge.temp_c - *t_j);
                    let t_out = charge.temp_c - q_stream / q_cp;
                    charge_return_acc += charge.flow_kg_s * h_s * t_out;
                    charge_in_kj += q_stream * h_s;
                    // Wall exchange spread uniformly over the inner layers.
                    let ua_per = ua_kw_k / n as f64;
                    let mut jacket_e = q_stream * h_s;
                    for (l, de) in delta_e.iter_mut().enumerate() {
                        let q = ua_per * (*t_j - t[l]);
                        *de += q * h_s;
                        jacket_e -= q * h_s;
                    }
                    *t_j += jacket_e / jacket_c;
                }
                _ => unreachable!("open variants handled above"),
            }
        }

        // Ambient loss and inter-layer conduction.
        let ua_per = ua_kw / n as f64;
        for l in 0..n {
            let q = ua_per * (t[l] - ambient_c);
            delta_e[l] -= q * h_s;
            loss_kj += q * h_s;
        }
        for l in 0..n - 1 {
            let q = cond_kw_k * (t[l + 1] - t[l]);
            delta_e[l] += q * h_s;
            delta_e[l + 1] -= q * h_s;
        }

        let layer_c = layer_mass * cp; // kJ/K
        for l in 0..n {
            t[l] += delta_e[l] / layer_c;
        }
        mix_inversions(t);
    }

    res.charge_heat_kw = charge_in_kj / dt_s;
    res.discharge_heat_kw = discharge_net_kj / dt_s;
    res.loss_kw = loss_kj / dt_s;
    res.charge_return_c = if charge.flow_kg_s > 0.0 {
        charge_return_acc / (charge.flow_kg_s * dt_s)
    } else {
        state.bottom_c()
    };
    res.discharge_supply_c = if discharge_total > 0.0 {
        discharge_supply_acc / (discharge_total * dt_s)
    } else {
        state.top_c()
    };

    let kj_to_kwh = 1.0 / 3600.0;
    res.audit = EnergyAudit {
        delta_u_kwh: state.energy_kwh(geom) - u_start,
        net_in_kwh: (charge_in_kj - discharge_net_kj - loss_kj) * kj_to_kwh,
        gross_kwh: (charge_in_kj.abs() + discharge_net_kj.abs() + loss_kj.abs()) * kj_to_kwh,
    };
    res
}
