//! The global simulation loop.
//!
//! Step order within one global step: control round (on block boundaries) →
//! building-local control and valve positioning → hydraulic solve → supply
//! temperature propagation → building/tank physics → return propagation →
//! plant dispatch and plant-side storage. The one-step transport-versus-
//! control lag this ordering creates is accepted.
//!
//! Active scenarios first run a fitting window under the reference
//! controller, identify the aggregate models, validate them on a held-out
//! day and then run the scored week under the three-step dispatch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::building::{
    self, BuildingParams, BuildingState, DhwTapping, Disturbances, ThermostatSetpoints,
};
use crate::consts::{
    plant_supply_setpoint_c, COLD_FEED_C, CP_WATER_KJ_KG_K, GROUND_TEMP_C, HeatingCurve,
    INDOOR_AMBIENT_C, PLANT_SUPPLY_MAX_C, SUBSTATION_EFFECTIVENESS,
};
use crate::dispatch::{
    aggregate, boiler_heat_cost_eur_mwh, build_bid, clear_market, effective_heat_cost_eur_mwh,
    fit_building, fit_tank, plan, select_source, AggregateBuildingModel, AggregateTankModel,
    BidFunction, DispatchPlan, HistoricTrace, PiController, PlanConfig, PlanInputs, SourceSplit,
};
use crate::econ::settle;
use crate::error::{Error, Result};
use crate::hydronet::{
    build_topology, solve_flows_dp_controlled, valve_k_from_pos, NetworkGraph, VALVE_OPEN_K,
};
use crate::plant::{
    dispatch_with_commitment, BoilerParams, ChpParams, PlantState, PlantStep,
};
use crate::storage::{state_of_charge, tank_step, Stream, TankGeometry, TankState, TankVariant};
use crate::thermonet::{PipeRow, ThermalNetwork};

use super::config::{ScenarioConfig, ScenarioTag, WeekSelector};
use super::profiles::{
    generate_prices, generate_weather, load_prices, load_weather, sample_hourly,
    select_representative_week, PriceSeries, WeatherSeries,
};
use super::trace::{EnergyTallies, PlannerRow, SimulationResult, StepTraces, TempStats};

/// Hourly shape of household electrical gains, kW.
const PEL_SHAPE: [f64; 24] = [
    0.18, 0.15, 0.14, 0.14, 0.15, 0.20, 0.30, 0.42, 0.38, 0.31, 0.28, 0.30, //
    0.33, 0.30, 0.28, 0.30, 0.38, 0.50, 0.55, 0.50, 0.45, 0.38, 0.28, 0.22,
];

/// Effective solar aperture of a dwelling, m².
const SOLAR_APERTURE_M2: f64 = 6.0;
/// Nominal tank charging flow, kg/s.
const TANK_CHARGE_FLOW_KG_S: f64 = 0.08;
/// Water mass of the plant header volume, kg.
const PLANT_VOLUME_KG: f64 = 3000.0;
/// Time constant of the plant supply-temperature controller, s.
const PLANT_CONTROL_TAU_S: f64 = 600.0;
/// Local tank hysteresis band in state-of-charge terms (reference control).
const TANK_SOC_ON: f64 = 0.35;
const TANK_SOC_OFF: f64 = 0.75;
/// Hot-water comfort floor on the tank top, °C.
const TANK_TOP_FLOOR_C: f64 = 42.0;

struct Unit {
    params: BuildingParams,
    state: BuildingState,
    tank_geom: Option<TankGeometry>,
    tank: Option<TankState>,
    dhw: DhwTapping,
    aperture_m2: f64,
    pel_scale: f64,
    valve_pos: f64,
    charge_hyst_on: bool,
    cleared_heat: bool,
    cleared_charge: bool,
    // Per-step intents, set by the control phase.
    want_heat: bool,
    want_charge: bool,
    q_sh_des: f64,
    q_dhw_des: f64,
    q_charge_des: f64,
    q_sec_des: f64,
    dhw_kw: f64,
}

impl Unit {
    fn tank_soc(&self, band: (f64, f64)) -> f64 {
        self.tank
            .as_ref()
            .map(|t| state_of_charge(t, band.0, band.1))
            .unwrap_or(0.0)
    }
}

enum Mode {
    Reference,
    Active {
        bmodel: Option<AggregateBuildingModel>,
        tmodel: Option<AggregateTankModel>,
        offtake_bins: Vec<f64>,
        /// Storage ceiling the planner may use: what charging physically
        /// reached in the fitting window.
        tank_band_hi_c: f64,
    },
}

/// Per-block means collected for model fitting.
#[derive(Default)]
struct FitCollector {
    t_a: Vec<f64>,
    t_m: Vec<f64>,
    t_s: Vec<f64>,
    t_out: Vec<f64>,
    p_b: Vec<f64>,
    p_w: Vec<f64>,
    q_a: Vec<f64>,
    offtake: Vec<f64>,
    acc_p_b: f64,
    acc_p_w: f64,
    acc_q_a: f64,
    acc_offtake: f64,
    acc_t_out: f64,
    acc_steps: usize,
}

impl FitCollector {
    fn snapshot(&mut self, t_a: f64, t_m: f64, t_s: f64) {
        if self.acc_steps > 0 {
            let n = self.acc_steps as f64;
            self.p_b.push(self.acc_p_b / n);
            self.p_w.push(self.acc_p_w / n);
            self.q_a.push(self.acc_q_a / n);
            self.offtake.push(self.acc_offtake / n);
            self.t_out.push(self.acc_t_out / n);
            self.acc_p_b = 0.0;
            self.acc_p_w = 0.0;
            self.acc_q_a = 0.0;
            self.acc_offtake = 0.0;
            self.acc_t_out = 0.0;
            self.acc_steps = 0;
        }
        self.t_a.push(t_a);
        self.t_m.push(t_m);
        self.t_s.push(t_s);
    }

    fn accumulate(&mut self, p_b: f64, p_w: f64, q_a: f64, offtake: f64, t_out: f64) {
        self.acc_p_b += p_b;
        self.acc_p_w += p_w;
        self.acc_q_a += q_a;
        self.acc_offtake += offtake;
        self.acc_t_out += t_out;
        self.acc_steps += 1;
    }

    fn into_trace(mut self, dt_h: f64) -> HistoricTrace {
        // Drop the dangling state snapshot so every state has block inputs.
        let n = self.p_b.len().min(self.t_a.len().saturating_sub(1)) + 1;
        self.t_a.truncate(n);
        self.t_m.truncate(n);
        self.t_s.truncate(n);
        let m = n.saturating_sub(1);
        HistoricTrace {
            dt_h,
            t_a: self.t_a,
            t_m: self.t_m,
            t_s: self.t_s,
            t_out: truncated(self.t_out, m),
            p_b: truncated(self.p_b, m),
            q_a: truncated(self.q_a.clone(), m),
            q_m: truncated(self.q_a, m),
            p_w: truncated(self.p_w, m),
            offtake: truncated(self.offtake, m),
        }
    }
}

fn truncated(mut v: Vec<f64>, n: usize) -> Vec<f64> {
    v.truncate(n);
    v
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    weather: &'a WeatherSeries,
    prices: &'a PriceSeries,
    mode: Mode,
    graph: NetworkGraph,
    thermo: ThermalNetwork,
    units: Vec<Unit>,
    chp: ChpParams,
    boiler: BoilerParams,
    plant: PlantState,
    plant_volume_c: f64,
    central_geom: Option<TankGeometry>,
    central: Option<TankState>,
    central_hyst_on: bool,
    pi: PiController,
    plan: Option<DispatchPlan>,
    plan_block: usize,
    pump_head_pa: f64,
    warm_pressures: Option<Vec<f64>>,
    arrival_c: Vec<f64>,
    plant_return_c: f64,
    t_a_24h: f64,
    block_measured_kwh: f64,
    // Bid-level calibration: realized vs bid energy of the cleared devices,
    // per device class.
    level_gain_b: f64,
    level_gain_w: f64,
    block_real_b_kwh: f64,
    block_real_w_kwh: f64,
    cleared_cap_b_kw: f64,
    cleared_cap_w_kw: f64,
    directive: SourceSplit,
    central_target_kw: f64,
    sum_a_piv: f64,
    sum_b_piv: f64,
    sum_aperture: f64,
    sum_pel: f64,
}

/// What one global step reports back to the window driver.
struct StepOutcome {
    plant: PlantStep,
    supply_rows: Vec<PipeRow>,
    return_rows: Vec<PipeRow>,
    delivered_kw: f64,
    pipe_loss_kw: f64,
    local_tank_loss_kw: f64,
    central_tank_loss_kw: f64,
    pump_el_kw: f64,
    dhw_unserved_kw: f64,
    supply_c: f64,
    return_c: f64,
    price: f64,
    ambient_c: f64,
    flexible_kw: f64,
}

impl<'a> Engine<'a> {
    fn new(
        cfg: &'a ScenarioConfig,
        weather: &'a WeatherSeries,
        prices: &'a PriceSeries,
        mode: Mode,
    ) -> Result<Self> {
        let graph = build_topology(&cfg.topology)?;
        let n = graph.building_count();
        let population = building::sample_population(n, cfg.seed);

        // The three distributed vessel types, assigned uniformly at random.
        // The same seeded assignment sizes the central buffer so both
        // configurations carry the same storage volume.
        let mut assign_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a9c);
        let variants: Vec<TankGeometry> = (0..n)
            .map(|_| match assign_rng.gen_range(0..3) {
                0 => TankGeometry::open_500l(),
                1 => TankGeometry::coil_200l(),
                _ => TankGeometry::tank_in_tank(),
            })
            .collect();
        let central_volume_l: f64 = variants.iter().map(|g| g.total_volume_l()).sum();

        let with_local_tanks = cfg.scenario == ScenarioTag::DistributedActive;
        let with_central = cfg.scenario == ScenarioTag::CentralActive;

        let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11fe);
        let units: Vec<Unit> = population
            .into_iter()
            .enumerate()
            .map(|(b, params)| {
                let tank_geom = with_local_tanks.then(|| variants[b].clone());
                let tank = tank_geom.as_ref().map(|g| TankState::uniform(g, 55.0));
                Unit {
                    params,
                    state: BuildingState::new(20.0),
                    tank_geom,
                    tank,
                    dhw: DhwTapping::new(cfg.seed ^ (b as u64).wrapping_mul(0x9e3779b97f4a7c15)),
                    aperture_m2: SOLAR_APERTURE_M2 * jitter_rng.gen_range(0.7..1.3),
                    pel_scale: jitter_rng.gen_range(0.7..1.3),
                    valve_pos: 0.0,
                    charge_hyst_on: false,
                    cleared_heat: false,
                    cleared_charge: false,
                    want_heat: false,
                    want_charge: false,
                    q_sh_des: 0.0,
                    q_dhw_des: 0.0,
                    q_charge_des: 0.0,
                    q_sec_des: 0.0,
                    dhw_kw: 0.0,
                }
            })
            .collect();

        let sum_a_piv = units.iter().map(|u| u.params.a_piv).sum();
        let sum_b_piv = units.iter().map(|u| u.params.b_piv).sum();
        let sum_aperture = units.iter().map(|u| u.aperture_m2).sum();
        let sum_pel = units.iter().map(|u| u.pel_scale).sum();

        let central_geom = with_central.then(|| TankGeometry::central(central_volume_l));
        let central = central_geom.as_ref().map(|g| TankState::uniform(g, 60.0));

        let thermo = ThermalNetwork::new(&graph, 50.0, 30.0);
        let arrival = vec![50.0; n];
        Ok(Self {
            cfg,
            weather,
            prices,
            mode,
            graph,
            thermo,
            units,
            chp: ChpParams::default(),
            boiler: BoilerParams::default(),
            plant: PlantState::default(),
            plant_volume_c: 60.0,
            central_geom,
            central,
            central_hyst_on: false,
            pi: PiController::default(),
            plan: None,
            plan_block: 0,
            pump_head_pa: 1.5e5,
            warm_pressures: None,
            arrival_c: arrival,
            plant_return_c: 35.0,
            t_a_24h: 6.0,
            block_measured_kwh: 0.0,
            level_gain_b: 1.0,
            level_gain_w: 1.0,
            block_real_b_kwh: 0.0,
            block_real_w_kwh: 0.0,
            cleared_cap_b_kw: 0.0,
            cleared_cap_w_kw: 0.0,
            directive: SourceSplit::default(),
            central_target_kw: 0.0,
            sum_a_piv,
            sum_b_piv,
            sum_aperture,
            sum_pel,
        })
    }

    fn ambient(&self, t_abs_h: f64) -> (f64, f64, f64) {
        (
            sample_hourly(&self.weather.t_ambient_c, t_abs_h),
            sample_hourly(&self.weather.wind_ms, t_abs_h),
            sample_hourly(&self.weather.solar_kw_m2, t_abs_h),
        )
    }

    fn price(&self, t_abs_h: f64) -> f64 {
        sample_hourly(&self.prices.eur_mwh, t_abs_h)
    }

    fn pel_kw(&self, t_abs_h: f64) -> f64 {
        PEL_SHAPE[(t_abs_h.rem_euclid(24.0)) as usize % 24]
    }

    /// Aggregate known gains of the whole cluster, kW.
    fn aggregate_gains_kw(&self, t_abs_h: f64) -> f64 {
        let (_, wind, solar) = self.ambient(t_abs_h);
        self.sum_a_piv * wind
            + self.sum_b_piv
            + solar * self.sum_aperture
            + self.pel_kw(t_abs_h) * self.sum_pel
    }

    fn mean_t_i(&self) -> f64 {
        self.units.iter().map(|u| u.state.t_i_c).sum::<f64>() / self.units.len() as f64
    }

    fn mean_t_e(&self) -> f64 {
        self.units.iter().map(|u| u.state.t_e_c).sum::<f64>() / self.units.len() as f64
    }

    /// Mean storage temperature over the flexible tank population.
    fn tank_mean_c(&self) -> f64 {
        if let Some(central) = &self.central {
            return central.mean_c();
        }
        let tanks: Vec<f64> = self
            .units
            .iter()
            .filter_map(|u| u.tank.as_ref().map(|t| t.mean_c()))
            .collect();
        if tanks.is_empty() {
            f64::NAN
        } else {
            tanks.iter().sum::<f64>() / tanks.len() as f64
        }
    }

    /// Control round at a block boundary. Returns the planner trace row for
    /// active modes.
    fn control_round(&mut self, now_s: f64, t_abs_h: f64, block: usize) -> Option<PlannerRow> {
        let block_h = self.cfg.control_step_s / 3600.0;
        let measured_kw = self.block_measured_kwh / block_h;
        self.block_measured_kwh = 0.0;

        let Mode::Active {
            bmodel,
            tmodel,
            offtake_bins,
            tank_band_hi_c,
        } = &self.mode
        else {
            return None;
        };
        let comfort = self.cfg.mpc.comfort_band_c;
        let tank_band = (self.cfg.mpc.tank_band_c.0, *tank_band_hi_c);
        let gas = self.cfg.economics.gas_eur_mwh;

        // Adapt the bid levels: devices deliver less than their corner
        // estimate as they soak within a block, so the levels carry an
        // exponentially averaged realized-to-bid gain per device class.
        if self.cleared_cap_b_kw > 1.0 {
            let ratio = (self.block_real_b_kwh / block_h) / self.cleared_cap_b_kw;
            self.level_gain_b = (0.7 * self.level_gain_b + 0.3 * ratio).clamp(0.3, 1.2);
        }
        if self.cleared_cap_w_kw > 1.0 {
            let ratio = (self.block_real_w_kwh / block_h) / self.cleared_cap_w_kw;
            self.level_gain_w = (0.7 * self.level_gain_w + 0.3 * ratio).clamp(0.3, 1.2);
        }
        self.block_real_b_kwh = 0.0;
        self.block_real_w_kwh = 0.0;

        // Build the device bids; their level sums double as the absorption
        // capacity the planner may count on per device class.
        let curve = HeatingCurve::default();
        let t_hin_set = curve.setpoint_c(self.t_a_24h);
        let mut bids: Vec<BidFunction> = Vec::with_capacity(self.units.len() * 2);
        let mut unit_bid_idx: Vec<(Option<usize>, Option<usize>)> =
            Vec::with_capacity(self.units.len());
        let mut cap_b_kw = 0.0;
        let mut cap_w_kw = 0.0;
        if self.central.is_none() {
            for u in &self.units {
                let mut heat_idx = None;
                let mut charge_idx = None;
                // Building thermal mass device.
                let soc = ((u.state.t_i_c - comfort.0) / (comfort.1 - comfort.0)).clamp(0.0, 1.0);
                let level =
                    ((t_hin_set - u.state.t_hout_c) / u.params.r_h).max(0.0) * self.level_gain_b;
                let soc = if u.dhw_kw > 0.0 { 0.0 } else { soc };
                if level > 0.0 {
                    heat_idx = Some(bids.len());
                    bids.push(build_bid(soc, level));
                    cap_b_kw += level;
                }
                // Storage device.
                if let Some(tank) = &u.tank {
                    let soc_t = u.tank_soc(tank_band);
                    let soc_t = if u.dhw_kw > 0.0 { 0.0 } else { soc_t };
                    let bottom = tank.bottom_c();
                    let arrival = self.arrival_c[unit_bid_idx.len()];
                    let level = (TANK_CHARGE_FLOW_KG_S * CP_WATER_KJ_KG_K * (arrival - bottom))
                        .max(0.5)
                        * self.level_gain_w;
                    charge_idx = Some(bids.len());
                    bids.push(build_bid(soc_t, level));
                    cap_w_kw += level;
                }
                unit_bid_idx.push((heat_idx, charge_idx));
            }
        }

        // Replan on schedule.
        let horizon = (self.cfg.mpc.horizon_h / block_h).round() as usize;
        if self.plan.is_none() || (block - self.plan_block) >= self.cfg.mpc.replan_blocks {
            let mut lambda = Vec::with_capacity(horizon);
            let mut t_out = Vec::with_capacity(horizon);
            let mut q_a = Vec::with_capacity(horizon);
            let mut offtake = Vec::with_capacity(horizon);
            for k in 0..horizon {
                let th = t_abs_h + k as f64 * block_h;
                lambda.push(effective_heat_cost_eur_mwh(
                    &self.chp,
                    gas,
                    self.price(th),
                    40.0,
                ));
                t_out.push(sample_hourly(&self.weather.t_ambient_c, th));
                q_a.push(self.aggregate_gains_kw(th));
                let bin = ((th.rem_euclid(24.0)) / block_h) as usize % offtake_bins.len().max(1);
                offtake.push(offtake_bins.get(bin).copied().unwrap_or(0.0));
            }
            let plan_cfg = PlanConfig {
                horizon_steps: horizon,
                dt_h: block_h,
                alpha_eur_per_kw: self.cfg.mpc.alpha_eur_per_kw,
                p_max_kw: self.chp.heat_max_kw(40.0) + self.boiler.out_max_kw(40.0),
                p_b_max_kw: if self.central.is_some() { f64::INFINITY } else { cap_b_kw },
                p_w_max_kw: if self.central.is_some() { f64::INFINITY } else { cap_w_kw },
                chp_tier_kw: self.chp.heat_max_kw(40.0),
                backup_cost_eur_mwh: boiler_heat_cost_eur_mwh(&self.boiler, gas, 600.0, 40.0),
                comfort_band_c: comfort,
                tank_band_c: tank_band,
                slack_penalty: 1e3,
            };
            let inputs = PlanInputs {
                lambda_eur_mwh: lambda,
                t_out_c: t_out,
                q_a_kw: q_a.clone(),
                q_m_kw: q_a,
                offtake_kw: offtake,
                t_a0_c: self.mean_t_i(),
                t_m0_c: self.mean_t_e(),
                t_s0_c: if self.central.is_some() || bmodel.is_none() || tmodel.is_some() {
                    self.tank_mean_c()
                } else {
                    60.0
                },
            };
            if let Ok(p) = plan(bmodel.as_ref(), tmodel.as_ref(), &plan_cfg, &inputs) {
                self.plan = Some(p);
                self.plan_block = block;
            }
        }

        let idx = block - self.plan_block;
        let (p_star, p_b_star, p_w_star) = self
            .plan
            .as_ref()
            .map(|p| {
                let i = idx.min(p.p_star_kw.len() - 1);
                (p.p_star_kw[i], p.p_b_kw[i], p.p_w_kw[i])
            })
            .unwrap_or((measured_kw, 0.0, 0.0));

        let spot = self.price(t_abs_h);
        let lambda_now = effective_heat_cost_eur_mwh(&self.chp, gas, spot, 40.0);

        if self.central.is_some() {
            // Central storage: no market, the PI trims plant production.
            let u = self
                .pi
                .trim(p_star, measured_kw, 0.0, self.chp.heat_max_kw(40.0) + self.boiler.out_max_kw(40.0));
            self.central_target_kw = u;
            self.directive =
                select_source(&self.chp, &self.boiler, &self.plant, u, spot, gas, self.plant_return_c);
            return Some(PlannerRow {
                t_s: now_s,
                lambda_eur_mwh: lambda_now,
                p_star_kw: p_star,
                p_b_star_kw: p_b_star,
                p_w_star_kw: p_w_star,
                p_r_clear: f64::NAN,
                u_pi_kw: u,
                measured_kw,
            });
        }

        let agg = aggregate(&bids);
        let u_pi = self
            .pi
            .trim(p_star, measured_kw, 0.0, agg.total_kw());
        let p_r = clear_market(&agg, u_pi);
        self.cleared_cap_b_kw = 0.0;
        self.cleared_cap_w_kw = 0.0;
        for (u, (heat_idx, charge_idx)) in self.units.iter_mut().zip(&unit_bid_idx) {
            u.cleared_heat = heat_idx.map(|i| bids[i].value(p_r) > 0.0).unwrap_or(false);
            u.cleared_charge = charge_idx.map(|i| bids[i].value(p_r) > 0.0).unwrap_or(false);
            if u.cleared_heat {
                self.cleared_cap_b_kw += heat_idx.map(|i| bids[i].level_kw).unwrap_or(0.0);
            }
            if u.cleared_charge {
                self.cleared_cap_w_kw += charge_idx.map(|i| bids[i].level_kw).unwrap_or(0.0);
            }
        }

        self.directive = select_source(
            &self.chp,
            &self.boiler,
            &self.plant,
            u_pi,
            spot,
            gas,
            self.plant_return_c,
        );

        Some(PlannerRow {
            t_s: now_s,
            lambda_eur_mwh: lambda_now,
            p_star_kw: p_star,
            p_b_star_kw: p_b_star,
            p_w_star_kw: p_w_star,
            p_r_clear: p_r,
            u_pi_kw: u_pi,
            measured_kw,
        })
    }

    /// Building-local control: heating and charging intents plus the valve
    /// position for the coming step.
    fn local_control(&mut self, dist: &[Disturbances]) {
        let active = matches!(self.mode, Mode::Active { .. }) && self.central.is_none();
        let comfort = self.cfg.mpc.comfort_band_c;
        let tank_band = self.cfg.mpc.tank_band_c;
        let setpoints = ThermostatSetpoints::default();
        let curve = HeatingCurve::default();

        for (b, unit) in self.units.iter_mut().enumerate() {
            let arrival = self.arrival_c[b];
            let d = &dist[b];
            unit.dhw_kw = d.dhw_kw;

            // Space heating intent.
            let heat_on = if active {
                if unit.state.t_i_c < comfort.0 {
                    true
                } else if unit.state.t_i_c > comfort.1 {
                    false
                } else {
                    unit.cleared_heat
                }
            } else {
                building::reference_thermostat(&unit.params, &unit.state, &setpoints, d, arrival)
                    .heating_on
            };
            unit.want_heat = heat_on;
            unit.state.heating_on = heat_on;

            // Storage charging intent.
            if let Some(tank) = &unit.tank {
                let soc = state_of_charge(tank, tank_band.0, tank_band.1);
                let charge_on = if active {
                    if tank.top_c() < TANK_TOP_FLOOR_C {
                        true
                    } else if tank.mean_c() > tank_band.1 - 2.0 {
                        false
                    } else {
                        unit.cleared_charge
                    }
                } else {
                    // Local hysteresis in the reference and fitting runs,
                    // on temperatures the supply level can actually reach.
                    let mut on = unit.charge_hyst_on;
                    if tank.mean_c() < 48.0 || tank.top_c() < TANK_TOP_FLOOR_C {
                        on = true;
                    } else if tank.mean_c() > 56.0 {
                        on = false;
                    }
                    unit.charge_hyst_on = on;
                    on
                };
                let _ = soc;
                unit.want_charge = charge_on;
            } else {
                unit.want_charge = false;
            }

            // Desired flows on the network connection.
            let t_hin_set = curve.setpoint_c(d.t_a_24h_c);
            let mut q_service = 0.0;
            unit.q_sh_des = 0.0;
            unit.q_dhw_des = 0.0;
            unit.q_charge_des = 0.0;
            unit.q_sec_des = 0.0;
            match &unit.tank_geom {
                None => {
                    if unit.want_heat {
                        let cap = ((t_hin_set - unit.state.t_hout_c) / unit.params.r_h).max(0.0);
                        unit.q_sh_des =
                            building::primary_flow_for(cap, arrival, unit.state.t_hout_c);
                        q_service += unit.q_sh_des;
                    }
                    if d.dhw_kw > 0.0 {
                        unit.q_dhw_des = building::primary_flow_for(d.dhw_kw, arrival, COLD_FEED_C);
                        q_service += unit.q_dhw_des;
                    }
                }
                Some(geom) => {
                    if unit.want_charge {
                        unit.q_charge_des = TANK_CHARGE_FLOW_KG_S;
                        q_service += unit.q_charge_des;
                    }
                    match geom.variant {
                        TankVariant::Open => {
                            // Heating circuit draws from the vessel.
                            if unit.want_heat {
                                let top = unit.tank.as_ref().unwrap().top_c();
                                let cap =
                                    ((t_hin_set - unit.state.t_hout_c) / unit.params.r_h).max(0.0);
                                unit.q_sec_des = building::primary_flow_for(
                                    cap,
                                    top,
                                    unit.state.t_hout_c,
                                );
                            }
                        }
                        _ => {
                            // Space heating straight from the network.
                            if unit.want_heat {
                                let cap =
                                    ((t_hin_set - unit.state.t_hout_c) / unit.params.r_h).max(0.0);
                                unit.q_sh_des = building::primary_flow_for(
                                    cap,
                                    arrival,
                                    unit.state.t_hout_c,
                                );
                                q_service += unit.q_sh_des;
                            }
                        }
                    }
                }
            }
            // A cold stagnant service pipe reports an arrival temperature
            // too low to transfer heat; open a flush flow so fresh supply
            // water reaches the substation.
            let wants_water = unit.want_heat || unit.want_charge || d.dhw_kw > 0.0;
            let mut q_service = q_service;
            if wants_water && q_service < 0.02 {
                q_service = 0.02;
            }
            let q_service = q_service.min(building::MAX_PRIMARY_FLOW_KG_S);

            // Valve position from the desired flow and the last known local
            // differential pressure.
            if q_service <= 1e-6 {
                unit.valve_pos = 0.0;
            } else {
                let dp = self
                    .warm_pressures
                    .as_ref()
                    .map(|p| p[self.graph.building_tap(b)])
                    .unwrap_or(self.graph.dp_setpoint_pa)
                    .max(1000.0);
                let fixed = self.graph.edges[self.graph.service_edges[b]].fixed_k;
                let k_needed = (dp / (q_service * q_service) - fixed).max(VALVE_OPEN_K);
                unit.valve_pos = (VALVE_OPEN_K / k_needed).sqrt().clamp(0.02, 1.0);
            }
        }
    }

    /// One global step. `t_abs_h` is the absolute hour in the input series.
    fn step(&mut self, now_s: f64, t_abs_h: f64, fit: Option<&mut FitCollector>) -> Result<StepOutcome> {
        let dt_s = self.cfg.step_s;
        let dt_h = dt_s / 3600.0;
        let (t_a, wind, solar) = self.ambient(t_abs_h);
        let price = self.price(t_abs_h);
        // 24 h mean ambient as an exponential moving average.
        self.t_a_24h += (t_a - self.t_a_24h) * dt_s / 86_400.0;

        let dist: Vec<Disturbances> = {
            let pel = self.pel_kw(t_abs_h);
            self.units
                .iter_mut()
                .map(|u| Disturbances {
                    t_a_c: t_a,
                    t_a_24h_c: self.t_a_24h,
                    wind_ms: wind,
                    solar_kw: solar * u.aperture_m2,
                    p_el_kw: pel * u.pel_scale,
                    dhw_kw: u.dhw.draw_kw(t_abs_h * 3600.0, dt_s) * self.cfg.dhw_scale,
                })
                .collect()
        };

        self.local_control(&dist);

        // Hydraulics.
        let valve_k: Vec<f64> = self.units.iter().map(|u| valve_k_from_pos(u.valve_pos)).collect();
        let (flows, head) = solve_flows_dp_controlled(
            &self.graph,
            &valve_k,
            self.pump_head_pa,
            self.warm_pressures.as_deref(),
        )
        .map_err(|e| Error::Aborted {
            t_s: now_s,
            module: "hydronet",
            source: Box::new(e),
        })?;
        self.pump_head_pa = head;
        self.warm_pressures = Some(flows.node_pressure_pa.clone());
        let q_net = flows.source_flow(&self.graph).max(0.0);
        let pump_el_kw = q_net * head / crate::consts::RHO_WATER_KG_M3 / 1000.0
            / self.cfg.economics.pump_efficiency;

        // Supply-side temperature propagation. A central buffer is tapped
        // through an attemperating shunt: the network gets the heating-curve
        // setpoint, not the raw tank top.
        let plant_supply_c = match &self.central {
            Some(tank) => tank.top_c().min(plant_supply_setpoint_c(self.t_a_24h)),
            None => self.plant_volume_c,
        };
        let supply_pass = self
            .thermo
            .propagate_supply(&self.graph, &flows, plant_supply_c, GROUND_TEMP_C, now_s, dt_s)
            .map_err(|e| Error::Aborted {
                t_s: now_s,
                module: "thermonet",
                source: Box::new(e),
            })?;

        // Buildings and local tanks.
        let mut returns = vec![0.0; self.units.len()];
        let mut delivered_kw = 0.0;
        let mut flexible_kw = 0.0;
        let mut p_b_kw = 0.0;
        let mut p_w_kw = 0.0;
        let mut offtake_kw = 0.0;
        let mut local_tank_loss_kw = 0.0;
        let mut dhw_unserved_kw = 0.0;

        for (b, unit) in self.units.iter_mut().enumerate() {
            let arrival = supply_pass.building_temps_c[b];
            self.arrival_c[b] = arrival;
            let q_service = flows.building_flow(&self.graph, b).max(0.0);
            let d = &dist[b];

            match unit.tank_geom.clone() {
                None => {
                    let r = building::step(&unit.params, &mut unit.state, d, arrival, q_service, dt_s);
                    returns[b] = r.return_temp_c;
                    delivered_kw += r.heat_drawn_kw();
                    flexible_kw += r.heat_sh_kw;
                    p_b_kw += r.heat_sh_kw;
                    if unit.cleared_heat {
                        self.block_real_b_kwh += r.heat_sh_kw * dt_h;
                    }
                    dhw_unserved_kw += r.dhw_shortfall_kw;
                }
                Some(geom) => {
                    // Split the achieved service flow over the desired uses;
                    // the components always sum to the achieved flow so the
                    // return-temperature mix is exactly consistent with the
                    // heat drawn.
                    let (q_charge, q_direct) = match geom.variant {
                        TankVariant::Open => (q_service, 0.0),
                        _ => {
                            let want = unit.q_sh_des + unit.q_charge_des;
                            let q_charge = if want > 1e-9 {
                                q_service * unit.q_charge_des / want
                            } else {
                                0.0
                            };
                            (q_charge, (q_service - q_charge).max(0.0))
                        }
                    };
                    let tank = unit.tank.as_mut().expect("geometry implies state");

                    let (r, building_flow) = match geom.variant {
                        TankVariant::Open => {
                            let top = tank.top_c();
                            let q_sec = unit.q_sec_des;
                            let mut d2 = *d;
                            d2.dhw_kw = 0.0;
                            let r = building::step(&unit.params, &mut unit.state, &d2, top, q_sec, dt_s);
                            (r, q_sec)
                        }
                        _ => {
                            let mut d2 = *d;
                            d2.dhw_kw = 0.0;
                            let r = building::step(
                                &unit.params,
                                &mut unit.state,
                                &d2,
                                arrival,
                                q_direct,
                                dt_s,
                            );
                            (r, q_direct)
                        }
                    };

                    // Hot water from the vessel.
                    let top = tank.top_c();
                    let mut discharges = Vec::with_capacity(2);
                    let mut dhw_served = 0.0;
                    if d.dhw_kw > 0.0 && top > COLD_FEED_C + 5.0 {
                        let (eff, ret) = match geom.variant {
                            // The open vessel serves hot water through an
                            // exchanger; the others store potable water.
                            TankVariant::Open => (
                                SUBSTATION_EFFECTIVENESS,
                                COLD_FEED_C
                                    + (1.0 - SUBSTATION_EFFECTIVENESS) * (top - COLD_FEED_C),
                            ),
                            _ => (1.0, COLD_FEED_C),
                        };
                        let q_draw = (d.dhw_kw / (eff * CP_WATER_KJ_KG_K * (top - COLD_FEED_C)))
                            .min(0.25);
                        dhw_served = eff * q_draw * CP_WATER_KJ_KG_K * (top - COLD_FEED_C);
                        discharges.push(Stream {
                            flow_kg_s: q_draw,
                            temp_c: ret,
                        });
                    }
                    dhw_unserved_kw += (d.dhw_kw - dhw_served).max(0.0);

                    if matches!(geom.variant, TankVariant::Open) && building_flow > 0.0 {
                        discharges.push(Stream {
                            flow_kg_s: building_flow,
                            temp_c: r.return_temp_c,
                        });
                    }

                    let tr = tank_step(
                        &geom,
                        tank,
                        Stream {
                            flow_kg_s: q_charge,
                            temp_c: arrival,
                        },
                        &discharges,
                        INDOOR_AMBIENT_C,
                        dt_s,
                    );
                    local_tank_loss_kw += tr.loss_kw;
                    offtake_kw += tr.discharge_heat_kw;
                    p_w_kw += tr.charge_heat_kw;
                    p_b_kw += r.heat_sh_kw;
                    if unit.cleared_heat {
                        self.block_real_b_kwh += r.heat_sh_kw * dt_h;
                    }
                    if unit.cleared_charge {
                        self.block_real_w_kwh += tr.charge_heat_kw * dt_h;
                    }

                    // Network-side bookkeeping.
                    let direct = match geom.variant {
                        TankVariant::Open => 0.0,
                        _ => r.heat_drawn_kw(),
                    };
                    delivered_kw += direct + tr.charge_heat_kw;
                    flexible_kw += direct + tr.charge_heat_kw;
                    returns[b] = if q_service > 1e-9 {
                        (r.return_temp_c * q_direct + tr.charge_return_c * q_charge) / q_service
                    } else {
                        arrival
                    };
                }
            }
        }

        // Return-side propagation.
        let return_pass = self
            .thermo
            .propagate_return(&self.graph, &flows, &returns, GROUND_TEMP_C, now_s, dt_s)
            .map_err(|e| Error::Aborted {
                t_s: now_s,
                module: "thermonet",
                source: Box::new(e),
            })?;
        self.plant_return_c = return_pass.plant_temp_c;
        let pipe_loss_kw = supply_pass.loss_kw + return_pass.loss_kw;
        let (supply_rows, return_rows) = if self.cfg.pipe_trace {
            (supply_pass.pipe_rows, return_pass.pipe_rows)
        } else {
            (Vec::new(), Vec::new())
        };

        // Plant and plant-side storage.
        let (plant_step, central_loss_kw) = self.plant_side(q_net, t_abs_h, price, dt_s)?;

        // Measured flexible consumption feeds the PI loop. With a central
        // buffer the plant production itself is the controlled quantity.
        let measured = if self.central.is_some() {
            plant_step.heat_total_kw()
        } else {
            flexible_kw
        };
        self.block_measured_kwh += measured * dt_h;

        if let Some(fit) = fit {
            fit.accumulate(
                p_b_kw,
                if self.central.is_some() {
                    plant_step.heat_total_kw()
                } else {
                    p_w_kw
                },
                self.aggregate_gains_kw(t_abs_h),
                if self.central.is_some() {
                    delivered_kw
                } else {
                    offtake_kw
                },
                t_a,
            );
        }

        Ok(StepOutcome {
            plant: plant_step,
            supply_rows,
            return_rows,
            delivered_kw,
            pipe_loss_kw,
            local_tank_loss_kw,
            central_tank_loss_kw: central_loss_kw,
            pump_el_kw,
            dhw_unserved_kw,
            supply_c: plant_supply_c,
            return_c: self.plant_return_c,
            price,
            ambient_c: t_a,
            flexible_kw: measured,
        })
    }

    /// Plant dispatch and the plant-side storage (header volume, central
    /// tank). Returns the plant step and the central tank loss.
    fn plant_side(
        &mut self,
        q_net: f64,
        t_abs_h: f64,
        price: f64,
        dt_s: f64,
    ) -> Result<(PlantStep, f64)> {
        let active = matches!(self.mode, Mode::Active { .. });

        if let (Some(geom), Some(tank)) = (&self.central_geom, &mut self.central) {
            // Plant charges the central buffer; the network draws from it.
            let t_set = self.cfg.mpc.tank_band_c.1 + 5.0;
            let target = if active {
                self.central_target_kw
            } else {
                // Hysteresis charging in reference-control runs.
                let soc = state_of_charge(tank, self.cfg.mpc.tank_band_c.0, self.cfg.mpc.tank_band_c.1);
                let need = plant_supply_setpoint_c(self.t_a_24h);
                if soc < TANK_SOC_ON || tank.top_c() < need {
                    self.central_hyst_on = true;
                } else if soc > TANK_SOC_OFF {
                    self.central_hyst_on = false;
                }
                if self.central_hyst_on {
                    0.8 * self.chp.heat_max_kw(tank.bottom_c())
                } else {
                    0.0
                }
            };

            let dt_chg = (self.plant_volume_c - tank.bottom_c()).max(2.0);
            let q_charge = (target / (CP_WATER_KJ_KG_K * dt_chg)).clamp(0.0, 30.0);
            // Attemperating shunt on the discharge side: draw only the tank
            // flow needed to lift the return to the network setpoint, the
            // rest recirculates.
            let t_set_net = plant_supply_setpoint_c(self.t_a_24h);
            let top = tank.top_c();
            let t_ret = self.plant_return_c;
            let q_tank = if top > t_ret + 0.5 {
                (q_net * (t_set_net.min(top) - t_ret) / (top - t_ret)).clamp(0.0, q_net)
            } else {
                q_net
            };
            let tr = tank_step(
                geom,
                tank,
                Stream {
                    flow_kg_s: q_charge,
                    temp_c: self.plant_volume_c,
                },
                &[Stream {
                    flow_kg_s: q_tank,
                    temp_c: t_ret,
                }],
                15.0,
                dt_s,
            );

            // Header volume between plant and charge loop.
            let m_cp = PLANT_VOLUME_KG * CP_WATER_KJ_KG_K;
            let t_in = tr.charge_return_c;
            let mut demand = q_charge * CP_WATER_KJ_KG_K * (t_set - t_in)
                + m_cp * (t_set - self.plant_volume_c) / PLANT_CONTROL_TAU_S;
            demand = demand.clamp(0.0, q_charge * CP_WATER_KJ_KG_K * (PLANT_SUPPLY_MAX_C - t_in)
                + m_cp * (PLANT_SUPPLY_MAX_C - self.plant_volume_c) / dt_s);

            self.plant.since_switch_s += dt_s;
            self.plant.supply_setpoint_c = t_set;
            let want_chp = if active {
                self.directive.wants_chp()
            } else {
                demand > 0.0
            };
            let step = dispatch_with_commitment(
                &self.chp,
                &self.boiler,
                &mut self.plant,
                demand,
                t_in,
                want_chp,
            );

            // Volume energy balance (charge loop circulates through it).
            let p_kw = step.heat_total_kw();
            if q_charge > 1e-9 {
                let tau = PLANT_VOLUME_KG / q_charge;
                let t_eq = t_in + p_kw / (q_charge * CP_WATER_KJ_KG_K);
                self.plant_volume_c = t_eq + (self.plant_volume_c - t_eq) * (-dt_s / tau).exp();
            } else {
                self.plant_volume_c += p_kw * dt_s / m_cp;
            }
            self.plant_volume_c = self.plant_volume_c.min(PLANT_SUPPLY_MAX_C);
            return Ok((step, tr.loss_kw));
        }

        // No central buffer: the plant holds the header volume at the
        // network supply setpoint while the network circulates through it.
        let t_set = plant_supply_setpoint_c(self.t_a_24h);
        let m_cp = PLANT_VOLUME_KG * CP_WATER_KJ_KG_K;
        let mut demand = q_net * CP_WATER_KJ_KG_K * (t_set - self.plant_return_c)
            + m_cp * (t_set - self.plant_volume_c) / PLANT_CONTROL_TAU_S;
        demand = demand.clamp(
            0.0,
            (q_net * CP_WATER_KJ_KG_K * (PLANT_SUPPLY_MAX_C - self.plant_return_c)).max(0.0)
                + m_cp * (PLANT_SUPPLY_MAX_C - self.plant_volume_c) / dt_s,
        );

        self.plant.since_switch_s += dt_s;
        self.plant.supply_setpoint_c = t_set;
        let want_chp = if active {
            self.directive.wants_chp() && demand > 0.0
        } else {
            demand > 0.0
        };
        let step = dispatch_with_commitment(
            &self.chp,
            &self.boiler,
            &mut self.plant,
            demand,
            self.plant_return_c,
            want_chp,
        );

        let p_kw = step.heat_total_kw();
        if q_net > 1e-9 {
            let tau = PLANT_VOLUME_KG / q_net;
            let t_eq = self.plant_return_c + p_kw / (q_net * CP_WATER_KJ_KG_K);
            self.plant_volume_c = t_eq + (self.plant_volume_c - t_eq) * (-dt_s / tau).exp();
        } else {
            self.plant_volume_c += p_kw * dt_s / m_cp;
        }
        self.plant_volume_c = self.plant_volume_c.min(PLANT_SUPPLY_MAX_C);
        let _ = t_abs_h;
        let _ = price;
        Ok((step, 0.0))
    }

    /// Stored energy on the network side (pipes, header volume, central
    /// tank), kWh — the closure term.
    fn network_storage_kwh(&self) -> f64 {
        let mut e = self.thermo.energy_kwh();
        e += PLANT_VOLUME_KG * crate::consts::CP_WATER_KWH_KG_K * self.plant_volume_c;
        if let (Some(geom), Some(tank)) = (&self.central_geom, &self.central) {
            e += tank.energy_kwh(geom);
        }
        e
    }
}

/// Drive one window of the simulation. Steps before `score_from_s` warm the
/// state up without being recorded.
struct WindowOutcome {
    traces: StepTraces,
    pipe_trace: Vec<String>,
    tank_trace: Vec<String>,
    planner: Vec<PlannerRow>,
    tallies: EnergyTallies,
    t_i_spread_c: f64,
    comfort_min_c: f64,
    comfort_max_c: f64,
    fit: Option<FitCollector>,
}

fn run_window(
    engine: &mut Engine,
    start_h: f64,
    hours: f64,
    score_from_s: f64,
    collect_fit: bool,
) -> Result<WindowOutcome> {
    let dt_s = engine.cfg.step_s;
    let steps = (hours * 3600.0 / dt_s).round() as usize;
    let block_steps = (engine.cfg.control_step_s / dt_s).round() as usize;

    // Initialize the 24 h ambient average from the preceding day.
    let mut t24 = 0.0;
    for k in 0..24 {
        t24 += sample_hourly(&engine.weather.t_ambient_c, (start_h - 24.0 + k as f64).max(0.0));
    }
    engine.t_a_24h = t24 / 24.0;

    let mut fit = collect_fit.then(FitCollector::default);
    let mut traces = StepTraces::default();
    let mut pipe_trace = Vec::new();
    let mut tank_trace = Vec::new();
    let mut planner = Vec::new();
    let mut tallies = EnergyTallies::default();
    let mut spread_acc = 0.0;
    let mut spread_n = 0usize;
    let mut comfort_min_c = f64::INFINITY;
    let mut comfort_max_c = f64::NEG_INFINITY;
    let mut storage_start_kwh = None;
    let dt_h = dt_s / 3600.0;

    for k in 0..steps {
        let now_s = k as f64 * dt_s;
        let t_abs_h = start_h + now_s / 3600.0;
        let scoring = now_s >= score_from_s;

        if k % block_steps == 0 {
            let block = k / block_steps;
            if let Some(fc) = fit.as_mut() {
                let (t_a, t_m, t_s) = (engine.mean_t_i(), engine.mean_t_e(), engine.tank_mean_c());
                fc.snapshot(t_a, t_m, if t_s.is_nan() { 60.0 } else { t_s });
            }
            if let Some(row) = engine.control_round(now_s, t_abs_h, block) {
                if scoring {
                    planner.push(row);
                }
            }
        }

        if scoring && storage_start_kwh.is_none() {
            storage_start_kwh = Some(engine.network_storage_kwh());
        }

        let out = engine.step(now_s, t_abs_h, fit.as_mut()).map_err(|e| match e {
            Error::Aborted { .. } => e,
            other => Error::Aborted {
                t_s: now_s,
                module: "engine",
                source: Box::new(other),
            },
        })?;

        if scoring && engine.cfg.pipe_trace && k % block_steps == 0 {
            let t_rel = now_s - score_from_s;
            for (side, rows) in [("s", &out.supply_rows), ("r", &out.return_rows)] {
                for r in rows.iter() {
                    pipe_trace.push(format!(
                        "{:.0},{}{},{:.2},{:.2},{:.4},{:.4}",
                        t_rel, side, r.edge, r.inlet_c, r.outlet_c, r.flow_kg_s, r.loss_kw
                    ));
                }
            }
        }
        if scoring && engine.cfg.tank_trace && k % block_steps == 0 {
            let t_rel = now_s - score_from_s;
            if let Some(tank) = &engine.central {
                for (l, temp) in tank.layer_temps_c.iter().enumerate() {
                    tank_trace.push(format!("{t_rel:.0},central,{l},{temp:.2}"));
                }
            } else {
                // One vessel of each variant, lowest building id first.
                let mut seen = Vec::new();
                for (b, unit) in engine.units.iter().enumerate() {
                    if let (Some(geom), Some(tank)) = (&unit.tank_geom, &unit.tank) {
                        let tag = std::mem::discriminant(&geom.variant);
                        if !seen.contains(&tag) {
                            seen.push(tag);
                            for (l, temp) in tank.layer_temps_c.iter().enumerate() {
                                tank_trace.push(format!("{t_rel:.0},{b},{l},{temp:.2}"));
                            }
                        }
                    }
                }
            }
        }
        if scoring {
            let production = out.plant.heat_total_kw();
            traces.t_s.push(now_s - score_from_s);
            traces.production_kw.push(production);
            traces.chp_heat_kw.push(out.plant.p_heat_chp_kw);
            traces.boiler_heat_kw.push(out.plant.p_heat_boiler_kw);
            traces.p_el_kw.push(out.plant.p_el_kw);
            traces
                .gas_kw
                .push(out.plant.p_gas_chp_kw + out.plant.p_gas_boiler_kw);
            traces.delivered_kw.push(out.delivered_kw);
            traces.pipe_loss_kw.push(out.pipe_loss_kw);
            traces.supply_c.push(out.supply_c);
            traces.return_c.push(out.return_c);
            traces.price_eur_mwh.push(out.price);
            traces.ambient_c.push(out.ambient_c);
            let mut temps: Vec<f64> = engine.units.iter().map(|u| u.state.t_i_c).collect();
            let stats = TempStats::from_samples(&mut temps);
            comfort_min_c = comfort_min_c.min(stats.min);
            comfort_max_c = comfort_max_c.max(stats.max);
            let var = temps.iter().map(|t| (t - stats.mean).powi(2)).sum::<f64>()
                / temps.len() as f64;
            spread_acc += var.sqrt();
            spread_n += 1;
            traces.t_i.push(stats);
            traces.tank_mean_c.push(engine.tank_mean_c());
            traces.chp_on.push(engine.plant.chp_on);
            traces.f_m_chp.push(if engine.plant.chp_on { engine.plant.chp_f_m } else { 0.0 });
            traces.f_m_boiler.push(engine.plant.boiler_f_m);
            traces.supply_setpoint_c.push(engine.plant.supply_setpoint_c);
            traces.p_gas_chp_kw.push(out.plant.p_gas_chp_kw);
            traces.p_gas_boiler_kw.push(out.plant.p_gas_boiler_kw);

            tallies.produced_kwh += production * dt_h;
            tallies.produced_chp_kwh += out.plant.p_heat_chp_kw * dt_h;
            tallies.produced_boiler_kwh += out.plant.p_heat_boiler_kw * dt_h;
            tallies.gas_chp_kwh += out.plant.p_gas_chp_kw * dt_h;
            tallies.gas_boiler_kwh += out.plant.p_gas_boiler_kw * dt_h;
            tallies.electricity_kwh += out.plant.p_el_kw * dt_h;
            tallies.consumed_kwh += out.delivered_kw * dt_h;
            tallies.pipe_loss_kwh += out.pipe_loss_kw * dt_h;
            tallies.tank_loss_kwh += out.local_tank_loss_kw * dt_h;
            tallies.central_tank_loss_kwh += out.central_tank_loss_kw * dt_h;
            tallies.pump_el_kwh += out.pump_el_kw * dt_h;
            tallies.dhw_unserved_kwh += out.dhw_unserved_kw * dt_h;
        }
        let _ = out.flexible_kw;
    }

    tallies.storage_delta_kwh =
        engine.network_storage_kwh() - storage_start_kwh.unwrap_or(engine.network_storage_kwh());

    Ok(WindowOutcome {
        traces,
        pipe_trace,
        tank_trace,
        planner,
        tallies,
        t_i_spread_c: spread_acc / spread_n.max(1) as f64,
        comfort_min_c,
        comfort_max_c,
        fit,
    })
}

/// Topology edge list and building population dumps for a configuration,
/// as CSV documents.
pub fn describe_artifacts(cfg: &ScenarioConfig) -> Result<(String, String)> {
    let graph = build_topology(&cfg.topology)?;
    let population = building::sample_population(graph.building_count(), cfg.seed);
    let mut csv = String::from("id,r_h,r_ih,r_ie,r_ea,r_ia,c_i,c_h,c_e,design_kw\n");
    for (i, p) in population.iter().enumerate() {
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3}\n",
            i, p.r_h, p.r_ih, p.r_ie, p.r_ea, p.r_ia, p.c_i, p.c_h, p.c_e, p.design_load_kw
        ));
    }
    Ok((graph.edge_list_csv(), csv))
}

/// Resolve the week to simulate and its absolute start hour.
fn resolve_week(cfg: &ScenarioConfig, weather: &WeatherSeries) -> Result<(usize, f64)> {
    let week = match cfg.week {
        WeekSelector::Representative => select_representative_week(weather),
        WeekSelector::Index(w) => w,
    };
    if week >= weather.full_weeks() {
        return Err(Error::config(format!(
            "week {week} outside the input series ({} full weeks)",
            weather.full_weeks()
        )));
    }
    Ok((week, week as f64 * 168.0))
}

/// Load the input profiles, generating the bundled synthetic stand-ins when
/// no files are configured.
pub fn load_inputs(cfg: &ScenarioConfig) -> Result<(WeatherSeries, PriceSeries)> {
    let weather = match &cfg.weather_path {
        Some(p) => load_weather(p)?,
        None => generate_weather(cfg.seed),
    };
    let prices = match &cfg.price_path {
        Some(p) => load_prices(p)?,
        None => generate_prices(cfg.seed),
    };
    Ok((weather, prices))
}

/// Run one scenario end to end: fitting pre-run for active scenarios, then
/// the warmup plus the scored representative week.
pub fn run(cfg: &ScenarioConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let (weather, prices) = load_inputs(cfg)?;
    let (week_index, week_start_h) = resolve_week(cfg, &weather)?;
    let warmup_h = cfg.warmup_days as f64 * 24.0;

    let mut bmodel = None;
    let mut tmodel = None;

    if cfg.scenario.is_active() {
        // Fitting window: pre-run plus a held-out day, ending at the warmup.
        let fit_days = cfg.prerun_days + cfg.holdout_days;
        let fit_start_h = (week_start_h - warmup_h - fit_days as f64 * 24.0).max(0.0);
        let mut engine = Engine::new(cfg, &weather, &prices, Mode::Reference)?;
        let outcome = run_window(
            &mut engine,
            fit_start_h,
            fit_days as f64 * 24.0,
            f64::INFINITY,
            true,
        )?;
        let trace = outcome
            .fit
            .expect("fit collection requested")
            .into_trace(cfg.control_step_s / 3600.0);
        let holdout_steps = cfg.holdout_days * (86_400.0 / cfg.control_step_s) as usize;
        let (train, validation) = trace.split_at_tail(holdout_steps);

        let mut rms = (f64::NAN, f64::NAN);
        if cfg.scenario.uses_building_flexibility() {
            let model = fit_building(&train)?;
            rms.0 = crate::dispatch::building_one_step_rms(&model, &validation);
            bmodel = Some(model);
        }
        if cfg.scenario.uses_storage() {
            let model = fit_tank(&train)?;
            rms.1 = crate::dispatch::tank_one_step_rms(&model, &validation);
            tmodel = Some(model);
        }

        // Time-of-day off-take forecast bins from the training window.
        let blocks_per_day = (86_400.0 / cfg.control_step_s) as usize;
        let mut bins = vec![0.0; blocks_per_day];
        let mut counts = vec![0usize; blocks_per_day];
        let first_block = (fit_start_h * 3600.0 / cfg.control_step_s).round() as usize;
        for (k, v) in train.offtake.iter().enumerate() {
            let bin = (first_block + k) % blocks_per_day;
            bins[bin] += v;
            counts[bin] += 1;
        }
        for (b, c) in bins.iter_mut().zip(&counts) {
            *b /= (*c).max(1) as f64;
        }

        // The planner's storage ceiling is what charging actually reached
        // in the fitting window, not the nominal band top.
        let tank_band_hi_c = train
            .t_s
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .clamp(cfg.mpc.tank_band_c.0 + 5.0, cfg.mpc.tank_band_c.1)
            + 2.0;
        let mode = Mode::Active {
            bmodel: bmodel.clone(),
            tmodel: tmodel.clone(),
            offtake_bins: bins,
            tank_band_hi_c,
        };
        let mut engine = Engine::new(cfg, &weather, &prices, mode)?;
        let outcome = run_window(
            &mut engine,
            week_start_h - warmup_h,
            warmup_h + 168.0,
            warmup_h * 3600.0,
            false,
        )?;
        return assemble(cfg, week_index, &weather, outcome, bmodel, tmodel, Some(rms));
    }

    let mut engine = Engine::new(cfg, &weather, &prices, Mode::Reference)?;
    let outcome = run_window(
        &mut engine,
        week_start_h - warmup_h,
        warmup_h + 168.0,
        warmup_h * 3600.0,
        false,
    )?;
    assemble(cfg, week_index, &weather, outcome, None, None, None)
}

fn assemble(
    cfg: &ScenarioConfig,
    week_index: usize,
    weather: &WeatherSeries,
    outcome: WindowOutcome,
    building_model: Option<AggregateBuildingModel>,
    tank_model: Option<AggregateTankModel>,
    fit_holdout_rms_c: Option<(f64, f64)>,
) -> Result<SimulationResult> {
    let mut result = SimulationResult {
        scenario: cfg.scenario.as_str().to_string(),
        dt_s: cfg.step_s,
        week_index,
        week_mean_ambient_c: weather.week_mean_c(week_index),
        traces: outcome.traces,
        pipe_trace: outcome.pipe_trace,
        tank_trace: outcome.tank_trace,
        planner: outcome.planner,
        tallies: outcome.tallies,
        building_model,
        tank_model,
        fit_holdout_rms_c,
        profit: Default::default(),
        t_i_spread_c: outcome.t_i_spread_c,
        comfort_min_c: outcome.comfort_min_c,
        comfort_max_c: outcome.comfort_max_c,
    };
    result.profit = settle(&result.settlement_inputs(), &cfg.economics)?;
    Ok(result)
}
