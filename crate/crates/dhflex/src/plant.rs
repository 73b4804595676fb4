//! CHP and gas-boiler black-box models and the heat-driven plant controller.
//!
//! Both units are quasi-static polynomial fits to supplier part-load data.
//! The CHP additionally carries minimum on/off times, so the plant state
//! tracks the time since the last switch event.

use serde::{Deserialize, Serialize};

use crate::consts::{HeatingCurve, PLANT_CURVE_OFFSET_K};
use crate::error::{Error, Result};

/// CHP parameters: nominal electrical size, modulation limits, switch timers
/// and the gas/heat part-load polynomial coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChpParams {
    pub p_el_max_kw: f64,
    pub f_m_min: f64,
    pub min_on_s: f64,
    pub min_off_s: f64,
    pub alpha_gas: f64,
    pub beta_gas: f64,
    pub gamma_gas: f64,
    pub alpha_heat: f64,
    pub beta_heat: f64,
    pub gamma_heat: f64,
    pub delta_heat: f64,
    pub epsilon_heat: f64,
    pub zeta_heat: f64,
    pub eta_heat: f64,
}

impl Default for ChpParams {
    fn default() -> Self {
        Self {
            p_el_max_kw: 600.0,
            f_m_min: 0.4,
            min_on_s: 15.0 * 60.0,
            min_off_s: 15.0 * 60.0,
            alpha_gas: 31.250,
            beta_gas: 1310.75,
            gamma_gas: 181.35,
            alpha_heat: 3.1537e-5,
            beta_heat: -7.4162e-3,
            gamma_heat: -0.3258,
            delta_heat: 704.09,
            epsilon_heat: 6.0633e-4,
            zeta_heat: -0.1848,
            eta_heat: 160.01,
        }
    }
}

/// Gas boiler parameters: nominal gas input, modulation floor and the nested
/// efficiency polynomial coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoilerParams {
    pub p_gas_nom_kw: f64,
    pub f_m_min: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub eta: f64,
    pub theta: f64,
    pub iota: f64,
    pub kappa: f64,
    pub mu: f64,
    pub nu: f64,
}

impl Default for BoilerParams {
    fn default() -> Self {
        Self {
            p_gas_nom_kw: 1100.0,
            f_m_min: 0.1,
            alpha: -7.758e-13,
            beta: -1.119e-10,
            gamma: 3.295e-6,
            delta: 1.195e-10,
            epsilon: 2.911e-8,
            zeta: -4.665e-4,
            eta: -6.067e-9,
            theta: -1.558e-6,
            iota: 1.800e-2,
            kappa: 1.121e-7,
            mu: -1.503e-5,
            nu: 7.675e-1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChpOutput {
    pub p_el_kw: f64,
    pub p_heat_kw: f64,
    pub p_gas_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoilerOutput {
    pub p_out_kw: f64,
    pub p_gas_kw: f64,
    pub efficiency: f64,
}

/// Return temperature range over which the part-load fits are valid, °C.
const T_IN_VALID_C: (f64, f64) = (20.0, 90.0);

impl ChpParams {
    fn a_heat(&self, t_in_c: f64) -> f64 {
        ((self.alpha_heat * t_in_c + self.beta_heat) * t_in_c + self.gamma_heat) * t_in_c
            + self.delta_heat
    }

    fn b_heat(&self, t_in_c: f64) -> f64 {
        (self.epsilon_heat * t_in_c + self.zeta_heat) * t_in_c + self.eta_heat
    }

    /// Heat output at the modulation floor, kW.
    pub fn heat_min_kw(&self, t_in_c: f64) -> f64 {
        let t = t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1);
        self.a_heat(t) * self.f_m_min + self.b_heat(t)
    }

    /// Heat output at full modulation, kW.
    pub fn heat_max_kw(&self, t_in_c: f64) -> f64 {
        let t = t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1);
        self.a_heat(t) + self.b_heat(t)
    }

    /// Modulation factor that produces `target_kw` of heat, unclamped.
    pub fn f_m_for_heat(&self, target_kw: f64, t_in_c: f64) -> f64 {
        let t = t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1);
        (target_kw - self.b_heat(t)) / self.a_heat(t)
    }
}

/// Evaluate the CHP part-load model at modulation `f_m` and return
/// temperature `t_in_c`.
pub fn chp_evaluate(params: &ChpParams, f_m: f64, t_in_c: f64) -> Result<ChpOutput> {
    if !(params.f_m_min..=1.0 + 1e-12).contains(&f_m) {
        return Err(Error::contract(format!(
            "CHP modulation {f_m:.3} outside [{:.2}, 1.00]",
            params.f_m_min
        )));
    }
    let t = t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1);
    Ok(ChpOutput {
        p_el_kw: params.p_el_max_kw * f_m,
        p_heat_kw: params.a_heat(t) * f_m + params.b_heat(t),
        p_gas_kw: (params.alpha_gas * f_m + params.beta_gas) * f_m + params.gamma_gas,
    })
}

impl BoilerParams {
    fn efficiency(&self, p_gas_kw: f64, t_in_c: f64) -> f64 {
        let a = (self.alpha * p_gas_kw + self.beta) * p_gas_kw + self.gamma;
        let b = (self.delta * p_gas_kw + self.epsilon) * p_gas_kw + self.zeta;
        let c = (self.eta * p_gas_kw + self.theta) * p_gas_kw + self.iota;
        let d = (self.kappa * p_gas_kw + self.mu) * p_gas_kw + self.nu;
        ((a * t_in_c + b) * t_in_c + c) * t_in_c + d
    }

    /// Heat output at the modulation floor, kW.
    pub fn out_min_kw(&self, t_in_c: f64) -> f64 {
        let gas = self.p_gas_nom_kw * self.f_m_min;
        self.efficiency(gas, t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1)) * gas
    }

    /// Heat output at full modulation, kW.
    pub fn out_max_kw(&self, t_in_c: f64) -> f64 {
        let gas = self.p_gas_nom_kw;
        self.efficiency(gas, t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1)) * gas
    }
}

/// Evaluate the boiler part-load model at modulation `f_m` and return
/// temperature `t_in_c`.
pub fn boiler_evaluate(params: &BoilerParams, f_m: f64, t_in_c: f64) -> Result<BoilerOutput> {
    if !(params.f_m_min..=1.0 + 1e-12).contains(&f_m) {
        return Err(Error::contract(format!(
            "boiler modulation {f_m:.3} outside [{:.2}, 1.00]",
            params.f_m_min
        )));
    }
    let t = t_in_c.clamp(T_IN_VALID_C.0, T_IN_VALID_C.1);
    let p_gas_kw = params.p_gas_nom_kw * f_m;
    let efficiency = params.efficiency(p_gas_kw, t);
    Ok(BoilerOutput {
        p_out_kw: efficiency * p_gas_kw,
        p_gas_kw,
        efficiency,
    })
}

/// Boiler gas consumption to deliver `target_kw` of heat, allowing sub-minimum
/// outputs by duty cycling at the modulation floor within the step.
pub fn boiler_serve(params: &BoilerParams, target_kw: f64, t_in_c: f64) -> BoilerOutput {
    if target_kw <= 0.0 {
        return BoilerOutput {
            p_out_kw: 0.0,
            p_gas_kw: 0.0,
            efficiency: 0.0,
        };
    }
    let out_min = params.out_min_kw(t_in_c);
    let out_max = params.out_max_kw(t_in_c);
    if target_kw <= out_min {
        // Duty cycle at the floor: average output over the step.
        let eff = params.efficiency(params.p_gas_nom_kw * params.f_m_min, t_in_c);
        return BoilerOutput {
            p_out_kw: target_kw,
            p_gas_kw: target_kw / eff,
            efficiency: eff,
        };
    }
    let target = target_kw.min(out_max);
    // Efficiency varies weakly with gas input, so the fixed point contracts fast.
    let mut f_m = (target / (0.95 * params.p_gas_nom_kw)).clamp(params.f_m_min, 1.0);
    for _ in 0..30 {
        let eff = params.efficiency(params.p_gas_nom_kw * f_m, t_in_c);
        let next = (target / (eff * params.p_gas_nom_kw)).clamp(params.f_m_min, 1.0);
        let done = (next - f_m).abs() < 1e-13;
        f_m = next;
        if done {
            break;
        }
    }
    boiler_evaluate(params, f_m, t_in_c).expect("f_m clamped into range")
}

/// Plant operating state: CHP commitment, modulation levels, switch timer and
/// the current supply setpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantState {
    pub chp_on: bool,
    pub chp_f_m: f64,
    pub boiler_f_m: f64,
    pub since_switch_s: f64,
    pub supply_setpoint_c: f64,
}

impl Default for PlantState {
    fn default() -> Self {
        Self {
            chp_on: false,
            chp_f_m: 0.0,
            boiler_f_m: 0.0,
            // Start with timers expired so the first commitment is free.
            since_switch_s: 1e9,
            supply_setpoint_c: 70.0,
        }
    }
}

impl PlantState {
    pub fn can_start(&self, params: &ChpParams) -> bool {
        self.chp_on || self.since_switch_s >= params.min_off_s
    }

    pub fn can_stop(&self, params: &ChpParams) -> bool {
        !self.chp_on || self.since_switch_s >= params.min_on_s
    }

    fn set_chp(&mut self, on: bool) {
        if self.chp_on != on {
            self.chp_on = on;
            self.since_switch_s = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PlantStep {
    pub p_el_kw: f64,
    pub p_heat_chp_kw: f64,
    pub p_gas_chp_kw: f64,
    pub p_heat_boiler_kw: f64,
    pub p_gas_boiler_kw: f64,
}

impl PlantStep {
    pub fn heat_total_kw(&self) -> f64 {
        self.p_heat_chp_kw + self.p_heat_boiler_kw
    }
}

/// Heat-driven reference dispatch: CHP first, boiler assisting above the CHP
/// maximum and taking over below the CHP modulation floor. Minimum on/off
/// times are enforced; a start blocked by the off-timer is served by the
/// boiler, a stop blocked by the on-timer leaves the CHP at its floor.
pub fn reference_dispatch(
    chp: &ChpParams,
    boiler: &BoilerParams,
    state: &mut PlantState,
    demand_kw: f64,
    t_a_24h_c: f64,
    t_return_c: f64,
    dt_s: f64,
) -> PlantStep {
    state.since_switch_s += dt_s;
    state.supply_setpoint_c =
        HeatingCurve::default().setpoint_c(t_a_24h_c) + PLANT_CURVE_OFFSET_K;

    let demand_kw = demand_kw.max(0.0);
    dispatch_with_commitment(chp, boiler, state, demand_kw, t_return_c, demand_kw > 0.0)
}

/// Shared commitment + modulation logic. `want_chp` expresses whether the
/// caller wants the CHP committed for the current demand.
pub fn dispatch_with_commitment(
    chp: &ChpParams,
    boiler: &BoilerParams,
    state: &mut PlantState,
    demand_kw: f64,
    t_return_c: f64,
    want_chp: bool,
) -> PlantStep {
    let heat_min = chp.heat_min_kw(t_return_c);
    let chp_wanted = want_chp && demand_kw >= heat_min;

    if chp_wanted && !state.chp_on && state.can_start(chp) {
        state.set_chp(true);
    } else if !chp_wanted && state.chp_on && state.can_stop(chp) {
        state.set_chp(false);
    }

    let mut step = PlantStep::default();
    let mut remaining = demand_kw;

    if state.chp_on {
        let f_m = chp.f_m_for_heat(demand_kw, t_return_c).clamp(chp.f_m_min, 1.0);
        let out = chp_evaluate(chp, f_m, t_return_c).expect("f_m clamped into range");
        state.chp_f_m = f_m;
        step.p_el_kw = out.p_el_kw;
        step.p_heat_chp_kw = out.p_heat_kw;
        step.p_gas_chp_kw = out.p_gas_kw;
        remaining = (demand_kw - out.p_heat_kw).max(0.0);
    } else {
        state.chp_f_m = 0.0;
    }

    if remaining > 0.0 {
        let out = boiler_serve(boiler, remaining, t_return_c);
        state.boiler_f_m = out.p_gas_kw / boiler.p_gas_nom_kw;
        step.p_heat_boiler_kw = out.p_out_kw;
        step.p_gas_boiler_kw = out.p_gas_kw;
    } else {
        state.boiler_f_m = 0.0;
    }

    step
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Independent polynomial evaluation used as the oracle: plain power-form
    // arithmetic, deliberately not sharing the Horner code above.
    fn chp_oracle(p: &ChpParams, f_m: f64, t: f64) -> (f64, f64, f64) {
        let a = p.alpha_heat * t * t * t + p.beta_heat * t * t + p.gamma_heat * t + p.delta_heat;
        let b = p.epsilon_heat * t * t + p.zeta_heat * t + p.eta_heat;
        let p_el = p.p_el_max_kw * f_m;
        let p_heat = a * f_m + b;
        let p_gas = p.alpha_gas * f_m * f_m + p.beta_gas * f_m + p.gamma_gas;
        (p_el, p_heat, p_gas)
    }

    fn boiler_oracle(p: &BoilerParams, f_m: f64, t: f64) -> (f64, f64) {
        let pg = p.p_gas_nom_kw * f_m;
        let a = p.alpha * pg * pg + p.beta * pg + p.gamma;
        let b = p.delta * pg * pg + p.epsilon * pg + p.zeta;
        let c = p.eta * pg * pg + p.theta * pg + p.iota;
        let d = p.kappa * pg * pg + p.mu * pg + p.nu;
        let eff = a * t * t * t + b * t * t + c * t + d;
        (eff * pg, pg)
    }

    #[test]
    fn chp_full_load_totals() {
        let p = ChpParams::default();
        let out = chp_evaluate(&p, 1.0, 70.0).unwrap();
        // Sum of the gas coefficients.
        assert_relative_eq!(out.p_gas_kw, 1523.35, epsilon = 1e-12);
        assert_relative_eq!(out.p_el_kw, 600.0, epsilon = 1e-12);
        assert_relative_eq!(out.p_heat_kw, 805.806828, epsilon = 1e-6);
    }

    #[test]
    fn chp_minimum_modulation_electrical() {
        let p = ChpParams::default();
        let out = chp_evaluate(&p, 0.4, 50.0).unwrap();
        assert_relative_eq!(out.p_el_kw, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn chp_out_of_range_modulation_rejected() {
        let p = ChpParams::default();
        assert!(chp_evaluate(&p, 0.39, 50.0).is_err());
        assert!(chp_evaluate(&p, 1.01, 50.0).is_err());
    }

    #[test]
    fn chp_matches_oracle_on_grid() {
        let p = ChpParams::default();
        for i in 0..20 {
            for j in 0..20 {
                let f_m = 0.4 + 0.6 * (i as f64) / 19.0;
                let t = 20.0 + 70.0 * (j as f64) / 19.0;
                let out = chp_evaluate(&p, f_m, t).unwrap();
                let (el, heat, gas) = chp_oracle(&p, f_m, t);
                assert_relative_eq!(out.p_el_kw, el, max_relative = 1e-12);
                assert_relative_eq!(out.p_heat_kw, heat, max_relative = 1e-12);
                assert_relative_eq!(out.p_gas_kw, gas, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn boiler_gas_linear_and_oracle_match() {
        let p = BoilerParams::default();
        let out = boiler_evaluate(&p, 0.1, 40.0).unwrap();
        assert_relative_eq!(out.p_gas_kw, 110.0, epsilon = 1e-12);

        for i in 0..20 {
            for j in 0..20 {
                let f_m = 0.1 + 0.9 * (i as f64) / 19.0;
                let t = 20.0 + 70.0 * (j as f64) / 19.0;
                let out = boiler_evaluate(&p, f_m, t).unwrap();
                let (heat, gas) = boiler_oracle(&p, f_m, t);
                assert_relative_eq!(out.p_out_kw, heat, max_relative = 1e-12);
                assert_relative_eq!(out.p_gas_kw, gas, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn boiler_condensing_gain_at_low_return() {
        let p = BoilerParams::default();
        for f_m in [0.1, 0.4, 0.7, 1.0] {
            let cold = boiler_evaluate(&p, f_m, 30.0).unwrap();
            let warm = boiler_evaluate(&p, f_m, 70.0).unwrap();
            assert!(
                cold.efficiency > warm.efficiency,
                "f_m={f_m}: eff(30)={} <= eff(70)={}",
                cold.efficiency,
                warm.efficiency
            );
        }
    }

    #[test]
    fn chp_outputs_monotone_in_modulation() {
        let p = ChpParams::default();
        for j in 0..11 {
            let t = 30.0 + 50.0 * (j as f64) / 10.0;
            let mut prev_heat = f64::NEG_INFINITY;
            let mut prev_gas = f64::NEG_INFINITY;
            for i in 0..61 {
                let f_m = 0.4 + 0.6 * (i as f64) / 60.0;
                let out = chp_evaluate(&p, f_m, t).unwrap();
                assert!(out.p_heat_kw >= prev_heat);
                assert!(out.p_gas_kw >= prev_gas);
                prev_heat = out.p_heat_kw;
                prev_gas = out.p_gas_kw;
            }
        }
    }

    #[test]
    fn chp_fuel_utilization_band() {
        let p = ChpParams::default();
        for i in 0..13 {
            for j in 0..15 {
                let f_m = 0.4 + 0.6 * (i as f64) / 12.0;
                let t = 20.0 + 5.0 * j as f64;
                let out = chp_evaluate(&p, f_m, t).unwrap();
                let util = (out.p_el_kw + out.p_heat_kw) / out.p_gas_kw;
                assert!(
                    (0.80..=1.00).contains(&util),
                    "utilization {util:.3} at f_m={f_m:.2}, t={t:.0}"
                );
            }
        }
    }

    #[test]
    fn dispatch_boiler_assists_above_chp_max() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let mut state = PlantState::default();
        let step = reference_dispatch(&chp, &boiler, &mut state, 900.0, 0.0, 40.0, 60.0);
        assert!(state.chp_on);
        assert_relative_eq!(state.chp_f_m, 1.0);
        assert!(step.p_heat_boiler_kw > 0.0);
        assert_relative_eq!(step.heat_total_kw(), 900.0, max_relative = 1e-9);
    }

    #[test]
    fn dispatch_boiler_takes_over_below_chp_floor() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let mut state = PlantState {
            chp_on: true,
            since_switch_s: 3600.0,
            ..PlantState::default()
        };
        let low = 0.5 * chp.heat_min_kw(40.0);
        let step = reference_dispatch(&chp, &boiler, &mut state, low, 0.0, 40.0, 60.0);
        assert!(!state.chp_on, "CHP should stop once the on-timer allows it");
        assert_relative_eq!(step.p_heat_boiler_kw, low, max_relative = 1e-9);
    }

    #[test]
    fn dispatch_on_timer_holds_chp_at_floor() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let mut state = PlantState {
            chp_on: true,
            since_switch_s: 5.0 * 60.0,
            ..PlantState::default()
        };
        // Demand collapses 5 min after the start: the CHP must stay on.
        let step = reference_dispatch(&chp, &boiler, &mut state, 0.0, 0.0, 40.0, 60.0);
        assert!(state.chp_on);
        assert_relative_eq!(state.chp_f_m, chp.f_m_min);
        assert!(step.p_heat_chp_kw > 0.0);

        // ... and may stop once 15 min have elapsed.
        state.since_switch_s = 15.0 * 60.0;
        let step = reference_dispatch(&chp, &boiler, &mut state, 0.0, 0.0, 40.0, 60.0);
        assert!(!state.chp_on);
        assert_relative_eq!(step.heat_total_kw(), 0.0);
    }

    #[test]
    fn dispatch_off_timer_defers_start_to_boiler() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let mut state = PlantState {
            chp_on: false,
            since_switch_s: 2.0 * 60.0,
            ..PlantState::default()
        };
        let step = reference_dispatch(&chp, &boiler, &mut state, 600.0, 0.0, 40.0, 60.0);
        assert!(!state.chp_on, "off-timer must block the start");
        assert_relative_eq!(step.p_heat_boiler_kw, 600.0, max_relative = 1e-9);
    }

    #[test]
    fn switch_intervals_respected_over_trajectory() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let mut state = PlantState::default();
        let dt = 60.0;
        let mut last_switch_t = f64::NEG_INFINITY;
        let mut prev_on = state.chp_on;
        // Demand square wave with a 7 min period tries to force fast cycling.
        for k in 0..2000 {
            let t = k as f64 * dt;
            let demand = if (t / 420.0) as u64 % 2 == 0 { 700.0 } else { 0.0 };
            reference_dispatch(&chp, &boiler, &mut state, demand, 5.0, 45.0, dt);
            if state.chp_on != prev_on {
                assert!(
                    t - last_switch_t >= 15.0 * 60.0 - 1e-9,
                    "switches {last_switch_t} -> {t} closer than 15 min"
                );
                last_switch_t = t;
                prev_on = state.chp_on;
            }
        }
    }
}
