//! CHP-versus-boiler source selection by effective heat cost.
//!
//! The CHP earns spot revenue for its electricity, so its net cost per unit
//! of heat falls with the electricity price and can go negative. The boiler
//! pays plain gas per unit of heat. Whichever is cheaper serves the target,
//! the other covers shortfall; CHP switch timers are respected.

use crate::plant::{boiler_evaluate, chp_evaluate, BoilerParams, ChpParams, PlantState};

/// Net cost of one MWh of CHP heat at full modulation: gas cost over the
/// fuel utilization minus spot revenue over the heat-to-power ratio.
/// Negative values mean the plant is paid to produce heat.
pub fn effective_heat_cost_eur_mwh(
    chp: &ChpParams,
    gas_eur_mwh: f64,
    spot_eur_mwh: f64,
    t_in_c: f64,
) -> f64 {
    let out = chp_evaluate(chp, 1.0, t_in_c).expect("full modulation is always valid");
    let fuel_utilization = (out.p_el_kw + out.p_heat_kw) / out.p_gas_kw;
    let heat_to_power = out.p_heat_kw / out.p_el_kw;
    gas_eur_mwh / fuel_utilization - spot_eur_mwh / heat_to_power
}

/// Boiler heat cost at the modulation that would serve `target_kw`, €/MWh.
pub fn boiler_heat_cost_eur_mwh(
    boiler: &BoilerParams,
    gas_eur_mwh: f64,
    target_kw: f64,
    t_in_c: f64,
) -> f64 {
    let f_m = (target_kw / boiler.p_gas_nom_kw).clamp(boiler.f_m_min, 1.0);
    let out = boiler_evaluate(boiler, f_m, t_in_c).expect("modulation clamped");
    gas_eur_mwh / out.efficiency
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SourceSplit {
    pub chp_heat_kw: f64,
    pub boiler_heat_kw: f64,
}

impl SourceSplit {
    pub fn wants_chp(&self) -> bool {
        self.chp_heat_kw > 0.0
    }
}

/// Split a production target between CHP and boiler.
///
/// The CHP serves when its effective heat cost (at the modulation the target
/// requires) beats the boiler's and the switch timers allow a start; the
/// boiler covers the remainder and any shortfall. A CHP pinned on by its
/// minimum on-time keeps running at the modulation floor.
pub fn select_source(
    chp: &ChpParams,
    boiler: &BoilerParams,
    state: &PlantState,
    target_kw: f64,
    spot_eur_mwh: f64,
    gas_eur_mwh: f64,
    t_return_c: f64,
) -> SourceSplit {
    let heat_min = chp.heat_min_kw(t_return_c);
    let heat_max = chp.heat_max_kw(t_return_c);

    if target_kw <= 0.0 {
        if state.chp_on && !state.can_stop(chp) {
            return SourceSplit {
                chp_heat_kw: heat_min,
                boiler_heat_kw: 0.0,
            };
        }
        return SourceSplit::default();
    }

    let f_m = chp.f_m_for_heat(target_kw, t_return_c).clamp(chp.f_m_min, 1.0);
    let chp_out = chp_evaluate(chp, f_m, t_return_c).expect("modulation clamped");
    let chp_cost =
        (chp_out.p_gas_kw * gas_eur_mwh - chp_out.p_el_kw * spot_eur_mwh) / chp_out.p_heat_kw;
    let boiler_cost = boiler_heat_cost_eur_mwh(boiler, gas_eur_mwh, target_kw, t_return_c);

    let chp_viable = target_kw >= heat_min;
    let chp_cheaper = chp_cost < boiler_cost;
    let boiler_max = boiler.out_max_kw(t_return_c);
    let boiler_short = target_kw > boiler_max;

    let mut use_chp = chp_viable && chp_cheaper;
    if boiler_short {
        // Comfort beats economics: the boiler alone cannot carry the load.
        use_chp = true;
    }
    if use_chp && !state.chp_on && !state.can_start(chp) {
        use_chp = false;
    }
    if !use_chp && state.chp_on && !state.can_stop(chp) {
        // Pinned on: run at the floor, boiler handles the rest.
        let chp_heat = heat_min.min(target_kw.max(heat_min));
        return SourceSplit {
            chp_heat_kw: chp_heat,
            boiler_heat_kw: (target_kw - chp_heat).max(0.0),
        };
    }
    if use_chp {
        let chp_heat = target_kw.min(heat_max).max(heat_min);
        SourceSplit {
            chp_heat_kw: chp_heat,
            boiler_heat_kw: (target_kw - chp_heat).max(0.0),
        }
    } else {
        SourceSplit {
            chp_heat_kw: 0.0,
            boiler_heat_kw: target_kw,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_state() -> PlantState {
        PlantState::default()
    }

    #[test]
    fn high_spot_price_commits_the_chp() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let split = select_source(&chp, &boiler, &free_state(), 700.0, 90.0, 39.9, 40.0);
        assert!(split.wants_chp());
        assert_eq!(split.boiler_heat_kw, 0.0);
        // At 90 €/MWh the CHP is effectively paid to heat.
        assert!(effective_heat_cost_eur_mwh(&chp, 39.9, 90.0, 40.0) < 5.0);
    }

    #[test]
    fn zero_spot_price_prefers_the_boiler() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        // Independent cost comparison straight from the part-load models.
        let chp_out = chp_evaluate(&chp, 1.0, 40.0).unwrap();
        let chp_cost = chp_out.p_gas_kw * 39.9 / chp_out.p_heat_kw;
        let boiler_cost = boiler_heat_cost_eur_mwh(&boiler, 39.9, 700.0, 40.0);
        assert!(chp_cost > boiler_cost);

        let split = select_source(&chp, &boiler, &free_state(), 700.0, 0.0, 39.9, 40.0);
        assert!(!split.wants_chp());
        assert_eq!(split.boiler_heat_kw, 700.0);
    }

    #[test]
    fn zero_target_with_free_timers_means_all_off() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let split = select_source(&chp, &boiler, &free_state(), 0.0, 50.0, 39.9, 40.0);
        assert_eq!(split, SourceSplit::default());
    }

    #[test]
    fn minimum_on_time_pins_the_chp() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let state = PlantState {
            chp_on: true,
            since_switch_s: 120.0,
            ..PlantState::default()
        };
        let split = select_source(&chp, &boiler, &state, 0.0, 0.0, 39.9, 40.0);
        assert!(split.chp_heat_kw > 0.0);
    }

    #[test]
    fn boiler_covers_above_chp_maximum() {
        let chp = ChpParams::default();
        let boiler = BoilerParams::default();
        let split = select_source(&chp, &boiler, &free_state(), 1200.0, 90.0, 39.9, 40.0);
        assert!(split.wants_chp());
        assert!(split.boiler_heat_kw > 0.0);
        assert!((split.chp_heat_kw + split.boiler_heat_kw - 1200.0).abs() < 1e-9);
    }

    #[test]
    fn effective_cost_falls_linearly_with_spot() {
        let chp = ChpParams::default();
        let c0 = effective_heat_cost_eur_mwh(&chp, 39.9, 0.0, 40.0);
        let c50 = effective_heat_cost_eur_mwh(&chp, 39.9, 50.0, 40.0);
        let c100 = effective_heat_cost_eur_mwh(&chp, 39.9, 100.0, 40.0);
        assert!(c0 > c50 && c50 > c100);
        assert!((c0 - 2.0 * c50 + c100).abs() < 1e-9, "linearity in spot");
    }
}
