//! Costs, revenues and the scenario comparison report.
//!
//! Costs are gas for the CHP and boiler plus pumping electricity; revenues
//! are heat billed on energy delivered at the substations and electricity
//! sold at the spot price. Gas figures are on an LHV basis consistent with
//! the plant part-load models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EconomicsParams {
    pub gas_eur_mwh: f64,
    pub heat_eur_mwh: f64,
    /// Retail tariff for pump electricity, €/MWh.
    pub pump_tariff_eur_mwh: f64,
    pub pump_efficiency: f64,
}

impl Default for EconomicsParams {
    fn default() -> Self {
        Self {
            gas_eur_mwh: 39.9,
            heat_eur_mwh: 54.5,
            pump_tariff_eur_mwh: 150.0,
            pump_efficiency: 0.7,
        }
    }
}

/// Energy quantities a scenario run settles on.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SettlementInputs {
    pub gas_chp_kwh: f64,
    pub gas_boiler_kwh: f64,
    /// Heat delivered at the substations, kWh.
    pub delivered_kwh: f64,
    /// Pump electricity (already divided by pump efficiency), kWh.
    pub pump_el_kwh: f64,
    /// Generated electrical power per step, kW.
    pub p_el_kw: Vec<f64>,
    /// Spot price per step, €/MWh.
    pub spot_eur_mwh: Vec<f64>,
    pub dt_h: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ProfitBreakdown {
    pub gas_cost_eur: f64,
    pub pump_cost_eur: f64,
    pub heat_revenue_eur: f64,
    pub electricity_revenue_eur: f64,
}

impl ProfitBreakdown {
    /// Revenues minus costs, exactly.
    pub fn profit_eur(&self) -> f64 {
        self.heat_revenue_eur + self.electricity_revenue_eur
            - self.gas_cost_eur
            - self.pump_cost_eur
    }
}

/// Settle one scenario: integrate the electricity revenue against the spot
/// series and price the energy tallies.
pub fn settle(inputs: &SettlementInputs, params: &EconomicsParams) -> Result<ProfitBreakdown> {
    if inputs.p_el_kw.len() != inputs.spot_eur_mwh.len() {
        return Err(Error::contract(format!(
            "electricity trace ({}) and price series ({}) are misaligned",
            inputs.p_el_kw.len(),
            inputs.spot_eur_mwh.len()
        )));
    }
    let electricity_revenue_eur: f64 = inputs
        .p_el_kw
        .iter()
        .zip(&inputs.spot_eur_mwh)
        .map(|(p, price)| p * inputs.dt_h / 1000.0 * price)
        .sum();
    Ok(ProfitBreakdown {
        gas_cost_eur: (inputs.gas_chp_kwh + inputs.gas_boiler_kwh) / 1000.0 * params.gas_eur_mwh,
        pump_cost_eur: inputs.pump_el_kwh / 1000.0 * params.pump_tariff_eur_mwh,
        heat_revenue_eur: inputs.delivered_kwh / 1000.0 * params.heat_eur_mwh,
        electricity_revenue_eur,
    })
}

/// Energy columns of one scenario for the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEnergy {
    pub name: String,
    pub consumed_kwh: f64,
    pub produced_total_kwh: f64,
    pub produced_chp_kwh: f64,
    pub produced_boiler_kwh: f64,
}

impl ScenarioEnergy {
    pub fn grid_efficiency(&self) -> f64 {
        if self.produced_total_kwh > 0.0 {
            self.consumed_kwh / self.produced_total_kwh
        } else {
            f64::NAN
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub consumed_kwh: f64,
    pub consumed_delta_pct: Option<f64>,
    pub produced_total_kwh: f64,
    pub produced_total_delta_pct: Option<f64>,
    pub produced_chp_kwh: f64,
    pub produced_chp_delta_pct: Option<f64>,
    pub produced_boiler_kwh: f64,
    pub produced_boiler_delta_pct: Option<f64>,
    pub grid_efficiency_pct: f64,
}

/// Consumed/produced comparison with percentage deltas against the
/// reference scenario (which must be the row named `reference`).
pub fn table5_report(scenarios: &[ScenarioEnergy]) -> Result<Vec<ComparisonRow>> {
    let reference = scenarios
        .iter()
        .find(|s| s.name == "reference")
        .ok_or_else(|| Error::contract("comparison requires the reference scenario"))?
        .clone();
    let pct = |v: f64, base: f64| {
        if base.abs() > 1e-12 {
            Some((v / base - 1.0) * 100.0)
        } else {
            None
        }
    };
    Ok(scenarios
        .iter()
        .map(|s| {
            let is_ref = s.name == reference.name;
            let delta = |v: f64, base: f64| if is_ref { None } else { pct(v, base) };
            ComparisonRow {
                name: s.name.clone(),
                consumed_kwh: s.consumed_kwh,
                consumed_delta_pct: delta(s.consumed_kwh, reference.consumed_kwh),
                produced_total_kwh: s.produced_total_kwh,
                produced_total_delta_pct: delta(s.produced_total_kwh, reference.produced_total_kwh),
                produced_chp_kwh: s.produced_chp_kwh,
                produced_chp_delta_pct: delta(s.produced_chp_kwh, reference.produced_chp_kwh),
                produced_boiler_kwh: s.produced_boiler_kwh,
                produced_boiler_delta_pct: delta(s.produced_boiler_kwh, reference.produced_boiler_kwh),
                grid_efficiency_pct: s.grid_efficiency() * 100.0,
            }
        })
        .collect())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "configuration,consumed_kwh,consumed_delta_pct,produced_total_kwh,produced_total_delta_pct,\
         produced_chp_kwh,produced_chp_delta_pct,produced_boiler_kwh,produced_boiler_delta_pct,\
         grid_efficiency_pct\n",
    );
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{:.0},{},{:.0},{},{:.0},{},{:.0},{},{:.1}\n",
            r.name,
            r.consumed_kwh,
            fmt(r.consumed_delta_pct),
            r.produced_total_kwh,
            fmt(r.produced_total_delta_pct),
            r.produced_chp_kwh,
            fmt(r.produced_chp_delta_pct),
            r.produced_boiler_kwh,
            fmt(r.produced_boiler_delta_pct),
            r.grid_efficiency_pct,
        ));
    }
    out
}

pub fn profit_csv(rows: &[(String, ProfitBreakdown)]) -> String {
    let mut out = String::from(
        "configuration,gas_cost_eur,pump_cost_eur,heat_revenue_eur,electricity_revenue_eur,profit_eur\n",
    );
    for (name, p) in rows {
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
            name,
            p.gas_cost_eur,
            p.pump_cost_eur,
            p.heat_revenue_eur,
            p.electricity_revenue_eur,
            p.profit_eur()
        ));
    }
    out
}
