//! Simulation outputs: per-step traces, energy tallies and file writers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::{AggregateBuildingModel, AggregateTankModel};
use crate::econ::{ProfitBreakdown, ScenarioEnergy, SettlementInputs};
use crate::error::Result;

/// Distribution snapshot of the 100 indoor temperatures at one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct TempStats {
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

impl TempStats {
    pub fn from_samples(samples: &mut [f64]) -> Self {
        samples.sort_by(|a, b| a.total_cmp(b));
        let n = samples.len();
        let q = |frac: f64| samples[((n - 1) as f64 * frac).round() as usize];
        Self {
            mean: samples.iter().sum::<f64>() / n as f64,
            min: samples[0],
            q25: q(0.25),
            q50: q(0.50),
            q75: q(0.75),
            max: samples[n - 1],
        }
    }
}

/// One row of the planner trace (per control round).
#[derive(Debug, Clone, Copy, Default)]
pub struct PlannerRow {
    pub t_s: f64,
    pub lambda_eur_mwh: f64,
    pub p_star_kw: f64,
    pub p_b_star_kw: f64,
    pub p_w_star_kw: f64,
    pub p_r_clear: f64,
    pub u_pi_kw: f64,
    pub measured_kw: f64,
}

/// Per-step traces over the scored week.
#[derive(Debug, Clone, Default)]
pub struct StepTraces {
    pub t_s: Vec<f64>,
    pub production_kw: Vec<f64>,
    pub chp_heat_kw: Vec<f64>,
    pub boiler_heat_kw: Vec<f64>,
    pub p_el_kw: Vec<f64>,
    pub gas_kw: Vec<f64>,
    pub delivered_kw: Vec<f64>,
    pub pipe_loss_kw: Vec<f64>,
    pub supply_c: Vec<f64>,
    pub return_c: Vec<f64>,
    pub price_eur_mwh: Vec<f64>,
    pub ambient_c: Vec<f64>,
    pub t_i: Vec<TempStats>,
    pub tank_mean_c: Vec<f64>,
    pub chp_on: Vec<bool>,
    pub f_m_chp: Vec<f64>,
    pub f_m_boiler: Vec<f64>,
    pub supply_setpoint_c: Vec<f64>,
    pub p_gas_chp_kw: Vec<f64>,
    pub p_gas_boiler_kw: Vec<f64>,
}

/// Integrated energies over the scored week.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnergyTallies {
    pub consumed_kwh: f64,
    pub produced_kwh: f64,
    pub produced_chp_kwh: f64,
    pub produced_boiler_kwh: f64,
    pub gas_chp_kwh: f64,
    pub gas_boiler_kwh: f64,
    pub electricity_kwh: f64,
    pub pipe_loss_kwh: f64,
    /// Standing losses of the distributed vessels (customer side), kWh.
    pub tank_loss_kwh: f64,
    /// Standing losses of the central buffer (network side), kWh.
    pub central_tank_loss_kwh: f64,
    pub pump_el_kwh: f64,
    pub dhw_unserved_kwh: f64,
    /// Stored-energy change of pipes, plant volume and central tank, kWh.
    pub storage_delta_kwh: f64,
}

impl EnergyTallies {
    /// Produced minus delivered, network losses and storage change, relative
    /// to production. Distributed vessel losses sit downstream of the
    /// delivery boundary and do not enter the closure.
    pub fn closure_residual(&self) -> f64 {
        let lhs = self.produced_kwh;
        let rhs = self.consumed_kwh
            + self.pipe_loss_kwh
            + self.central_tank_loss_kwh
            + self.storage_delta_kwh;
        (lhs - rhs).abs() / lhs.max(1.0)
    }

    pub fn grid_efficiency(&self) -> f64 {
        self.consumed_kwh / self.produced_kwh.max(1e-9)
    }
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub scenario: String,
    pub dt_s: f64,
    pub week_index: usize,
    pub week_mean_ambient_c: f64,
    pub traces: StepTraces,
    /// Optional sampled per-pipe rows: `t,pipe_id,T_in,T_out,flow,loss_kW`.
    pub pipe_trace: Vec<String>,
    /// Optional sampled storage layer rows: `t,tank_id,layer,temp_c`.
    pub tank_trace: Vec<String>,
    pub planner: Vec<PlannerRow>,
    pub tallies: EnergyTallies,
    pub building_model: Option<AggregateBuildingModel>,
    pub tank_model: Option<AggregateTankModel>,
    /// Hold-out one-step RMS of the fitted models, °C.
    pub fit_holdout_rms_c: Option<(f64, f64)>,
    pub profit: ProfitBreakdown,
    /// Week-averaged standard deviation of indoor temperature across
    /// buildings, °C.
    pub t_i_spread_c: f64,
    pub comfort_min_c: f64,
    pub comfort_max_c: f64,
}

impl SimulationResult {
    pub fn scenario_energy(&self) -> ScenarioEnergy {
        ScenarioEnergy {
            name: self.scenario.clone(),
            consumed_kwh: self.tallies.consumed_kwh,
            produced_total_kwh: self.tallies.produced_kwh,
            produced_chp_kwh: self.tallies.produced_chp_kwh,
            produced_boiler_kwh: self.tallies.produced_boiler_kwh,
        }
    }

    pub fn settlement_inputs(&self) -> SettlementInputs {
        SettlementInputs {
            gas_chp_kwh: self.tallies.gas_chp_kwh,
            gas_boiler_kwh: self.tallies.gas_boiler_kwh,
            delivered_kwh: self.tallies.consumed_kwh,
            pump_el_kwh: self.tallies.pump_el_kwh,
            p_el_kw: self.traces.p_el_kw.clone(),
            spot_eur_mwh: self.traces.price_eur_mwh.clone(),
            dt_h: self.dt_s / 3600.0,
        }
    }

    /// Trace integrals must reproduce the tallies exactly; used as a
    /// self-check and exposed for tests.
    pub fn tallies_match_traces(&self) -> bool {
        let dt_h = self.dt_s / 3600.0;
        let sum = |v: &[f64]| v.iter().sum::<f64>() * dt_h;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1.0);
        close(sum(&self.traces.production_kw), self.tallies.produced_kwh)
            && close(sum(&self.traces.delivered_kw), self.tallies.consumed_kwh)
            && close(sum(&self.traces.p_el_kw), self.tallies.electricity_kwh)
            && close(sum(&self.traces.pipe_loss_kw), self.tallies.pipe_loss_kwh)
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.csv"), self.trace_csv())?;
        std::fs::write(dir.join("plant_trace.csv"), self.plant_csv())?;
        std::fs::write(dir.join("building_temps.csv"), self.temps_csv())?;
        if !self.planner.is_empty() {
            std::fs::write(dir.join("planner_trace.csv"), self.planner_csv())?;
        }
        if !self.pipe_trace.is_empty() {
            let mut out = String::from("t,pipe_id,T_in,T_out,flow,loss_kW\n");
            for row in &self.pipe_trace {
                out.push_str(row);
                out.push('\n');
            }
            std::fs::write(dir.join("pipe_trace.csv"), out)?;
        }
        if !self.tank_trace.is_empty() {
            let mut out = String::from("t,tank_id,layer,temp_c\n");
            for row in &self.tank_trace {
                out.push_str(row);
                out.push('\n');
            }
            std::fs::write(dir.join("tank_trace.csv"), out)?;
        }
        std::fs::write(dir.join("summary.toml"), self.summary_toml()?)?;
        Ok(())
    }

    pub fn trace_csv(&self) -> String {
        let t = &self.traces;
        let mut out = String::from(
            "t_s,production_kw,chp_heat_kw,boiler_heat_kw,p_el_kw,gas_kw,delivered_kw,\
             pipe_loss_kw,supply_c,return_c,price_eur_mwh,ambient_c,tank_mean_c\n",
        );
        for i in 0..t.t_s.len() {
            out.push_str(&format!(
                "{:.0},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.3},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
                t.t_s[i],
                t.production_kw[i],
                t.chp_heat_kw[i],
                t.boiler_heat_kw[i],
                t.p_el_kw[i],
                t.gas_kw[i],
                t.delivered_kw[i],
                t.pipe_loss_kw[i],
                t.supply_c[i],
                t.return_c[i],
                t.price_eur_mwh[i],
                t.ambient_c[i],
                t.tank_mean_c[i],
            ));
        }
        out
    }

    pub fn plant_csv(&self) -> String {
        let t = &self.traces;
        let mut out = String::from(
            "t,chp_on,f_m_chp,P_el,P_heat_chp,P_gas_chp,f_m_boiler,P_heat_boiler,P_gas_boiler,T_supply\n",
        );
        for i in 0..t.t_s.len() {
            out.push_str(&format!(
                "{:.0},{},{:.3},{:.1},{:.1},{:.1},{:.3},{:.1},{:.1},{:.2}\n",
                t.t_s[i],
                t.chp_on[i] as u8,
                t.f_m_chp[i],
                t.p_el_kw[i],
                t.chp_heat_kw[i],
                t.p_gas_chp_kw[i],
                t.f_m_boiler[i],
                t.boiler_heat_kw[i],
                t.p_gas_boiler_kw[i],
                t.supply_c[i],
            ));
        }
        out
    }

    pub fn temps_csv(&self) -> String {
        let mut out = String::from("t_s,mean,min,q25,q50,q75,max\n");
        for (t, s) in self.traces.t_s.iter().zip(&self.traces.t_i) {
            out.push_str(&format!(
                "{:.0},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                t, s.mean, s.min, s.q25, s.q50, s.q75, s.max
            ));
        }
        out
    }

    pub fn planner_csv(&self) -> String {
        let mut out =
            String::from("t,lambda_eff,P_star,P_b_star,P_w_star,p_r_clear,u_pi,measured_P\n");
        for r in &self.planner {
            out.push_str(&format!(
                "{:.0},{:.2},{:.1},{:.1},{:.1},{:.4},{:.1},{:.1}\n",
                r.t_s,
                r.lambda_eur_mwh,
                r.p_star_kw,
                r.p_b_star_kw,
                r.p_w_star_kw,
                r.p_r_clear,
                r.u_pi_kw,
                r.measured_kw
            ));
        }
        out
    }

    pub fn summary_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            scenario: &'a str,
            week_index: usize,
            week_mean_ambient_c: f64,
            grid_efficiency_pct: f64,
            t_i_spread_c: f64,
            comfort_min_c: f64,
            comfort_max_c: f64,
            energy: &'a EnergyTallies,
            profit_eur: f64,
            profit: &'a ProfitBreakdown,
            fit_holdout_rms_c: Option<(f64, f64)>,
        }
        let s = Summary {
            scenario: &self.scenario,
            week_index: self.week_index,
            week_mean_ambient_c: self.week_mean_ambient_c,
            grid_efficiency_pct: self.tallies.grid_efficiency() * 100.0,
            t_i_spread_c: self.t_i_spread_c,
            comfort_min_c: self.comfort_min_c,
            comfort_max_c: self.comfort_max_c,
            energy: &self.tallies,
            profit_eur: self.profit.profit_eur(),
            profit: &self.profit,
            fit_holdout_rms_c: self.fit_holdout_rms_c,
        };
        toml::to_string_pretty(&s).map_err(|e| crate::error::Error::config(e.to_string()))
    }
}
