use dhflex::engine::{run, ScenarioConfig, ScenarioTag};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "reference".into());
    let cfg = ScenarioConfig {
        scenario: ScenarioTag::parse(&which).unwrap(),
        ..ScenarioConfig::default()
    };
    let t0 = std::time::Instant::now();
    match run(&cfg) {
        Ok(r) => {
            println!("scenario          {}", r.scenario);
            println!("elapsed           {:.1} s", t0.elapsed().as_secs_f64());
            println!("week index        {} (mean ambient {:.2} C)", r.week_index, r.week_mean_ambient_c);
            println!("consumed          {:.0} kWh", r.tallies.consumed_kwh);
            println!("produced          {:.0} kWh (chp {:.0} / boiler {:.0})", r.tallies.produced_kwh, r.tallies.produced_chp_kwh, r.tallies.produced_boiler_kwh);
            println!("grid efficiency   {:.1} %", r.tallies.grid_efficiency() * 100.0);
            println!("pipe loss         {:.0} kWh", r.tallies.pipe_loss_kwh);
            println!("local tank loss   {:.0} kWh", r.tallies.tank_loss_kwh);
            println!("central tank loss {:.0} kWh", r.tallies.central_tank_loss_kwh);
            println!("storage delta     {:.0} kWh", r.tallies.storage_delta_kwh);
            println!("closure residual  {:.3} %", r.tallies.closure_residual() * 100.0);
            println!("electricity       {:.0} kWh", r.tallies.electricity_kwh);
            println!("pump el           {:.0} kWh", r.tallies.pump_el_kwh);
            println!("dhw unserved      {:.1} kWh", r.tallies.dhw_unserved_kwh);
            println!("comfort           [{:.2}, {:.2}] C", r.comfort_min_c, r.comfort_max_c);
            println!("t_i spread        {:.3} C", r.t_i_spread_c);
            println!("profit            {:.0} EUR (gas {:.0}, pump {:.0}, heat {:.0}, el {:.0})",
                r.profit.profit_eur(), r.profit.gas_cost_eur, r.profit.pump_cost_eur,
                r.profit.heat_revenue_eur, r.profit.electricity_revenue_eur);
            if let Some((b, t)) = r.fit_holdout_rms_c {
                println!("fit holdout rms   building {:.3} C / tank {:.3} C", b, t);
            }
            // Where and when the coldest moment happens.
            let (k_min, s_min) = r
                .traces
                .t_i
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.min.total_cmp(&b.1.min))
                .map(|(k, s)| (k, *s))
                .unwrap();
            println!(
                "coldest step      t={:.1} h  min={:.2} q25={:.2} mean={:.2} supply={:.1} C ambient={:.1} C",
                r.traces.t_s[k_min] / 3600.0,
                s_min.min,
                s_min.q25,
                s_min.mean,
                r.traces.supply_c[k_min],
                r.traces.ambient_c[k_min],
            );
            // Production histogram terciles.
            let max_p = r.traces.production_kw.iter().cloned().fold(0.0, f64::max);
            let mut bins = [0usize; 3];
            for p in &r.traces.production_kw {
                let b = ((p / max_p * 3.0) as usize).min(2);
                bins[b] += 1;
            }
            println!("production terciles {:?} (max {:.0} kW)", bins, max_p);
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            std::process::exit(1);
        }
    }
}
