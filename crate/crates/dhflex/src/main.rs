//! Command line front end: run scenarios, fit the aggregate models, compare
//! the four configurations and run the built-in validation checks.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use dhflex::dispatch::{
    aggregate, build_bid, clear_market, fit_tank, plan, tank_one_step_rms, AggregateTankModel,
    HistoricTrace, PlanConfig, PlanInputs,
};
use dhflex::econ::{comparison_csv, profit_csv, table5_report, ProfitBreakdown};
use dhflex::engine::{
    describe_artifacts, generate_prices, generate_weather, load_inputs, price_csv, run,
    weather_csv, ScenarioConfig, ScenarioTag, SimulationResult,
};
use dhflex::plant::{chp_evaluate, ChpParams};
use dhflex::storage::{mix_inversions, tank_step, Stream, TankGeometry, TankState};

#[derive(Parser)]
#[command(name = "dhflex", about = "District heating flexibility co-simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario over the representative week.
    Run {
        /// reference | central_active | distributed_active | no_buffer_active
        #[arg(long)]
        scenario: String,
        /// Scenario configuration (TOML); defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for traces and the summary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fitting pre-run and report the aggregate models.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all four scenarios and write the comparison report.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exercise the built-in model checks against their oracles.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> dhflex::Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::default()),
    }
}

/// Write the input profiles actually used next to the outputs so a run is
/// reproducible from its output directory alone.
fn write_inputs(config: &ScenarioConfig, dir: &std::path::Path) -> dhflex::Result<()> {
    std::fs::create_dir_all(dir)?;
    if config.weather_path.is_none() {
        std::fs::write(
            dir.join("weather.csv"),
            weather_csv(&generate_weather(config.seed)),
        )?;
    }
    if config.price_path.is_none() {
        std::fs::write(
            dir.join("prices.csv"),
            price_csv(&generate_prices(config.seed)),
        )?;
    }
    let (topology, population) = describe_artifacts(config)?;
    std::fs::write(dir.join("topology.csv"), topology)?;
    std::fs::write(dir.join("population.csv"), population)?;
    config.save(&dir.join("config.toml"))?;
    Ok(())
}

fn print_result_line(r: &SimulationResult) {
    println!(
        "{:<20} consumed {:>7.0} kWh  produced {:>7.0} kWh  efficiency {:>5.1} %  profit {:>8.2} EUR",
        r.scenario,
        r.tallies.consumed_kwh,
        r.tallies.produced_kwh,
        r.tallies.grid_efficiency() * 100.0,
        r.profit.profit_eur(),
    );
}

fn dispatch_command(command: Command) -> dhflex::Result<()> {
    match command {
        Command::Run { scenario, config, out } => {
            let mut config = load_config(&config)?;
            config.scenario = ScenarioTag::parse(&scenario)?;
            write_inputs(&config, &out)?;
            let started = Instant::now();
            let result = run(&config)?;
            result.write_outputs(&out)?;
            print_result_line(&result);
            println!(
                "wrote {} (elapsed {:.1} s)",
                out.display(),
                started.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Fit { config, out } => {
            let mut config = load_config(&config)?;
            // Fitting needs an active scenario; default to the richest one.
            if !config.scenario.is_active() {
                config.scenario = ScenarioTag::DistributedActive;
            }
            let result = run(&config)?;
            let building = result
                .building_model
                .as_ref()
                .map(|m| toml::to_string_pretty(m).unwrap_or_default())
                .unwrap_or_default();
            let tank = result
                .tank_model
                .as_ref()
                .map(|m| toml::to_string_pretty(m).unwrap_or_default())
                .unwrap_or_default();
            println!("[building]\n{building}");
            println!("[storage]\n{tank}");
            if let Some((b, t)) = result.fit_holdout_rms_c {
                println!("hold-out one-step RMS: building {b:.3} °C, storage {t:.3} °C");
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(
                    dir.join("models.toml"),
                    format!("[building]\n{building}\n[storage]\n{tank}"),
                )?;
            }
            Ok(())
        }
        Command::Compare { config, out } => {
            let config = load_config(&config)?;
            write_inputs(&config, &out)?;
            let mut results = Vec::new();
            for tag in ScenarioTag::ALL {
                let scenario_config = config.with_scenario(tag);
                let started = Instant::now();
                let result = run(&scenario_config)?;
                result.write_outputs(&out.join(tag.as_str()))?;
                print_result_line(&result);
                println!("  ({:.1} s)", started.elapsed().as_secs_f64());
                results.push(result);
            }

            let energies: Vec<_> = results.iter().map(|r| r.scenario_energy()).collect();
            let rows = table5_report(&energies)?;
            std::fs::write(out.join("comparison.csv"), comparison_csv(&rows))?;

            let profits: Vec<(String, ProfitBreakdown)> = results
                .iter()
                .map(|r| (r.scenario.clone(), r.profit))
                .collect();
            std::fs::write(out.join("profit.csv"), profit_csv(&profits))?;

            std::fs::write(out.join("summary.toml"), compare_summary(&results)?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Validate => validate(),
    }
}

fn compare_summary(results: &[SimulationResult]) -> dhflex::Result<String> {
    let profit = |name: &str| {
        results
            .iter()
            .find(|r| r.scenario == name)
            .map(|r| r.profit.profit_eur())
            .unwrap_or(f64::NAN)
    };
    let reference = profit("reference");
    let central = profit("central_active");
    let distributed = profit("distributed_active");
    let no_buffer = profit("no_buffer_active");
    let ordering_holds =
        distributed >= 0.98 * no_buffer && no_buffer > central && central > reference;

    let mut out = String::new();
    out.push_str("[profit_eur]\n");
    for r in results {
        out.push_str(&format!("{} = {:.2}\n", r.scenario, r.profit.profit_eur()));
    }
    out.push_str("\n[verdict]\n");
    out.push_str(&format!("ordering_holds = {ordering_holds}\n"));
    out.push_str(&format!(
        "best = \"{}\"\n",
        results
            .iter()
            .max_by(|a, b| a.profit.profit_eur().total_cmp(&b.profit.profit_eur()))
            .map(|r| r.scenario.as_str())
            .unwrap_or("")
    ));
    out.push_str(&format!(
        "active_gain_over_reference_pct = {:.1}\n",
        (central.min(distributed).min(no_buffer) / reference - 1.0) * 100.0
    ));
    Ok(out)
}

/// Quick pass/fail checks of the core models against independent arithmetic.
fn validate() -> dhflex::Result<()> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // CHP polynomials at full modulation.
    let chp = ChpParams::default();
    let out = chp_evaluate(&chp, 1.0, 70.0)?;
    check(
        "chp full-load gas 1523.35 kW / electricity 600 kW",
        (out.p_gas_kw - 1523.35).abs() < 1e-9 && (out.p_el_kw - 600.0).abs() < 1e-9,
    );

    // Tank energy balance and inversion mixing.
    let geom = TankGeometry::open_500l();
    let mut state = TankState::uniform(&geom, 45.0);
    let r = tank_step(
        &geom,
        &mut state,
        Stream {
            flow_kg_s: 0.2,
            temp_c: 75.0,
        },
        &[Stream {
            flow_kg_s: 0.1,
            temp_c: 25.0,
        }],
        20.0,
        60.0,
    );
    check("tank step energy balance", r.audit.relative_residual() < 1e-3);
    let mut temps = vec![60.0, 40.0, 55.0, 50.0];
    let sum: f64 = temps.iter().sum();
    mix_inversions(&mut temps);
    check(
        "inversion mixing conserves energy",
        (temps.iter().sum::<f64>() - sum).abs() < 1e-9 && temps.windows(2).all(|w| w[0] <= w[1]),
    );

    // Market clearing against the exact tier.
    let bids = [
        build_bid(0.2, 10.0),
        build_bid(0.5, 20.0),
        build_bid(0.8, 30.0),
    ];
    let agg = aggregate(&bids);
    let p_r = clear_market(&agg, 30.0);
    check(
        "market clearing picks the exact tier",
        (agg.value(p_r) - 30.0).abs() < 1e-9,
    );

    // Two-step plan shifts production to the cheap step.
    let model = AggregateTankModel {
        c_s: 10.0,
        u_s: 0.01,
        gamma_s: 1.0,
        rms_residual_c: 0.0,
    };
    let cfg = PlanConfig {
        horizon_steps: 2,
        dt_h: 1.0,
        p_max_kw: 200.0,
        ..PlanConfig::default()
    };
    let inputs = PlanInputs {
        lambda_eur_mwh: vec![10.0, 50.0],
        t_out_c: vec![10.0; 2],
        q_a_kw: vec![0.0; 2],
        q_m_kw: vec![0.0; 2],
        offtake_kw: vec![100.0; 2],
        t_a0_c: 20.0,
        t_m0_c: 20.0,
        t_s0_c: 50.0,
    };
    let p = plan(None, Some(&model), &cfg, &inputs)?;
    check(
        "planner arbitrages a two-step toy",
        p.p_star_kw[0] > 99.0 && p.p_star_kw[1] < 1e-6,
    );

    // Aggregate model identification on a synthetic trace.
    let truth = AggregateTankModel {
        c_s: 39.5,
        u_s: 0.12,
        gamma_s: 1.0,
        rms_residual_c: 0.0,
    };
    let mut trace = HistoricTrace {
        dt_h: 0.25,
        ..Default::default()
    };
    let mut t_s = 55.0;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for k in 0..400 {
        let t_out = 5.0 + 5.0 * ((k as f64) / 40.0).sin();
        let p_w = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..300.0)
        } else {
            0.0
        };
        let offtake = rng.gen_range(0.0..100.0);
        trace.t_s.push(t_s);
        trace.t_out.push(t_out);
        trace.p_w.push(p_w);
        trace.offtake.push(offtake);
        trace.t_a.push(20.0 + 0.1 * (k as f64).sin());
        trace.t_m.push(19.0 + 0.1 * (k as f64 * 0.7).cos());
        trace.p_b.push(rng.gen_range(0.0..500.0));
        trace.q_a.push(rng.gen_range(0.0..100.0));
        trace.q_m.push(rng.gen_range(0.0..50.0));
        t_s = truth.predict(0.25, t_s, t_out, p_w, offtake);
    }
    let fitted = fit_tank(&trace);
    check(
        "storage model identification within 1 %",
        fitted
            .as_ref()
            .map(|t| (t.c_s / truth.c_s - 1.0).abs() < 0.01 && tank_one_step_rms(t, &trace) < 1e-6)
            .unwrap_or(false),
    );

    // Bundled profiles are loadable end to end.
    let config = ScenarioConfig::default();
    let (weather, prices) = load_inputs(&config)?;
    check(
        "bundled synthetic profiles cover the heating season",
        weather.t_ambient_c.len() >= 168 * 24 && prices.eur_mwh.len() == weather.t_ambient_c.len(),
    );

    if failures == 0 {
        println!("all checks passed");
        Ok(())
    } else {
        Err(dhflex::Error::Contract(format!(
            "{failures} validation checks failed"
        )))
    }
}
