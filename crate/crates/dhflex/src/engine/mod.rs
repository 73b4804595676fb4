//! Scenario orchestration: configuration, input profiles, the global
//! simulation loop and the result types.

pub mod config;
pub mod profiles;
mod run;
pub mod trace;

pub use config::{MpcSettings, ScenarioConfig, ScenarioTag, WeekSelector};
pub use profiles::{
    generate_prices, generate_weather, load_prices, load_weather, price_csv,
    select_representative_week, weather_csv, PriceSeries, WeatherSeries,
};
pub use run::{describe_artifacts, load_inputs, run};
pub use trace::{EnergyTallies, PlannerRow, SimulationResult, StepTraces, TempStats};
