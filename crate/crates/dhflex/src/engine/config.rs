//! Scenario configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::econ::EconomicsParams;
use crate::error::{Error, Result};
use crate::hydronet::TopologyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Reference,
    CentralActive,
    DistributedActive,
    NoBufferActive,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 4] = [
        ScenarioTag::Reference,
        ScenarioTag::CentralActive,
        ScenarioTag::DistributedActive,
        ScenarioTag::NoBufferActive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioTag::Reference => "reference",
            ScenarioTag::CentralActive => "central_active",
            ScenarioTag::DistributedActive => "distributed_active",
            ScenarioTag::NoBufferActive => "no_buffer_active",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario `{s}`")))
    }

    pub fn is_active(&self) -> bool {
        !matches!(self, ScenarioTag::Reference)
    }

    /// Does the scenario plan on the aggregate building-mass model?
    pub fn uses_building_flexibility(&self) -> bool {
        matches!(
            self,
            ScenarioTag::DistributedActive | ScenarioTag::NoBufferActive
        )
    }

    /// Does the scenario plan on an aggregate storage model?
    pub fn uses_storage(&self) -> bool {
        matches!(
            self,
            ScenarioTag::CentralActive | ScenarioTag::DistributedActive
        )
    }
}

/// Which calendar week of the input series to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekSelector {
    /// The week whose mean ambient is closest to the heating season mean.
    Representative,
    /// Explicit week index from the start of the series.
    Index(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcSettings {
    pub horizon_h: f64,
    /// Replanning interval in control steps.
    pub replan_blocks: usize,
    pub alpha_eur_per_kw: f64,
    pub comfort_band_c: (f64, f64),
    pub tank_band_c: (f64, f64),
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            horizon_h: 24.0,
            replan_blocks: 4,
            alpha_eur_per_kw: 0.005,
            comfort_band_c: (19.5, 21.5),
            tank_band_c: (40.0, 80.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioTag,
    pub seed: u64,
    pub topology: TopologyConfig,
    /// Weather CSV (`hour,t_ambient_c,wind_ms,solar_kw_m2`); when absent the
    /// bundled synthetic profile is generated from the seed.
    pub weather_path: Option<PathBuf>,
    /// Price CSV (`hour,price_eur_mwh`); when absent the bundled synthetic
    /// series is generated from the seed.
    pub price_path: Option<PathBuf>,
    pub week: WeekSelector,
    pub step_s: f64,
    pub control_step_s: f64,
    pub prerun_days: usize,
    pub holdout_days: usize,
    pub warmup_days: usize,
    pub economics: EconomicsParams,
    pub mpc: MpcSettings,
    /// Scale factor on the hot-water tapping profiles.
    pub dhw_scale: f64,
    /// Collect the per-pipe temperature trace (one sample per control step).
    pub pipe_trace: bool,
    /// Collect storage layer temperatures (one sample per control step).
    pub tank_trace: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioTag::Reference,
            seed: 1112,
            topology: TopologyConfig::default(),
            weather_path: None,
            price_path: None,
            week: WeekSelector::Representative,
            step_s: 60.0,
            control_step_s: 900.0,
            prerun_days: 10,
            holdout_days: 1,
            warmup_days: 1,
            economics: EconomicsParams::default(),
            mpc: MpcSettings::default(),
            dhw_scale: 1.0,
            pipe_trace: false,
            tank_trace: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_s <= 0.0 || self.control_step_s <= 0.0 {
            return Err(Error::config("step sizes must be positive"));
        }
        let ratio = self.control_step_s / self.step_s;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::config(
                "the global step must divide the control step evenly",
            ));
        }
        let fifteen = 900.0 / self.step_s;
        if (fifteen - fifteen.round()).abs() > 1e-9 {
            return Err(Error::config("the global step must divide 15 min evenly"));
        }
        if self.prerun_days < 2 {
            return Err(Error::config("the fitting pre-run needs at least 2 days"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ScenarioConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn with_scenario(&self, scenario: ScenarioTag) -> Self {
        Self {
            scenario,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let config = ScenarioConfig::default();
        config.validate().unwrap();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.scenario, config.scenario);
        assert_eq!(back.seed, config.seed);
    }

    #[test]
    fn step_divisibility_enforced() {
        let config = ScenarioConfig {
            step_s: 70.0,
            ..ScenarioConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn scenario_tags_parse() {
        for tag in ScenarioTag::ALL {
            assert_eq!(ScenarioTag::parse(tag.as_str()).unwrap(), tag);
        }
        assert!(ScenarioTag::parse("bogus").is_err());
    }
}
