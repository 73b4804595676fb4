//! Physical constants and conventions shared across modules.

/// Specific heat of water, kJ/(kg·K).
pub const CP_WATER_KJ_KG_K: f64 = 4.186;

/// Specific heat of water, kWh/(kg·K).
pub const CP_WATER_KWH_KG_K: f64 = CP_WATER_KJ_KG_K / 3600.0;

/// Density of network water (≈70 °C), kg/m³.
pub const RHO_WATER_KG_M3: f64 = 977.0;

/// Undisturbed ground temperature around buried pipes, °C.
pub const GROUND_TEMP_C: f64 = 10.0;

/// Room temperature around indoor storage vessels, °C.
pub const INDOOR_AMBIENT_C: f64 = 20.0;

/// Cold feed temperature for domestic hot water, °C.
pub const COLD_FEED_C: f64 = 10.0;

/// Domestic hot water tapping temperature, °C.
pub const DHW_TAP_C: f64 = 45.0;

/// Substation heat-exchanger effectiveness (indirect connection).
pub const SUBSTATION_EFFECTIVENESS: f64 = 0.9;

/// Outdoor-reset heating curve: secondary supply setpoint versus the
/// 24 h mean ambient temperature. 70 °C at -8 °C sliding to 40 °C at +15 °C,
/// matching a 70/30 radiator design regime.
#[derive(Debug, Clone, Copy)]
pub struct HeatingCurve {
    pub supply_at_design_c: f64,
    pub design_ambient_c: f64,
    pub supply_at_cutoff_c: f64,
    pub cutoff_ambient_c: f64,
}

impl Default for HeatingCurve {
    fn default() -> Self {
        Self {
            supply_at_design_c: 70.0,
            design_ambient_c: -8.0,
            supply_at_cutoff_c: 40.0,
            cutoff_ambient_c: 15.0,
        }
    }
}

impl HeatingCurve {
    /// Secondary-side supply setpoint for a 24 h mean ambient temperature.
    pub fn setpoint_c(&self, t_a_24h_c: f64) -> f64 {
        let span = self.cutoff_ambient_c - self.design_ambient_c;
        let frac = ((t_a_24h_c - self.design_ambient_c) / span).clamp(0.0, 1.0);
        self.supply_at_design_c + frac * (self.supply_at_cutoff_c - self.supply_at_design_c)
    }
}

/// Offset the plant adds on top of the heating curve to cover distribution
/// losses and the substation approach, K.
pub const PLANT_CURVE_OFFSET_K: f64 = 5.0;

/// Floor on the network supply setpoint so stored hot water stays
/// serviceable, °C.
pub const PLANT_SUPPLY_MIN_C: f64 = 65.0;

/// Hard upper limit on the plant supply temperature, °C.
pub const PLANT_SUPPLY_MAX_C: f64 = 95.0;

/// Network supply setpoint for a 24 h mean ambient temperature, °C.
pub fn plant_supply_setpoint_c(t_a_24h_c: f64) -> f64 {
    (HeatingCurve::default().setpoint_c(t_a_24h_c) + PLANT_CURVE_OFFSET_K).max(PLANT_SUPPLY_MIN_C)
}
