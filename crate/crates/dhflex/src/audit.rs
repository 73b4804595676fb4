//! Per-step energy bookkeeping shared by the stateful thermal models.

/// First-law audit of one integration step.
///
/// `delta_u_kwh` is the change of stored energy, `net_in_kwh` the net booked
/// boundary inflow and `gross_kwh` the sum of absolute boundary flows (used to
/// scale the acceptable residual).
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyAudit {
    pub delta_u_kwh: f64,
    pub net_in_kwh: f64,
    pub gross_kwh: f64,
}

impl EnergyAudit {
    /// Residual relative to the gross energy turnover of the step.
    pub fn relative_residual(&self) -> f64 {
        let scale = self.gross_kwh.abs().max(self.delta_u_kwh.abs()).max(1e-9);
        (self.delta_u_kwh - self.net_in_kwh).abs() / scale
    }

    pub fn accumulate(&mut self, other: &EnergyAudit) {
        self.delta_u_kwh += other.delta_u_kwh;
        self.net_in_kwh += other.net_in_kwh;
        self.gross_kwh += other.gross_kwh;
    }
}
