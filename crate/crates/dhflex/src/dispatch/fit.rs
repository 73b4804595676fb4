//! Least-squares identification of the aggregate planning models.
//!
//! The planner works on two reduced models: a second-order air/mass circuit
//! for the building cluster and a first-order vessel model for the storage
//! population. Both are fitted on a historic trace produced by running the
//! simulation for ten days under the reference controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled history at the control step (15 min), one entry per step.
#[derive(Debug, Clone, Default)]
pub struct HistoricTrace {
    pub dt_h: f64,
    /// Aggregate indoor air temperature, °C.
    pub t_a: Vec<f64>,
    /// Aggregate building mass temperature, °C.
    pub t_m: Vec<f64>,
    /// Outside air temperature, °C.
    pub t_out: Vec<f64>,
    /// Heating power delivered to the building cluster, kW.
    pub p_b: Vec<f64>,
    /// Known gains on the air node (solar, electric, infiltration), kW.
    pub q_a: Vec<f64>,
    /// Known gains on the mass node, kW.
    pub q_m: Vec<f64>,
    /// Mean storage temperature, °C.
    pub t_s: Vec<f64>,
    /// Heating power delivered to the storage population, kW.
    pub p_w: Vec<f64>,
    /// Thermal off-take from the storage population, kW.
    pub offtake: Vec<f64>,
}

impl HistoricTrace {
    pub fn len(&self) -> usize {
        self.t_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_a.is_empty()
    }

    /// Split off the last `steps` entries as a hold-out window. Input series
    /// may be one entry shorter than the state series (no inputs after the
    /// final state); ranges are clamped per array.
    pub fn split_at_tail(&self, steps: usize) -> (HistoricTrace, HistoricTrace) {
        let cut = self.len().saturating_sub(steps);
        let take = |v: &Vec<f64>, range: std::ops::Range<usize>| {
            v[range.start.min(v.len())..range.end.min(v.len())].to_vec()
        };
        let part = |range: std::ops::Range<usize>| HistoricTrace {
            dt_h: self.dt_h,
            t_a: take(&self.t_a, range.clone()),
            t_m: take(&self.t_m, range.clone()),
            t_out: take(&self.t_out, range.clone()),
            p_b: take(&self.p_b, range.clone()),
            q_a: take(&self.q_a, range.clone()),
            q_m: take(&self.q_m, range.clone()),
            t_s: take(&self.t_s, range.clone()),
            p_w: take(&self.p_w, range.clone()),
            offtake: take(&self.offtake, range),
        };
        (part(0..cut), part(cut..self.len()))
    }
}

/// Second-order aggregate building model (air and mass node).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateBuildingModel {
    /// Air node capacity, kWh/°C.
    pub c_a: f64,
    /// Mass node capacity, kWh/°C.
    pub c_m: f64,
    /// Envelope conductance, kW/°C.
    pub u_a: f64,
    /// Air-mass conductance, kW/°C.
    pub h_m: f64,
    /// Scaling of delivered power on the air node.
    pub gamma_a: f64,
    /// Scaling of known gains on the mass node.
    pub gamma_m: f64,
    /// One-step-ahead RMS of the fit, °C.
    pub rms_residual_c: f64,
}

/// First-order aggregate storage model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateTankModel {
    /// Water capacity, kWh/°C.
    pub c_s: f64,
    /// Loss conductance, kW/°C.
    pub u_s: f64,
    /// Scaling of charge power.
    pub gamma_s: f64,
    /// One-step-ahead RMS of the fit, °C.
    pub rms_residual_c: f64,
}

impl AggregateBuildingModel {
    /// One-step prediction of (T_a, T_m).
    pub fn predict(
        &self,
        dt_h: f64,
        t_a: f64,
        t_m: f64,
        t_out: f64,
        p_b: f64,
        q_a: f64,
        q_m: f64,
    ) -> (f64, f64) {
        let dta = dt_h / self.c_a
            * (self.h_m * (t_m - t_a) + self.u_a * (t_out - t_a) + self.gamma_a * p_b + q_a);
        let dtm = dt_h / self.c_m * (self.h_m * (t_a - t_m) + self.gamma_m * q_m);
        (t_a + dta, t_m + dtm)
    }
}

impl AggregateTankModel {
    pub fn predict(&self, dt_h: f64, t_s: f64, t_out: f64, p_w: f64, offtake: f64) -> f64 {
        t_s + dt_h / self.c_s * (self.u_s * (t_out - t_s) + self.gamma_s * p_w - offtake)
    }
}

/// Ordinary least squares through the normal equations, with a pivot check
/// that rejects rank-deficient regressor sets.
fn lstsq(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.len() < n || n == 0 {
        return Err(Error::Fit("not enough samples for the regression".into()));
    }
    let mut ata = vec![vec![0.0; n]; n];
    let mut aty = vec![0.0; n];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..n {
            aty[i] += row[i] * yi;
            for j in 0..n {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    // Scale-aware pivot tolerance.
    let scale = (0..n).map(|i| ata[i][i].abs()).fold(0.0f64, f64::max);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs()))
            .unwrap();
        if ata[pivot][col].abs() < 1e-10 * scale.max(1e-30) {
            return Err(Error::Fit(
                "singular regression; the historic run lacks excitation".into(),
            ));
        }
        ata.swap(col, pivot);
        aty.swap(col, pivot);
        for row in col + 1..n {
            let f = ata[row][col] / ata[col][col];
            for k in col..n {
                ata[row][k] -= f * ata[col][k];
            }
            aty[row] -= f * aty[col];
        }
    }
    let mut theta = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = aty[row];
        for k in row + 1..n {
            s -= ata[row][k] * theta[k];
        }
        theta[row] = s / ata[row][row];
    }
    Ok(theta)
}

/// Fit the second-order building model on a historic trace.
pub fn fit_building(trace: &HistoricTrace) -> Result<AggregateBuildingModel> {
    let n = trace.len();
    if n < 16 {
        return Err(Error::Fit("historic trace too short".into()));
    }
    let mut rows = Vec::with_capacity(n - 1);
    let mut y = Vec::with_capacity(n - 1);
    let mut rows_m = Vec::with_capacity(n - 1);
    let mut y_m = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        rows.push(vec![
            trace.t_m[k] - trace.t_a[k],
            trace.t_out[k] - trace.t_a[k],
            trace.p_b[k],
            trace.q_a[k],
        ]);
        y.push(trace.t_a[k + 1] - trace.t_a[k]);
        rows_m.push(vec![trace.t_a[k] - trace.t_m[k], trace.q_m[k]]);
        y_m.push(trace.t_m[k + 1] - trace.t_m[k]);
    }
    let theta = lstsq(&rows, &y)?;
    let phi = lstsq(&rows_m, &y_m)?;

    // theta = dt/C_a · [H_m, U_a, γ_a, 1]; phi = dt/C_m · [H_m, γ_m].
    let c_a = trace.dt_h / theta[3];
    let h_m = theta[0] / theta[3];
    let u_a = theta[1] / theta[3];
    let gamma_a = theta[2] / theta[3];
    let c_m = trace.dt_h * h_m / phi[0];
    let gamma_m = phi[1] * c_m / trace.dt_h;
    let model = AggregateBuildingModel {
        c_a,
        c_m,
        u_a,
        h_m,
        gamma_a,
        gamma_m,
        rms_residual_c: 0.0,
    };
    if !(model.c_a > 0.0 && model.c_m > 0.0 && model.u_a > 0.0 && model.h_m > 0.0) {
        return Err(Error::Fit(format!(
            "building fit produced non-physical parameters: {model:?}"
        )));
    }
    let rms = building_one_step_rms(&model, trace);
    Ok(AggregateBuildingModel {
        rms_residual_c: rms,
        ..model
    })
}

/// Fit the first-order storage model on a historic trace.
pub fn fit_tank(trace: &HistoricTrace) -> Result<AggregateTankModel> {
    let n = trace.len();
    if n < 8 {
        return Err(Error::Fit("historic trace too short".into()));
    }
    let mut rows = Vec::with_capacity(n - 1);
    let mut y = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        rows.push(vec![
            trace.t_out[k] - trace.t_s[k],
            trace.p_w[k],
            trace.offtake[k],
        ]);
        y.push(trace.t_s[k + 1] - trace.t_s[k]);
    }
    let psi = lstsq(&rows, &y)?;
    // psi = dt/C_s · [U_s, γ_s, -1].
    let c_s = -trace.dt_h / psi[2];
    let u_s = psi[0] * c_s / trace.dt_h;
    let gamma_s = psi[1] * c_s / trace.dt_h;
    let model = AggregateTankModel {
        c_s,
        u_s,
        gamma_s,
        rms_residual_c: 0.0,
    };
    if !(model.c_s > 0.0 && model.u_s > 0.0 && model.gamma_s > 0.0) {
        return Err(Error::Fit(format!(
            "storage fit produced non-physical parameters: {model:?}"
        )));
    }
    let rms = tank_one_step_rms(&model, trace);
    Ok(AggregateTankModel {
        rms_residual_c: rms,
        ..model
    })
}

/// Fit both models from one trace.
pub fn fit_aggregate_models(
    trace: &HistoricTrace,
) -> Result<(AggregateBuildingModel, AggregateTankModel)> {
    Ok((fit_building(trace)?, fit_tank(trace)?))
}

pub fn building_one_step_rms(model: &AggregateBuildingModel, trace: &HistoricTrace) -> f64 {
    let mut sq = 0.0;
    let n = trace.len();
    for k in 0..n - 1 {
        let (t_a, _) = model.predict(
            trace.dt_h,
            trace.t_a[k],
            trace.t_m[k],
            trace.t_out[k],
            trace.p_b[k],
            trace.q_a[k],
            trace.q_m[k],
        );
        sq += (t_a - trace.t_a[k + 1]).powi(2);
    }
    (sq / (n - 1) as f64).sqrt()
}

pub fn tank_one_step_rms(model: &AggregateTankModel, trace: &HistoricTrace) -> f64 {
    let mut sq = 0.0;
    let n = trace.len();
    for k in 0..n - 1 {
        let t_s = model.predict(
            trace.dt_h,
            trace.t_s[k],
            trace.t_out[k],
            trace.p_w[k],
            trace.offtake[k],
        );
        sq += (t_s - trace.t_s[k + 1]).powi(2);
    }
    (sq / (n - 1) as f64).sqrt()
}
