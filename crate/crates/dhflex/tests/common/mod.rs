//! Independent oracles for the acceptance suite. Everything here recomputes
//! expected values from first principles without touching the implementation
//! paths it checks.

#![allow(dead_code)]

/// Dense matrix exponential by scaling and squaring with a Taylor kernel;
/// plenty for well-conditioned 3×3 thermal systems.
pub fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm: f64 = a
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = norm.log2().ceil().max(0.0) as u32 + 2;
    let scale = (2.0f64).powi(squarings as i32);
    let scaled: Vec<Vec<f64>> = a
        .iter()
        .map(|row| row.iter().map(|v| v / scale).collect())
        .collect();

    // exp(scaled) by Taylor series to machine precision.
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = mat_mul(&term, &scaled);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(v, xi)| v * xi).sum())
        .collect()
}

/// Solve A·X = B column-wise by Gaussian elimination with partial pivoting.
pub fn mat_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols = b[0].len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(ar, br)| ar.iter().chain(br.iter()).copied().collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            for k in col..n + cols {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
        }
    }
    (0..n)
        .map(|i| (0..cols).map(|j| m[i][n + j] / m[i][i]).collect())
        .collect()
}

/// Exact stepping operators for a linear system x' = A·x + b with b held
/// constant over the step: x1 = phi·x0 + psi·b.
pub struct LinearStepper {
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

impl LinearStepper {
    pub fn new(a: &[Vec<f64>], dt: f64) -> Self {
        let n = a.len();
        let a_dt: Vec<Vec<f64>> = a
            .iter()
            .map(|row| row.iter().map(|v| v * dt).collect())
            .collect();
        let phi = expm(&a_dt);
        // psi = A^{-1}(phi - I)
        let mut rhs = phi.clone();
        for i in 0..n {
            rhs[i][i] -= 1.0;
        }
        let psi = mat_solve(a, &rhs);
        Self { phi, psi }
    }

    pub fn step(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let hom = mat_vec(&self.phi, x);
        let part = mat_vec(&self.psi, b);
        hom.iter().zip(&part).map(|(h, p)| h + p).collect()
    }
}

/// Fine-grid finite-volume pipe with CFL-exact advection (one cell per
/// substep) and exact exponential ambient loss per cell. Flows must be
/// chosen so a step covers an integer number of cell transits.
pub struct FvPipe {
    pub cells: Vec<f64>,
    pub cell_mass_kg: f64,
    pub ua_kw_k: f64,
    pub cp: f64,
}

impl FvPipe {
    pub fn new(n_cells: usize, water_mass_kg: f64, ua_kw_k: f64, t_init_c: f64) -> Self {
        Self {
            cells: vec![t_init_c; n_cells],
            cell_mass_kg: water_mass_kg / n_cells as f64,
            ua_kw_k,
            cp: 4.186,
        }
    }

    /// Advance by `dt_s`; returns the mass-averaged outlet temperature.
    pub fn advance(&mut self, flow_kg_s: f64, inlet_c: f64, ambient_c: f64, dt_s: f64) -> f64 {
        let n = self.cells.len();
        let ua_cell = self.ua_kw_k / n as f64;
        if flow_kg_s <= 0.0 {
            let decay = (-ua_cell * dt_s / (self.cell_mass_kg * self.cp)).exp();
            for c in self.cells.iter_mut() {
                *c = ambient_c + (*c - ambient_c) * decay;
            }
            return *self.cells.last().unwrap();
        }
        let transit_s = self.cell_mass_kg / flow_kg_s;
        let substeps = (dt_s / transit_s).round() as usize;
        assert!(
            ((dt_s / transit_s) - substeps as f64).abs() < 1e-6,
            "test flows must give integer cell transits per step"
        );
        let decay = (-ua_cell * transit_s / (self.cell_mass_kg * self.cp)).exp();
        let mut out_sum = 0.0;
        for _ in 0..substeps {
            for c in self.cells.iter_mut() {
                *c = ambient_c + (*c - ambient_c) * decay;
            }
            out_sum += *self.cells.last().unwrap();
            // Shift one cell towards the outlet (index n-1 is the outlet).
            for i in (1..n).rev() {
                self.cells[i] = self.cells[i - 1];
            }
            self.cells[0] = inlet_c;
        }
        out_sum / substeps as f64
    }
}

/// Brute-force enumeration oracle for storage-only planning toys: grid over
/// production levels, forward-simulate, reject band violations, return the
/// best objective.
pub fn brute_force_tank_plan(
    c_s: f64,
    u_s: f64,
    gamma_s: f64,
    cfg: &dhflex::dispatch::PlanConfig,
    inputs: &dhflex::dispatch::PlanInputs,
    levels: usize,
) -> f64 {
    let t_n = cfg.horizon_steps;
    let grid: Vec<f64> = (0..levels)
        .map(|i| cfg.p_max_kw * i as f64 / (levels - 1) as f64)
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; t_n];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let mut t_s = inputs.t_s0_c;
        let mut ok = true;
        for t in 0..t_n {
            t_s += cfg.dt_h / c_s
                * (u_s * (inputs.t_out_c[t] - t_s) + gamma_s * p[t] - inputs.offtake_kw[t]);
            if t_s < cfg.tank_band_c.0 - 1e-9 || t_s > cfg.tank_band_c.1 + 1e-9 {
                ok = false;
                break;
            }
        }
        if ok {
            let mut cost = 0.0;
            for (t, pt) in p.iter().enumerate() {
                cost += pt * inputs.lambda_eur_mwh[t] * cfg.dt_h / 1000.0;
            }
            for w in p.windows(2) {
                cost += cfg.alpha_eur_per_kw * (w[1] - w[0]).abs();
            }
            best = best.min(cost);
        }
        let mut k = 0;
        loop {
            if k == t_n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < levels {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
