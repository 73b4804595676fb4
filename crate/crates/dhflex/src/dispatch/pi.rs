//! Central PI trim loop of the real-time dispatch step.
//!
//! The market clearing quantizes consumption to bid tiers, so the realized
//! cluster power drifts from the planned profile. The PI controller shifts
//! the clearing target to cancel that drift, with conditional integration as
//! anti-windup against the actuator bounds.

#[derive(Debug, Clone)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    integral: f64,
}

impl Default for PiController {
    fn default() -> Self {
        // Tuned on the first-order mock plant test below (per control step);
        // also stable on a pure one-step-delay plant (poles 0.78, -0.58).
        Self::new(0.45, 0.35)
    }
}

impl PiController {
    pub fn new(kp: f64, ki: f64) -> Self {
        debug_assert!(kp >= 0.0 && ki >= 0.0);
        Self {
            kp,
            ki,
            integral: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    /// Adjusted dispatch target for the next round: the plan plus the PI
    /// correction, clamped to `[out_min, out_max]`.
    pub fn trim(&mut self, target_kw: f64, measured_kw: f64, out_min: f64, out_max: f64) -> f64 {
        let error = target_kw - measured_kw;
        let candidate = self.integral + error;
        let u = target_kw + self.kp * error + self.ki * candidate;
        if u > out_max {
            // Only integrate when it pulls the output back inside.
            if error < 0.0 {
                self.integral = candidate;
            }
            out_max
        } else if u < out_min {
            if error > 0.0 {
                self.integral = candidate;
            }
            out_min
        } else {
            self.integral = candidate;
            u
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn no_error_passes_target_through() {
        let mut pi = PiController::default();
        let u = pi.trim(100.0, 100.0, 0.0, 1000.0);
        assert_relative_eq!(u, 100.0);
    }

    #[test]
    fn persistent_offset_is_integrated_away() {
        // Plant with a constant -10 kW delivery offset.
        let mut pi = PiController::default();
        let target = 200.0;
        let mut measured = target - 10.0;
        for _ in 0..120 {
            let u = pi.trim(target, measured, 0.0, 1000.0);
            measured = u - 10.0;
        }
        assert!(
            (measured - target).abs() < 0.01,
            "residual offset {measured}"
        );
    }

    #[test]
    fn step_disturbance_settles_within_ten_steps() {
        // First-order mock plant: m' = m + 0.6 (u - d - m).
        let mut pi = PiController::default();
        let target = 100.0;
        let mut m = target;
        let mut u = target;
        // Warm up at zero disturbance.
        for _ in 0..5 {
            m += 0.6 * (u - m);
            u = pi.trim(target, m, 0.0, 1000.0);
        }
        // 20 kW step disturbance.
        let mut settled_at = None;
        for k in 0..30 {
            m += 0.6 * (u - 20.0 - m);
            u = pi.trim(target, m, 0.0, 1000.0);
            if settled_at.is_none() && (m - target).abs() < 0.02 * target {
                settled_at = Some(k);
            }
        }
        let k = settled_at.expect("never settled");
        assert!(k <= 10, "settled after {k} steps");
        assert!((m - target).abs() < 0.02 * target);
    }

    #[test]
    fn anti_windup_recovers_quickly_after_saturation() {
        let mut pi = PiController::default();
        // Saturated low actuator for a while.
        for _ in 0..50 {
            pi.trim(500.0, 0.0, 0.0, 100.0);
        }
        // Once the plant can follow again the output must not overshoot for
        // long: the integral was not wound up during saturation.
        let mut measured = 90.0;
        let mut overshoot: f64 = 0.0;
        for _ in 0..20 {
            let u = pi.trim(100.0, measured, 0.0, 1000.0);
            measured = u;
            overshoot = overshoot.max(measured - 100.0);
        }
        assert!(overshoot < 40.0, "windup overshoot {overshoot}");
        assert!((measured - 100.0).abs() < 1.0);
    }
}
