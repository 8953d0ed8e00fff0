//! Physical and control constants shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicle and road constants. Field names follow the usual notation
/// (`h` is the safe time headway, `s0` the standstill gap).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub h: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "Vf")]
    pub v_free: f64,
    pub a_min: f64,
    pub a_max: f64,
    #[serde(rename = "J_max")]
    pub j_max: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            h: 1.5,
            s0: 4.0,
            length: 4.5,
            v_free: 15.0,
            a_min: -5.0,
            a_max: 2.0,
            j_max: 2.0,
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("S0", self.s0),
            ("L", self.length),
            ("Vf", self.v_free),
            ("a_max", self.a_max),
            ("J_max", self.j_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.a_min < 0.0) {
            return Err(Error::Param(format!("a_min must be negative, got {}", self.a_min)));
        }
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if w < 0.0 {
                return Err(Error::Param(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Slot pitch `h*Vf + S0 + L`, the front-to-front spacing of free-flow traffic.
    pub fn slot_pitch(&self) -> f64 {
        self.h * self.v_free + self.s0 + self.length
    }

    /// Speed cap used by the integrator.
    pub fn v_cap(&self) -> f64 {
        1.05 * self.v_free
    }
}

/// Minimum front-bumper headway in seconds, which is also the simulation step.
pub fn time_step_tau(p: &Params) -> f64 {
    p.h + (p.s0 + p.length) / p.v_free
}

/// Gains of the safety-mode car-following law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controller {
    pub k_p: f64,
    pub k_v: f64,
    /// Extra spacing required before a safety-mode vehicle may resume speed tracking.
    pub hysteresis_margin: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Controller { k_p: 0.1, k_v: 0.6, hysteresis_margin: 0.5 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_for_default_constants() {
        let p = Params::default();
        assert!((time_step_tau(&p) - 31.0 / 15.0).abs() < 1e-12);
        assert!((p.slot_pitch() - 31.0).abs() < 1e-12);
    }

    #[test]
    fn tau_other_values() {
        let p = Params { h: 1.0, s0: 5.0, length: 5.0, v_free: 10.0, ..Params::default() };
        assert!((time_step_tau(&p) - 2.0).abs() < 1e-12);
        // Vanishing gap terms leave only the headway constant. Validation
        // rejects these values, but the formula itself is total.
        let q = Params { s0: 0.0, length: 0.0, ..Params::default() };
        assert_eq!(time_step_tau(&q), q.h);
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(Params { a_min: 1.0, ..Params::default() }.validate().is_err());
        assert!(Params { v_free: 0.0, ..Params::default() }.validate().is_err());
        assert!(Params::default().validate().is_ok());
    }
}
