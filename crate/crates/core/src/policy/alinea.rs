use super::{Gate, MergeGate, Observation, PolicyKind, RampPolicy, StepReport};
use crate::error::{Error, Result};

/// Integral occupancy feedback for one ramp. Rates are veh/h, occupancy is
/// percent and the gain is veh/h per percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlineaState {
    pub r: f64,
    pub o_hat: f64,
    pub k_r: f64,
    pub r_min: f64,
    pub r_max: f64,
}

/// `r <- clamp(r + K_r (o_hat - o), r_min, r_max)`.
pub fn alinea_step(s: &AlineaState, occupancy_pct: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&occupancy_pct) {
        return Err(Error::Param(format!("occupancy {occupancy_pct}% outside [0, 100]")));
    }
    Ok((s.r + s.k_r * (s.o_hat - occupancy_pct)).clamp(s.r_min, s.r_max))
}

/// Releases paced by a token bucket filled at the metered rate. The bucket
/// holds at most one vehicle, so a blocked or empty ramp cannot bank a burst.
#[derive(Clone, Debug)]
pub struct Alinea {
    state: Vec<AlineaState>,
    tokens: Vec<f64>,
    period: f64,
    period_index: u64,
    window_start: f64,
    integral_at_start: Vec<f64>,
    safe: bool,
}

impl Alinea {
    pub fn new(m: usize, s: AlineaState, period: f64, safe: bool) -> Self {
        Alinea {
            state: vec![s; m],
            tokens: vec![0.0; m],
            period,
            period_index: 0,
            window_start: 0.0,
            integral_at_start: vec![0.0; m],
            safe,
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.state.iter().map(|s| s.r).collect()
    }
}

impl RampPolicy for Alinea {
    fn kind(&self) -> PolicyKind {
        if self.safe {
            PolicyKind::SafeAlinea
        } else {
            PolicyKind::Alinea
        }
    }

    fn step(&mut self, obs: &Observation, gate: &mut dyn MergeGate) -> StepReport {
        let t = obs.time();
        let idx = (t / self.period).floor() as u64;
        if idx > self.period_index && t > self.window_start {
            for i in 0..self.state.len() {
                let o = (obs.occupancy_integral[i] - self.integral_at_start[i]) / (t - self.window_start);
                // Occupancy is a time average of a fraction, so it cannot
                // leave [0, 100] except through rounding.
                if let Ok(r) = alinea_step(&self.state[i], o.clamp(0.0, 100.0)) {
                    self.state[i].r = r;
                }
                self.integral_at_start[i] = obs.occupancy_integral[i];
            }
            self.period_index = idx;
            self.window_start = t;
        }
        let check = if self.safe { Gate::SAFE } else { Gate::Unchecked };
        let mut rep = StepReport::default();
        for i in 0..self.state.len() {
            self.tokens[i] = (self.tokens[i] + self.state[i].r * obs.tau / 3600.0).min(1.0);
            if self.tokens[i] >= 1.0 - 1e-12 && obs.queues[i] > 0 && gate.try_release(i, check) {
                self.tokens[i] = 0.0;
                rep.released.push(i);
            }
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::testing::drive;

    fn state() -> AlineaState {
        AlineaState { r: 1000.0, o_hat: 13.0, k_r: 70.0, r_min: 0.0, r_max: 1742.0 }
    }

    #[test]
    fn feedback_arithmetic() {
        assert_eq!(alinea_step(&state(), 13.0).unwrap(), 1000.0);
        assert!((alinea_step(&state(), 10.0).unwrap() - 1210.0).abs() < 1e-9);
        assert_eq!(alinea_step(&state(), 0.0).unwrap(), 1742.0);
        assert!(alinea_step(&state(), 120.0).is_err());
    }

    #[test]
    fn pacing_follows_rate() {
        let tau = 2.0;
        // 900 veh/h at 2 s steps is one vehicle every other step.
        let s = AlineaState { r: 900.0, ..state() };
        let mut a = Alinea::new(1, s, 1e9, false);
        let mut q = [1000];
        let rel = drive(&mut a, &mut q, 100, tau);
        assert_eq!(rel.len(), 50);
    }
}
