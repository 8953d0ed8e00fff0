use super::{Gate, MergeGate, Observation, PolicyKind, RampPolicy, StepReport};

/// Cycles of variable length: each cycle every ramp may release as many
/// vehicles as it had queued when the cycle began, and the next cycle starts
/// once all ramps are done. The first cycle waits for free flow.
#[derive(Clone, Debug)]
pub struct Renewal {
    started: bool,
    remaining: Vec<usize>,
}

impl Renewal {
    pub fn new(m: usize) -> Self {
        Renewal { started: false, remaining: vec![0; m] }
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }
}

impl RampPolicy for Renewal {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Renewal
    }

    fn step(&mut self, obs: &Observation, gate: &mut dyn MergeGate) -> StepReport {
        let mut rep = StepReport::default();
        if !self.started {
            if !obs.free_flow {
                return rep;
            }
            self.started = true;
        }
        if self.remaining.iter().all(|&q| q == 0) {
            self.remaining.copy_from_slice(obs.queues);
            rep.cycle_start = Some(self.remaining.clone());
        }
        for i in 0..self.remaining.len() {
            if self.remaining[i] > 0 && obs.queues[i] > 0 && gate.try_release(i, Gate::SAFE) {
                self.remaining[i] -= 1;
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
    use crate::policy::testing::ScriptGate;
    use crate::policy::MonitorSample;

    #[test]
    fn three_then_new_cycle() {
        let mut r = Renewal::new(3);
        let mut q = [3, 0, 0];
        let rel = drive(&mut r, &mut q, 4, 1.0);
        assert_eq!(rel, vec![(0, 0), (1, 0), (2, 0)]);
    }

    #[test]
    fn waits_for_free_flow() {
        let mut r = Renewal::new(1);
        let mon = MonitorSample::empty(1);
        let mut gate = ScriptGate::open();
        let obs = Observation {
            step: 0,
            tau: 1.0,
            queues: &[4],
            free_flow: false,
            monitors: &mon,
            occupancy_integral: &[0.0],
        };
        assert!(r.step(&obs, &mut gate).released.is_empty());
        let obs = Observation { free_flow: true, ..obs };
        let rep = r.step(&obs, &mut gate);
        assert_eq!(rep.cycle_start, Some(vec![4]));
        assert_eq!(rep.released, vec![0]);
    }

    #[test]
    fn empty_cycles_roll_every_step() {
        let mut r = Renewal::new(2);
        let mon = MonitorSample::empty(2);
        let mut gate = ScriptGate::open();
        for step in 0..3 {
            let obs = Observation {
                step,
                tau: 1.0,
                queues: &[0, 0],
                free_flow: true,
                monitors: &mon,
                occupancy_integral: &[0.0; 2],
            };
            assert_eq!(r.step(&obs, &mut gate).cycle_start, Some(vec![0, 0]));
        }
    }
}
