use super::{Gate, MergeGate, Observation, PolicyKind, RampPolicy, StepReport};

/// Constants of the minimum-time-gap update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrrConstants {
    pub gamma1: f64,
    pub theta2: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrrState {
    /// Minimum time gap between releases of one ramp (s).
    pub g: f64,
    /// Current increment (s).
    pub theta: f64,
}

fn improved(now: f64, prev: f64, gamma1: f64) -> bool {
    now <= (prev - gamma1).max(0.0)
}

/// One period of the gap update. An improving monitor shrinks the gap by
/// `theta2`; otherwise the increment grows by `beta` and is added.
pub fn drr_gap_update(s: DrrState, x_now: f64, x_prev: f64, c: &DrrConstants) -> DrrState {
    if improved(x_now, x_prev, c.gamma1) {
        DrrState { g: (s.g - c.theta2).max(0.0), theta: s.theta }
    } else {
        let theta = c.beta * s.theta;
        DrrState { g: s.g + theta, theta }
    }
}

/// Per-ramp state of the distributed variant.
#[derive(Clone, Debug, PartialEq)]
pub struct DisDrrRamp {
    pub gap: DrrState,
    /// Local monitor one and two periods ago.
    hist: [Option<f64>; 2],
    /// Downstream monitor one period ago.
    down_prev: Option<f64>,
}

#[derive(Clone, Debug)]
enum Adapt {
    None,
    Drr { state: DrrState, prev: Option<f64>, c: DrrConstants, t_per: u64 },
    DisDrr { ramps: Vec<DisDrrRamp>, c: DrrConstants, t_per: u64, t_max: f64, downstream: Vec<Vec<usize>> },
    Dsg { kappa1: f64, kappa2: f64 },
}

/// Fixed-length cycles with queue-snapshot quotas. Greedy is the one-step
/// cycle; the adaptive policies add a time gap or a space gap on top.
#[derive(Clone, Debug)]
pub struct FixedCycle {
    kind: PolicyKind,
    t_cyc: u64,
    remaining: Vec<usize>,
    last_release: Vec<Option<u64>>,
    adapt: Adapt,
}

impl FixedCycle {
    fn base(kind: PolicyKind, m: usize, t_cyc: u64, adapt: Adapt) -> Self {
        FixedCycle { kind, t_cyc: t_cyc.max(1), remaining: vec![0; m], last_release: vec![None; m], adapt }
    }

    pub fn fcq(m: usize, t_cyc: u64) -> Self {
        Self::base(PolicyKind::Fcq, m, t_cyc, Adapt::None)
    }

    pub fn greedy(m: usize) -> Self {
        Self::base(PolicyKind::Greedy, m, 1, Adapt::None)
    }

    pub fn drr(m: usize, t_cyc: u64, t_per: u64, theta0: f64, c: DrrConstants) -> Self {
        let state = DrrState { g: 0.0, theta: theta0 };
        Self::base(PolicyKind::Drr, m, t_cyc, Adapt::Drr { state, prev: None, c, t_per })
    }

    pub fn dis_drr(
        m: usize,
        t_cyc: u64,
        t_per: u64,
        theta0: f64,
        t_max: f64,
        c: DrrConstants,
        downstream: Vec<Vec<usize>>,
    ) -> Self {
        let ramp = DisDrrRamp { gap: DrrState { g: 0.0, theta: theta0 }, hist: [None; 2], down_prev: None };
        let adapt = Adapt::DisDrr { ramps: vec![ramp; m], c, t_per, t_max, downstream };
        Self::base(PolicyKind::DisDrr, m, t_cyc, adapt)
    }

    pub fn dsg(m: usize, t_cyc: u64, kappa1: f64, kappa2: f64) -> Self {
        Self::base(PolicyKind::Dsg, m, t_cyc, Adapt::Dsg { kappa1, kappa2 })
    }

    pub fn t_cyc(&self) -> u64 {
        self.t_cyc
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    /// Global gap state of the centralized variant.
    pub fn drr_state(&self) -> Option<DrrState> {
        match &self.adapt {
            Adapt::Drr { state, .. } => Some(*state),
            _ => None,
        }
    }

    pub fn dis_drr_state(&self) -> Option<&[DisDrrRamp]> {
        match &self.adapt {
            Adapt::DisDrr { ramps, .. } => Some(ramps),
            _ => None,
        }
    }

    fn gap_of(&self, ramp: usize) -> f64 {
        match &self.adapt {
            Adapt::Drr { state, .. } => state.g,
            Adapt::DisDrr { ramps, .. } => ramps[ramp].gap.g,
            _ => 0.0,
        }
    }

    fn adapt_gaps(&mut self, obs: &Observation) {
        match &mut self.adapt {
            Adapt::Drr { state, prev, c, t_per } => {
                if obs.step % *t_per != 0 {
                    return;
                }
                let now = obs.monitors.x_f();
                if let Some(p) = *prev {
                    *state = drr_gap_update(*state, now, p, c);
                }
                *prev = Some(now);
            }
            Adapt::DisDrr { ramps, c, t_per, t_max, downstream } => {
                if obs.step % *t_per != 0 {
                    return;
                }
                let m = ramps.len();
                let old: Vec<f64> = ramps.iter().map(|r| r.gap.g).collect();
                for i in 0..m {
                    let local = obs.monitors.per_link[i];
                    let down: f64 = downstream[i].iter().map(|&j| obs.monitors.per_link[j]).sum();
                    let r = &mut ramps[i];
                    if let (Some(h1), Some(h2), Some(d1)) = (r.hist[0], r.hist[1], r.down_prev) {
                        // Last ramp of a straight road has no downstream neighbour.
                        let next_gap = if i + 1 < m || downstream[i].len() == m { old[(i + 1) % m] } else { 0.0 };
                        r.gap = if improved(local, h1, c.gamma1) {
                            if next_gap <= *t_max || improved(down, d1, c.gamma1) {
                                DrrState { g: (r.gap.g - c.theta2).max(0.0), theta: r.gap.theta }
                            } else {
                                let theta = c.beta * r.gap.theta;
                                DrrState { g: r.gap.g + theta, theta }
                            }
                        } else {
                            let theta = if improved(h1, h2, c.gamma1) { c.beta * r.gap.theta } else { r.gap.theta };
                            DrrState { g: r.gap.g + theta, theta }
                        };
                    }
                    r.hist = [Some(local), r.hist[0]];
                    r.down_prev = Some(down);
                }
            }
            _ => {}
        }
    }

    fn extra_gap(&self, obs: &Observation) -> f64 {
        match self.adapt {
            Adapt::Dsg { kappa1, kappa2 } => kappa1 * obs.monitors.x_f1 + kappa2 * obs.monitors.spacing_error,
            _ => 0.0,
        }
    }
}

impl RampPolicy for FixedCycle {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn step(&mut self, obs: &Observation, gate: &mut dyn MergeGate) -> StepReport {
        let mut rep = StepReport::default();
        self.adapt_gaps(obs);
        if obs.step % self.t_cyc == 0 {
            self.remaining.copy_from_slice(obs.queues);
            rep.cycle_start = Some(self.remaining.clone());
        }
        let extra_gap = self.extra_gap(obs);
        for i in 0..self.remaining.len() {
            if self.remaining[i] == 0 || obs.queues[i] == 0 {
                continue;
            }
            let g = self.gap_of(i);
            let waited = self.last_release[i].map_or(true, |last| (obs.step - last) as f64 * obs.tau >= g - 1e-9);
            if waited && gate.try_release(i, Gate::Checked { extra_gap }) {
                self.remaining[i] -= 1;
                self.last_release[i] = Some(obs.step);
                rep.released.push(i);
            }
        }
        rep
    }

    fn gaps(&self) -> Vec<f64> {
        (0..self.remaining.len()).map(|i| self.gap_of(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::testing::{drive, ScriptGate};
    use crate::policy::MonitorSample;

    const C: DrrConstants = DrrConstants { gamma1: 50.0, theta2: 10.0, beta: 1.01 };

    #[test]
    fn gap_update_branches() {
        let s = DrrState { g: 0.0, theta: 0.1 };
        assert_eq!(drr_gap_update(s, 0.0, 0.0, &C), s);
        let up = drr_gap_update(s, 1.0, 0.0, &C);
        assert!((up.theta - 0.101).abs() < 1e-12 && (up.g - 0.101).abs() < 1e-12);
        // max(40 - 50, 0) = 0, so only a zero monitor counts as improvement.
        assert_eq!(drr_gap_update(s, 0.0, 40.0, &C), s);
        assert_ne!(drr_gap_update(s, 0.5, 40.0, &C), s);
    }

    #[test]
    fn fcq_quota_hand_trace() {
        let mut p = FixedCycle::fcq(1, 3);
        let mut q = [5];
        let rel = drive(&mut p, &mut q, 6, 1.0);
        assert_eq!(rel.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cycle_boundaries() {
        let mut p = FixedCycle::fcq(2, 7);
        let mon = MonitorSample::empty(2);
        let mut gate = ScriptGate::open();
        for step in 0..1000u64 {
            let obs = Observation {
                step,
                tau: 2.0,
                queues: &[0, 0],
                free_flow: true,
                monitors: &mon,
                occupancy_integral: &[0.0; 2],
            };
            let rep = p.step(&obs, &mut gate);
            assert_eq!(rep.cycle_start.is_some(), step % 7 == 0);
        }
    }

    #[test]
    fn time_gap_spaces_releases() {
        let tau = 31.0 / 15.0;
        // A monitor period longer than the run keeps the gap frozen.
        let mut p = FixedCycle::drr(1, 1, 1_000_000, 0.1, C);
        if let Adapt::Drr { state, .. } = &mut p.adapt {
            state.g = 3.0 * tau;
        }
        let mut q = [100];
        let rel = drive(&mut p, &mut q, 10, tau);
        let steps: Vec<u64> = rel.iter().map(|r| r.0).collect();
        assert_eq!(&steps[..3], &[0, 3, 6]);
    }

    #[test]
    fn distributed_escalation_branch() {
        let mut p = FixedCycle::dis_drr(2, 1, 1, 0.1, 100.0, C, vec![vec![0, 1], vec![0, 1]]);
        let mut gate = ScriptGate::open();
        let mut run = |p: &mut FixedCycle, step: u64, x: [f64; 2]| {
            let mon = MonitorSample { per_link: x.to_vec(), ..Default::default() };
            let obs = Observation {
                step,
                tau: 1.0,
                queues: &[0, 0],
                free_flow: true,
                monitors: &mon,
                occupancy_integral: &[0.0; 2],
            };
            p.step(&obs, &mut gate);
        };
        // Non-improving twice: theta kept, gap grows by theta.
        run(&mut p, 0, [5.0, 0.0]);
        run(&mut p, 1, [5.0, 0.0]);
        run(&mut p, 2, [5.0, 0.0]);
        let r = &p.dis_drr_state().unwrap()[0];
        assert!((r.gap.g - 0.1).abs() < 1e-12 && (r.gap.theta - 0.1).abs() < 1e-12);
        // Improvement, then failure: theta grows by beta.
        run(&mut p, 3, [0.0, 0.0]);
        run(&mut p, 4, [5.0, 0.0]);
        let r = &p.dis_drr_state().unwrap()[0];
        assert!((r.gap.theta - 0.101).abs() < 1e-12);
        assert!((r.gap.g - 0.101).abs() < 1e-12);
    }

    #[test]
    fn greedy_is_one_step_fcq() {
        let mut a = FixedCycle::greedy(3);
        let mut b = FixedCycle::fcq(3, 1);
        let mut qa = [4, 0, 2];
        let mut qb = qa;
        assert_eq!(drive(&mut a, &mut qa, 8, 1.0), drive(&mut b, &mut qb, 8, 1.0));
    }
}
