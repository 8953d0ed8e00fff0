use super::PolicyKind;

/// Traffic observed in one step, as needed for transmission counting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommCounts {
    /// Connected vehicles on the mainline and acceleration lanes.
    pub on_road: usize,
    /// Connected vehicles inside merge areas.
    pub in_merge_areas: usize,
    /// Ramps that exhausted their quota this step (cycle coordination).
    pub quota_reports: usize,
    /// Whether any release was attempted this step.
    pub release_attempted: bool,
}

/// Lattice sizes entering the worst-case bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommLimits {
    pub n_c: usize,
    pub n_a: usize,
    pub n_m: usize,
    pub m: usize,
    pub t_per: u64,
}

/// Running transmission average per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommAccount {
    pub total: u64,
    pub coordination: u64,
    pub steps: u64,
}

impl CommAccount {
    /// Transmissions in one step under `kind`'s information needs.
    pub fn transmissions(kind: PolicyKind, step: u64, t_per: u64, m: usize, c: &CommCounts) -> u64 {
        let tick = step % t_per.max(1) == 0;
        let n = c.on_road as u64;
        let merge = c.in_merge_areas as u64;
        match kind {
            PolicyKind::Greedy | PolicyKind::Fcq => merge,
            PolicyKind::Renewal => n + c.quota_reports as u64,
            PolicyKind::Drr => merge + if tick { m as u64 * n } else { 0 },
            PolicyKind::DisDrr => merge + if tick { n } else { 0 },
            PolicyKind::Dsg => m as u64 * n,
            PolicyKind::Alinea => 0,
            PolicyKind::SafeAlinea => {
                if c.release_attempted {
                    merge
                } else {
                    0
                }
            }
        }
    }

    pub fn record(&mut self, kind: PolicyKind, step: u64, t_per: u64, m: usize, c: &CommCounts) -> u64 {
        let x = Self::transmissions(kind, step, t_per, m, c);
        self.total += x;
        if kind == PolicyKind::Renewal {
            self.coordination += c.quota_reports as u64;
        }
        self.steps += 1;
        x
    }

    pub fn average(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total as f64 / self.steps as f64
        }
    }

    /// Worst-case average for `kind`; the coordination constant is the
    /// measured average of quota reports.
    pub fn bound(&self, kind: PolicyKind, l: &CommLimits) -> f64 {
        let lanes = (l.n_c + l.n_a) as f64;
        let c = if self.steps == 0 { 0.0 } else { self.coordination as f64 / self.steps as f64 };
        let t_per = l.t_per.max(1) as f64;
        match kind {
            PolicyKind::Renewal => lanes + c,
            PolicyKind::Drr => l.m as f64 * lanes / t_per + l.n_m as f64 + c,
            PolicyKind::DisDrr => lanes / t_per + l.n_m as f64 + c,
            PolicyKind::Dsg => lanes * l.m as f64 + c,
            PolicyKind::Greedy | PolicyKind::Fcq | PolicyKind::SafeAlinea => l.n_m as f64,
            PolicyKind::Alinea => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_greedy_costs_nothing() {
        let mut a = CommAccount::default();
        for s in 0..10 {
            a.record(PolicyKind::Greedy, s, 2, 3, &CommCounts::default());
        }
        assert_eq!(a.average(), 0.0);
    }

    #[test]
    fn drr_broadcasts_on_ticks_only() {
        let c = CommCounts { on_road: 10, in_merge_areas: 2, ..Default::default() };
        assert_eq!(CommAccount::transmissions(PolicyKind::Drr, 4, 2, 3, &c), 32);
        assert_eq!(CommAccount::transmissions(PolicyKind::Drr, 5, 2, 3, &c), 2);
    }
}
