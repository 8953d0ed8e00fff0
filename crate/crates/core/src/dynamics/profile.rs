use serde::{Deserialize, Serialize};

use crate::params::Params;

/// Position, speed and acceleration at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Kin {
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

impl Kin {
    /// Advances under constant jerk `j` for `dt` seconds.
    pub fn advance(self, j: f64, dt: f64) -> Kin {
        Kin {
            x: self.x + self.v * dt + self.a * dt * dt / 2.0 + j * dt * dt * dt / 6.0,
            v: self.v + self.a * dt + j * dt * dt / 2.0,
            a: self.a + j * dt,
        }
    }
}

/// Jerk-limited speed-tracking trajectory: up to three constant-jerk
/// segments, then cruise at the target speed. Positions are relative to the
/// start of the profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JerkProfile {
    start: Kin,
    segs: [(f64, f64); 3],
    knots: [Kin; 4],
    target: f64,
}

impl JerkProfile {
    /// Profile from `(v0, a0)` to `(Vf, 0)` with peak acceleration capped at
    /// `a_max` and jerk at `J_max`.
    pub fn speed_tracking(v0: f64, a0: f64, p: &Params) -> JerkProfile {
        Self::towards(v0, a0, p.v_free, p.a_max, p.j_max)
    }

    /// General solver. Targets below the current speed are handled by
    /// mirroring the problem and negating the jerks.
    pub fn towards(v0: f64, a0: f64, target: f64, cap: f64, jerk: f64) -> JerkProfile {
        let v0 = v0.max(0.0);
        // A strongly negative a0 at low speed would otherwise carry the speed
        // below zero before the acceleration recovers.
        let a0 = if a0 < 0.0 && v0 - a0 * a0 / (2.0 * jerk) < 0.0 { -(2.0 * jerk * v0).sqrt() } else { a0 };
        let stop_dv = a0 * a0.abs() / (2.0 * jerk);
        let segs = if v0 + stop_dv <= target {
            rising(target - v0, a0, cap, jerk)
        } else {
            let s = rising(v0 - target, -a0, cap, jerk);
            [(s[0].0, -s[0].1), (s[1].0, -s[1].1), (s[2].0, -s[2].1)]
        };
        let start = Kin { x: 0.0, v: v0, a: a0 };
        let mut knots = [start; 4];
        for i in 0..3 {
            knots[i + 1] = knots[i].advance(segs[i].1, segs[i].0);
        }
        // Clean up rounding so the terminal state is exact.
        knots[3].v = target;
        knots[3].a = 0.0;
        JerkProfile { start, segs, knots, target }
    }

    /// A profile that has already finished: constant speed `v`.
    pub fn cruise(v: f64) -> JerkProfile {
        let start = Kin { x: 0.0, v, a: 0.0 };
        JerkProfile { start, segs: [(0.0, 0.0); 3], knots: [start; 4], target: v }
    }

    pub fn phases(&self) -> [f64; 3] {
        [self.segs[0].0, self.segs[1].0, self.segs[2].0]
    }

    pub fn duration(&self) -> f64 {
        self.segs.iter().map(|s| s.0).sum()
    }

    pub fn start(&self) -> Kin {
        self.start
    }

    pub fn end(&self) -> Kin {
        self.knots[3]
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// State `s` seconds after the start; negative `s` returns the start.
    pub fn eval(&self, s: f64) -> Kin {
        if s <= 0.0 {
            return self.start;
        }
        let mut t = s;
        for i in 0..3 {
            let (d, j) = self.segs[i];
            if t <= d {
                return self.knots[i].advance(j, t);
            }
            t -= d;
        }
        let e = self.knots[3];
        Kin { x: e.x + e.v * t, v: e.v, a: 0.0 }
    }

    /// Distance lost against a vehicle that cruised at the target speed from
    /// the start, measured once the profile has finished.
    pub fn deficit(&self) -> f64 {
        self.target * self.duration() - self.knots[3].x
    }

    /// Time needed to cover `dist` metres, or infinity if never.
    pub fn time_to_travel(&self, dist: f64) -> f64 {
        if dist <= 0.0 {
            return 0.0;
        }
        let end = self.knots[3];
        if dist >= end.x {
            if end.v <= 0.0 {
                return f64::INFINITY;
            }
            return self.duration() + (dist - end.x) / end.v;
        }
        let (mut lo, mut hi) = (0.0, self.duration());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).x < dist {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Earliest time at which the speed reaches `v` (profile must be rising).
    pub fn time_to_speed(&self, v: f64) -> f64 {
        if v <= self.start.v {
            return 0.0;
        }
        if v >= self.target {
            return self.duration();
        }
        let (mut lo, mut hi) = (0.0, self.duration());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).v < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Segments for a speed gain `dv` that needs a non-negative peak acceleration.
fn rising(dv: f64, a0: f64, cap: f64, jerk: f64) -> [(f64, f64); 3] {
    if a0 >= cap {
        // Ease down to the cap, hold, then ramp to zero.
        let hold = ((dv - a0 * a0 / (2.0 * jerk)) / cap).max(0.0);
        return [((a0 - cap) / jerk, -jerk), (hold, 0.0), (cap / jerk, -jerk)];
    }
    let tri = ((2.0 * jerk * dv + a0 * a0) / 2.0).max(0.0).sqrt();
    let (peak, hold) =
        if tri <= cap { (tri, 0.0) } else { (cap, ((dv - (2.0 * cap * cap - a0 * a0) / (2.0 * jerk)) / cap).max(0.0)) };
    [(((peak - a0) / jerk).max(0.0), jerk), (hold, 0.0), (peak / jerk, -jerk)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rest_phase_times() {
        let p = Params::default();
        let prof = JerkProfile::speed_tracking(0.0, 0.0, &p);
        let [t1, t2, t3] = prof.phases();
        assert!((t1 - 1.0).abs() < 1e-12);
        assert!((t2 - 6.5).abs() < 1e-12);
        assert!((t3 - 1.0).abs() < 1e-12);
        assert!((prof.duration() - 8.5).abs() < 1e-12);
    }

    #[test]
    fn at_target_is_identity() {
        let p = Params::default();
        let prof = JerkProfile::speed_tracking(p.v_free, 0.0, &p);
        assert_eq!(prof.duration(), 0.0);
        let k = prof.eval(3.0);
        assert_eq!(k.v, 15.0);
        assert!((k.x - 45.0).abs() < 1e-12);
    }

    #[test]
    fn triangular_fallback_for_small_gain() {
        let p = Params::default();
        let prof = JerkProfile::speed_tracking(14.5, 0.0, &p);
        assert_eq!(prof.phases()[1], 0.0);
        let end = prof.eval(prof.duration());
        assert!((end.v - 15.0).abs() < 1e-9);
    }

    #[test]
    fn overspeed_is_mirrored() {
        let p = Params::default();
        let prof = JerkProfile::speed_tracking(15.7, 0.3, &p);
        let end = prof.eval(prof.duration());
        assert!((end.v - 15.0).abs() < 1e-9 && end.a.abs() < 1e-9);
        assert!(prof.segs[2].1 > 0.0);
    }

    #[test]
    fn travel_time_inverts_position() {
        let p = Params::default();
        let prof = JerkProfile::speed_tracking(0.0, 0.0, &p);
        for d in [0.5, 3.0, 20.0, 63.0, 200.0] {
            let t = prof.time_to_travel(d);
            assert!((prof.eval(t).x - d).abs() < 1e-9);
        }
    }
}
