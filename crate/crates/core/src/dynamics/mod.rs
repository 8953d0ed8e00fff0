//! Vehicle kinematics, the two driving modes, and merge prediction.

mod headway;
mod merge;
mod profile;

pub use headway::{blocking_offsets, merge_headway_multiple, run_for_merge_speed, BlockingOffsets};
pub use merge::{
    assign_virtual_leader, merge_window_clear, predict_crossing_time, predict_state, MergePrediction, Neighbor,
};
pub use profile::{JerkProfile, Kin};

use serde::{Deserialize, Serialize};

use crate::params::{Controller, Params};

/// Absolute slack used in every spacing comparison. Free-flow traffic sits
/// exactly at the safety distance, so exact comparisons would flip on
/// rounding noise.
pub const GAP_TOL: f64 = 1e-6;

/// Minimum safe front-to-rear gap for a follower at `v_e` behind a leader at `v_l`.
pub fn safety_distance(v_e: f64, v_l: f64, p: &Params) -> f64 {
    p.h * v_e + p.s0 + (v_e * v_e - v_l * v_l) / (2.0 * p.a_min.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    SpeedTracking,
    Safety,
}

/// Speed-tracking anchor: the profile started at `t0` from position `p0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub profile: JerkProfile,
    pub t0: f64,
    pub p0: f64,
}

impl Track {
    pub fn at(&self, t: f64) -> Kin {
        let k = self.profile.eval(t - self.t0);
        Kin { x: self.p0 + k.x, ..k }
    }
}

/// Per-vehicle state. `p` is a path coordinate whose origin depends on the
/// caller (merge-relative frames use the merge point as zero).
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub p: f64,
    pub v: f64,
    pub a: f64,
    pub mode: Mode,
    /// Set once the vehicle has ever been in safety mode.
    pub ever_safety: bool,
    pub origin: usize,
    pub dest: usize,
    pub release_time: f64,
    pub slot: Option<usize>,
    pub connected: bool,
    /// Present while in speed-tracking mode.
    pub track: Option<Track>,
}

impl VehicleState {
    /// A vehicle cruising at `v` in speed-tracking mode at time `t`.
    pub fn cruising(id: u64, p: f64, v: f64, t: f64) -> VehicleState {
        VehicleState {
            id,
            p,
            v,
            a: 0.0,
            mode: Mode::SpeedTracking,
            ever_safety: false,
            origin: 0,
            dest: 0,
            release_time: t,
            slot: None,
            connected: true,
            track: Some(Track { profile: JerkProfile::cruise(v), t0: t, p0: p }),
        }
    }

    pub fn in_safety(&self) -> bool {
        self.mode == Mode::Safety
    }
}

/// Leader information seen by a follower: front-to-rear gap and leader speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderView {
    pub gap: f64,
    pub v: f64,
}

/// Mode transition for one control tick.
///
/// Speed tracking switches to safety when the real gap, or the predicted gap
/// to the virtual leader at the merge instant, is strictly below the required
/// distance. The switch back needs `hysteresis_margin` of slack on both.
pub fn update_mode(
    ego: &VehicleState,
    leader: Option<LeaderView>,
    merge: Option<&MergePrediction>,
    p: &Params,
    c: &Controller,
) -> Mode {
    let follow_short = |margin: f64| leader.is_some_and(|l| l.gap < safety_distance(ego.v, l.v, p) + margin - GAP_TOL);
    let merge_short = |margin: f64| merge.is_some_and(|m| m.leader_shortfall(p) > -margin + GAP_TOL);
    match ego.mode {
        Mode::SpeedTracking => {
            if follow_short(0.0) || merge_short(0.0) {
                Mode::Safety
            } else {
                Mode::SpeedTracking
            }
        }
        Mode::Safety => {
            if follow_short(c.hysteresis_margin) || merge_short(c.hysteresis_margin) {
                Mode::Safety
            } else {
                Mode::SpeedTracking
            }
        }
    }
}

/// Commanded acceleration in safety mode. With both a leader and a virtual
/// leader the more restrictive command wins. Without either the vehicle
/// relaxes towards the free-flow speed.
pub fn safety_mode_accel(
    v: f64,
    leader: Option<LeaderView>,
    virtual_leader: Option<LeaderView>,
    p: &Params,
    c: &Controller,
) -> f64 {
    let law = |l: LeaderView| c.k_p * (l.gap - (p.h * v + p.s0)) + c.k_v * (l.v - v);
    let cmd = match (leader, virtual_leader) {
        (Some(a), Some(b)) => law(a).min(law(b)),
        (Some(a), None) | (None, Some(a)) => law(a),
        (None, None) => c.k_v * (p.v_free - v),
    };
    cmd.clamp(p.a_min, p.a_max)
}

/// Next acceleration after applying the jerk bound over `dt`.
pub fn jerk_limited(a: f64, a_cmd: f64, dt: f64, j_max: f64) -> f64 {
    a + (a_cmd - a).clamp(-j_max * dt, j_max * dt)
}

/// Per-vehicle summary used by the free-flow test.
#[derive(Clone, Copy, Debug)]
pub struct FlowView {
    pub mode: Mode,
    pub v: f64,
    pub a: f64,
    /// Current gap below the safety distance (positive means violated).
    pub shortfall: f64,
    /// Whether the remaining speed-tracking profile is predicted to violate spacing.
    pub predicted_violation: bool,
}

/// Tolerance on speed and acceleration for the free-flow test.
pub const FREE_FLOW_TOL: f64 = 0.05;

pub fn is_free_flow(vehicles: &[FlowView], p: &Params) -> bool {
    vehicles.iter().all(|f| {
        if f.shortfall > FREE_FLOW_TOL || f.predicted_violation {
            return false;
        }
        match f.mode {
            Mode::Safety => (f.v - p.v_free).abs() <= FREE_FLOW_TOL && f.a.abs() <= FREE_FLOW_TOL,
            Mode::SpeedTracking => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safety_distance_values() {
        let p = Params::default();
        assert!((safety_distance(15.0, 15.0, &p) - 26.5).abs() < 1e-12);
        assert!((safety_distance(15.0, 10.0, &p) - 39.0).abs() < 1e-12);
        for i in 0..=30 {
            let v = i as f64 * 0.5;
            assert!((safety_distance(v, v, &p) - (p.h * v + p.s0)).abs() < 1e-12);
        }
    }

    #[test]
    fn controller_values() {
        let p = Params::default();
        let c = Controller::default();
        let eq = LeaderView { gap: 26.5, v: 15.0 };
        assert_eq!(safety_mode_accel(15.0, Some(eq), None, &p, &c), 0.0);
        let close = LeaderView { gap: 20.0, v: 15.0 };
        assert!((safety_mode_accel(15.0, Some(close), None, &p, &c) + 0.65).abs() < 1e-12);
        // The tighter of leader and virtual leader wins.
        let both = safety_mode_accel(15.0, Some(eq), Some(close), &p, &c);
        assert!((both + 0.65).abs() < 1e-12);
    }

    #[test]
    fn mode_switch_rules() {
        let p = Params::default();
        let c = Controller::default();
        let ego = VehicleState::cruising(0, 0.0, 15.0, 0.0);
        let ok = LeaderView { gap: 29.5, v: 15.0 };
        assert_eq!(update_mode(&ego, Some(ok), None, &p, &c), Mode::SpeedTracking);
        let boundary = LeaderView { gap: 26.5, v: 15.0 };
        assert_eq!(update_mode(&ego, Some(boundary), None, &p, &c), Mode::SpeedTracking);
        let short = LeaderView { gap: 20.0, v: 15.0 };
        assert_eq!(update_mode(&ego, Some(short), None, &p, &c), Mode::Safety);
        // Applying the rule again with the same inputs changes nothing.
        let once = update_mode(&ego, Some(ok), None, &p, &c);
        let again = update_mode(&VehicleState { mode: once, ..ego.clone() }, Some(ok), None, &p, &c);
        assert_eq!(once, again);
    }

    #[test]
    fn free_flow_detection() {
        let p = Params::default();
        assert!(is_free_flow(&[], &p));
        let on_slot =
            FlowView { mode: Mode::SpeedTracking, v: 15.0, a: 0.0, shortfall: 0.0, predicted_violation: false };
        assert!(is_free_flow(&[on_slot; 5], &p));
        let slow = FlowView { mode: Mode::Safety, v: 14.0, ..on_slot };
        assert!(!is_free_flow(&[on_slot, slow], &p));
    }
}
