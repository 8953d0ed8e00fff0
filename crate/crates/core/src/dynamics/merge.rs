use super::{safety_distance, Kin, Mode, Track, VehicleState, GAP_TOL};
use crate::params::Params;

/// Step between the instants checked inside a merge window.
const WINDOW_SAMPLE: f64 = 0.1;

/// Predicted state at absolute time `t`. A speed-tracking vehicle is assumed
/// to keep following its profile, a safety-mode one to hold its speed.
pub fn predict_state(veh: &VehicleState, now: f64, t: f64) -> Kin {
    match (&veh.mode, &veh.track) {
        (Mode::SpeedTracking, Some(track)) => track.at(t),
        _ => Kin { x: veh.p + veh.v * (t - now).max(0.0), v: veh.v, a: 0.0 },
    }
}

/// Seconds until `veh` reaches `point` (same coordinate as `veh.p`), or
/// infinity when a stopped safety-mode vehicle never gets there.
pub fn predict_crossing_time(veh: &VehicleState, now: f64, point: f64) -> f64 {
    if point <= veh.p {
        return 0.0;
    }
    match (&veh.mode, &veh.track) {
        (Mode::SpeedTracking, Some(track)) => {
            let t = track.t0 + track.profile.time_to_travel(point - track.p0);
            (t - now).max(0.0)
        }
        _ => {
            if veh.v <= 0.0 {
                f64::INFINITY
            } else {
                (point - veh.p) / veh.v
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    /// Predicted front-to-rear gap at the merge instant.
    pub gap: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergePrediction {
    /// Absolute predicted time at which the ego crosses the merge point.
    pub t_m: f64,
    pub ego_v: f64,
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

impl MergePrediction {
    /// How far the predicted gap to the virtual leader falls short of the
    /// safety distance; negative when there is slack.
    pub fn leader_shortfall(&self, p: &Params) -> f64 {
        match self.leader {
            Some(l) => safety_distance(self.ego_v, l.v, p) - l.gap,
            None => f64::NEG_INFINITY,
        }
    }

    pub fn follower_shortfall(&self, p: &Params) -> f64 {
        match self.follower {
            Some(f) => safety_distance(f.v, self.ego_v, p) - f.gap,
            None => f64::NEG_INFINITY,
        }
    }
}

/// Finds the virtual leader and follower of `ego` for the merge at
/// `merge_point`. Every candidate is extrapolated to the ego's predicted
/// crossing time; `present(c, t)` drops candidates that will have exited.
pub fn assign_virtual_leader<'a, I, F>(
    ego: &VehicleState,
    now: f64,
    candidates: I,
    merge_point: f64,
    present: F,
    p: &Params,
) -> MergePrediction
where
    I: IntoIterator<Item = &'a VehicleState>,
    F: Fn(&VehicleState, f64) -> bool,
{
    let dt = predict_crossing_time(ego, now, merge_point);
    if !dt.is_finite() {
        return MergePrediction { t_m: f64::INFINITY, ego_v: ego.v, leader: None, follower: None };
    }
    let t_m = now + dt;
    let ego_k = predict_state(ego, now, t_m);
    let mut leader: Option<(f64, Kin, u64)> = None;
    let mut follower: Option<(f64, Kin, u64)> = None;
    for c in candidates {
        if c.id == ego.id || !present(c, t_m) {
            continue;
        }
        let k = predict_state(c, now, t_m);
        if k.x > merge_point {
            if leader.as_ref().map_or(true, |l| k.x < l.0) {
                leader = Some((k.x, k, c.id));
            }
        } else if follower.as_ref().map_or(true, |f| k.x > f.0) {
            follower = Some((k.x, k, c.id));
        }
    }
    MergePrediction {
        t_m,
        ego_v: ego_k.v,
        leader: leader.map(|(x, k, id)| Neighbor { id, gap: x - merge_point - p.length, v: k.v }),
        follower: follower.map(|(x, k, id)| Neighbor { id, gap: merge_point - x - p.length, v: k.v }),
    }
}

/// Release check for a vehicle that will follow `ego` from the meter.
/// Between its merge instant and `t_end` the predicted gap to the nearest
/// vehicle ahead and behind must stay at least the safety distance plus
/// `extra`.
pub fn merge_window_clear<'a, I, F>(
    ego: &Track,
    candidates: I,
    merge_point: f64,
    t_end: f64,
    extra: f64,
    present: F,
    p: &Params,
) -> bool
where
    I: IntoIterator<Item = &'a VehicleState> + Clone,
    F: Fn(&VehicleState, f64) -> bool,
{
    let t_m = ego.t0 + ego.profile.time_to_travel(merge_point - ego.p0);
    let t_end = t_end.max(t_m);
    let n = ((t_end - t_m) / WINDOW_SAMPLE).ceil().max(0.0) as usize;
    for i in 0..=n {
        let t = if i == n { t_end } else { t_m + i as f64 * WINDOW_SAMPLE };
        let e = ego.at(t);
        let mut ahead: Option<Kin> = None;
        let mut behind: Option<Kin> = None;
        for c in candidates.clone() {
            if !present(c, t) {
                continue;
            }
            let k = predict_state(c, ego.t0, t);
            if k.x > e.x {
                if ahead.map_or(true, |a| k.x < a.x) {
                    ahead = Some(k);
                }
            } else if behind.map_or(true, |b| k.x > b.x) {
                behind = Some(k);
            }
        }
        if let Some(l) = ahead {
            if l.x - e.x - p.length < safety_distance(e.v, l.v, p) + extra - GAP_TOL {
                return false;
            }
        }
        if let Some(f) = behind {
            if e.x - f.x - p.length < safety_distance(f.v, e.v, p) + extra - GAP_TOL {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_speed_rule() {
        let mut v = VehicleState::cruising(1, -50.0, 10.0, 0.0);
        v.mode = Mode::Safety;
        v.track = None;
        assert!((predict_crossing_time(&v, 0.0, 0.0) - 5.0).abs() < 1e-12);
        v.v = 0.0;
        assert!(predict_crossing_time(&v, 0.0, 0.0).is_infinite());
    }

    #[test]
    fn at_point_is_zero() {
        let v = VehicleState::cruising(1, 0.0, 15.0, 0.0);
        assert_eq!(predict_crossing_time(&v, 0.0, 0.0), 0.0);
    }

    #[test]
    fn lone_far_vehicle_is_leader() {
        let p = Params::default();
        let ego = VehicleState::cruising(0, -40.0, 15.0, 0.0);
        let far = VehicleState::cruising(1, 300.0, 15.0, 0.0);
        let m = assign_virtual_leader(&ego, 0.0, [&far], 0.0, |_, _| true, &p);
        assert_eq!(m.leader.unwrap().id, 1);
        assert!(m.follower.is_none());
    }

    #[test]
    fn straddling_slot_occupants() {
        let p = Params::default();
        let ego = VehicleState::cruising(0, -62.0, 15.0, 0.0);
        let lead = VehicleState::cruising(1, -31.0, 15.0, 0.0);
        let foll = VehicleState::cruising(2, -93.0, 15.0, 0.0);
        let m = assign_virtual_leader(&ego, 0.0, [&lead, &foll], 0.0, |_, _| true, &p);
        assert!((m.leader.unwrap().gap - 26.5).abs() < 1e-9);
        assert!((m.follower.unwrap().gap - 26.5).abs() < 1e-9);
        assert!(m.leader_shortfall(&p) <= GAP_TOL);
    }
}
