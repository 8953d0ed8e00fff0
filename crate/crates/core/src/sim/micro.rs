//! Car-following engine. Vehicles carry unrolled positions; a ramp vehicle
//! lives in the coordinate of its own merge point until it joins the
//! mainline, which is kept in cyclic order of wrapped position.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{comm_limits, distance_to_exit, forward0, merge_extent, place, ttc, Observed, Queued, Road, Trace};
use super::{TripRecord, TtcSample, TTC_CAP};
use crate::dynamics::{
    assign_virtual_leader, is_free_flow, jerk_limited, merge_window_clear, predict_crossing_time, safety_distance,
    safety_mode_accel, update_mode, FlowView, JerkProfile, Kin, LeaderView, MergePrediction, Mode, Track, VehicleState,
    GAP_TOL,
};
use crate::error::{Error, Result};
use crate::geometry::{Geometry, Shape};
use crate::model::{stream_rng, Stream};
use crate::params::{Controller, Params};
use crate::policy::{compute_monitors, CommCounts, CommLimits, Deadband, Gate, MonitorInput, PolicyKind};
use crate::scenario::{substeps, Scenario};

/// Length of the occupancy detector downstream of each merge point.
const DETECTOR: f64 = 100.0;

/// Jerk bound, as a multiple of `J_max`, for emergency braking and for
/// stopping at a merge point.
const EMERGENCY_JERK: f64 = 10.0;

/// Distance before the merge point at which a yielding vehicle stops.
const STOP_SHORT: f64 = 0.5;

#[derive(Clone, Debug)]
struct Pred {
    m: MergePrediction,
    ramp: usize,
    /// Slab index of the virtual leader.
    leader: Option<usize>,
}

#[derive(Clone, Debug)]
struct Veh {
    s: VehicleState,
    /// Ramp index until the vehicle has merged.
    ramp: Option<usize>,
    merge_at: f64,
    exit_at: f64,
    /// Next unrolled crossing position per flow point.
    cross: Vec<f64>,
    pred: Option<Pred>,
    /// Window maxima of the spacing and predicted merge shortfalls.
    delta: f64,
    delta_hat: f64,
    pred_now: f64,
    contact: bool,
    /// Released without a merge check; such vehicles find their own gap.
    unchecked: bool,
    /// Holding at the merge point for a gap.
    yielding: bool,
    p_prev: f64,
    mode_next: Mode,
    a_next: f64,
}

pub(crate) struct MicroRoad {
    g: Geometry,
    p: Params,
    c: Controller,
    prof: JerkProfile,
    band: Deadband,
    slab: Vec<Option<Veh>>,
    free: Vec<usize>,
    main: Vec<usize>,
    ramps: Vec<VecDeque<usize>>,
    areas: Vec<(f64, f64)>,
    flow_points: Vec<f64>,
    connect: ChaCha8Rng,
    penetration: f64,
    substeps: usize,
    t_per: u64,
    occupancy: Option<Vec<f64>>,
    exited_window: Vec<f64>,
    ttc_stride: Option<u64>,
    in_areas: usize,
    last_gate: Gate,
    init: Vec<super::Placed>,
    now: f64,
}

impl MicroRoad {
    pub fn new(s: &Scenario) -> Result<Self> {
        let g = s.resolve_geometry()?;
        let p = s.params.clone();
        let prof = JerkProfile::speed_tracking(0.0, 0.0, &p);
        let m = g.m();
        let init = place(&s.initial, &g, &s.routing.r, &p, s.demand.seed)?;
        let areas = (0..m).map(|i| merge_extent(&g, i, &prof, &p)).collect();
        let alinea = matches!(s.policy.kind, PolicyKind::Alinea | PolicyKind::SafeAlinea);
        Ok(MicroRoad {
            c: s.controller.clone(),
            band: Deadband {
                speed: s.sim.deadband_speed,
                accel: s.sim.deadband_accel,
                spacing: s.sim.deadband_spacing,
            },
            slab: Vec::new(),
            free: Vec::new(),
            main: Vec::new(),
            ramps: vec![VecDeque::new(); m],
            areas,
            flow_points: s.metrics.flow_points.clone(),
            connect: stream_rng(s.demand.seed, Stream::Connectivity),
            penetration: s.policy.penetration,
            substeps: substeps(g.slots.tau, s.sim.dt),
            t_per: s.policy.t_per.max(1),
            occupancy: alinea.then(|| vec![0.0; m]),
            exited_window: vec![0.0; m],
            ttc_stride: s.metrics.ttc.then_some(s.metrics.ttc_stride.max(1)),
            in_areas: 0,
            last_gate: Gate::SAFE,
            init,
            now: 0.0,
            g,
            p,
            prof,
        })
    }

    fn veh(&self, i: usize) -> &Veh {
        self.slab[i].as_ref().expect("live slab entry")
    }

    fn veh_mut(&mut self, i: usize) -> &mut Veh {
        self.slab[i].as_mut().expect("live slab entry")
    }

    fn alloc(&mut self, v: Veh) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.slab[i] = Some(v);
                i
            }
            None => {
                self.slab.push(Some(v));
                self.slab.len() - 1
            }
        }
    }

    fn ring(&self) -> bool {
        self.g.shape == Shape::Ring
    }

    /// Position relative to the frame of merge point `m`.
    fn loc(&self, x: f64, m: f64) -> f64 {
        m - self.g.ahead_of(self.g.wrap(x), m)
    }

    fn gap(&self, follower: f64, leader: f64) -> f64 {
        match self.g.shape {
            Shape::Ring => (self.g.wrap(leader) - self.g.wrap(follower)).rem_euclid(self.g.length) - self.p.length,
            Shape::Straight => leader - follower - self.p.length,
        }
    }

    /// Main-order index of the leader of `main[k]`.
    fn leader_idx(&self, k: usize) -> Option<usize> {
        let n = self.main.len();
        match self.g.shape {
            Shape::Ring if n > 1 => Some((k + 1) % n),
            Shape::Straight if k + 1 < n => Some(k + 1),
            _ => None,
        }
    }

    fn leader_view(&self, k: usize) -> Option<LeaderView> {
        let l = self.veh(self.main[self.leader_idx(k)?]);
        let f = self.veh(self.main[k]);
        Some(LeaderView { gap: self.gap(f.s.p, l.s.p), v: l.s.v })
    }

    fn crossings(&self, x: f64) -> Vec<f64> {
        self.flow_points
            .iter()
            .map(|&q| {
                let d = forward0(&self.g, x, q);
                if d < 0.0 {
                    f64::INFINITY
                } else if d == 0.0 && self.ring() {
                    x + self.g.length
                } else {
                    x + d
                }
            })
            .collect()
    }

    fn draw_connected(&mut self) -> bool {
        let u: f64 = self.connect.gen();
        u < self.penetration
    }

    /// `v` moved into the frame of merge point `m`, with its exit position.
    fn localized(&self, v: &Veh, m: f64) -> (VehicleState, f64) {
        let local = self.loc(v.s.p, m);
        let shift = local - v.s.p;
        let mut s = v.s.clone();
        s.p = local;
        if let Some(t) = &mut s.track {
            t.p0 += shift;
        }
        (s, v.exit_at + shift)
    }

    /// Vehicles around merge `r`, in its frame, with predicted exit times.
    fn merge_candidates(&self, r: usize, connected_only: bool) -> Vec<(VehicleState, f64, usize)> {
        let m = self.g.ramps[r].merge_point;
        let (up, down) = self.areas[r];
        let mut out = Vec::new();
        let ramp = self.ramps[r].iter();
        for &i in self.main.iter().chain(ramp) {
            let v = self.veh(i);
            if connected_only && !v.s.connected {
                continue;
            }
            let (s, exit) = self.localized(v, m);
            if v.ramp.is_none() && !(s.p >= m - up && s.p <= m + down) {
                continue;
            }
            let t_exit = self.now + predict_crossing_time(&s, self.now, exit);
            out.push((s, t_exit, i));
        }
        out
    }

    fn predict(&mut self) {
        for v in self.slab.iter_mut().flatten() {
            v.pred = None;
            v.pred_now = 0.0;
        }
        for r in 0..self.g.m() {
            let m = self.g.ramps[r].merge_point;
            let cands = self.merge_candidates(r, false);
            let present = |c: &VehicleState, t: f64| cands.iter().find(|x| x.0.id == c.id).map_or(true, |x| x.1 > t);
            let mut preds = Vec::new();
            for (ego, _, i) in cands.iter().filter(|c| c.0.p < m) {
                let pm = assign_virtual_leader(ego, self.now, cands.iter().map(|c| &c.0), m, present, &self.p);
                let leader = pm.leader.and_then(|l| cands.iter().find(|c| c.0.id == l.id)).map(|c| c.2);
                preds.push((*i, Pred { m: pm, ramp: r, leader }));
            }
            for (i, pred) in preds {
                let short = pred.m.leader_shortfall(&self.p).max(0.0);
                let v = self.veh_mut(i);
                v.pred_now = short;
                v.delta_hat = v.delta_hat.max(short);
                v.pred = Some(pred);
            }
        }
        self.in_areas = self.count_in_areas();
    }

    fn count_in_areas(&self) -> usize {
        let mut n = 0;
        for v in self.slab.iter().flatten().filter(|v| v.s.connected) {
            let inside = v.ramp.is_some()
                || self.g.ramps.iter().zip(&self.areas).any(|(r, &(up, down))| {
                    let d = self.g.ahead_of(self.g.wrap(v.s.p), r.merge_point);
                    d <= up && -d <= down
                });
            n += inside as usize;
        }
        n
    }

    /// Mainline neighbours of a point `x` in the frame of merge `r`, as
    /// `(gap, speed)` ahead and behind.
    fn projected(&self, r: usize, x: f64) -> (Option<(f64, f64)>, Option<(f64, f64)>) {
        let m = self.g.ramps[r].merge_point;
        let mut ahead: Option<(f64, f64)> = None;
        let mut behind: Option<(f64, f64)> = None;
        for &i in &self.main {
            let o = self.veh(i);
            let y = self.loc(o.s.p, m);
            if y > x {
                if ahead.map_or(true, |a| y < a.0) {
                    ahead = Some((y, o.s.v));
                }
            } else if behind.map_or(true, |b| y > b.0) {
                behind = Some((y, o.s.v));
            }
        }
        let len = self.p.length;
        (ahead.map(|(y, v)| (y - x - len, v)), behind.map(|(y, v)| (x - y - len, v)))
    }

    /// Whether the front vehicle of ramp `r` may go on towards the merge.
    /// `full` asks for the safety distance plus the hysteresis margin on
    /// both sides, with the follower's travel while the ego covers the rest
    /// of the ramp; otherwise only enough room to brake is needed.
    fn clear_to_merge(&self, r: usize, ego: &Veh, full: bool) -> bool {
        let (x, v) = (ego.s.p, ego.s.v);
        let (ahead, behind) = self.projected(r, x);
        let p = &self.p;
        let t_cross = if full {
            JerkProfile::speed_tracking(v, ego.s.a.max(0.0), p).time_to_travel(ego.merge_at - x)
        } else {
            0.0
        };
        let latency = self.brake_latency();
        let need = |v_e: f64, v_l: f64| {
            if full {
                safety_distance(v_e, v_l, p) + self.c.hysteresis_margin
            } else {
                (v_e * v_e - v_l * v_l).max(0.0) / (2.0 * p.a_min.abs()) + v_e * latency + p.s0
            }
        };
        // The follower may speed up while the ego covers the rest of the ramp.
        let closing = |vf: f64| {
            let t_acc = ((p.v_free - vf) / p.a_max).clamp(0.0, t_cross);
            let v_end = vf + p.a_max * t_acc;
            (v_end, vf * t_acc + 0.5 * p.a_max * t_acc * t_acc + v_end * (t_cross - t_acc))
        };
        ahead.map_or(true, |(gap, vl)| gap >= need(v, vl))
            && behind.map_or(true, |(gap, vf)| {
                let (v_end, travel) = closing(vf);
                gap >= need(v_end, v) + travel
            })
    }

    /// Distance needed to stop from `(v, a)` when braking ramps down to
    /// `a_min` at the emergency jerk.
    fn stopping_distance(&self, v: f64, a: f64) -> f64 {
        let (a_min, j) = (self.p.a_min, EMERGENCY_JERK * self.p.j_max);
        let t_r = ((a - a_min) / j).max(0.0);
        let k = Kin { x: 0.0, v, a }.advance(-j, t_r);
        if k.v <= 0.0 {
            return k.x.max(0.0);
        }
        k.x + k.v * k.v / (2.0 * a_min.abs())
    }

    fn brake_latency(&self) -> f64 {
        self.p.a_min.abs() / (EMERGENCY_JERK * self.p.j_max)
    }

    fn virtual_view(&self, ego: &Veh, t: f64) -> Option<LeaderView> {
        let pred = ego.pred.as_ref().filter(|p| p.m.t_m > t)?;
        let l = self.slab.get(pred.leader?)?.as_ref()?;
        let m = self.g.ramps[pred.ramp].merge_point;
        Some(LeaderView { gap: self.loc(l.s.p, m) - self.loc(ego.s.p, m) - self.p.length, v: l.s.v })
    }

    fn safety_cmd(&self, ego: &Veh, leader: Option<LeaderView>, t: f64, dt: f64) -> f64 {
        let v = ego.s.v;
        let cmd = safety_mode_accel(v, leader, self.virtual_view(ego, t), &self.p, &self.c);
        if let Some(l) = leader {
            let brake = (v * v - l.v * l.v).max(0.0) / (2.0 * self.p.a_min.abs());
            if l.gap < brake + v * self.brake_latency() + 0.5 * self.p.s0 && v > l.v {
                return jerk_limited(ego.s.a, self.p.a_min, dt, EMERGENCY_JERK * self.p.j_max);
            }
        }
        jerk_limited(ego.s.a, cmd, dt, self.p.j_max)
    }

    /// Committed ungated ramp vehicles, as leaders of the mainline vehicle
    /// just behind their projection.
    fn committed_leaders(&self) -> Vec<(usize, LeaderView)> {
        let mut out = Vec::new();
        for r in 0..self.g.m() {
            let Some(&i) = self.ramps[r].front() else { continue };
            let ego = self.veh(i);
            let room = ego.merge_at - ego.s.p;
            if !ego.unchecked || ego.yielding || room > self.stopping_distance(ego.s.v, ego.s.a) {
                continue;
            }
            let m = self.g.ramps[r].merge_point;
            let behind = (0..self.main.len())
                .map(|k| (k, self.loc(self.veh(self.main[k]).s.p, m)))
                .filter(|&(_, y)| y <= ego.s.p)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((k, y)) = behind {
                out.push((k, LeaderView { gap: ego.s.p - y - self.p.length, v: ego.s.v }));
            }
        }
        out
    }

    fn decide(&mut self, t: f64, dt: f64) {
        let extra = self.committed_leaders();
        for k in 0..self.main.len() {
            let mut lv = self.leader_view(k);
            for &(_, l) in extra.iter().filter(|e| e.0 == k) {
                if lv.map_or(true, |c| l.gap < c.gap) {
                    lv = Some(l);
                }
            }
            let ego = self.veh(self.main[k]);
            let pred = ego.pred.as_ref().filter(|p| p.m.t_m > t).map(|p| &p.m);
            let mode = update_mode(&ego.s, lv, pred, &self.p, &self.c);
            let a = if mode == Mode::Safety { self.safety_cmd(ego, lv, t, dt) } else { 0.0 };
            let ego = self.veh_mut(self.main[k]);
            ego.mode_next = mode;
            ego.a_next = a;
        }
        for r in 0..self.g.m() {
            for j in 0..self.ramps[r].len() {
                let ego = self.veh(self.ramps[r][j]);
                let mut lv = (j > 0 && (ego.s.in_safety() || ego.unchecked)).then(|| {
                    let l = self.veh(self.ramps[r][j - 1]);
                    LeaderView { gap: l.s.p - ego.s.p - self.p.length, v: l.s.v }
                });
                let room = ego.merge_at - ego.s.p;
                let stop = self.stopping_distance(ego.s.v, ego.s.a);
                if ego.unchecked && j == 0 && room <= stop + self.p.h * ego.s.v + 2.0 * self.p.s0 {
                    // Close to the merge the mainline vehicle ahead becomes the leader.
                    if let (Some((gap, v)), _) = self.projected(r, ego.s.p) {
                        if lv.map_or(true, |l| gap < l.gap) {
                            lv = Some(LeaderView { gap, v });
                        }
                    }
                }
                let pred = ego.pred.as_ref().filter(|p| p.m.t_m > t).map(|p| &p.m);
                let mut mode = update_mode(&ego.s, lv, pred, &self.p, &self.c);
                let mut yielding = ego.yielding;
                if !ego.unchecked || (!yielding && stop >= room) {
                    yielding = false;
                } else if yielding {
                    yielding = !self.clear_to_merge(r, ego, true);
                } else if room <= stop + self.p.h * ego.s.v + 2.0 * self.p.s0 {
                    yielding = !self.clear_to_merge(r, ego, false);
                }
                if yielding {
                    mode = Mode::Safety;
                }
                let mut a = 0.0;
                if mode == Mode::Safety {
                    a = self.safety_cmd(ego, lv, t, dt);
                    if yielding {
                        // Constant deceleration that stops just short of the merge point.
                        let ramp = ego.s.v * (ego.s.a - self.p.a_min).max(0.0) / (EMERGENCY_JERK * self.p.j_max);
                        let left = (room - STOP_SHORT - ramp).max(1e-3);
                        let cmd = (-ego.s.v * ego.s.v / (2.0 * left)).max(self.p.a_min);
                        a = a.min(jerk_limited(ego.s.a, cmd, dt, EMERGENCY_JERK * self.p.j_max));
                    }
                }
                let ego = self.veh_mut(self.ramps[r][j]);
                ego.yielding = yielding;
                ego.mode_next = mode;
                ego.a_next = a;
            }
        }
    }

    fn integrate(&mut self, t: f64, dt: f64, t_next: f64, step: u64, trace: &mut Trace) {
        let (ring, len, vcap) = (self.ring(), self.g.length, self.p.v_cap());
        let prof_p = self.p.clone();
        for v in self.slab.iter_mut().flatten() {
            match (v.s.mode, v.mode_next) {
                (Mode::SpeedTracking, Mode::Safety) => {
                    v.s.track = None;
                    v.s.ever_safety = true;
                    trace.safety.safety_switches += 1;
                }
                (Mode::Safety, Mode::SpeedTracking) => {
                    let profile = JerkProfile::speed_tracking(v.s.v, v.s.a, &prof_p);
                    v.s.track = Some(Track { profile, t0: t, p0: v.s.p });
                }
                _ => {}
            }
            v.s.mode = v.mode_next;
            v.p_prev = v.s.p;
            let k = match &v.s.track {
                Some(track) if v.s.mode == Mode::SpeedTracking => track.at(t_next),
                _ => {
                    let j = (v.a_next - v.s.a) / dt;
                    let mut k = Kin { x: v.s.p, v: v.s.v, a: v.s.a }.advance(j, dt);
                    if k.v < 0.0 {
                        k.v = 0.0;
                        k.a = k.a.max(0.0);
                    }
                    k.v = k.v.min(vcap);
                    k.x = k.x.max(v.s.p);
                    k
                }
            };
            v.s.p = k.x;
            v.s.v = k.v;
            v.s.a = k.a;
            for (idx, c) in v.cross.iter_mut().enumerate() {
                if v.p_prev < *c && *c <= v.s.p {
                    trace.push_flow(idx, step + 1);
                    *c = if ring { *c + len } else { f64::INFINITY };
                }
            }
        }
        if let Some(mut occ) = self.occupancy.take() {
            for &i in &self.main {
                let x = self.veh(i).s.p;
                for (r, o) in occ.iter_mut().enumerate() {
                    let m = self.g.ramps[r].merge_point;
                    let front = self.loc(x, m);
                    let overlap = (front.min(m + DETECTOR) - (front - self.p.length).max(m)).max(0.0);
                    *o += overlap * dt;
                }
            }
            self.occupancy = Some(occ);
        }
    }

    fn contacts(&mut self, trace: &mut Trace) {
        let n = self.main.len();
        for k in (0..n).rev() {
            let Some(l) = self.leader_idx(k) else {
                self.veh_mut(self.main[k]).contact = false;
                continue;
            };
            let (lp, lv) = {
                let l = self.veh(self.main[l]);
                (l.s.p, l.s.v)
            };
            let f = self.veh(self.main[k]);
            let gap = self.gap(f.s.p, lp);
            let short = safety_distance(f.s.v, lv, &self.p) - gap;
            trace.safety.min_gap = trace.safety.min_gap.min(gap);
            let f = self.veh_mut(self.main[k]);
            f.delta = f.delta.max(short);
            if gap < 0.0 {
                if !f.contact {
                    trace.safety.collisions += 1;
                }
                f.contact = true;
                f.s.p += gap;
                f.s.v = f.s.v.min(lv);
                f.s.a = f.s.a.min(0.0);
                force_safety(f, trace);
            } else {
                f.contact = false;
            }
        }
        for r in 0..self.g.m() {
            for j in 1..self.ramps[r].len() {
                let (lp, lv, platoon) = {
                    let l = self.veh(self.ramps[r][j - 1]);
                    (l.s.p, l.s.v, !l.s.in_safety() && !l.unchecked)
                };
                let len = self.p.length;
                let f = self.veh_mut(self.ramps[r][j]);
                // Gated vehicles released back to back may overlap on the ramp
                // while both track; anything else keeps a vehicle length.
                let limit = if platoon && !f.s.in_safety() && !f.unchecked { lp } else { lp - len };
                if f.s.p > limit {
                    f.s.p = limit.max(f.p_prev.min(limit));
                    f.s.v = f.s.v.min(lv);
                    force_safety(f, trace);
                }
            }
        }
    }

    fn merges(&mut self, t: f64, dt: f64, trace: &mut Trace) {
        for r in 0..self.g.m() {
            while let Some(&i) = self.ramps[r].front() {
                let v = self.veh(i);
                if v.s.p < v.merge_at {
                    break;
                }
                if v.unchecked && v.yielding {
                    // Held at the line until the gap opens.
                    let v = self.veh_mut(i);
                    v.s.p = v.merge_at - 1e-6;
                    v.s.v = 0.0;
                    v.s.a = 0.0;
                    trace.safety.line_holds += 1;
                    break;
                }
                let frac = ((v.merge_at - v.p_prev) / (v.s.p - v.p_prev).max(1e-12)).clamp(0.0, 1.0);
                let (id, x) = (v.s.id, v.s.p);
                if let Some(tr) = trace.trip_mut(id) {
                    tr.t_merge = Some(t + frac * dt);
                }
                self.ramps[r].pop_front();
                {
                    let v = self.veh_mut(i);
                    v.ramp = None;
                    v.pred = None;
                }
                let pos = self.insert_pos(x);
                self.main.insert(pos, i);
                let k = pos;
                let n = self.main.len();
                let follower = match self.g.shape {
                    Shape::Ring if n > 1 => Some((k + n - 1) % n),
                    Shape::Straight if k > 0 => Some(k - 1),
                    _ => None,
                };
                let lead_gap = self.leader_idx(k).map(|l| self.gap(x, self.veh(self.main[l]).s.p));
                let back_gap = follower.map(|f| (f, self.gap(self.veh(self.main[f]).s.p, x)));
                if lead_gap.is_some_and(|g| g < 0.0) {
                    trace.safety.collisions += 1;
                    self.veh_mut(i).contact = true;
                }
                if let Some((f, _)) = back_gap.filter(|b| b.1 < 0.0) {
                    trace.safety.collisions += 1;
                    let fi = self.main[f];
                    self.veh_mut(fi).contact = true;
                }
            }
        }
    }

    /// Index in `main` after the vehicle directly behind `x`.
    fn insert_pos(&self, x: f64) -> usize {
        if self.main.is_empty() {
            return 0;
        }
        match self.g.shape {
            Shape::Ring => {
                let wx = self.g.wrap(x);
                let (k, _) = self
                    .main
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| (k, (wx - self.g.wrap(self.veh(i).s.p)).rem_euclid(self.g.length)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("main is not empty");
                k + 1
            }
            Shape::Straight => self.main.partition_point(|&i| self.veh(i).s.p <= x),
        }
    }

    fn exits(&mut self, t: f64, dt: f64, idle: bool, trace: &mut Trace) {
        let mut k = 0;
        while k < self.main.len() {
            let i = self.main[k];
            let v = self.veh(i);
            if v.s.p < v.exit_at {
                k += 1;
                continue;
            }
            if idle && self.ring() {
                self.veh_mut(i).exit_at += self.g.length;
                k += 1;
                continue;
            }
            let frac = ((v.exit_at - v.p_prev) / (v.s.p - v.p_prev).max(1e-12)).clamp(0.0, 1.0);
            let link = self.g.link_of(self.g.wrap(v.exit_at));
            let b = self.band.spacing;
            let cut = |x: f64| if x < b { 0.0 } else { x };
            let (carried, id) = (cut(v.delta) + cut(v.delta_hat), v.s.id);
            self.exited_window[link] += carried;
            if let Some(tr) = trace.trip_mut(id) {
                tr.t_exit = Some(t + frac * dt);
            }
            trace.exited += 1;
            self.main.remove(k);
            self.slab[i] = None;
            self.free.push(i);
        }
    }

    /// Metrics sampled at the step instant that ends step `step`.
    fn step_metrics(&mut self, step: u64, trace: &mut Trace) {
        let time = (step + 1) as f64 * self.g.slots.tau;
        let sample_ttc = self.ttc_stride.is_some_and(|s| (step + 1) % s == 0);
        let pitch = self.g.slots.pitch;
        for k in 0..self.main.len() {
            let f = self.veh(self.main[k]);
            if let Some(track) = &f.s.track {
                if f.s.mode == Mode::SpeedTracking && !f.s.ever_safety && time >= track.t0 + track.profile.duration() {
                    let r = (self.g.wrap(f.s.p) - self.g.slots.phase).rem_euclid(pitch);
                    let off = r.min(pitch - r);
                    if off > 1e-6 {
                        trace.safety.misaligned += 1;
                        trace.safety.max_misalignment = trace.safety.max_misalignment.max(off);
                    }
                }
            }
            let Some(l) = self.leader_idx(k) else { continue };
            let l = self.veh(self.main[l]);
            let gap = self.gap(f.s.p, l.s.p);
            let short = safety_distance(f.s.v, l.s.v, &self.p) - gap;
            if short > GAP_TOL {
                trace.safety.spacing_violations += 1;
                trace.safety.worst_shortfall = trace.safety.worst_shortfall.max(short);
            }
            if sample_ttc && self.in_merge_area(f.s.p) {
                if let Some(x) = ttc(gap, f.s.v, l.s.v).filter(|&x| x <= TTC_CAP) {
                    trace.ttc.push(TtcSample { time, leader: l.s.id, follower: f.s.id, ttc: x });
                }
            }
        }
    }

    fn in_merge_area(&self, x: f64) -> bool {
        let w = self.g.wrap(x);
        self.g.ramps.iter().zip(&self.areas).any(|(r, &(up, down))| {
            let d = self.g.ahead_of(w, r.merge_point);
            d <= up && -d <= down
        })
    }
}

fn force_safety(v: &mut Veh, trace: &mut Trace) {
    if v.s.mode == Mode::SpeedTracking {
        v.s.mode = Mode::Safety;
        v.s.track = None;
        v.s.ever_safety = true;
        trace.safety.safety_switches += 1;
    }
}

impl Road for MicroRoad {
    fn on_road(&self) -> usize {
        self.main.len() + self.ramps.iter().map(|r| r.len()).sum::<usize>()
    }

    fn init(&mut self, trace: &mut Trace) {
        let placed = std::mem::take(&mut self.init);
        let mut order: Vec<usize> = (0..placed.len()).collect();
        order.sort_by(|&a, &b| placed[a].p.total_cmp(&placed[b].p));
        let mut idx = vec![0; placed.len()];
        for (k, v) in placed.iter().enumerate() {
            let id = k as u64;
            let mut s = VehicleState::cruising(id, v.p, v.v, 0.0);
            s.dest = v.dest;
            s.slot = v.slot;
            s.connected = self.draw_connected();
            if v.safety {
                s.mode = Mode::Safety;
                s.track = None;
                s.ever_safety = true;
            }
            let veh = Veh {
                exit_at: v.p + distance_to_exit(&self.g, v.p, v.dest),
                cross: self.crossings(v.p),
                s,
                ramp: None,
                merge_at: f64::INFINITY,
                pred: None,
                delta: 0.0,
                delta_hat: 0.0,
                pred_now: 0.0,
                contact: false,
                yielding: false,
                unchecked: false,
                p_prev: v.p,
                mode_next: Mode::SpeedTracking,
                a_next: 0.0,
            };
            idx[k] = self.alloc(veh);
            trace.add_trip(TripRecord { id, dest: v.dest, ..Default::default() });
        }
        self.main = order.into_iter().map(|k| idx[k]).collect();
        trace.initial_vehicles = placed.len() as u64;
    }

    fn begin_step(&mut self, step: u64, _idle: bool, _trace: &mut Trace) -> Result<()> {
        self.now = step as f64 * self.g.slots.tau;
        Ok(())
    }

    fn observe(&mut self, step: u64) -> Observed {
        let m = self.g.m();
        let mut inputs = Vec::with_capacity(self.on_road());
        let mut flows = Vec::with_capacity(self.on_road());
        for k in 0..self.main.len() {
            let lv = self.leader_view(k);
            let v = self.veh(self.main[k]);
            let shortfall = lv.map_or(0.0, |l| (safety_distance(v.s.v, l.v, &self.p) - l.gap).max(0.0));
            inputs.push(MonitorInput {
                link: self.g.link_of(self.g.wrap(v.s.p)),
                safety: v.s.in_safety(),
                ever_safety: v.s.ever_safety,
                connected: v.s.connected,
                v: v.s.v,
                a: v.s.a,
                delta: v.delta.max(0.0),
                delta_hat: v.delta_hat,
                shortfall_now: shortfall,
                predicted_now: v.pred_now,
                headway_error: lv.map(|l| l.gap - (self.p.h * v.s.v + self.p.s0)),
            });
            flows.push(FlowView {
                mode: v.s.mode,
                v: v.s.v,
                a: v.s.a,
                shortfall,
                predicted_violation: v.pred_now > GAP_TOL,
            });
        }
        for (r, q) in self.ramps.iter().enumerate() {
            for &i in q {
                let v = self.veh(i);
                inputs.push(MonitorInput {
                    link: r,
                    safety: v.s.in_safety(),
                    ever_safety: v.s.ever_safety,
                    connected: v.s.connected,
                    v: v.s.v,
                    a: v.s.a,
                    delta: v.delta.max(0.0),
                    delta_hat: v.delta_hat,
                    predicted_now: v.pred_now,
                    ..Default::default()
                });
                flows.push(FlowView {
                    mode: v.s.mode,
                    v: v.s.v,
                    a: v.s.a,
                    shortfall: 0.0,
                    predicted_violation: v.pred_now > GAP_TOL,
                });
            }
        }
        let monitors = compute_monitors(&inputs, &self.exited_window, m, &self.p, &self.band);
        let free_flow = is_free_flow(&flows, &self.p);
        if step % self.t_per == 0 {
            self.exited_window.iter_mut().for_each(|x| *x = 0.0);
            for v in self.slab.iter_mut().flatten() {
                v.delta = 0.0;
                v.delta_hat = 0.0;
            }
        }
        let occupancy = self.occupancy.clone().unwrap_or_else(|| vec![0.0; m]);
        Observed { free_flow, monitors, occupancy }
    }

    fn admits(&mut self, ramp: usize, gate: Gate, _step: u64) -> bool {
        self.last_gate = gate;
        let r = &self.g.ramps[ramp];
        let meter = r.merge_point - r.ramp_run;
        let exempt = |v: &Veh| {
            v.s.mode == Mode::SpeedTracking
                && !v.s.ever_safety
                && !v.unchecked
                && self.now - v.s.release_time >= self.g.slots.tau - 1e-9
        };
        if let Some(&i) = self.ramps[ramp].back() {
            let v = self.veh(i);
            if !exempt(v) && v.s.p - self.p.length - meter < 0.0 {
                return false;
            }
        }
        let Gate::Checked { extra_gap } = gate else { return true };
        if let Some(&i) = self.ramps[ramp].iter().rev().find(|&&i| self.veh(i).s.connected) {
            let v = self.veh(i);
            if !exempt(v) && v.s.p - self.p.length - meter < safety_distance(0.0, v.s.v, &self.p) + extra_gap - GAP_TOL
            {
                return false;
            }
        }
        let cands = self.merge_candidates(ramp, true);
        let ego = Track { profile: self.prof.clone(), t0: self.now, p0: meter };
        let present = |c: &VehicleState, t: f64| cands.iter().find(|x| x.0.id == c.id).map_or(true, |x| x.1 > t);
        merge_window_clear(
            &ego,
            cands.iter().map(|c| &c.0),
            r.merge_point,
            self.now + r.t_free,
            extra_gap,
            present,
            &self.p,
        )
    }

    fn spawn(&mut self, ramp: usize, q: Queued, step: u64, trace: &mut Trace) {
        let r = &self.g.ramps[ramp];
        let (merge, meter) = (r.merge_point, r.merge_point - r.ramp_run);
        let mut s = VehicleState::cruising(q.id, meter, 0.0, self.now);
        s.track = Some(Track { profile: self.prof.clone(), t0: self.now, p0: meter });
        s.origin = ramp;
        s.dest = q.dest;
        s.slot = Some(self.g.slots.entry_slot_at(ramp, step));
        s.connected = self.draw_connected();
        let veh = Veh {
            exit_at: merge + distance_to_exit(&self.g, merge, q.dest),
            cross: self
                .crossings(merge)
                .into_iter()
                .map(|c| if c == merge + self.g.length { merge } else { c })
                .collect(),
            s,
            ramp: Some(ramp),
            merge_at: merge,
            pred: None,
            delta: 0.0,
            delta_hat: 0.0,
            pred_now: 0.0,
            contact: false,
            yielding: false,
            unchecked: self.last_gate == Gate::Unchecked,
            p_prev: meter,
            mode_next: Mode::SpeedTracking,
            a_next: 0.0,
        };
        let i = self.alloc(veh);
        self.ramps[ramp].push_back(i);
        if let Some(t) = trace.trip_mut(q.id) {
            t.t_rel = Some(self.now);
        }
    }

    fn after_releases(&mut self, _step: u64, _trace: &mut Trace) {
        self.predict();
    }

    fn comm_counts(&self) -> CommCounts {
        let on_road = self.slab.iter().flatten().filter(|v| v.s.connected).count();
        CommCounts { on_road, in_merge_areas: self.in_areas, ..Default::default() }
    }

    fn comm_limits(&self) -> CommLimits {
        comm_limits(&self.g, &self.prof, &self.p, self.t_per)
    }

    fn advance(&mut self, step: u64, idle: bool, trace: &mut Trace) -> Result<()> {
        let tau = self.g.slots.tau;
        let n = self.substeps;
        let dt = tau / n as f64;
        let t0 = step as f64 * tau;
        for k in 0..n {
            let t = t0 + k as f64 * dt;
            let t_next = if k + 1 == n { (step + 1) as f64 * tau } else { t + dt };
            self.decide(t, dt);
            self.integrate(t, dt, t_next, step, trace);
            self.contacts(trace);
            self.merges(t, dt, trace);
            self.exits(t, dt, idle, trace);
        }
        self.now = (step + 1) as f64 * tau;
        self.step_metrics(step, trace);
        if self.slab.iter().flatten().any(|v| !v.s.p.is_finite() || !v.s.v.is_finite()) {
            return Err(Error::Invariant { step, msg: "non-finite vehicle state".into() });
        }
        Ok(())
    }
}
