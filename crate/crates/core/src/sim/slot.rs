//! Lattice engine. Every vehicle on the road owns the slot it will ride in
//! once up to speed; released vehicles hold their slot from the release
//! instant. Merge windows are evaluated against slot occupants, using the
//! precomputed blocking offsets when the occupant is already cruising.

use std::collections::HashMap;

use super::{
    comm_limits, distance_to_exit, forward0, merge_extent, place, Observed, Placed, Queued, Road, Trace, TripRecord,
};
use crate::dynamics::{blocking_offsets, merge_window_clear, BlockingOffsets, JerkProfile, Mode, Track, VehicleState};
use crate::error::Result;
use crate::geometry::Geometry;
use crate::params::Params;
use crate::policy::{CommCounts, CommLimits, Gate, MonitorSample};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug)]
struct Occ {
    id: u64,
    t0: f64,
    /// Unrolled position at `t0`.
    x0: f64,
    /// Released from rest at `t0`; otherwise cruising at `Vf`.
    from_rest: bool,
    exit_time: f64,
}

pub(crate) struct SlotRoad {
    g: Geometry,
    p: Params,
    prof: JerkProfile,
    occ: Vec<Option<Occ>>,
    n_occ: usize,
    init: Vec<Placed>,
    offsets: HashMap<u64, Vec<BlockingOffsets>>,
    areas: Vec<(f64, f64)>,
    flow_points: Vec<f64>,
    t_per: u64,
    now: f64,
}

impl SlotRoad {
    pub fn new(s: &Scenario) -> Result<Self> {
        let g = s.resolve_geometry()?;
        let p = s.params.clone();
        let prof = JerkProfile::speed_tracking(0.0, 0.0, &p);
        let init = place(&s.initial, &g, &s.routing.r, &p, s.demand.seed)?;
        let areas = (0..g.m()).map(|i| merge_extent(&g, i, &prof, &p)).collect();
        let mut offsets = HashMap::new();
        offsets.insert(0f64.to_bits(), g.ramps.iter().map(|r| r.blocking).collect());
        Ok(SlotRoad {
            occ: vec![None; g.slots.n_c],
            n_occ: 0,
            init,
            offsets,
            areas,
            flow_points: s.metrics.flow_points.clone(),
            t_per: s.policy.t_per,
            now: 0.0,
            g,
            p,
            prof,
        })
    }

    fn pos(&self, o: &Occ, t: f64) -> f64 {
        if o.from_rest {
            o.x0 + self.prof.eval(t - o.t0).x
        } else {
            o.x0 + self.p.v_free * (t - o.t0)
        }
    }

    fn offsets_for(&mut self, extra: f64) -> &[BlockingOffsets] {
        let (g, p) = (&self.g, &self.p);
        self.offsets
            .entry(extra.to_bits())
            .or_insert_with(|| g.ramps.iter().map(|r| blocking_offsets(r.ramp_run, extra, p)).collect())
    }

    /// Crossing times of the flow points for a vehicle that starts at road
    /// position `x`, `lead_in` metres before its first mainline point, and
    /// travels `dist` metres in total.
    fn schedule_flow(&self, trace: &mut Trace, x: f64, lead_in: f64, dist: f64, t0: f64, from_rest: bool) {
        for (k, &q) in self.flow_points.iter().enumerate() {
            let d = lead_in + forward0(&self.g, x, q);
            if d < lead_in || d >= dist {
                continue;
            }
            let t = t0 + if from_rest { self.prof.time_to_travel(d) } else { d / self.p.v_free };
            trace.push_flow(k, (t / self.g.slots.tau - 1e-9).ceil().max(0.0) as u64);
        }
    }

    /// Exact merge-window check against one occupant that is still
    /// accelerating or leaves during the window.
    fn exact_clear(&self, ramp: usize, c: &Occ, extra: f64) -> bool {
        let r = &self.g.ramps[ramp];
        let now = self.now;
        let merge = r.merge_point;
        let ego = Track { profile: self.prof.clone(), t0: now, p0: merge - r.ramp_run };
        let x = self.pos(c, now);
        let local = merge - self.g.ahead_of(self.g.wrap(x), merge);
        let shift = local - x;
        let cand = if c.from_rest {
            let k = self.prof.eval(now - c.t0);
            VehicleState {
                p: local,
                v: k.v,
                a: k.a,
                track: Some(Track { profile: self.prof.clone(), t0: c.t0, p0: c.x0 + shift }),
                ..VehicleState::cruising(c.id, local, self.p.v_free, now)
            }
        } else {
            VehicleState::cruising(c.id, local, self.p.v_free, now)
        };
        debug_assert_eq!(cand.mode, Mode::SpeedTracking);
        let exit = c.exit_time;
        merge_window_clear(&ego, [&cand], merge, now + r.t_free, extra, |_, t| exit > t, &self.p)
    }

    fn clear(&mut self, ramp: usize, extra: f64, step: u64) -> bool {
        let n_c = self.g.slots.n_c as i64;
        let e = self.g.slots.entry_slot_at(ramp, step);
        if self.occ[e].is_some() {
            return false;
        }
        let b = self.offsets_for(extra)[ramp];
        let r = &self.g.ramps[ramp];
        let t_m = self.now + r.t_merge;
        let t_end = self.now + r.t_free;
        let settle = self.prof.duration();
        // Accelerating vehicles trail their slot by up to the profile deficit.
        let reach = (self.prof.deficit() / self.g.slots.pitch).ceil() as i64 + 1;
        for o in -(b.behind as i64) - reach..=b.ahead as i64 + reach {
            let Some(c) = self.occ[(e as i64 + o).rem_euclid(n_c) as usize] else { continue };
            if c.exit_time <= t_m {
                continue;
            }
            let settled = !c.from_rest || c.t0 + settle <= t_m + 1e-9;
            let ok = if settled && c.exit_time > t_end { !b.blocks(o) } else { self.exact_clear(ramp, &c, extra) };
            if !ok {
                return false;
            }
        }
        true
    }

    fn count_in_areas(&self) -> usize {
        let mut n = 0;
        for o in self.occ.iter().flatten() {
            let x = self.g.wrap(self.pos(o, self.now));
            let inside = self.g.ramps.iter().zip(&self.areas).any(|(r, &(up, down))| {
                let d = self.g.ahead_of(x, r.merge_point);
                d <= up && -d <= down
            });
            n += inside as usize;
        }
        n
    }
}

impl Road for SlotRoad {
    fn on_road(&self) -> usize {
        self.n_occ
    }

    fn init(&mut self, trace: &mut Trace) {
        let placed = std::mem::take(&mut self.init);
        for (k, v) in placed.iter().enumerate() {
            let id = k as u64;
            let slot = v.slot.expect("slot engine starts from lattice positions");
            let dist = distance_to_exit(&self.g, v.p, v.dest);
            self.occ[slot] = Some(Occ { id, t0: 0.0, x0: v.p, from_rest: false, exit_time: dist / self.p.v_free });
            self.n_occ += 1;
            trace.add_trip(TripRecord { id, dest: v.dest, ..Default::default() });
            self.schedule_flow(trace, v.p, 0.0, dist, 0.0, false);
        }
        trace.initial_vehicles = placed.len() as u64;
    }

    fn begin_step(&mut self, step: u64, _idle: bool, trace: &mut Trace) -> Result<()> {
        self.now = step as f64 * self.g.slots.tau;
        for slot in self.occ.iter_mut() {
            if let Some(o) = slot {
                if o.exit_time <= self.now + 1e-9 {
                    if let Some(t) = trace.trip_mut(o.id) {
                        t.t_exit = Some(o.exit_time);
                    }
                    trace.exited += 1;
                    self.n_occ -= 1;
                    *slot = None;
                }
            }
        }
        Ok(())
    }

    fn observe(&mut self, _step: u64) -> Observed {
        let m = self.g.m();
        Observed { free_flow: true, monitors: MonitorSample::empty(m), occupancy: vec![0.0; m] }
    }

    fn admits(&mut self, ramp: usize, gate: Gate, step: u64) -> bool {
        match gate {
            Gate::Unchecked => self.occ[self.g.slots.entry_slot_at(ramp, step)].is_none(),
            Gate::Checked { extra_gap } => self.clear(ramp, extra_gap, step),
        }
    }

    fn spawn(&mut self, ramp: usize, q: Queued, step: u64, trace: &mut Trace) {
        let r = &self.g.ramps[ramp];
        let e = self.g.slots.entry_slot_at(ramp, step);
        let meter = r.merge_point - r.ramp_run;
        let dist = r.ramp_run + distance_to_exit(&self.g, r.merge_point, q.dest);
        let (run, t_merge, merge) = (r.ramp_run, r.t_merge, r.merge_point);
        let exit_time = self.now + self.prof.time_to_travel(dist);
        self.occ[e] = Some(Occ { id: q.id, t0: self.now, x0: meter, from_rest: true, exit_time });
        self.n_occ += 1;
        if let Some(t) = trace.trip_mut(q.id) {
            t.t_rel = Some(self.now);
            t.t_merge = Some(self.now + t_merge);
        }
        self.schedule_flow(trace, merge, run, dist, self.now, true);
    }

    fn after_releases(&mut self, _step: u64, _trace: &mut Trace) {}

    fn comm_counts(&self) -> CommCounts {
        CommCounts { on_road: self.n_occ, in_merge_areas: self.count_in_areas(), ..Default::default() }
    }

    fn comm_limits(&self) -> CommLimits {
        comm_limits(&self.g, &self.prof, &self.p, self.t_per)
    }

    fn advance(&mut self, _step: u64, _idle: bool, _trace: &mut Trace) -> Result<()> {
        Ok(())
    }
}
