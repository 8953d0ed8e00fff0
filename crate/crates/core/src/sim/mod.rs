//! Simulation engines.
//!
//! Both engines share one step loop: exits and slot rotation happen as the
//! previous step's motion ends, then the policy looks at the road and
//! releases vehicles, then the step's arrivals join the queues, then the
//! road moves for one slot step.
//!
//! [`EngineKind::Micro`] integrates every vehicle with the car-following
//! rules. [`EngineKind::Slot`] keeps vehicles on the lattice and only
//! evaluates merge windows; it is exact for free-flow starts under gated
//! policies and orders of magnitude faster.

mod init;
mod micro;
mod slot;
mod trace;

use std::collections::VecDeque;

pub use init::{distance_to_exit, place, Placed};
pub use trace::{ttc, CycleRecord, SafetyStats, Trace, TripRecord, TtcSample, TTC_CAP};

use crate::dynamics::JerkProfile;
use crate::error::{Error, Result};
use crate::geometry::{Geometry, Shape};
use crate::model::ArrivalSampler;
use crate::params::Params;
use crate::policy::{CommAccount, CommCounts, CommLimits, Gate, MergeGate, MonitorSample, Observation, PolicyKind};
use crate::scenario::{EngineKind, Scenario};

/// A vehicle waiting at a ramp meter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Queued {
    pub id: u64,
    pub dest: usize,
}

/// What the policy sees at a step instant.
pub(crate) struct Observed {
    pub free_flow: bool,
    pub monitors: MonitorSample,
    pub occupancy: Vec<f64>,
}

/// The part of an engine that owns vehicles on the road.
pub(crate) trait Road {
    fn on_road(&self) -> usize;
    /// Registers the vehicles present at time zero, with ids from zero.
    fn init(&mut self, trace: &mut Trace);
    /// Called at every step instant before the policy runs.
    fn begin_step(&mut self, step: u64, idle: bool, trace: &mut Trace) -> Result<()>;
    fn observe(&mut self, step: u64) -> Observed;
    fn admits(&mut self, ramp: usize, gate: Gate, step: u64) -> bool;
    fn spawn(&mut self, ramp: usize, q: Queued, step: u64, trace: &mut Trace);
    /// Called after releases and arrivals, before the road moves.
    fn after_releases(&mut self, step: u64, trace: &mut Trace);
    fn comm_counts(&self) -> CommCounts;
    fn comm_limits(&self) -> CommLimits;
    /// Moves everything forward by one step.
    fn advance(&mut self, step: u64, idle: bool, trace: &mut Trace) -> Result<()>;
}

struct Gatekeeper<'a, R: Road> {
    road: &'a mut R,
    queues: &'a mut [VecDeque<Queued>],
    trace: &'a mut Trace,
    step: u64,
    attempted: bool,
}

impl<R: Road> MergeGate for Gatekeeper<'_, R> {
    fn try_release(&mut self, ramp: usize, gate: Gate) -> bool {
        self.attempted = true;
        if self.queues[ramp].is_empty() || !self.road.admits(ramp, gate, self.step) {
            return false;
        }
        let q = self.queues[ramp].pop_front().expect("queue checked above");
        self.trace.releases.push((self.step, ramp, q.id));
        self.road.spawn(ramp, q, self.step, self.trace);
        true
    }
}

/// Runs a scenario to its horizon.
pub fn run(s: &Scenario) -> Result<Trace> {
    s.validate()?;
    match s.engine {
        EngineKind::Micro => drive(micro::MicroRoad::new(s)?, s),
        EngineKind::Slot => drive(slot::SlotRoad::new(s)?, s),
    }
}

/// Ramps whose monitors count as downstream of each ramp: the link right
/// after its merge and every later link up to the end of the road.
fn downstream_links(m: usize, ring: bool) -> Vec<Vec<usize>> {
    (0..m).map(|i| if ring { (0..m).map(|k| (i + k) % m).collect() } else { (i..m).collect() }).collect()
}

fn drive<R: Road>(mut road: R, s: &Scenario) -> Result<Trace> {
    let g = s.resolve_geometry()?;
    let m = g.m();
    let tau = g.slots.tau;
    let mut trace = Trace::new(m, tau, s.policy.kind, s.metrics.flow_points.clone());
    trace.record_trips = s.metrics.vehicles;
    let mut policy = s.policy.build(m, tau, downstream_links(m, g.shape == Shape::Ring));
    let mut sampler = ArrivalSampler::new(s.demand.seed);
    let mut queues: Vec<VecDeque<Queued>> = vec![VecDeque::new(); m];
    let idle_steps = (s.sim.idle_warmup / tau - 1e-9).ceil().max(0.0) as u64;
    let store_cycles = s.policy.kind == PolicyKind::Renewal;
    let mut cycle_released = vec![0usize; m];
    let mut cycle_quota: Option<Vec<usize>> = None;
    let mut comm = CommAccount::default();
    let mut quota_violations = 0u64;
    road.init(&mut trace);
    let mut next_id = trace.initial_vehicles;

    for step in 0..s.demand.horizon {
        let idle = step < idle_steps;
        road.begin_step(step, idle, &mut trace)?;
        let obs = road.observe(step);
        if obs.free_flow && trace.free_flow_time.is_none() {
            trace.free_flow_time = Some(step as f64 * tau);
        }
        let sizes: Vec<usize> = queues.iter().map(|q| q.len()).collect();
        let mut counts = CommCounts::default();
        if !idle {
            let mut gk = Gatekeeper { road: &mut road, queues: &mut queues, trace: &mut trace, step, attempted: false };
            let o = Observation {
                step,
                tau,
                queues: &sizes,
                free_flow: obs.free_flow,
                monitors: &obs.monitors,
                occupancy_integral: &obs.occupancy,
            };
            let rep = policy.step(&o, &mut gk);
            counts.release_attempted = gk.attempted;
            if let Some(q) = rep.cycle_start {
                counts.quota_reports = if s.policy.kind == PolicyKind::Renewal { m } else { 0 };
                if store_cycles {
                    trace.cycles.push(CycleRecord { step, quotas: q.clone(), released: vec![0; m] });
                }
                cycle_released.iter_mut().for_each(|x| *x = 0);
                cycle_quota = Some(q);
            }
            for &r in &rep.released {
                cycle_released[r] += 1;
                if let Some(c) = trace.cycles.last_mut().filter(|_| store_cycles) {
                    c.released[r] += 1;
                }
            }
            if let Some(q) = &cycle_quota {
                if policy_has_quota(s.policy.kind) && cycle_released.iter().zip(q).any(|(r, q)| r > q) {
                    quota_violations += 1;
                }
            }
            for (i, dest) in sampler.sample(&s.demand.lambda, &s.routing.r, step) {
                let id = next_id;
                next_id += 1;
                queues[i].push_back(Queued { id, dest });
                trace.arrivals += 1;
                trace.add_trip(TripRecord {
                    id,
                    origin: Some(i),
                    dest,
                    t_arr: Some(step as f64 * tau),
                    ..Default::default()
                });
            }
        }
        for q in &queues {
            trace.queues.push(q.len() as u32);
        }
        road.after_releases(step, &mut trace);
        let rc = road.comm_counts();
        counts.on_road = rc.on_road;
        counts.in_merge_areas = rc.in_merge_areas;
        let x = comm.record(s.policy.kind, step, s.policy.t_per, m, &counts);
        if s.metrics.comms {
            trace.comms.push(x);
        }
        road.advance(step, idle, &mut trace)?;
        trace.steps = step + 1;

        let queued: usize = queues.iter().map(|q| q.len()).sum();
        let total = trace.initial_vehicles + trace.arrivals;
        let held = (queued + road.on_road()) as u64 + trace.exited;
        if total != held {
            return Err(Error::Invariant {
                step,
                msg: format!(
                    "{total} vehicles entered but {queued} queued, {} on road, {} exited",
                    road.on_road(),
                    trace.exited
                ),
            });
        }
    }
    if quota_violations > 0 {
        return Err(Error::Invariant { step: trace.steps, msg: format!("{quota_violations} steps over quota") });
    }
    trace.comm_bound = comm.bound(s.policy.kind, &road.comm_limits());
    trace.comm = comm;
    trace.final_gaps = policy.gaps();
    trace.finish();
    Ok(trace)
}

/// Extent of the merge area of ramp `i` as metres upstream and downstream
/// of its merge point: far enough upstream to hold every vehicle that can
/// reach the merge before a released vehicle is up to speed, and past the
/// end of the acceleration lane downstream.
pub(crate) fn merge_extent(g: &Geometry, i: usize, prof: &JerkProfile, p: &Params) -> (f64, f64) {
    let r = &g.ramps[i];
    let up = p.v_free * r.t_free + 2.0 * g.slots.pitch;
    let down = (prof.eval(r.t_free).x - r.ramp_run).max(0.0) + 2.0 * g.slots.pitch;
    (up, down)
}

pub(crate) fn comm_limits(g: &Geometry, prof: &JerkProfile, p: &Params, t_per: u64) -> CommLimits {
    let pitch = g.slots.pitch;
    let n_a: usize = g.ramps.iter().map(|r| r.n_acc).sum();
    let n_m = (0..g.m())
        .map(|i| {
            let (up, down) = merge_extent(g, i, prof, p);
            ((up + down) / pitch).floor() as usize + 1 + g.ramps[i].n_acc
        })
        .sum();
    CommLimits { n_c: g.slots.n_c, n_a, n_m, m: g.m(), t_per }
}

/// Forward distance that may be zero; on a straight road it may be negative.
pub(crate) fn forward0(g: &Geometry, from: f64, to: f64) -> f64 {
    match g.shape {
        Shape::Ring => (to - from).rem_euclid(g.length),
        Shape::Straight => to - from,
    }
}

fn policy_has_quota(kind: PolicyKind) -> bool {
    !matches!(kind, PolicyKind::Alinea | PolicyKind::SafeAlinea)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{presets, InitialCondition};

    fn small(kind: PolicyKind, engine: EngineKind, horizon: u64) -> Scenario {
        let mut s = presets::base("t", kind, false, 0.3, horizon);
        s.engine = engine;
        s
    }

    #[test]
    fn zero_horizon_is_empty() {
        for engine in [EngineKind::Micro, EngineKind::Slot] {
            let t = run(&small(PolicyKind::Greedy, engine, 0)).unwrap();
            assert_eq!(t.steps, 0);
            assert!(t.queues.is_empty() && t.trips.is_empty());
        }
    }

    #[test]
    fn deterministic_checksums() {
        for engine in [EngineKind::Micro, EngineKind::Slot] {
            let s = small(PolicyKind::Greedy, engine, 400);
            assert_eq!(run(&s).unwrap().checksum().unwrap(), run(&s).unwrap().checksum().unwrap());
        }
    }

    #[test]
    fn free_flow_slot_start_rotates() {
        let mut s = small(PolicyKind::Greedy, EngineKind::Micro, 120);
        s.demand.lambda = vec![0.0; 3];
        s.initial = InitialCondition::FreeFlowSlots { n: 60 };
        let t = run(&s).unwrap();
        assert_eq!(t.safety.misaligned, 0);
        assert_eq!(t.safety.spacing_violations, 0);
        assert_eq!(t.exited, 60);
    }
}
