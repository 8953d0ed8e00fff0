//! Road layout and the slot lattice.
//!
//! Positions are arc lengths along the mainline. A ramp is projected onto
//! the mainline coordinate: its meter sits `ramp_run` metres upstream of
//! its merge point, so a vehicle on the ramp has a well-defined distance to
//! merge in the same frame as mainline traffic.

use serde::{Deserialize, Serialize};

use crate::dynamics::{blocking_offsets, run_for_merge_speed, BlockingOffsets, JerkProfile};
use crate::error::{Error, Result};
use crate::params::{time_step_tau, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ring,
    Straight,
}

/// Layout as written in a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub shape: Shape,
    #[serde(rename = "P")]
    pub length: f64,
    pub m: usize,
    pub onramp_pos: Vec<f64>,
    pub offramp_pos: Vec<f64>,
    /// Defaults to the on-ramp positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_point: Option<Vec<f64>>,
    /// Meter-to-merge distance. Either this or `merge_speed` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_run: Option<Vec<f64>>,
    /// Speed reached at the merge point by a vehicle released from rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_speed: Option<Vec<f64>>,
}

impl GeometrySpec {
    /// Ring of length `length` with `m` evenly spaced ramps, off-ramps
    /// `off_back` metres upstream of the next on-ramp, all merging at `Vf`.
    pub fn even_ring(length: f64, m: usize, off_back: f64, p: &Params) -> GeometrySpec {
        let on: Vec<f64> = (0..m).map(|i| i as f64 * length / m as f64).collect();
        let off = (0..m).map(|i| on[(i + 1) % m] - off_back).map(|x| x.rem_euclid(length)).collect();
        GeometrySpec {
            shape: Shape::Ring,
            length,
            m,
            onramp_pos: on,
            offramp_pos: off,
            merge_point: None,
            ramp_run: None,
            merge_speed: Some(vec![p.v_free; m]),
        }
    }
}

/// One ramp after resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ramp {
    pub onramp_pos: f64,
    pub offramp_pos: f64,
    pub merge_point: f64,
    /// How far the merge point was moved to sit on the lattice.
    pub merge_shift: f64,
    pub ramp_run: f64,
    pub merge_speed: f64,
    /// Seconds from release to the merge point.
    pub t_merge: f64,
    /// Seconds from release until the vehicle is at free-flow speed on the
    /// mainline (end of the acceleration lane).
    pub t_free: f64,
    /// Headway multiple needed to merge, in steps.
    pub k: u32,
    #[serde(skip)]
    pub blocking: BlockingOffsets,
    /// Number of lattice instants a released vehicle spends before the end
    /// of the acceleration lane.
    pub n_acc: usize,
    /// Distances from the meter at those instants.
    pub acc_slots: Vec<f64>,
}

impl Ramp {
    pub fn meter_pos(&self) -> f64 {
        self.merge_point - self.ramp_run
    }
}

/// Resolved geometry. The mainline length is snapped to a whole number of
/// slot pitches and merge points are nudged onto the lattice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Geometry {
    pub shape: Shape,
    pub length: f64,
    pub requested_length: f64,
    pub ramps: Vec<Ramp>,
    pub slots: SlotSystem,
}

/// The moving lattice of free-flow positions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotSystem {
    pub n_c: usize,
    pub pitch: f64,
    /// Front position of slot 0 at time zero.
    pub phase: f64,
    pub tau: f64,
    /// Slot that a vehicle released from ramp `i` at step 0 ends up in.
    pub entry_slot: Vec<usize>,
}

impl SlotSystem {
    /// Front position of slot `k` after `step` steps, wrapped into `[0, P)`.
    pub fn position(&self, k: usize, step: u64) -> f64 {
        let p = self.n_c as f64 * self.pitch;
        let idx = (k as u64 + step) % self.n_c as u64;
        (self.phase + idx as f64 * self.pitch).rem_euclid(p)
    }

    /// Slot a vehicle released from ramp `i` at `step` will occupy.
    pub fn entry_slot_at(&self, ramp: usize, step: u64) -> usize {
        let n = self.n_c as u64;
        ((self.entry_slot[ramp] as u64 + n - step % n) % n) as usize
    }
}

pub fn slot_capacity(length: f64, p: &Params) -> Result<usize> {
    let n = (length / p.slot_pitch()).floor();
    if n < 1.0 {
        return Err(Error::Geometry(format!(
            "mainline of {length} m is shorter than one slot pitch ({} m)",
            p.slot_pitch()
        )));
    }
    Ok(n as usize)
}

impl Geometry {
    pub fn resolve(spec: &GeometrySpec, p: &Params) -> Result<Geometry> {
        let m = spec.m;
        if m == 0 {
            return Err(Error::Geometry("at least one ramp is required".into()));
        }
        let lens = [("onramp_pos", spec.onramp_pos.len()), ("offramp_pos", spec.offramp_pos.len())];
        for (name, n) in lens {
            if n != m {
                return Err(Error::Geometry(format!("{name} has {n} entries for {m} ramps")));
            }
        }
        let n_c = slot_capacity(spec.length, p)?;
        let pitch = p.slot_pitch();
        let length = n_c as f64 * pitch;
        let scale = length / spec.length;
        let merge_raw = spec.merge_point.clone().unwrap_or_else(|| spec.onramp_pos.clone());
        if merge_raw.len() != m {
            return Err(Error::Geometry("merge_point length mismatch".into()));
        }
        for &x in spec.onramp_pos.iter().chain(&spec.offramp_pos).chain(&merge_raw) {
            if !(0.0..spec.length).contains(&x) && !(spec.shape == Shape::Straight && x == spec.length) {
                return Err(Error::Geometry(format!("position {x} outside [0, P)")));
            }
        }
        let runs: Vec<f64> = match (&spec.ramp_run, &spec.merge_speed) {
            (Some(r), _) => r.clone(),
            (None, Some(v)) => {
                if v.iter().any(|&s| !(s > 0.0 && s <= p.v_free)) {
                    return Err(Error::Geometry("merge speeds must lie in (0, Vf]".into()));
                }
                v.iter().map(|&s| run_for_merge_speed(s, p)).collect()
            }
            (None, None) => return Err(Error::Geometry("either ramp_run or merge_speed is required".into())),
        };
        if runs.len() != m || runs.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Geometry("ramp_run needs one positive entry per ramp".into()));
        }

        let tau = time_step_tau(p);
        let from_rest = JerkProfile::speed_tracking(0.0, 0.0, p);
        let deficit = from_rest.deficit();
        let first_meter = merge_raw[0] * scale - runs[0];
        let phase = (first_meter - deficit).rem_euclid(pitch);

        let mut ramps = Vec::with_capacity(m);
        let mut entry_slot = Vec::with_capacity(m);
        for i in 0..m {
            let run = runs[i];
            let merge0 = merge_raw[i] * scale;
            // Residue of the eventual slot position against the lattice.
            let r = (merge0 - run - deficit - phase).rem_euclid(pitch);
            let shift = if r <= pitch / 2.0 { -r } else { pitch - r };
            let shift = if i == 0 { 0.0 } else { shift };
            let merge = match spec.shape {
                Shape::Ring => (merge0 + shift).rem_euclid(length),
                Shape::Straight => merge0 + shift,
            };
            let slot_front = merge - run - deficit;
            let idx = ((slot_front - phase) / pitch).round() as i64;
            entry_slot.push(idx.rem_euclid(n_c as i64) as usize);

            let t_merge = from_rest.time_to_travel(run);
            let merge_speed = from_rest.eval(t_merge).v;
            let t_free = t_merge.max(from_rest.duration());
            let n_acc = ((t_free / tau) - 1e-9).ceil().max(0.0) as usize;
            let acc_slots =
                (1..=n_acc).map(|j| from_rest.eval(j as f64 * tau).x.min(run.max(from_rest.end().x))).collect();
            let blocking = blocking_offsets(run, 0.0, p);
            ramps.push(Ramp {
                onramp_pos: spec.onramp_pos[i] * scale,
                offramp_pos: spec.offramp_pos[i] * scale,
                merge_point: merge,
                merge_shift: shift,
                ramp_run: run,
                merge_speed,
                t_merge,
                t_free,
                k: blocking.multiple().max(2),
                blocking,
                n_acc,
                acc_slots,
            });
        }
        let g = Geometry {
            shape: spec.shape,
            length,
            requested_length: spec.length,
            ramps,
            slots: SlotSystem { n_c, pitch, phase, tau, entry_slot },
        };
        g.check_order()?;
        Ok(g)
    }

    pub fn m(&self) -> usize {
        self.ramps.len()
    }

    /// Forward travel distance from `from` to `to`. On a ring this lies in
    /// `(0, P]` for distinct points; on a straight road it may be negative.
    pub fn forward(&self, from: f64, to: f64) -> f64 {
        match self.shape {
            Shape::Ring => {
                let d = (to - from).rem_euclid(self.length);
                if d == 0.0 {
                    self.length
                } else {
                    d
                }
            }
            Shape::Straight => to - from,
        }
    }

    /// Wraps an unrolled position onto the road.
    pub fn wrap(&self, x: f64) -> f64 {
        match self.shape {
            Shape::Ring => x.rem_euclid(self.length),
            Shape::Straight => x,
        }
    }

    /// Signed distance from `x` to `point` in `(-P/2, P/2]` on a ring:
    /// positive means `point` lies ahead.
    pub fn ahead_of(&self, x: f64, point: f64) -> f64 {
        match self.shape {
            Shape::Ring => {
                let d = (point - x).rem_euclid(self.length);
                if d > self.length / 2.0 {
                    d - self.length
                } else {
                    d
                }
            }
            Shape::Straight => point - x,
        }
    }

    /// Index of the link (segment from on-ramp `i` to on-ramp `i+1`) that
    /// contains mainline position `x`.
    pub fn link_of(&self, x: f64) -> usize {
        let m = self.m();
        let base = self.ramps[0].merge_point;
        let d = match self.shape {
            Shape::Ring => (x - base).rem_euclid(self.length),
            Shape::Straight => x - base,
        };
        let mut link = m - 1;
        for i in (0..m).rev() {
            let di = match self.shape {
                Shape::Ring => (self.ramps[i].merge_point - base).rem_euclid(self.length),
                Shape::Straight => self.ramps[i].merge_point - base,
            };
            if d >= di {
                link = i;
                break;
            }
        }
        link
    }

    fn check_order(&self) -> Result<()> {
        let base = self.ramps[0].merge_point;
        let rel = |x: f64| match self.shape {
            Shape::Ring => (x - base).rem_euclid(self.length),
            Shape::Straight => x - base,
        };
        let mut last = -1.0;
        for (i, r) in self.ramps.iter().enumerate() {
            let on = rel(r.merge_point);
            let off = rel(r.offramp_pos);
            if !(on > last && off > on) {
                return Err(Error::Geometry(format!(
                    "ramps must alternate on-ramp {i} then off-ramp {i} in travel order"
                )));
            }
            last = off;
        }
        if self.shape == Shape::Straight && last > self.length + 1e-9 {
            return Err(Error::Geometry("off-ramp beyond the end of the road".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_ring() -> Geometry {
        let p = Params::default();
        Geometry::resolve(&GeometrySpec::even_ring(1860.0, 3, 155.0, &p), &p).unwrap()
    }

    #[test]
    fn capacity_values() {
        let p = Params::default();
        assert_eq!(slot_capacity(1860.0, &p).unwrap(), 60);
        assert_eq!(slot_capacity(31.0, &p).unwrap(), 1);
        assert_eq!(slot_capacity(124.0, &p).unwrap(), 4);
        assert!(slot_capacity(30.0, &p).is_err());
    }

    #[test]
    fn lattice_geometry() {
        let g = reference_ring();
        let s = &g.slots;
        for k in 0..s.n_c {
            let a = s.position(k, 7);
            let b = s.position((k + 1) % s.n_c, 7);
            let d = (b - a).rem_euclid(g.length);
            assert!((d - s.pitch).abs() < 1e-9);
            assert!((s.position(k, s.n_c as u64) - s.position(k, 0)).abs() < 1e-9);
        }
        // One step moves every slot forward by one pitch.
        assert!(((s.position(3, 1) - s.position(3, 0)).rem_euclid(g.length) - s.pitch).abs() < 1e-9);
    }

    #[test]
    fn ramps_land_on_slots() {
        let g = reference_ring();
        let p = Params::default();
        let prof = JerkProfile::speed_tracking(0.0, 0.0, &p);
        for (i, r) in g.ramps.iter().enumerate() {
            assert!(r.merge_shift.abs() <= g.slots.pitch / 2.0);
            // Released at step 3, observed at step 3 + 10.
            let steps = 10u64;
            let x = g.wrap(r.meter_pos() + prof.eval(steps as f64 * g.slots.tau).x);
            let slot = g.slots.position(g.slots.entry_slot_at(i, 3), 3 + steps);
            assert!(g.ahead_of(x, slot).abs() < 1e-6, "ramp {i}");
        }
    }

    #[test]
    fn order_is_checked() {
        let p = Params::default();
        let mut spec = GeometrySpec::even_ring(1860.0, 3, 155.0, &p);
        spec.offramp_pos.swap(0, 1);
        assert!(Geometry::resolve(&spec, &p).is_err());
    }

    #[test]
    fn links() {
        let g = reference_ring();
        assert_eq!(g.link_of(g.ramps[0].merge_point + 1.0), 0);
        assert_eq!(g.link_of(g.ramps[1].merge_point + 1.0), 1);
        assert_eq!(g.link_of(g.ramps[0].merge_point - 1.0), 2);
    }
}
