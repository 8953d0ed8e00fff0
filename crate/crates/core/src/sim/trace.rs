use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::policy::{CommAccount, PolicyKind};

/// Timestamps of one vehicle. Vehicles present at time zero have no
/// origin and no arrival or release time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripRecord {
    pub id: u64,
    pub origin: Option<usize>,
    pub dest: usize,
    pub t_arr: Option<f64>,
    pub t_rel: Option<f64>,
    pub t_merge: Option<f64>,
    pub t_exit: Option<f64>,
}

impl TripRecord {
    pub fn travel_time(&self) -> Option<f64> {
        Some(self.t_exit? - self.t_arr?)
    }
}

/// A cycle of a quota-based policy.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub step: u64,
    pub quotas: Vec<usize>,
    pub released: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TtcSample {
    pub time: f64,
    pub leader: u64,
    pub follower: u64,
    pub ttc: f64,
}

/// Safety bookkeeping over a whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct SafetyStats {
    /// Leader/follower pairs below the safety distance at step instants.
    pub spacing_violations: u64,
    pub worst_shortfall: f64,
    /// Pairs that came into contact.
    pub collisions: u64,
    /// Smallest front-to-rear distance seen on the mainline.
    pub min_gap: f64,
    /// Vehicles off the lattice at step instants while tracking since release.
    pub misaligned: u64,
    pub max_misalignment: f64,
    /// Mode switches into the safety controller.
    pub safety_switches: u64,
    /// Substeps in which an ungated ramp vehicle reached the merge point
    /// without a gap and was held at the line.
    pub line_holds: u64,
}

impl Default for SafetyStats {
    fn default() -> Self {
        SafetyStats {
            spacing_violations: 0,
            worst_shortfall: 0.0,
            collisions: 0,
            min_gap: f64::INFINITY,
            misaligned: 0,
            max_misalignment: 0.0,
            safety_switches: 0,
            line_holds: 0,
        }
    }
}

/// Everything recorded during a run.
#[derive(Clone, Debug)]
pub struct Trace {
    pub m: usize,
    pub tau: f64,
    pub policy: PolicyKind,
    pub steps: u64,
    /// Queue sizes at the end of each step, after releases and arrivals;
    /// `m` entries per step.
    pub queues: Vec<u32>,
    pub trips: Vec<TripRecord>,
    /// `(step, ramp, vehicle id)` for every release.
    pub releases: Vec<(u64, usize, u64)>,
    pub cycles: Vec<CycleRecord>,
    pub flow_points: Vec<f64>,
    /// Crossings per point and step; see [`Trace::cumulative_flow`].
    pub flow: Vec<Vec<u32>>,
    pub ttc: Vec<TtcSample>,
    pub comms: Vec<u64>,
    pub comm: CommAccount,
    /// Worst-case transmission bound for the policy, from the run's counts.
    pub comm_bound: f64,
    pub safety: SafetyStats,
    /// First step instant at which the road was in free flow.
    pub free_flow_time: Option<f64>,
    pub final_gaps: Vec<f64>,
    pub initial_vehicles: u64,
    pub arrivals: u64,
    pub exited: u64,
    /// Whether per-vehicle records are kept.
    pub record_trips: bool,
}

impl Trace {
    pub fn new(m: usize, tau: f64, policy: PolicyKind, flow_points: Vec<f64>) -> Self {
        let n = flow_points.len();
        Trace {
            m,
            tau,
            policy,
            steps: 0,
            queues: Vec::new(),
            trips: Vec::new(),
            releases: Vec::new(),
            cycles: Vec::new(),
            flow_points,
            flow: vec![Vec::new(); n],
            ttc: Vec::new(),
            comms: Vec::new(),
            comm: CommAccount::default(),
            comm_bound: 0.0,
            safety: SafetyStats::default(),
            free_flow_time: None,
            final_gaps: Vec::new(),
            initial_vehicles: 0,
            arrivals: 0,
            exited: 0,
            record_trips: true,
        }
    }

    pub fn queue(&self, step: u64) -> &[u32] {
        let s = step as usize * self.m;
        &self.queues[s..s + self.m]
    }

    /// Total queue per step.
    pub fn total_queue(&self) -> Vec<f64> {
        self.queues.chunks(self.m.max(1)).map(|q| q.iter().map(|&x| x as f64).sum()).collect()
    }

    /// `D_p(k tau)`: vehicles that crossed point `p` by time `k tau`.
    pub fn cumulative_flow(&self, point: usize) -> Vec<u64> {
        let mut acc = 0u64;
        self.flow[point]
            .iter()
            .map(|&c| {
                acc += c as u64;
                acc
            })
            .collect()
    }

    /// Completed trips of vehicles that arrived at a ramp, in completion order.
    pub fn completed_trips(&self) -> Vec<&TripRecord> {
        let mut done: Vec<&TripRecord> =
            self.trips.iter().filter(|t| t.origin.is_some() && t.t_exit.is_some()).collect();
        done.sort_by(|a, b| a.t_exit.partial_cmp(&b.t_exit).unwrap().then(a.id.cmp(&b.id)));
        done
    }

    /// Whether every cycle released at most its quota on every ramp.
    pub fn quotas_respected(&self) -> bool {
        self.cycles.iter().all(|c| c.released.iter().zip(&c.quotas).all(|(r, q)| r <= q))
    }

    pub(crate) fn add_trip(&mut self, t: TripRecord) {
        if self.record_trips {
            debug_assert_eq!(t.id, self.trips.len() as u64);
            self.trips.push(t);
        }
    }

    pub(crate) fn trip_mut(&mut self, id: u64) -> Option<&mut TripRecord> {
        self.trips.get_mut(id as usize)
    }

    pub(crate) fn push_flow(&mut self, point: usize, step: u64) {
        let f = &mut self.flow[point];
        let s = step as usize;
        if f.len() <= s {
            f.resize(s + 1, 0);
        }
        f[s] += 1;
    }

    pub(crate) fn finish(&mut self) {
        let n = self.steps as usize + 1;
        for f in &mut self.flow {
            f.resize(n, 0);
        }
    }

    fn write_queues<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut head = vec!["step".to_string()];
        head.extend((1..=self.m).map(|i| format!("Q{i}")));
        w.write_record(&head)?;
        for (step, q) in self.queues.chunks(self.m.max(1)).enumerate() {
            let mut row = vec![step.to_string()];
            row.extend(q.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_vehicles<W: Write>(&self, w: W) -> Result<()> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["id", "origin", "dest", "t_arr", "t_rel", "t_merge", "t_exit"])?;
        for t in &self.trips {
            w.write_record([
                t.id.to_string(),
                t.origin.map(|o| o.to_string()).unwrap_or_default(),
                t.dest.to_string(),
                opt(t.t_arr),
                opt(t.t_rel),
                opt(t.t_merge),
                opt(t.t_exit),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_flow<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["point", "step", "D_p"])?;
        for (k, &x) in self.flow_points.iter().enumerate() {
            for (step, d) in self.cumulative_flow(k).into_iter().enumerate() {
                w.write_record([x.to_string(), step.to_string(), d.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn write_ttc<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["time", "pair", "ttc"])?;
        for s in &self.ttc {
            w.write_record([s.time.to_string(), format!("{}-{}", s.leader, s.follower), s.ttc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_comms<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["step", "policy", "transmissions"])?;
        for (step, c) in self.comms.iter().enumerate() {
            w.write_record([step.to_string(), self.policy.name().to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// The CSV tables as `(file name, bytes)`.
    pub fn tables(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        self.write_queues(&mut buf)?;
        out.push(("queues.csv", std::mem::take(&mut buf)));
        self.write_vehicles(&mut buf)?;
        out.push(("vehicles.csv", std::mem::take(&mut buf)));
        self.write_flow(&mut buf)?;
        out.push(("flow.csv", std::mem::take(&mut buf)));
        self.write_ttc(&mut buf)?;
        out.push(("ttc.csv", std::mem::take(&mut buf)));
        self.write_comms(&mut buf)?;
        out.push(("comms.csv", buf));
        Ok(out)
    }

    /// SHA-256 over all CSV tables, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, bytes) in self.tables()? {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.tables()? {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Time to collision of a follower closing on its leader, or `None` when
/// the pair is not closing.
pub fn ttc(gap: f64, v_follower: f64, v_leader: f64) -> Option<f64> {
    let closing = v_follower - v_leader;
    (closing > 0.0).then(|| gap.max(0.0) / closing)
}

/// TTC values above this are dropped.
pub const TTC_CAP: f64 = 20.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ttc_values() {
        assert_eq!(ttc(30.0, 20.0, 15.0), Some(6.0));
        assert_eq!(ttc(30.0, 15.0, 15.0), None);
        assert_eq!(ttc(30.0, 10.0, 15.0), None);
    }

    #[test]
    fn empty_trace_tables_have_headers() {
        let t = Trace::new(2, 1.0, PolicyKind::Greedy, vec![]);
        let tables = t.tables().unwrap();
        assert_eq!(String::from_utf8(tables[0].1.clone()).unwrap(), "step,Q1,Q2\n");
        assert_eq!(t.checksum().unwrap(), t.clone().checksum().unwrap());
    }
}
