//! Replicated experiment drivers shared by the command line and the
//! acceptance checks. Runs fan out over the rayon pool; every run has its
//! own seed and its own trace.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    capacity_drop, classify, pooled_batch_means, queue_time_average, smooth, ttc_summary, ttt_n, BatchMeansResult,
    BatchProtocol, Classification, TtcSummary, Verdict,
};
use crate::error::Result;
use crate::policy::PolicyKind;
use crate::scenario::Scenario;
use crate::sim::{run, SafetyStats, Trace};

/// Plotted in place of the queue average for saturated settings.
pub const SATURATED_SENTINEL: f64 = 20.0;

/// Runs `s` once per seed.
pub fn replicate(s: &Scenario, seeds: &[u64]) -> Result<Vec<Trace>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut s = s.clone();
            s.demand.seed = seed;
            run(&s)
        })
        .collect()
}

fn majority(runs: &[Classification]) -> Verdict {
    let sat = runs.iter().filter(|c| c.verdict == Verdict::Saturated).count();
    if 2 * sat > runs.len() {
        Verdict::Saturated
    } else {
        Verdict::Stable
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub t_cyc: u64,
    pub verdict: Verdict,
    pub slope: f64,
    /// Mean queue per ramp, batch means pooled over seeds.
    pub queue: Option<BatchMeansResult>,
}

impl SweepRow {
    pub fn plot_value(&self) -> f64 {
        match (&self.queue, self.verdict) {
            (Some(q), Verdict::Stable) => q.mean,
            _ => SATURATED_SENTINEL,
        }
    }
}

/// Queue averages and stability over a range of cycle lengths.
pub fn cycle_sweep(
    template: &Scenario,
    t_cycs: &[u64],
    seeds: &[u64],
    protocol: BatchProtocol,
) -> Result<Vec<SweepRow>> {
    t_cycs
        .iter()
        .map(|&t_cyc| {
            let mut s = template.clone();
            s.policy.t_cyc = t_cyc;
            s.metrics.vehicles = false;
            s.metrics.comms = false;
            let traces = replicate(&s, seeds)?;
            let m = s.geometry.m as f64;
            let series: Vec<Vec<f64>> =
                traces.iter().map(|t| t.total_queue().into_iter().map(|q| q / m).collect()).collect();
            let runs = series.iter().map(|q| classify(q)).collect::<Result<Vec<_>>>()?;
            let queue = pooled_batch_means(&series, protocol.warmup, protocol.batch_size, 0.95).ok();
            let slope = runs.iter().map(|c| c.slope).sum::<f64>() / runs.len() as f64;
            Ok(SweepRow { t_cyc, verdict: majority(&runs), slope, queue })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["T_cyc", "verdict", "slope", "avg_queue", "half_width", "batches", "plot_value"])?;
    for r in rows {
        let (mean, hw, b) = r.queue.as_ref().map_or((String::new(), String::new(), String::new()), |q| {
            (q.mean.to_string(), q.half_width.to_string(), q.batches.to_string())
        });
        let verdict = if r.verdict == Verdict::Saturated { "saturated" } else { "stable" };
        w.write_record([
            r.t_cyc.to_string(),
            verdict.into(),
            r.slope.to_string(),
            mean,
            hw,
            b,
            r.plot_value().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub policy: PolicyKind,
    /// Mean over seeds of the first-`n` travel time, minutes.
    pub ttt_min: f64,
    pub ttt_partial: bool,
    pub avg_queue: f64,
    pub verdict: Verdict,
    pub slope: f64,
    pub safety: SafetyStats,
    pub ttc: TtcSummary,
    /// Downstream crossing rate of the first seed, smoothed.
    pub flow: Vec<f64>,
    pub capacity_drop: Option<f64>,
}

/// Options for [`compare`].
#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub horizon: Option<u64>,
    /// Trips averaged for the travel time.
    pub ttt_n: usize,
    pub flow_window: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { seeds: vec![1, 2, 3], horizon: None, ttt_n: 20_000, flow_window: 300 }
    }
}

fn merged_safety(traces: &[Trace]) -> SafetyStats {
    let mut s = SafetyStats::default();
    for t in traces {
        let x = &t.safety;
        s.spacing_violations += x.spacing_violations;
        s.worst_shortfall = s.worst_shortfall.max(x.worst_shortfall);
        s.collisions += x.collisions;
        s.min_gap = s.min_gap.min(x.min_gap);
        s.misaligned += x.misaligned;
        s.max_misalignment = s.max_misalignment.max(x.max_misalignment);
        s.safety_switches += x.safety_switches;
        s.line_holds += x.line_holds;
    }
    s
}

/// Replicated runs of each scenario, summarised per policy.
pub fn compare(scenarios: &[Scenario], cfg: &CompareConfig) -> Result<Vec<CompareRow>> {
    scenarios
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if let Some(h) = cfg.horizon {
                s.demand.horizon = h;
            }
            let traces = replicate(&s, &cfg.seeds)?;
            let n = traces.len() as f64;
            let ttts: Vec<_> = traces.iter().map(|t| ttt_n(t, cfg.ttt_n)).collect();
            let runs = traces.iter().map(|t| classify(&t.total_queue())).collect::<Result<Vec<_>>>()?;
            let ttc: Vec<_> = traces.iter().flat_map(|t| t.ttc.iter().cloned()).collect();
            let (flow, drop) = match traces[0].flow.first() {
                Some(f) => {
                    let warm = traces[0].steps as usize / 2;
                    (smooth(f, cfg.flow_window), Some(capacity_drop(f, warm, 1.0)))
                }
                None => (Vec::new(), None),
            };
            Ok(CompareRow {
                policy: s.policy.kind,
                ttt_min: ttts.iter().map(|t| t.minutes).sum::<f64>() / n,
                ttt_partial: ttts.iter().any(|t| t.partial),
                avg_queue: traces.iter().map(queue_time_average).sum::<f64>() / n,
                verdict: majority(&runs),
                slope: runs.iter().map(|c| c.slope).sum::<f64>() / n,
                safety: merged_safety(&traces),
                ttc: ttc_summary(&ttc),
                flow,
                capacity_drop: drop,
            })
        })
        .collect()
}

/// `policy,avg_travel_time_min,avg_queue,...` rows.
pub fn write_summary_csv<W: Write>(rows: &[CompareRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "policy",
        "avg_travel_time_min",
        "avg_queue",
        "verdict",
        "queue_slope",
        "collisions",
        "spacing_violations",
        "capacity_drop_pct",
    ])?;
    for r in rows {
        let verdict = if r.verdict == Verdict::Saturated { "saturated" } else { "stable" };
        w.write_record([
            r.policy.name().to_string(),
            r.ttt_min.to_string(),
            r.avg_queue.to_string(),
            verdict.to_string(),
            r.slope.to_string(),
            r.safety.collisions.to_string(),
            r.safety.spacing_violations.to_string(),
            r.capacity_drop.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ttc_box_csv<W: Write>(rows: &[CompareRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["policy", "samples", "min", "q1", "median", "q3", "max", "below_6s"])?;
    for r in rows {
        let t = &r.ttc;
        w.write_record([
            r.policy.name().to_string(),
            t.samples.to_string(),
            t.min.to_string(),
            t.q1.to_string(),
            t.median.to_string(),
            t.q3.to_string(),
            t.max.to_string(),
            t.below_6s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Smoothed downstream flow, one `policy,step,flow` row per step.
pub fn write_flow_csv<W: Write>(rows: &[CompareRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["policy", "step", "flow"])?;
    for r in rows {
        for (k, f) in r.flow.iter().enumerate() {
            w.write_record([r.policy.name().to_string(), k.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
