//! Travel time, queue averages, capacity drop and TTC summaries.

use serde::Serialize;

use crate::sim::{Trace, TtcSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ttt {
    /// Mean time from arrival to exit, in minutes.
    pub minutes: f64,
    /// Completed trips averaged.
    pub n: usize,
    /// Fewer than the requested number of trips had completed.
    pub partial: bool,
}

/// Average travel time of the first `n` trips to complete.
pub fn ttt_n(trace: &Trace, n: usize) -> Ttt {
    let done = trace.completed_trips();
    let used = &done[..n.min(done.len())];
    let sum: f64 = used.iter().filter_map(|t| t.travel_time()).sum();
    let minutes = if used.is_empty() { 0.0 } else { sum / used.len() as f64 / 60.0 };
    Ttt { minutes, n: used.len(), partial: used.len() < n }
}

/// `TTT_n` at each of `ns`, from one pass over the completions.
pub fn ttt_curve(trace: &Trace, ns: &[usize]) -> Vec<Ttt> {
    let done = trace.completed_trips();
    let mut prefix = Vec::with_capacity(done.len() + 1);
    prefix.push(0.0);
    for t in &done {
        prefix.push(prefix.last().unwrap() + t.travel_time().unwrap_or(0.0));
    }
    ns.iter()
        .map(|&n| {
            let k = n.min(done.len());
            let minutes = if k == 0 { 0.0 } else { prefix[k] / k as f64 / 60.0 };
            Ttt { minutes, n: k, partial: k < n }
        })
        .collect()
}

/// Mean queue per ramp over all recorded steps.
pub fn queue_time_average(trace: &Trace) -> f64 {
    if trace.queues.is_empty() {
        return 0.0;
    }
    trace.queues.iter().map(|&q| q as f64).sum::<f64>() / trace.queues.len() as f64
}

/// Percent shortfall of the mean crossing rate after `warmup` steps
/// relative to `capacity` vehicles per step.
pub fn capacity_drop(flow: &[u32], warmup: usize, capacity: f64) -> f64 {
    let tail = &flow[warmup.min(flow.len())..];
    if tail.is_empty() || capacity <= 0.0 {
        return 0.0;
    }
    let mean = tail.iter().map(|&c| c as f64).sum::<f64>() / tail.len() as f64;
    100.0 * (1.0 - mean / capacity)
}

/// Moving average of a per-step series over `window` steps.
pub fn smooth(flow: &[u32], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(flow.len());
    let mut acc = 0.0;
    for (i, &c) in flow.iter().enumerate() {
        acc += c as f64;
        if i >= w {
            acc -= flow[i - w] as f64;
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TtcSummary {
    pub samples: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Share of samples below six seconds.
    pub below_6s: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn ttc_summary(samples: &[TtcSample]) -> TtcSummary {
    if samples.is_empty() {
        return TtcSummary::default();
    }
    let mut v: Vec<f64> = samples.iter().map(|s| s.ttc).collect();
    v.sort_by(f64::total_cmp);
    TtcSummary {
        samples: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        below_6s: v.iter().filter(|&&x| x < 6.0).count() as f64 / v.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_stream_has_no_drop() {
        assert_eq!(capacity_drop(&[1; 100], 10, 1.0), 0.0);
        assert!((capacity_drop(&[1, 0, 1, 0], 0, 1.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(&[1, 0, 1, 0], 2), vec![1.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn quartiles() {
        let s: Vec<TtcSample> =
            (1..=5).map(|i| TtcSample { time: 0.0, leader: 0, follower: 1, ttc: 2.0 * i as f64 }).collect();
        let q = ttc_summary(&s);
        assert_eq!((q.min, q.median, q.max), (2.0, 6.0, 10.0));
        assert!((q.below_6s - 0.4).abs() < 1e-12);
    }
}
