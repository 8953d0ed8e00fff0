//! Monte-Carlo drift estimates for a Lyapunov function along sampled
//! epochs of a run.
//!
//! Exact conditioning on the state is out of reach, so states are bucketed
//! by the deciles of their largest queue. The small-queue buckets form the
//! finite set `B`; the check asks for `E[V' - V | bucket] <= -f` outside it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::Trace;

/// One observed transition between consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Queue sizes at the earlier epoch.
    pub queues: Vec<usize>,
    pub v_now: f64,
    pub v_next: f64,
}

impl Transition {
    pub fn max_queue(&self) -> usize {
        self.queues.iter().copied().max().unwrap_or(0)
    }
}

/// Epochs at cycle starts, with `V` the square of the cycle length:
/// transition `k` goes from `T(k)^2` to `T(k+1)^2`.
pub fn cycle_chain(trace: &Trace) -> Vec<Transition> {
    let c = &trace.cycles;
    if c.len() < 3 {
        return Vec::new();
    }
    let len = |k: usize| (c[k + 1].step - c[k].step) as f64;
    (0..c.len() - 2)
        .map(|k| Transition { queues: c[k].quotas.clone(), v_now: len(k).powi(2), v_next: len(k + 1).powi(2) })
        .collect()
}

/// Epochs every `stride` steps, with `V` the total queue.
pub fn queue_chain(trace: &Trace, stride: u64) -> Vec<Transition> {
    let stride = stride.max(1);
    let steps = trace.steps;
    let at = |s: u64| trace.queue(s).iter().map(|&q| q as usize).collect::<Vec<_>>();
    (0..)
        .map(|k| k * stride)
        .take_while(|&s| s + stride < steps)
        .map(|s| {
            let (a, b) = (at(s), at(s + stride));
            Transition { v_now: a.iter().sum::<usize>() as f64, v_next: b.iter().sum::<usize>() as f64, queues: a }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftBucket {
    /// Largest-queue range `[lo, hi]` of the states in the bucket.
    pub lo: usize,
    pub hi: usize,
    pub n: usize,
    pub drift: f64,
    /// Standard error of the drift estimate.
    pub se: f64,
    pub in_b: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub epochs: usize,
    pub buckets: Vec<DriftBucket>,
    /// Mean drift over the epochs whose state is outside `B`.
    pub drift_outside_b: f64,
    pub se_outside_b: f64,
    /// Smallest `b` with `drift <= -f + b` on the buckets inside `B`.
    pub b: f64,
    /// Buckets outside `B` whose drift exceeds `-f`.
    pub violations: Vec<usize>,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::INFINITY);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Buckets the transitions by deciles of the largest queue; the lowest
/// `b_deciles` buckets make up `B`. `f` is the required decrease outside
/// `B`; buckets with fewer than `min_per_bucket` epochs are an error.
pub fn empirical_drift(
    samples: &[Transition],
    f: impl Fn(&Transition) -> f64,
    b_deciles: usize,
    min_per_bucket: usize,
) -> Result<DriftReport> {
    if samples.len() < 10 * min_per_bucket.max(1) {
        return Err(Error::Insufficient(format!("{} epochs for ten buckets", samples.len())));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| (samples[i].max_queue(), i));
    let n = samples.len();
    let mut buckets = Vec::new();
    let mut outside = Vec::new();
    let mut b = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for d in 0..10 {
        let idx = &order[d * n / 10..(d + 1) * n / 10];
        if idx.len() < min_per_bucket {
            return Err(Error::Insufficient(format!("bucket {d} holds {} epochs", idx.len())));
        }
        let deltas: Vec<f64> = idx.iter().map(|&i| samples[i].v_next - samples[i].v_now).collect();
        let (drift, se) = mean_se(&deltas);
        let need = idx.iter().map(|&i| f(&samples[i])).sum::<f64>() / idx.len() as f64;
        let in_b = d < b_deciles;
        if in_b {
            b = b.max(drift + need);
        } else {
            outside.extend_from_slice(&deltas);
            if drift > -need {
                violations.push(d);
            }
        }
        buckets.push(DriftBucket {
            lo: samples[idx[0]].max_queue(),
            hi: samples[*idx.last().unwrap()].max_queue(),
            n: idx.len(),
            drift,
            se,
            in_b,
        });
    }
    let (drift_outside_b, se_outside_b) = if outside.is_empty() { (0.0, 0.0) } else { mean_se(&outside) };
    Ok(DriftReport { epochs: n, buckets, drift_outside_b, se_outside_b, b: b.max(0.0), violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(q: usize, dv: f64) -> Transition {
        Transition { queues: vec![q], v_now: q as f64, v_next: q as f64 + dv }
    }

    #[test]
    fn drainage_has_no_positive_drift() {
        let s: Vec<Transition> = (0..400).map(|i| t(i % 40, if i % 40 == 0 { 0.0 } else { -1.0 })).collect();
        let r = empirical_drift(&s, |_| 0.0, 1, 5).unwrap();
        assert!(r.buckets.iter().all(|b| b.drift <= 0.0));
        assert!(r.drift_outside_b < 0.0 && r.violations.is_empty());
    }

    #[test]
    fn growth_is_flagged() {
        let s: Vec<Transition> = (0..400).map(|i| t(i, 1.0)).collect();
        let r = empirical_drift(&s, |_| 0.0, 5, 5).unwrap();
        assert_eq!(r.violations, vec![5, 6, 7, 8, 9]);
        assert!((r.drift_outside_b - 1.0).abs() < 1e-12);
        assert!((r.b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn needs_samples() {
        assert!(empirical_drift(&[t(1, 0.0)], |_| 0.0, 1, 5).is_err());
    }
}
