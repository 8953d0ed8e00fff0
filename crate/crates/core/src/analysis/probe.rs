//! Bisection for the arrival rate at which a policy stops keeping up.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::stats::{classify, Classification, Verdict};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::sim::run;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeConfig {
    /// Rate known or hoped to be stable.
    pub lo: f64,
    /// Rate known or hoped to be saturated.
    pub hi: f64,
    /// Stop once the bracket is this narrow.
    pub width: f64,
    pub seeds: Vec<u64>,
    pub horizon: u64,
    /// Split decisions double the horizon up to this cap.
    pub max_horizon: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { lo: 0.3, hi: 0.7, width: 0.04, seeds: vec![1, 2, 3], horizon: 200_000, max_horizon: 400_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbePoint {
    pub lambda: f64,
    pub horizon: u64,
    pub runs: Vec<Classification>,
    pub verdict: Verdict,
}

impl ProbePoint {
    pub fn mean_slope(&self) -> f64 {
        self.runs.iter().map(|c| c.slope).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    /// Largest rate found stable.
    pub lo: f64,
    /// Smallest rate found saturated.
    pub hi: f64,
    pub points: Vec<ProbePoint>,
}

impl ProbeResult {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `lambda,horizon,seed_index,verdict,slope,ci_low,ci_high` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["lambda", "horizon", "run", "verdict", "slope", "ci_low", "ci_high"])?;
        for p in &self.points {
            for (k, c) in p.runs.iter().enumerate() {
                let v = if c.verdict == Verdict::Saturated { "saturated" } else { "stable" };
                w.write_record([
                    p.lambda.to_string(),
                    p.horizon.to_string(),
                    k.to_string(),
                    v.to_string(),
                    c.slope.to_string(),
                    c.ci_low.to_string(),
                    c.ci_high.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Scenario with every ramp's rate scaled so the largest equals `lambda`.
pub fn at_rate(template: &Scenario, lambda: f64) -> Scenario {
    let mut s = template.clone();
    let top = template.demand.lambda.iter().cloned().fold(0.0, f64::max);
    s.demand.lambda =
        template.demand.lambda.iter().map(|&l| if top > 0.0 { lambda * l / top } else { lambda }).collect();
    s.metrics.vehicles = false;
    s.metrics.ttc = false;
    s.metrics.comms = false;
    s.metrics.flow_points.clear();
    s
}

/// Runs every seed at `lambda` and takes the majority verdict. A split
/// vote doubles the horizon until it is unanimous or the cap is reached.
pub fn classify_rate(template: &Scenario, lambda: f64, cfg: &ProbeConfig) -> Result<ProbePoint> {
    if cfg.seeds.is_empty() {
        return Err(Error::Param("probe needs at least one seed".into()));
    }
    let mut horizon = cfg.horizon;
    loop {
        let runs = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut s = at_rate(template, lambda);
                s.demand.seed = seed;
                s.demand.horizon = horizon;
                classify(&run(&s)?.total_queue())
            })
            .collect::<Result<Vec<_>>>()?;
        let sat = runs.iter().filter(|c| c.verdict == Verdict::Saturated).count();
        let split = sat != 0 && sat != runs.len();
        if split && horizon * 2 <= cfg.max_horizon {
            horizon *= 2;
            continue;
        }
        let verdict = if 2 * sat > runs.len() { Verdict::Saturated } else { Verdict::Stable };
        return Ok(ProbePoint { lambda, horizon, runs, verdict });
    }
}

/// Bisects `[cfg.lo, cfg.hi]`, assuming stability is monotone in the rate.
/// The ends are checked first; an end with the wrong verdict is an error.
pub fn saturation_probe(template: &Scenario, cfg: &ProbeConfig) -> Result<ProbeResult> {
    if !(cfg.lo < cfg.hi) {
        return Err(Error::Param(format!("empty probe range [{}, {}]", cfg.lo, cfg.hi)));
    }
    let mut points = Vec::new();
    let lo_pt = classify_rate(template, cfg.lo, cfg)?;
    let hi_pt = classify_rate(template, cfg.hi, cfg)?;
    let ends_ok = lo_pt.verdict == Verdict::Stable && hi_pt.verdict == Verdict::Saturated;
    points.push(lo_pt);
    points.push(hi_pt);
    if !ends_ok {
        return Err(Error::Insufficient(format!(
            "range [{}, {}] does not bracket the saturation rate",
            cfg.lo, cfg.hi
        )));
    }
    let (mut lo, mut hi) = (cfg.lo, cfg.hi);
    while hi - lo > cfg.width {
        let mid = 0.5 * (lo + hi);
        let p = classify_rate(template, mid, cfg)?;
        if p.verdict == Verdict::Stable {
            lo = mid;
        } else {
            hi = mid;
        }
        points.push(p);
    }
    Ok(ProbeResult { lo, hi, points })
}
