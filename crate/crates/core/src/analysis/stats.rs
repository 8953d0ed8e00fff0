//! Batch means and queue-trend classification.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchMeansResult {
    pub mean: f64,
    /// Half-width of the confidence interval.
    pub half_width: f64,
    pub warmup: usize,
    pub batch_size: usize,
    pub batches: usize,
}

impl BatchMeansResult {
    /// Half-width relative to the mean.
    pub fn margin(&self) -> f64 {
        if self.half_width == 0.0 {
            0.0
        } else {
            self.half_width / self.mean.abs()
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width
    }
}

/// Warmup, batch length and target margin for queue averages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BatchProtocol {
    pub warmup: usize,
    pub batch_size: usize,
    pub margin: f64,
}

impl BatchProtocol {
    /// Short enough for a laptop.
    pub const DESK: BatchProtocol = BatchProtocol { warmup: 10_000, batch_size: 10_000, margin: 0.03 };
    /// Long runs with a 1% margin.
    pub const FULL: BatchProtocol = BatchProtocol { warmup: 100_000, batch_size: 100_000, margin: 0.01 };
}

fn t_quantile(confidence: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(0.5 + confidence / 2.0)
}

/// Drops `warmup` samples, averages non-overlapping batches and builds a
/// Student-t interval from the batch means.
pub fn batch_means(series: &[f64], warmup: usize, batch_size: usize, confidence: f64) -> Result<BatchMeansResult> {
    pooled_batch_means(&[series], warmup, batch_size, confidence)
}

/// Batch means over independent replications: each series loses its own
/// warmup and contributes its batches to one pool.
pub fn pooled_batch_means<S: AsRef<[f64]>>(
    series: &[S],
    warmup: usize,
    batch_size: usize,
    confidence: f64,
) -> Result<BatchMeansResult> {
    let total: usize = series.iter().map(|s| s.as_ref().len().saturating_sub(warmup)).sum();
    if batch_size == 0 || series.is_empty() || total < 2 * batch_size + 1 {
        return Err(Error::Insufficient(format!(
            "{total} samples after a warmup of {warmup} cannot hold two batches of {batch_size}"
        )));
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::Param(format!("confidence {confidence} outside [0, 1)")));
    }
    let batches: Vec<f64> = series
        .iter()
        .filter(|s| s.as_ref().len() > warmup)
        .flat_map(|s| s.as_ref()[warmup..].chunks_exact(batch_size))
        .map(|b| b.iter().sum::<f64>() / batch_size as f64)
        .collect();
    if batches.len() < 2 {
        return Err(Error::Insufficient(format!("{} complete batches", batches.len())));
    }
    let n = batches.len() as f64;
    let mean = batches.iter().sum::<f64>() / n;
    let var = batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half_width = t_quantile(confidence, n - 1.0) * (var / n).sqrt();
    Ok(BatchMeansResult { mean, half_width, warmup, batch_size, batches: batches.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Saturated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Least-squares slope of the total queue, vehicles per step.
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Slope the queue must exceed before a run counts as saturated.
pub const MIN_SLOPE: f64 = 1e-3;

/// Least-squares slope with its 95% interval over the last half of the
/// series. Saturated means the whole interval is above zero and the slope
/// exceeds [`MIN_SLOPE`].
pub fn classify(total_queue: &[f64]) -> Result<Classification> {
    let start = total_queue.len() / 2;
    let y = &total_queue[start..];
    if y.len() < 3 {
        return Err(Error::Insufficient(format!("{} samples cannot be classified", total_queue.len())));
    }
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (v - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = y.iter().enumerate().map(|(i, &v)| (v - intercept - slope * i as f64).powi(2)).sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let half = t_quantile(0.95, n - 2.0) * se;
    let (ci_low, ci_high) = (slope - half, slope + half);
    let verdict = if ci_low > 0.0 && slope > MIN_SLOPE { Verdict::Saturated } else { Verdict::Stable };
    Ok(Classification { verdict, slope, ci_low, ci_high })
}
