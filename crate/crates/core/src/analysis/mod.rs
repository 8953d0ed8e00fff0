//! Throughput regions, estimators and stability probes over traces.

pub mod drift;
pub mod metrics;
pub mod probe;
pub mod region;
pub mod stats;

pub use drift::{cycle_chain, empirical_drift, queue_chain, DriftBucket, DriftReport, Transition};
pub use metrics::{capacity_drop, queue_time_average, smooth, ttc_summary, ttt_curve, ttt_n, TtcSummary, Ttt};
pub use probe::{classify_rate, saturation_probe, ProbeConfig, ProbePoint, ProbeResult};
pub use region::{
    inner_region_fixed_cycle, inner_region_renewal, outer_region, Constraint, RegionKind, ThroughputRegion,
};
pub use stats::{
    batch_means, classify, pooled_batch_means, BatchMeansResult, BatchProtocol, Classification, Verdict, MIN_SLOPE,
};
