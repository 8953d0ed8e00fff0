//! Fixtures shared by the benchmarks.

use rampsim_core::scenario::presets;
use rampsim_core::{EngineKind, PolicyKind, Scenario};

/// The low-merge ring at a stable rate, with trip records off.
pub fn fixture(kind: PolicyKind, engine: EngineKind, horizon: u64) -> Scenario {
    let mut s = presets::base("bench", kind, true, 0.45, horizon);
    s.engine = engine;
    s.metrics.vehicles = false;
    s.metrics.comms = false;
    s
}
