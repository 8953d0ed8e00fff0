//! Ramp-metering policies.
//!
//! A policy sees an [`Observation`] once per step and asks the engine to
//! release vehicles through a [`MergeGate`]. The engine owns the physical
//! safety checks; the policy owns quotas, cycles and timing.

mod alinea;
mod comm;
mod fixed;
mod monitor;
mod renewal;

pub use alinea::{alinea_step, Alinea, AlineaState};
pub use comm::{CommAccount, CommCounts, CommLimits};
pub use fixed::{drr_gap_update, DisDrrRamp, DrrConstants, DrrState, FixedCycle};
pub use monitor::{compute_monitors, Deadband, MonitorInput, MonitorSample};
pub use renewal::Renewal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Renewal,
    Fcq,
    Greedy,
    Drr,
    DisDrr,
    Dsg,
    Alinea,
    SafeAlinea,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Renewal,
        PolicyKind::Fcq,
        PolicyKind::Greedy,
        PolicyKind::Drr,
        PolicyKind::DisDrr,
        PolicyKind::Dsg,
        PolicyKind::Alinea,
        PolicyKind::SafeAlinea,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Renewal => "renewal",
            PolicyKind::Fcq => "fcq",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Drr => "drr",
            PolicyKind::DisDrr => "dis_drr",
            PolicyKind::Dsg => "dsg",
            PolicyKind::Alinea => "alinea",
            PolicyKind::SafeAlinea => "safe_alinea",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        PolicyKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Rules that must all hold for a release under this policy.
    pub fn rules(self) -> ReleaseGate {
        let base = ReleaseGate { m1: true, m3: true, m4: true, ..Default::default() };
        match self {
            PolicyKind::Renewal | PolicyKind::Fcq => ReleaseGate { m2: true, ..base },
            PolicyKind::Greedy => base,
            PolicyKind::Drr | PolicyKind::DisDrr => ReleaseGate { m2: true, m5: true, ..base },
            PolicyKind::Dsg => ReleaseGate { m2: true, m6: true, ..base },
            PolicyKind::Alinea => ReleaseGate { m1: true, ..Default::default() },
            PolicyKind::SafeAlinea => ReleaseGate { m1: true, m4: true, ..Default::default() },
        }
    }

    /// Whether the policy relies on the safety gate, so the run must never
    /// produce spacing violations from a free-flow start.
    pub fn is_gated(self) -> bool {
        self.rules().m4
    }
}

/// Release rules: M1 step instant, M2 quota left, M3 spacing at the meter,
/// M4 predicted merge safety, M5 minimum time gap, M6 widened gaps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReleaseGate {
    pub m1: bool,
    pub m2: bool,
    pub m3: bool,
    pub m4: bool,
    pub m5: bool,
    pub m6: bool,
}

/// Safety check requested for a release.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    /// Release without looking at traffic.
    Unchecked,
    /// Spacing at the meter and predicted merge safety, each widened by `extra_gap` metres.
    Checked { extra_gap: f64 },
}

impl Gate {
    pub const SAFE: Gate = Gate::Checked { extra_gap: 0.0 };
}

/// Implemented by engines: performs the release if the gate admits it.
pub trait MergeGate {
    fn try_release(&mut self, ramp: usize, gate: Gate) -> bool;
}

/// Everything a policy may look at in one step.
#[derive(Clone, Debug)]
pub struct Observation<'a> {
    pub step: u64,
    pub tau: f64,
    pub queues: &'a [usize],
    pub free_flow: bool,
    pub monitors: &'a MonitorSample,
    /// Running integral of detector occupancy (percent times seconds) per ramp.
    pub occupancy_integral: &'a [f64],
}

impl Observation<'_> {
    pub fn time(&self) -> f64 {
        self.step as f64 * self.tau
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub released: Vec<usize>,
    /// Quotas of a cycle that started this step.
    pub cycle_start: Option<Vec<usize>>,
}

pub trait RampPolicy: Send {
    fn kind(&self) -> PolicyKind;
    fn step(&mut self, obs: &Observation, gate: &mut dyn MergeGate) -> StepReport;
    /// Current minimum time gaps per ramp, for tracing.
    fn gaps(&self) -> Vec<f64> {
        Vec::new()
    }
}

fn d_t_cyc() -> u64 {
    1
}
fn d_t_per() -> u64 {
    2
}
fn d_gamma1() -> f64 {
    50.0
}
fn d_theta2() -> f64 {
    10.0
}
fn d_theta0() -> f64 {
    0.1
}
fn d_beta() -> f64 {
    1.01
}
fn d_t_max() -> f64 {
    100.0
}
fn d_kappa() -> f64 {
    0.01
}
fn d_k_r() -> f64 {
    70.0
}
fn d_o_hat() -> f64 {
    13.0
}
fn d_alinea_period() -> f64 {
    60.0
}
fn d_one() -> f64 {
    1.0
}

/// Policy section of a scenario file. Times are in seconds except the cycle
/// length and monitor period, which count steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(rename = "T_cyc", default = "d_t_cyc")]
    pub t_cyc: u64,
    #[serde(rename = "T_per", default = "d_t_per")]
    pub t_per: u64,
    #[serde(default = "d_gamma1")]
    pub gamma1: f64,
    #[serde(default = "d_theta2")]
    pub theta2: f64,
    #[serde(default = "d_theta0")]
    pub theta0: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(rename = "T_max", default = "d_t_max")]
    pub t_max: f64,
    #[serde(default = "d_kappa")]
    pub kappa1: f64,
    #[serde(default = "d_kappa")]
    pub kappa2: f64,
    #[serde(rename = "K_r", default = "d_k_r")]
    pub k_r: f64,
    #[serde(default = "d_o_hat")]
    pub o_hat: f64,
    #[serde(default = "d_alinea_period")]
    pub alinea_period: f64,
    /// Starting ALINEA rate in veh/h; half the maximum when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_init: Option<f64>,
    /// Fraction of vehicles that report their state.
    #[serde(default = "d_one")]
    pub penetration: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        let t_cyc = match kind {
            PolicyKind::Drr | PolicyKind::DisDrr | PolicyKind::Dsg => 13,
            _ => 1,
        };
        PolicyConfig {
            kind,
            t_cyc,
            t_per: d_t_per(),
            gamma1: d_gamma1(),
            theta2: d_theta2(),
            theta0: d_theta0(),
            beta: d_beta(),
            t_max: d_t_max(),
            kappa1: d_kappa(),
            kappa2: d_kappa(),
            k_r: d_k_r(),
            o_hat: d_o_hat(),
            alinea_period: d_alinea_period(),
            r_init: None,
            penetration: 1.0,
        }
    }

    pub fn with_t_cyc(mut self, t_cyc: u64) -> Self {
        self.t_cyc = t_cyc;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_cyc == 0 || self.t_per == 0 {
            return Err(Error::Scenario("T_cyc and T_per must be at least one step".into()));
        }
        if !(self.beta >= 1.0) || !(self.theta0 > 0.0) || self.theta2 < 0.0 || self.gamma1 < 0.0 {
            return Err(Error::Scenario("gap adaptation constants out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(Error::Scenario("penetration must lie in [0, 1]".into()));
        }
        if !(self.alinea_period > 0.0) {
            return Err(Error::Scenario("alinea_period must be positive".into()));
        }
        Ok(())
    }

    /// Builds the policy for `m` ramps. `downstream[i]` lists the links
    /// whose monitors count as downstream of ramp `i` for the distributed
    /// gap rule.
    pub fn build(&self, m: usize, tau: f64, downstream: Vec<Vec<usize>>) -> Box<dyn RampPolicy> {
        let drr = DrrConstants { gamma1: self.gamma1, theta2: self.theta2, beta: self.beta };
        match self.kind {
            PolicyKind::Renewal => Box::new(Renewal::new(m)),
            PolicyKind::Fcq => Box::new(FixedCycle::fcq(m, self.t_cyc)),
            PolicyKind::Greedy => Box::new(FixedCycle::greedy(m)),
            PolicyKind::Drr => Box::new(FixedCycle::drr(m, self.t_cyc, self.t_per, self.theta0, drr)),
            PolicyKind::DisDrr => {
                Box::new(FixedCycle::dis_drr(m, self.t_cyc, self.t_per, self.theta0, self.t_max, drr, downstream))
            }
            PolicyKind::Dsg => Box::new(FixedCycle::dsg(m, self.t_cyc, self.kappa1, self.kappa2)),
            PolicyKind::Alinea | PolicyKind::SafeAlinea => {
                let r_max = 3600.0 / tau;
                let state = AlineaState {
                    r: self.r_init.unwrap_or(0.5 * r_max),
                    o_hat: self.o_hat,
                    k_r: self.k_r,
                    r_min: 0.0,
                    r_max,
                };
                Box::new(Alinea::new(m, state, self.alinea_period, self.kind == PolicyKind::SafeAlinea))
            }
        }
    }
}
