//! Scenario files, run manifests and the built-in presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometrySpec, Shape};
use crate::model::{DemandSpec, RoutingMatrix};
use crate::params::{time_step_tau, Controller, Params};
use crate::policy::{PolicyConfig, PolicyKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    /// Continuous car-following dynamics with sub-stepping.
    #[default]
    Micro,
    /// Lattice chain; exact only from free-flow starts under gated policies.
    Slot,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Empty,
    /// `n` free-flow vehicles spread evenly over the slots.
    FreeFlowSlots { n: usize },
    /// `n` vehicles at speed `v0` with front-to-rear gap `gap`, in safety mode.
    Congested { n: usize, v0: f64, gap: f64 },
    /// Random count, speeds and gaps, all respecting the safety distance.
    RandomCongested { n_min: usize, n_max: usize, v_min: f64, v_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSection {
    #[serde(rename = "R")]
    pub r: RoutingMatrix,
}

impl RoutingSection {
    /// Reads `R` from a routing file, or from the `[routing]` table of a
    /// scenario file or manifest.
    pub fn from_toml(text: &str) -> Result<RoutingSection> {
        let mut value: toml::Table = toml::from_str(text)?;
        if let Some(toml::Value::Table(inner)) = value.remove("scenario") {
            value = inner;
        }
        let section = match value.remove("routing") {
            Some(inner) => inner.try_into()?,
            None => value.try_into()?,
        };
        let r: RoutingSection = section;
        r.r.validate()?;
        Ok(r)
    }
}

fn d_true() -> bool {
    true
}
fn d_stride() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "d_true")]
    pub vehicles: bool,
    /// Mainline positions where crossings are counted.
    #[serde(default)]
    pub flow_points: Vec<f64>,
    #[serde(default)]
    pub ttc: bool,
    /// TTC is sampled every `ttc_stride` steps, at the step instants.
    #[serde(default = "d_stride")]
    pub ttc_stride: u64,
    #[serde(default = "d_true")]
    pub comms: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { vehicles: true, flow_points: Vec::new(), ttc: false, ttc_stride: 1, comms: true }
    }
}

fn d_dt() -> f64 {
    0.05
}
fn d_band() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Target integration step; the actual step divides the slot step evenly.
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Seconds at the start with no arrivals, releases or exits.
    #[serde(default)]
    pub idle_warmup: f64,
    #[serde(default = "d_band")]
    pub deadband_speed: f64,
    #[serde(default = "d_band")]
    pub deadband_accel: f64,
    #[serde(default = "d_band")]
    pub deadband_spacing: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: d_dt(), idle_warmup: 0.0, deadband_speed: 0.05, deadband_accel: 0.05, deadband_spacing: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub engine: EngineKind,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub controller: Controller,
    pub demand: DemandSpec,
    pub routing: RoutingSection,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

/// Values derived while resolving a scenario, recorded next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    #[serde(rename = "P")]
    pub length: f64,
    pub n_c: usize,
    pub tau: f64,
    pub pitch: f64,
    pub dt: f64,
    pub substeps: usize,
    pub merge_point: Vec<f64>,
    pub merge_shift: Vec<f64>,
    pub ramp_run: Vec<f64>,
    pub merge_speed: Vec<f64>,
    /// Merge headway multiples per ramp.
    pub k: Vec<u32>,
    pub n_acc: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub derived: Derived,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.routing.r.validate()?;
        self.policy.validate()?;
        let m = self.geometry.m;
        if self.routing.r.size() != m {
            return Err(Error::Scenario(format!("routing is {0}x{0} for {m} ramps", self.routing.r.size())));
        }
        if self.geometry.shape == Shape::Straight && !self.routing.r.is_upper_triangular() {
            return Err(Error::Scenario("straight roads need upper-triangular routing".into()));
        }
        self.demand.validate(m)?;
        if !(self.sim.dt > 0.0) {
            return Err(Error::Scenario("sim.dt must be positive".into()));
        }
        if self.engine == EngineKind::Slot {
            if matches!(self.policy.kind, PolicyKind::Alinea | PolicyKind::SafeAlinea) {
                return Err(Error::Scenario("the slot engine only runs lattice-gated policies".into()));
            }
            if matches!(self.initial, InitialCondition::Congested { .. } | InitialCondition::RandomCongested { .. }) {
                return Err(Error::Scenario("the slot engine needs a free-flow start".into()));
            }
            if self.policy.penetration < 1.0 {
                return Err(Error::Scenario("the slot engine assumes full penetration".into()));
            }
            if self.sim.idle_warmup > 0.0 {
                return Err(Error::Scenario("the slot engine has no idle warmup".into()));
            }
        }
        Ok(())
    }

    pub fn resolve_geometry(&self) -> Result<Geometry> {
        Geometry::resolve(&self.geometry, &self.params)
    }

    pub fn derived(&self) -> Result<Derived> {
        let g = self.resolve_geometry()?;
        let tau = time_step_tau(&self.params);
        let substeps = substeps(tau, self.sim.dt);
        Ok(Derived {
            length: g.length,
            n_c: g.slots.n_c,
            tau,
            pitch: g.slots.pitch,
            dt: tau / substeps as f64,
            substeps,
            merge_point: g.ramps.iter().map(|r| r.merge_point).collect(),
            merge_shift: g.ramps.iter().map(|r| r.merge_shift).collect(),
            ramp_run: g.ramps.iter().map(|r| r.ramp_run).collect(),
            merge_speed: g.ramps.iter().map(|r| r.merge_speed).collect(),
            k: g.ramps.iter().map(|r| r.k).collect(),
            n_acc: g.ramps.iter().map(|r| r.n_acc).collect(),
        })
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest { scenario: self.clone(), derived: self.derived()? })
    }

    /// Parses either a scenario file or a run manifest.
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let value: toml::Table = toml::from_str(text)?;
        let s: Scenario = match value.get("scenario") {
            Some(inner) => inner.clone().try_into()?,
            None => toml::from_str(text)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Number of integration steps per slot step.
pub fn substeps(tau: f64, dt: f64) -> usize {
    ((tau / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Built-in scenarios mirroring the experiments.
pub mod presets {
    use super::*;

    pub const NAMES: &[&str] = &[
        "greedy_vf",
        "greedy_low",
        "cycle_sweep_vf",
        "cycle_sweep_low",
        "random_congested",
        "compare_renewal",
        "compare_drr",
        "compare_dis_drr",
        "compare_dsg",
        "compare_greedy",
        "compare_safe_alinea",
        "compare_alinea",
        "capacity_drop_drr",
        "capacity_drop_safe_alinea",
    ];

    /// The three-ramp ring: 1860 m, on-ramps a third apart, off-ramps
    /// 155 m before the next on-ramp. With `low_merge` the middle ramp is
    /// short enough that vehicles merge at 5 m/s.
    pub fn ring(low_merge: bool) -> GeometrySpec {
        let p = Params::default();
        let mut g = GeometrySpec::even_ring(1860.0, 3, 155.0, &p);
        if low_merge {
            g.merge_speed = Some(vec![p.v_free, 5.0, p.v_free]);
        }
        g
    }

    pub fn base(name: &str, kind: PolicyKind, low_merge: bool, lambda: f64, horizon: u64) -> Scenario {
        Scenario {
            name: name.to_string(),
            engine: EngineKind::Micro,
            geometry: ring(low_merge),
            params: Params::default(),
            controller: Controller::default(),
            demand: DemandSpec { lambda: vec![lambda; 3], seed: 1, horizon },
            routing: RoutingSection { r: RoutingMatrix::example() },
            policy: PolicyConfig::new(kind),
            initial: InitialCondition::Empty,
            metrics: MetricsConfig::default(),
            sim: SimConfig::default(),
        }
    }

    /// Congested start used by the policy comparison: 100 vehicles at
    /// 6.7 m/s, each at the equilibrium gap of the safety controller.
    pub fn congested_start() -> InitialCondition {
        let p = Params::default();
        InitialCondition::Congested { n: 100, v0: 6.7, gap: p.h * 6.7 + p.s0 }
    }

    fn comparison(name: &str, kind: PolicyKind) -> Scenario {
        let mut s = base(name, kind, true, 0.455, 50_000);
        s.initial = congested_start();
        s.metrics.ttc = true;
        s
    }

    fn capacity_drop(name: &str, kind: PolicyKind) -> Scenario {
        let mut s = base(name, kind, true, 0.455, 20_000);
        s.policy.t_cyc = 1;
        s.initial = InitialCondition::FreeFlowSlots { n: 60 };
        s.sim.idle_warmup = 300.0;
        // Just downstream of the middle merge.
        s.metrics.flow_points = vec![650.0];
        s
    }

    pub fn get(name: &str) -> Option<Scenario> {
        let s = match name {
            "greedy_vf" => {
                let mut s = base(name, PolicyKind::Greedy, false, 0.5, 200_000);
                s.engine = EngineKind::Slot;
                s
            }
            "greedy_low" => {
                let mut s = base(name, PolicyKind::Greedy, true, 0.4, 200_000);
                s.engine = EngineKind::Slot;
                s
            }
            "cycle_sweep_vf" => {
                let mut s = base(name, PolicyKind::Fcq, false, 0.5, 200_000);
                s.engine = EngineKind::Slot;
                s
            }
            "cycle_sweep_low" => {
                let mut s = base(name, PolicyKind::Fcq, true, 0.455, 200_000);
                s.engine = EngineKind::Slot;
                s.policy.t_cyc = 13;
                s
            }
            "random_congested" => {
                let mut s = base(name, PolicyKind::Greedy, false, 0.5, 20_000);
                s.initial = InitialCondition::RandomCongested { n_min: 20, n_max: 90, v_min: 3.0, v_max: 15.0 };
                s
            }
            "compare_renewal" => comparison(name, PolicyKind::Renewal),
            "compare_drr" => comparison(name, PolicyKind::Drr),
            "compare_dis_drr" => comparison(name, PolicyKind::DisDrr),
            "compare_dsg" => comparison(name, PolicyKind::Dsg),
            "compare_greedy" => comparison(name, PolicyKind::Greedy),
            "compare_safe_alinea" => comparison(name, PolicyKind::SafeAlinea),
            "compare_alinea" => comparison(name, PolicyKind::Alinea),
            "capacity_drop_drr" => capacity_drop(name, PolicyKind::Drr),
            "capacity_drop_safe_alinea" => capacity_drop(name, PolicyKind::SafeAlinea),
            _ => return None,
        };
        Some(s)
    }
}
