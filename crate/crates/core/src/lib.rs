//! Slot-based freeway ramp-metering simulator.
//!
//! The crate has four layers: the road and demand model ([`geometry`],
//! [`model`]), vehicle dynamics ([`dynamics`]), metering policies
//! ([`policy`]) and the engines in [`sim`]. [`analysis`] turns traces into
//! stability verdicts and throughput regions, and [`scenario`] ties
//! everything to config files.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod model;
pub mod params;
pub mod policy;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Geometry, GeometrySpec, Shape, SlotSystem};
pub use model::{cumulative_routing, link_loads, CumulativeRouting, DemandSpec, RoutingMatrix};
pub use params::{time_step_tau, Controller, Params};
pub use policy::{PolicyConfig, PolicyKind};
pub use scenario::{EngineKind, InitialCondition, Scenario};
pub use sim::{run, Trace};
