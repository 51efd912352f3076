//! Steady-state model of chemical power for micron-scale robots aggregated
//! in rings on a capillary wall: axisymmetric Stokes flow, oxygen transport
//! with red-cell release kinetics, robot and tissue consumption, and the
//! waste-heat field, plus closed-form reference models for validation.

pub mod analytic;
pub mod flow;
pub mod mesh;
pub mod numeric;
pub mod oxygen;
pub mod rbc;
pub mod scenario;

pub use mesh::{build_mesh, core_hematocrit, trace_core_boundary, AxiMesh, CoreBoundary, Region};
pub use scenario::{DerivedParams, PumpMode, ScenarioConfig, ScenarioError};
