//! Variable-time horseshoes in two-dimensional maps.
//!
//! Everything numeric is generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the experiment driver and CLI use.

pub mod branches;
pub mod dynsys;
pub mod error;
pub mod experiment;
pub mod fixture;
pub mod horseshoe;
pub mod linalg;
pub mod measures;
pub mod pesin;
pub mod scalar;

pub use error::{Error, Result};

pub type Point = dynsys::Point<f64>;
pub type TestFunctionFamily = dynsys::TestFunctionFamily<f64>;
pub type ReferenceMeasure = dynsys::ReferenceMeasure<f64>;
pub type PesinCertificate = pesin::PesinCertificate<f64>;
pub type Rectangle = pesin::Rectangle<f64>;
pub type ConeField = pesin::ConeField<f64>;
pub type Cylinder = pesin::Cylinder<f64>;
pub type HyperbolicBranch = branches::HyperbolicBranch<f64>;
pub type BranchSet = branches::BranchSet<f64>;
pub type VariableTimeHorseshoe = horseshoe::VariableTimeHorseshoe<f64>;
pub type CylinderRefinement = horseshoe::CylinderRefinement<f64>;
pub type PeriodicOrbitMeasure = measures::PeriodicOrbitMeasure<f64>;
