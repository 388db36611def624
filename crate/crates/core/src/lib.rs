//! Design and analysis of geographically clustered randomized trials when
//! treatment effects spill over across cluster boundaries.
//!
//! The pipeline is:
//!
//! 1. [`geometry`]: unit locations, distances, r-neighborhoods.
//! 2. [`clustering`]: partitioning around medoids and the exclusion radius.
//! 3. [`design`]: the number of clusters, two-stage randomization, and the
//!    ring design used to probe how fast interference decays.
//! 4. [`estimators`]: well-surrounded Hájek estimators and the plain
//!    difference-in-means comparators.
//! 5. [`inference`]: variance estimates and confidence intervals.
//! 6. [`simulation`]: data-generating processes and a Monte Carlo harness.
//!
//! Numerical code is generic over the scalar type through [`Real`]; the
//! aliases below fix it to `f64` (or `f32`) for everyday use.

pub mod clustering;
pub mod design;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod inference;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use error::{Arm, Error, Result};
pub use estimators::Estimand;
pub use geometry::Metric;
pub use scalar::Real;

pub type PointSet = geometry::PointSet<f64>;
pub type PointSet32 = geometry::PointSet<f32>;
pub type Clustering = clustering::Clustering<f64>;
pub type Clustering32 = clustering::Clustering<f32>;
pub type Footprint = estimators::Footprint;
pub type DesignParams = design::DesignParams<f64>;
pub type DesignParams32 = design::DesignParams<f32>;
pub type UnitPanel = estimators::UnitPanel<f64>;
pub type UnitPanel32 = estimators::UnitPanel<f32>;
pub type EstimateReport = estimators::EstimateReport<f64>;
pub type VarianceReport = inference::VarianceReport<f64>;
pub type ConfidenceInterval = inference::ConfidenceInterval<f64>;
