//! Simulated trials with known potential outcomes.
//!
//! [`dgp`] draws locations and generates outcomes from a spatial
//! autoregressive (Cliff-Ord) or moving-average model, [`oracle`] computes
//! the true estimands, [`harness`] runs the Monte Carlo grid, and
//! [`variogram`] estimates the interference decay exponent from ring
//! designs. Everything here is `f64`.

pub mod dgp;
pub mod harness;
pub mod oracle;
pub mod variogram;

pub use dgp::{
    cliff_ord_outcomes, gen_locations, moving_average_outcomes, shared_noise, CliffOrd, Model, MovingAverage, Noise,
    OutcomeModel, SpatialWeights,
};
pub use harness::{run_monte_carlo, Regime, ReportRow, SimulationConfig, SimulationReport, TruthMethod};
pub use oracle::{true_estimands_exhaustive, true_estimands_mc, LinearOracle, PotentialOutcomes, TrueEstimands};
pub use variogram::{fit_log_slope, run_variogram, variogram_gamma, VariogramConfig, VariogramFit, VariogramOptions};
