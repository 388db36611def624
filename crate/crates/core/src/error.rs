use std::fmt;

use serde::{Deserialize, Serialize};

/// Treatment arm of a comparison: `Treated` is t = 1, `Control` is t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub fn from_t(t: u8) -> Self {
        if t == 1 {
            Arm::Treated
        } else {
            Arm::Control
        }
    }

    pub fn t(self) -> u8 {
        match self {
            Arm::Treated => 1,
            Arm::Control => 0,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Treated => f.write_str("treated (t=1)"),
            Arm::Control => f.write_str("control (t=0)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("unit {id} out of range for {n} units")]
    InvalidUnit { id: usize, n: usize },
    #[error("unit {id} has {found} coordinates, expected {expected}")]
    DimensionMismatch { id: usize, expected: usize, found: usize },
    #[error("coordinate of unit {id} is not finite")]
    NonFiniteCoordinate { id: usize },
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("medoid set is empty")]
    EmptyMedoids,
    #[error("k = {k} is invalid for {n} units (need 1 <= k <= n)")]
    InvalidK { k: usize, n: usize },
    #[error("k-medoids hit the swap cap of {cap} without converging")]
    IterationCap { cap: usize },
    #[error("gamma = {gamma} is below the spatial dimension d = {dim}; interference must decay faster than r^-d")]
    GammaBelowDimension { gamma: f64, dim: usize },
    #[error("design expects k = {expected} clusters but the clustering has {found}")]
    KMismatch { expected: usize, found: usize },
    #[error("degenerate draw: no units included in the {arm} arm")]
    DegenerateDraw { arm: Arm },
    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("need at least 3 positive ring effects to fit a slope, got {positive} (estimates: {estimates:?})")]
    TooFewPositive { positive: usize, estimates: Vec<f64> },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Errors that stem from the realized randomization or the data rather
    /// than from invalid input.
    pub fn is_statistical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDraw { .. } | Error::SolverDiverged { .. } | Error::TooFewPositive { .. }
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
