use thiserror::Error;

use crate::control::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("interface position {s:.6e} m left the admissible range at t = {t:.6e} s")]
    DegenerateInterface { t: f64, s: f64 },

    #[error("a phase disappeared at t = {t:.6e} s (s = {s:.6e} m)")]
    PhaseDisappearance { t: f64, s: f64 },

    #[error("non-finite value produced at t = {t:.6e} s")]
    NumericalBlowup { t: f64 },

    #[error("time step {dt:.3e} s exceeds the explicit stability bound {bound:.3e} s")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("setpoint assumption violated: energy deficit sigma(0) = {sigma0:.6e} must be positive")]
    SetpointAssumption { sigma0: f64 },

    #[error("the analytic CBF solution needs distinct rates (c1 = c2 = {0})")]
    ConfluentRates(f64),

    #[error("decay fit needs positive samples; smallest was {floor:.3e}")]
    DegenerateSeries { floor: f64 },

    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("scenario assumptions failed:\n{0}")]
    Assumptions(ValidationReport),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures raised by the numerical integrators.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInterface { .. }
                | Error::PhaseDisappearance { .. }
                | Error::NumericalBlowup { .. }
                | Error::StabilityBound { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
