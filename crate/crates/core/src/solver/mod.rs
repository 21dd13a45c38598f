//! Front-fixing finite-difference solvers for the one- and two-phase Stefan
//! problems.
//!
//! Each phase is mapped onto a unit interval where the interface is a fixed
//! node. In that frame the heat equation picks up an advection term from the
//! moving map, which is upwinded so the scheme stays monotone.

mod one_phase;
mod two_phase;

pub use one_phase::{
    interface_gradient, simulate, step, traveling_wave_oracle, Trajectory, TravelingWave,
    TravelingWaveSample,
};
pub(crate) use one_phase::step_count;
pub use two_phase::{
    s_infinity, step_two_phase, TwoPhaseMaterial, TwoPhaseState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Grid;

/// Time integrator for the semi-discretized PDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Forward Euler, guarded by the diffusive stability bound.
    #[default]
    Explicit,
    /// Backward Euler with the interface velocity lagged one step.
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: Grid,
    /// Time step, s.
    pub dt: f64,
    /// Fraction of the explicit stability bound that `dt` may use.
    pub safety_factor: f64,
    /// Smallest admissible interface position (and phase thickness), m.
    pub min_interface: f64,
    pub scheme: Scheme,
}

impl SolverConfig {
    pub fn new(grid: Grid, dt: f64) -> Result<Self> {
        let cfg = SolverConfig {
            grid,
            dt,
            safety_factor: 0.4,
            min_interface: 1e-12,
            scheme: Scheme::Explicit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Largest explicit step for diffusivity `alpha` on a phase of
    /// thickness `len`, scaled by `safety_factor`.
    pub fn stable_dt(grid: Grid, safety_factor: f64, alpha: f64, len: f64) -> f64 {
        let dx = grid.dxi() * len;
        safety_factor * dx * dx / (2.0 * alpha)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_safety_factor(mut self, f: f64) -> Result<Self> {
        self.safety_factor = f;
        self.validate()?;
        Ok(self)
    }

    pub fn with_min_interface(mut self, m: f64) -> Result<Self> {
        self.min_interface = m;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return Err(Error::param(
                "safety_factor",
                format!("must lie in (0, 1], got {}", self.safety_factor),
            ));
        }
        if !(self.min_interface > 0.0) {
            return Err(Error::param(
                "min_interface",
                format!("must be positive, got {}", self.min_interface),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_stability(&self, alpha: f64, len: f64) -> Result<()> {
        if self.scheme == Scheme::Explicit {
            let bound = Self::stable_dt(self.grid, self.safety_factor, alpha, len);
            if self.dt > bound {
                return Err(Error::StabilityBound { dt: self.dt, bound });
            }
        }
        Ok(())
    }
}

/// One phase in its immobilized frame `z ∈ [0, 1]`:
///
/// `u_t = diffusion * u_zz + z * drift * u_z`, `u_z(0) = flux_slope`, `u(1) = 0`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PhaseCoefficients {
    pub diffusion: f64,
    pub drift: f64,
    pub flux_slope: f64,
}

/// Advances `u` in place by `dt`. The last node is the interface and stays
/// at zero.
pub(crate) fn advance_phase(u: &mut [f64], c: PhaseCoefficients, dt: f64, scheme: Scheme) {
    let n = u.len() - 1;
    let h = 1.0 / n as f64;
    let d = c.diffusion / (h * h);
    // Ghost node u[-1] = u[1] - 2 h flux_slope gives this source at z = 0.
    let source = -2.0 * c.diffusion * c.flux_slope / h;

    match scheme {
        Scheme::Explicit => {
            let old = u.to_vec();
            u[0] = old[0] + dt * (d * (2.0 * old[1] - 2.0 * old[0]) + source);
            for i in 1..n {
                let a = i as f64 * h * c.drift;
                let adv = if a >= 0.0 {
                    a * (old[i + 1] - old[i]) / h
                } else {
                    a * (old[i] - old[i - 1]) / h
                };
                u[i] = old[i] + dt * (d * (old[i + 1] - 2.0 * old[i] + old[i - 1]) + adv);
            }
        }
        Scheme::Implicit => {
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut rhs: Vec<f64> = u[..n].to_vec();

            diag[0] = 1.0 + 2.0 * dt * d;
            upper[0] = -2.0 * dt * d;
            rhs[0] += dt * source;
            for i in 1..n {
                let a = i as f64 * h * c.drift;
                let (west, east) = if a >= 0.0 { (0.0, a / h) } else { (-a / h, 0.0) };
                lower[i] = -dt * (d + west);
                upper[i] = -dt * (d + east);
                diag[i] = 1.0 + dt * (2.0 * d + a.abs() / h);
            }
            // u[n] = 0 so the last upper coefficient drops out.
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
            u[..n].copy_from_slice(&rhs);
        }
    }
    u[n] = 0.0;
}

/// Thomas algorithm; `rhs` is overwritten with the solution.
pub(crate) fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = upper[0] / beta;
    rhs[0] /= beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / beta;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Three-point one-sided derivative at the last node with respect to the
/// unit coordinate.
pub(crate) fn end_slope(u: &[f64]) -> f64 {
    let n = u.len() - 1;
    let h = 1.0 / n as f64;
    (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * h)
}

/// Interface slope used to move the front: the three-point value unless it
/// disagrees in sign with the two-point value, which happens when a heat
/// front has reached `n - 2` but not yet `n - 1`. The two-point slope keeps
/// the sign that the maximum principle dictates.
pub(crate) fn limited_end_slope(u: &[f64]) -> f64 {
    let n = u.len() - 1;
    let h = 1.0 / n as f64;
    let second = end_slope(u);
    let first = (u[n] - u[n - 1]) / h;
    if second * first < 0.0 || (first == 0.0 && second != 0.0) {
        first
    } else {
        second
    }
}
