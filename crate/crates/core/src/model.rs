//! Physical parameters, grids and state containers shared by the solvers and
//! controllers.
//!
//! Temperatures are stored as the excess `theta = T - Tm` over the melting
//! point, sampled on a uniform grid of the immobilized coordinate
//! `xi = x / s(t)` in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Material data for one phase, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProperties {
    /// Thermal conductivity, W/(m·°C).
    pub k: f64,
    /// Density, kg/m³.
    pub rho: f64,
    /// Heat capacity, J/(kg·°C).
    pub cp: f64,
    /// Latent heat of fusion, J/kg.
    pub dh: f64,
    /// Melting temperature, °C.
    pub tm: f64,
}

impl MaterialProperties {
    /// Ti6Al4V liquid properties used in the metal additive manufacturing
    /// case study.
    pub const TI6AL4V: MaterialProperties = MaterialProperties {
        k: 32.5,
        rho: 3920.0,
        cp: 830.0,
        dh: 2.86e5,
        tm: 1650.0,
    };

    /// Unit material, convenient for nondimensional runs.
    pub const UNIT: MaterialProperties = MaterialProperties {
        k: 1.0,
        rho: 1.0,
        cp: 1.0,
        dh: 1.0,
        tm: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k", self.k),
            ("rho", self.rho),
            ("cp", self.cp),
            ("dH", self.dh),
            ("Tm", self.tm),
        ];
        for (name, v) in fields {
            // The melting point only needs to be finite: nondimensional runs
            // place it at zero.
            let ok = if name == "Tm" { v.is_finite() } else { v.is_finite() && v > 0.0 };
            if !ok {
                return Err(Error::param(name, format!("must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn derive(&self) -> Result<DerivedConstants> {
        derive_constants(self)
    }
}

/// Diffusivity, Stefan coefficient and volumetric latent heat of a material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// k / (rho cp), m²/s.
    pub alpha: f64,
    /// k / (rho dH), m²/(s·°C).
    pub beta: f64,
    /// rho dH, J/m³.
    pub gamma: f64,
    /// Conductivity carried along so flux conversions need only this struct.
    pub k: f64,
}

impl DerivedConstants {
    /// Volumetric heat capacity `k / alpha = rho cp`.
    pub fn heat_capacity(&self) -> f64 {
        self.k / self.alpha
    }

    /// Constants for a nondimensional run with the given diffusivity,
    /// Stefan coefficient and conductivity.
    pub fn nondimensional(alpha: f64, beta: f64, k: f64) -> Self {
        DerivedConstants {
            alpha,
            beta,
            gamma: k / beta,
            k,
        }
    }
}

pub fn derive_constants(mat: &MaterialProperties) -> Result<DerivedConstants> {
    mat.validate()?;
    Ok(DerivedConstants {
        alpha: mat.k / (mat.rho * mat.cp),
        beta: mat.k / (mat.rho * mat.dh),
        gamma: mat.rho * mat.dh,
        k: mat.k,
    })
}

/// Uniform grid on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n_cells: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < Self::MIN_CELLS {
            return Err(Error::param(
                "n_cells",
                format!("need at least {} cells, got {n_cells}", Self::MIN_CELLS),
            ));
        }
        Ok(Grid { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn dxi(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_cells as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }
}

fn check_profile(name: &'static str, profile: &[f64]) -> Result<Grid> {
    let grid = Grid::new(profile.len().saturating_sub(1))?;
    if let Some(v) = profile.iter().find(|v| !v.is_finite()) {
        return Err(Error::param(name, format!("profile holds non-finite value {v}")));
    }
    Ok(grid)
}

/// Liquid temperature excess and interface position of the one-phase problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnePhaseState {
    t: f64,
    s: f64,
    theta: Vec<f64>,
}

impl OnePhaseState {
    /// Builds a state from samples on `xi_i = i / N`. The interface node is
    /// pinned to the melting temperature.
    pub fn new(t: f64, s: f64, mut theta: Vec<f64>) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::param("s", format!("interface must be positive, got {s}")));
        }
        check_profile("theta", &theta)?;
        *theta.last_mut().expect("grid has nodes") = 0.0;
        Ok(OnePhaseState { t, s, theta })
    }

    /// Samples `f(x)` at the physical node positions `x = xi * s`.
    pub fn from_fn(grid: Grid, s: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let theta = grid.nodes().map(|xi| f(xi * s)).collect();
        Self::new(0.0, s, theta)
    }

    /// Affine profile `peak * (1 - x / s0)`.
    pub fn affine(grid: Grid, s0: f64, peak: f64) -> Result<Self> {
        let theta = grid.nodes().map(|xi| peak * (1.0 - xi)).collect();
        Self::new(0.0, s0, theta)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn grid(&self) -> Grid {
        Grid { n_cells: self.theta.len() - 1 }
    }

    /// Physical spacing between nodes.
    pub fn dx(&self) -> f64 {
        self.s * self.grid().dxi()
    }

    /// Physical positions of the nodes.
    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.dx();
        (0..self.theta.len()).map(move |i| i as f64 * dx)
    }

    pub fn min_theta(&self) -> f64 {
        self.theta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_theta(&self) -> f64 {
        self.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫_0^s theta dx`.
    pub fn integral(&self) -> f64 {
        integrate_uniform(&self.theta, self.dx())
    }

    pub(crate) fn from_parts(t: f64, s: f64, theta: Vec<f64>) -> Self {
        OnePhaseState { t, s, theta }
    }

    pub(crate) fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }
}

/// Boundary heater state. `p` is present only for the double-integrator
/// actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Boundary heat flux, W/m².
    pub qc: f64,
    /// Flux rate, W/(m²·s).
    pub p: Option<f64>,
}

impl ActuatorState {
    pub fn first_order(qc: f64) -> Self {
        ActuatorState { qc, p: None }
    }

    pub fn second_order(qc: f64, p: f64) -> Self {
        ActuatorState { qc, p: Some(p) }
    }

    pub fn order(&self) -> u8 {
        if self.p.is_some() {
            2
        } else {
            1
        }
    }

    /// Advances the integrator chain under an input held constant for `dt`.
    /// The update is the exact solution of the chain, so the flux changes by
    /// `u * dt` for the single integrator.
    pub fn advance(&self, u: f64, dt: f64) -> Self {
        match self.p {
            None => ActuatorState { qc: self.qc + u * dt, p: None },
            Some(p) => ActuatorState {
                qc: self.qc + p * dt + 0.5 * u * dt * dt,
                p: Some(p + u * dt),
            },
        }
    }
}

/// Composite trapezoid rule for samples spaced `spacing` apart.
pub fn integrate_profile(values: &[f64], spacing: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "trapezoid rule needs at least 2 samples, got {}",
            values.len()
        )));
    }
    Ok(integrate_uniform(values, spacing))
}

pub(crate) fn integrate_uniform(values: &[f64], spacing: f64) -> f64 {
    let n = values.len();
    let interior: f64 = values[1..n - 1].iter().sum();
    spacing * (interior + 0.5 * (values[0] + values[n - 1]))
}
