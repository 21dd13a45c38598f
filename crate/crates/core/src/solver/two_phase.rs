use serde::{Deserialize, Serialize};

use super::{advance_phase, limited_end_slope, PhaseCoefficients, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{integrate_uniform, DerivedConstants, Grid, MaterialProperties};

/// Liquid and solid data sharing a melting point, on a slab of length `length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseMaterial {
    pub liquid: MaterialProperties,
    pub solid: MaterialProperties,
    /// Slab length L, m.
    pub length: f64,
}

impl TwoPhaseMaterial {
    pub fn new(liquid: MaterialProperties, solid: MaterialProperties, length: f64) -> Result<Self> {
        liquid.validate()?;
        solid.validate()?;
        if liquid.tm != solid.tm {
            return Err(Error::param(
                "Tm",
                format!("phases disagree on the melting point: {} vs {}", liquid.tm, solid.tm),
            ));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::param("L", format!("must be positive, got {length}")));
        }
        Ok(TwoPhaseMaterial { liquid, solid, length })
    }

    pub fn liquid_constants(&self) -> DerivedConstants {
        self.liquid.derive().expect("validated at construction")
    }

    pub fn solid_constants(&self) -> DerivedConstants {
        self.solid.derive().expect("validated at construction")
    }

    /// Volumetric latent heat of the liquid, J/m³.
    pub fn gamma(&self) -> f64 {
        self.liquid.rho * self.liquid.dh
    }
}

/// Both phase profiles and the interface.
///
/// `theta_l` lives on `xi = x / s` and `theta_s` on `eta = (x - s) / (L - s)`,
/// with the same node count; both vanish at the interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseState {
    t: f64,
    s: f64,
    theta_l: Vec<f64>,
    theta_s: Vec<f64>,
}

impl TwoPhaseState {
    pub fn new(
        t: f64,
        s: f64,
        mut theta_l: Vec<f64>,
        mut theta_s: Vec<f64>,
        length: f64,
    ) -> Result<Self> {
        if !(s > 0.0 && s < length) {
            return Err(Error::param("s", format!("interface {s} must lie in (0, {length})")));
        }
        if theta_l.len() != theta_s.len() {
            return Err(Error::param("theta_s", "liquid and solid grids must match"));
        }
        Grid::new(theta_l.len().saturating_sub(1))?;
        if theta_l.iter().chain(&theta_s).any(|v| !v.is_finite()) {
            return Err(Error::param("theta", "profiles must be finite"));
        }
        *theta_l.last_mut().expect("non-empty") = 0.0;
        theta_s[0] = 0.0;
        Ok(TwoPhaseState { t, s, theta_l, theta_s })
    }

    /// Samples liquid and solid excess functions of physical position.
    pub fn from_fns(
        grid: Grid,
        s: f64,
        length: f64,
        liquid: impl Fn(f64) -> f64,
        solid: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let theta_l = grid.nodes().map(|xi| liquid(xi * s)).collect();
        let theta_s = grid.nodes().map(|eta| solid(s + eta * (length - s))).collect();
        Self::new(0.0, s, theta_l, theta_s, length)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn theta_l(&self) -> &[f64] {
        &self.theta_l
    }

    pub fn theta_s(&self) -> &[f64] {
        &self.theta_s
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.theta_l.len() - 1).expect("validated at construction")
    }

    pub fn liquid_dx(&self) -> f64 {
        self.s * self.grid().dxi()
    }

    pub fn solid_dx(&self, length: f64) -> f64 {
        (length - self.s) * self.grid().dxi()
    }

    /// `∫_0^s theta_l dx`.
    pub fn liquid_integral(&self) -> f64 {
        integrate_uniform(&self.theta_l, self.liquid_dx())
    }

    /// `∫_s^L theta_s dx`.
    pub fn solid_integral(&self, length: f64) -> f64 {
        integrate_uniform(&self.theta_s, self.solid_dx(length))
    }

    /// Sensible plus latent energy relative to the melting point, J/m².
    pub fn stored_energy(&self, mat: &TwoPhaseMaterial) -> f64 {
        let l = mat.liquid_constants();
        let so = mat.solid_constants();
        l.heat_capacity() * self.liquid_integral()
            + so.heat_capacity() * self.solid_integral(mat.length)
            + mat.gamma() * self.s
    }
}

/// Advances both phases and the interface by `cfg.dt`. The solid boundary at
/// `x = L` loses heat at rate `qf`.
pub fn step_two_phase(
    state: &TwoPhaseState,
    qc: f64,
    qf: f64,
    mat: &TwoPhaseMaterial,
    cfg: &SolverConfig,
) -> Result<TwoPhaseState> {
    if !(qf >= 0.0) {
        return Err(Error::InvalidInput(format!("disturbance flux must be non-negative, got {qf}")));
    }
    let liq = mat.liquid_constants();
    let sol = mat.solid_constants();
    let s = state.s;
    let solid_len = mat.length - s;
    cfg.check_stability(liq.alpha, s)?;
    cfg.check_stability(sol.alpha, solid_len)?;

    // The solid is handled in z = 1 - eta so the interface is the last node
    // for both phases.
    let mut solid: Vec<f64> = state.theta_s.iter().rev().copied().collect();

    let grad_l = limited_end_slope(&state.theta_l) / s;
    let grad_s = -limited_end_slope(&solid) / solid_len;
    let s_dot = (-liq.k * grad_l + sol.k * grad_s) / mat.gamma();

    let mut theta_l = state.theta_l.clone();
    advance_phase(
        &mut theta_l,
        PhaseCoefficients {
            diffusion: liq.alpha / (s * s),
            drift: s_dot / s,
            flux_slope: -qc * s / liq.k,
        },
        cfg.dt,
        cfg.scheme,
    );
    advance_phase(
        &mut solid,
        PhaseCoefficients {
            diffusion: sol.alpha / (solid_len * solid_len),
            drift: -s_dot / solid_len,
            flux_slope: qf * solid_len / sol.k,
        },
        cfg.dt,
        cfg.scheme,
    );
    solid.reverse();

    let t = state.t + cfg.dt;
    let s_next = s + cfg.dt * s_dot;
    if !s_next.is_finite() || theta_l.iter().chain(&solid).any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup { t });
    }
    if s_next <= cfg.min_interface || s_next >= mat.length - cfg.min_interface {
        return Err(Error::PhaseDisappearance { t, s: s_next });
    }
    Ok(TwoPhaseState {
        t,
        s: s_next,
        theta_l,
        theta_s: solid,
    })
}

/// Interface position the slab relaxes to when both boundaries are
/// insulated.
pub fn s_infinity(initial: &TwoPhaseState, mat: &TwoPhaseMaterial) -> f64 {
    initial.stored_energy(mat) / mat.gamma()
}
