//! Control barrier functions of the Stefan system.
//!
//! `h1` is the energy deficit `sigma` relative to the setpoint equilibrium,
//! `h2` the boundary heat flux, and `h3 = c1 h1 - h2` the backstepping
//! barrier that lowers the relative degree of `h1` to one. With a flux
//! ceiling `h2* = q_bar - q_c` is added, and the double-integrator actuator
//! brings `h4` and `h5`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActuatorState, DerivedConstants, OnePhaseState};
use crate::solver::{TwoPhaseMaterial, TwoPhaseState};

/// Regulation target and optional ceilings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetpointSpec {
    /// Interface setpoint, m.
    pub s_r: f64,
    /// Temperature ceiling, °C (absolute).
    pub t_star: Option<f64>,
    /// Flux ceiling, W/m².
    pub q_star: Option<f64>,
}

impl SetpointSpec {
    pub fn new(s_r: f64) -> Self {
        SetpointSpec { s_r, t_star: None, q_star: None }
    }

    pub fn validate(&self, length: f64, tm: f64) -> Result<()> {
        if !(self.s_r > 0.0 && self.s_r < length) {
            return Err(Error::param("s_r", format!("setpoint must lie in (0, {length}), got {}", self.s_r)));
        }
        if let Some(t) = self.t_star {
            if !(t > tm) {
                return Err(Error::param("T_star", format!("ceiling {t} must exceed Tm = {tm}")));
            }
        }
        if let Some(q) = self.q_star {
            if !(q > 0.0) {
                return Err(Error::param("q_star", format!("must be positive, got {q}")));
            }
        }
        Ok(())
    }

    /// Effective flux ceiling `min{k (T* - Tm) / s_r, q*}` when either
    /// ceiling is configured.
    pub fn flux_ceiling(&self, k: f64, tm: f64) -> Option<f64> {
        let from_temp = self.t_star.map(|t| k * (t - tm) / self.s_r);
        match (from_temp, self.q_star) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// `sigma = -[(k/alpha) ∫ theta dx + (k/beta)(s - s_r)]`.
pub fn sigma_one_phase(state: &OnePhaseState, consts: &DerivedConstants, spec: &SetpointSpec) -> f64 {
    -(consts.heat_capacity() * state.integral() + consts.k / consts.beta * (state.s() - spec.s_r))
}

/// Two-phase energy deficit
/// `-[(k_l/alpha_l) ∫ theta_l + (k_s/alpha_s) ∫ theta_s + gamma (s - s_r)]`.
pub fn sigma_two_phase(state: &TwoPhaseState, mat: &TwoPhaseMaterial, spec: &SetpointSpec) -> f64 {
    mat.gamma() * spec.s_r - state.stored_energy(mat)
}

/// Barrier values at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfBundle {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    /// Smallest liquid temperature excess over the grid.
    pub h_min: f64,
    pub h2_star: Option<f64>,
    pub h4: Option<f64>,
    pub h5: Option<f64>,
}

/// Gains that enter the barrier definitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfGains {
    /// Rate in `h3 = -q_c + c1 sigma`.
    pub c1: f64,
    /// Second rate, needed for `h4` with the double integrator.
    pub c2: Option<f64>,
    /// Flux ceiling for `h2*`.
    pub q_bar: Option<f64>,
}

impl CbfGains {
    pub fn new(c1: f64) -> Self {
        CbfGains { c1, c2: None, q_bar: None }
    }
}

impl CbfBundle {
    /// Assembles the bundle from an already computed energy deficit and
    /// minimum temperature excess.
    pub fn from_parts(sigma: f64, h_min: f64, actuator: &ActuatorState, gains: &CbfGains) -> Self {
        let qc = actuator.qc;
        let c1 = gains.c1;
        let (h4, h5) = match (actuator.p, gains.c2) {
            (Some(p), Some(c2)) => {
                let p_nonov = c1 * c2 * sigma - (c1 + c2) * qc;
                (Some(p_nonov - p), Some(p + c1 * qc))
            }
            _ => (None, None),
        };
        CbfBundle {
            h1: sigma,
            h2: qc,
            h3: c1 * sigma - qc,
            h_min,
            h2_star: gains.q_bar.map(|q| q - qc),
            h4,
            h5,
        }
    }
}

pub fn cbf_bundle(
    state: &OnePhaseState,
    actuator: &ActuatorState,
    consts: &DerivedConstants,
    spec: &SetpointSpec,
    gains: &CbfGains,
) -> Result<CbfBundle> {
    if !(gains.c1 > 0.0) {
        return Err(Error::param("c1", format!("must be positive, got {}", gains.c1)));
    }
    let sigma = sigma_one_phase(state, consts, spec);
    Ok(CbfBundle::from_parts(sigma, state.min_theta(), actuator, gains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Grid, MaterialProperties};
    use approx::assert_relative_eq;

    #[test]
    fn sigma_at_equilibrium_and_past_setpoint() {
        let c = MaterialProperties::TI6AL4V.derive().unwrap();
        let g = Grid::new(20).unwrap();
        let spec = SetpointSpec::new(2e-4);
        let at = OnePhaseState::affine(g, 2e-4, 0.0).unwrap();
        assert_eq!(sigma_one_phase(&at, &c, &spec), 0.0);
        let past = OnePhaseState::affine(g, 3e-4, 0.0).unwrap();
        assert!(sigma_one_phase(&past, &c, &spec) < 0.0);
    }

    #[test]
    fn sigma_of_am_initial_state() {
        let c = MaterialProperties::TI6AL4V.derive().unwrap();
        let st = OnePhaseState::affine(Grid::new(100).unwrap(), 1e-5, 1.0).unwrap();
        let sigma = sigma_one_phase(&st, &c, &SetpointSpec::new(2e-4));
        // Latent deficit rho dH (s_r - s0) less the sensible heat rho cp s0 / 2.
        let hand = 3920.0 * 2.86e5 * 1.9e-4 - 3920.0 * 830.0 * 5e-6;
        assert_relative_eq!(sigma, hand, max_relative = 1e-12);
        assert_relative_eq!(sigma, 2.130e5, max_relative = 1e-3);
    }

    #[test]
    fn two_phase_sigma_examples() {
        let mat = crate::solver::TwoPhaseMaterial::new(
            MaterialProperties::TI6AL4V,
            MaterialProperties::TI6AL4V,
            1e-3,
        )
        .unwrap();
        let g = Grid::new(16).unwrap();
        let spec = SetpointSpec::new(4e-4);
        let at = TwoPhaseState::from_fns(g, 4e-4, 1e-3, |_| 0.0, |_| 0.0).unwrap();
        assert_eq!(sigma_two_phase(&at, &mat, &spec), 0.0);
        let s0 = 1e-4;
        let st = TwoPhaseState::from_fns(g, s0, 1e-3, |_| 0.0, |_| 0.0).unwrap();
        assert_relative_eq!(sigma_two_phase(&st, &mat, &spec), mat.gamma() * (4e-4 - s0), max_relative = 1e-12);
    }

    #[test]
    fn bundle_examples() {
        let st = OnePhaseState::affine(Grid::new(8).unwrap(), 1.0, 0.0).unwrap();
        let c = DerivedConstants::nondimensional(1.0, 1.0, 1.0);
        // sigma = -(s - s_r) = 2 with s = 1, s_r = 3.
        let spec = SetpointSpec::new(3.0);
        let b = cbf_bundle(&st, &ActuatorState::first_order(1.0), &c, &spec, &CbfGains::new(2.0)).unwrap();
        assert_eq!((b.h1, b.h2, b.h3), (2.0, 1.0, 3.0));
        assert!(b.h2_star.is_none() && b.h4.is_none());

        let spec = SetpointSpec::new(1.0);
        let b = cbf_bundle(&st, &ActuatorState::first_order(0.0), &c, &spec, &CbfGains::new(2.0)).unwrap();
        assert_eq!((b.h1, b.h2, b.h3), (0.0, 0.0, 0.0));

        let gains = CbfGains { c1: 2.0, c2: None, q_bar: Some(5.0) };
        let b = CbfBundle::from_parts(0.0, 0.0, &ActuatorState::first_order(1.0), &gains);
        assert_eq!(b.h2_star, Some(4.0));

        assert!(cbf_bundle(&st, &ActuatorState::first_order(0.0), &c, &spec, &CbfGains::new(0.0)).is_err());
    }

    #[test]
    fn order_two_barriers() {
        let gains = CbfGains { c1: 1.0, c2: Some(2.0), q_bar: None };
        let b = CbfBundle::from_parts(3.0, 0.0, &ActuatorState::second_order(1.0, 0.5), &gains);
        // p_nonov = 1*2*3 - 3*1 = 3
        assert_eq!(b.h4, Some(2.5));
        assert_eq!(b.h5, Some(1.5));
    }

    #[test]
    fn flux_ceiling_takes_the_tighter_bound() {
        let mut spec = SetpointSpec::new(2e-4);
        assert_eq!(spec.flux_ceiling(32.5, 1650.0), None);
        spec.t_star = Some(1700.0);
        assert_relative_eq!(spec.flux_ceiling(32.5, 1650.0).unwrap(), 32.5 * 50.0 / 2e-4);
        spec.q_star = Some(5e6);
        assert_eq!(spec.flux_ceiling(32.5, 1650.0), Some(5e6));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn h3_identity(sigma in -1e6f64..1e6, qc in -1e6f64..1e6, c1 in 1e-3f64..1e3) {
                let b = CbfBundle::from_parts(sigma, 0.0, &ActuatorState::first_order(qc), &CbfGains::new(c1));
                prop_assert_eq!(b.h3, c1 * b.h1 - b.h2);
            }
        }
    }
}
