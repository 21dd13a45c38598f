//! Non-overshooting regulators and QP-backstepping safety filters.
//!
//! All laws act on the heater input `U` (the rate of the boundary flux, or
//! its acceleration for the double integrator). They read only the energy
//! deficit `sigma`, the flux `q_c` and, for the double integrator, the flux
//! rate `p`. In the two-phase plant the disturbance `q_f` is never an input.

mod validate;

pub use validate::{
    one_phase_assumptions, two_phase_assumptions, validate_gains, Check, InitialData,
    TwoPhaseBounds, ValidationReport,
};

use serde::{Deserialize, Serialize};

use crate::cbf::CbfGains;
use crate::error::{Error, Result};

/// Gains of the non-overshooting laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonovGains {
    pub c1: f64,
    pub c2: f64,
    /// Third rate, only for the double-integrator actuator.
    pub c3: Option<f64>,
}

impl NonovGains {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let g = NonovGains { c1, c2, c3: None };
        g.validate()?;
        Ok(g)
    }

    pub fn order_two(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        let g = NonovGains { c1, c2, c3: Some(c3) };
        g.validate()?;
        Ok(g)
    }

    /// Factors `U = -k1 q_c + k2 sigma` as `-(c1 + c2) q_c + c1 c2 sigma`,
    /// taking the faster root as `c1` so `h3(0) = c1 sigma(0) - q_c(0)` is as
    /// large as possible.
    pub fn from_feedback(k1: f64, k2: f64) -> Result<Self> {
        let disc = k1 * k1 - 4.0 * k2;
        if !(k1 > 0.0 && k2 > 0.0) || disc < 0.0 {
            return Err(Error::param(
                "k1/k2",
                format!("k1 = {k1}, k2 = {k2} do not factor into real positive rates (k1² < 4 k2)"),
            ));
        }
        let root = disc.sqrt();
        let c1 = 0.5 * (k1 + root);
        Self::new(c1, k2 / c1)
    }

    pub fn order(&self) -> u8 {
        if self.c3.is_some() {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::param("c1", format!("must be positive, got {}", self.c1)));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::param("c2", format!("must be positive, got {}", self.c2)));
        }
        if let Some(c3) = self.c3 {
            if !(c3 > 0.0 && c3.is_finite()) {
                return Err(Error::param("c3", format!("must be positive, got {c3}")));
            }
        }
        Ok(())
    }
}

/// Gains of the QP safety filter bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpGains {
    pub k1: f64,
    pub k2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl QpGains {
    pub fn new(k1: f64, k2: f64, delta1: f64, delta2: f64) -> Result<Self> {
        let g = QpGains { k1, k2, delta1, delta2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) {
            return Err(Error::param("k1", format!("must be positive, got {}", self.k1)));
        }
        if !(self.k2 > 0.0) {
            return Err(Error::param("k2", format!("must be positive, got {}", self.k2)));
        }
        if !(self.delta1 >= 0.0) {
            return Err(Error::param("delta1", format!("must be non-negative, got {}", self.delta1)));
        }
        if !(self.delta2 >= 0.0) {
            return Err(Error::param("delta2", format!("must be non-negative, got {}", self.delta2)));
        }
        Ok(())
    }

    /// `U_* = -(k1 + delta1) q_c + k2 sigma`.
    pub fn lower_bound(&self, sigma: f64, qc: f64) -> f64 {
        -(self.k1 + self.delta1) * qc + self.k2 * sigma
    }

    /// `U^* = -k1 q_c + (k2 + delta2) sigma`.
    pub fn upper_bound(&self, sigma: f64, qc: f64) -> f64 {
        -self.k1 * qc + (self.k2 + self.delta2) * sigma
    }
}

/// Which side of the admissible interval the applied input sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Clamp {
    #[default]
    None,
    Lower,
    Upper,
    /// The bounds crossed (`U_* > U^*`); the upper bound was applied.
    InfeasibleResolved,
}

impl Clamp {
    pub fn as_str(&self) -> &'static str {
        match self {
            Clamp::None => "none",
            Clamp::Lower => "lower",
            Clamp::Upper => "upper",
            Clamp::InfeasibleResolved => "infeasible-resolved",
        }
    }
}

/// Outcome of one safety-filter evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub u_applied: f64,
    pub u_lower: f64,
    pub u_upper: f64,
    pub u_operator: f64,
    pub clamp: Clamp,
}

/// Closed-form solution of `min |u - u_o|²` s.t. `lower <= u <= upper`.
///
/// A NaN operator sample is treated as a request below every bound.
pub fn saturate(u_o: f64, lower: f64, upper: f64) -> FilterDecision {
    let (u_applied, clamp) = if lower > upper {
        (upper, Clamp::InfeasibleResolved)
    } else if u_o > upper {
        (upper, Clamp::Upper)
    } else if u_o < lower || u_o.is_nan() {
        (lower, Clamp::Lower)
    } else {
        (u_o, Clamp::None)
    };
    FilterDecision {
        u_applied,
        u_lower: lower,
        u_upper: upper,
        u_operator: u_o,
        clamp,
    }
}

/// `U^* = -(c1 + c2) q_c + c1 c2 sigma`.
pub fn nonovershooting(sigma: f64, qc: f64, gains: &NonovGains) -> f64 {
    -(gains.c1 + gains.c2) * qc + gains.c1 * gains.c2 * sigma
}

/// Same law driven by the two-phase energy deficit.
pub fn nonovershooting_two_phase(sigma2: f64, qc: f64, gains: &NonovGains) -> f64 {
    nonovershooting(sigma2, qc, gains)
}

/// Law for the double-integrator actuator:
/// `c1 c2 c3 sigma - (c1 c2 + c1 c3 + c2 c3) q_c - (c1 + c2 + c3) p`.
pub fn nonovershooting_high(sigma: f64, qc: f64, p: f64, gains: &NonovGains) -> Result<f64> {
    let c3 = gains
        .c3
        .ok_or_else(|| Error::param("c3", "the double-integrator law needs c3"))?;
    let (c1, c2) = (gains.c1, gains.c2);
    Ok(c1 * c2 * c3 * sigma - (c1 * c2 + c1 * c3 + c2 * c3) * qc - (c1 + c2 + c3) * p)
}

pub fn qp_filter(u_o: f64, sigma: f64, qc: f64, gains: &QpGains) -> FilterDecision {
    saturate(u_o, gains.lower_bound(sigma, qc), gains.upper_bound(sigma, qc))
}

/// QP filter with the flux ceiling folded into the upper bound:
/// `U^* = -k1 q_c + min{(k2 + delta2) sigma, k1 q_bar}`.
///
/// Both terms bound `U` from above (the first keeps `h3 >= 0`, the second
/// keeps `q_bar - q_c >= 0`), so the admissible set is below the smaller.
pub fn qp_filter_upper(u_o: f64, sigma: f64, qc: f64, gains: &QpGains, q_bar: f64) -> FilterDecision {
    let upper = -gains.k1 * qc + ((gains.k2 + gains.delta2) * sigma).min(gains.k1 * q_bar);
    saturate(u_o, gains.lower_bound(sigma, qc), upper)
}

/// A configured controller with its gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Controller {
    /// Non-overshooting regulation, single integrator.
    Nonov { gains: NonovGains },
    /// Non-overshooting regulation under temperature and flux ceilings.
    NonovUpper { gains: NonovGains, q_bar: f64 },
    /// Non-overshooting regulation through the double integrator.
    NonovHigh { gains: NonovGains },
    /// QP safety filter of an operator input.
    Qp { gains: QpGains },
    /// QP safety filter with the flux ceiling.
    QpUpper { gains: QpGains, q_bar: f64 },
    /// Non-overshooting regulation of the two-phase plant.
    TwoPhase { gains: NonovGains },
}

/// Input chosen by a controller, with the filter details when one ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub u: f64,
    pub filter: Option<FilterDecision>,
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Nonov { .. } => "nonov",
            Controller::NonovUpper { .. } => "nonov-upper",
            Controller::NonovHigh { .. } => "nonov-2",
            Controller::Qp { .. } => "qp",
            Controller::QpUpper { .. } => "qp-upper",
            Controller::TwoPhase { .. } => "two-phase",
        }
    }

    pub fn actuator_order(&self) -> u8 {
        match self {
            Controller::NonovHigh { .. } => 2,
            _ => 1,
        }
    }

    pub fn uses_operator(&self) -> bool {
        matches!(self, Controller::Qp { .. } | Controller::QpUpper { .. })
    }

    pub fn q_bar(&self) -> Option<f64> {
        match self {
            Controller::NonovUpper { q_bar, .. } | Controller::QpUpper { q_bar, .. } => Some(*q_bar),
            _ => None,
        }
    }

    /// Gains entering the barrier definitions for this controller. The QP
    /// filters use `k1` in the role of `c1`.
    pub fn cbf_gains(&self) -> CbfGains {
        match self {
            Controller::Nonov { gains } | Controller::TwoPhase { gains } => CbfGains::new(gains.c1),
            Controller::NonovUpper { gains, q_bar } => CbfGains {
                c1: gains.c1,
                c2: None,
                q_bar: Some(*q_bar),
            },
            Controller::NonovHigh { gains } => CbfGains {
                c1: gains.c1,
                c2: Some(gains.c2),
                q_bar: None,
            },
            Controller::Qp { gains } => CbfGains::new(gains.k1),
            Controller::QpUpper { gains, q_bar } => CbfGains {
                c1: gains.k1,
                c2: None,
                q_bar: Some(*q_bar),
            },
        }
    }

    /// Evaluates the control input. `p` is the flux rate of the double
    /// integrator and `u_o` the held operator sample.
    pub fn decide(&self, sigma: f64, qc: f64, p: Option<f64>, u_o: f64) -> Result<ControlDecision> {
        let plain = |u| ControlDecision { u, filter: None };
        Ok(match self {
            Controller::Nonov { gains } | Controller::NonovUpper { gains, .. } => {
                plain(nonovershooting(sigma, qc, gains))
            }
            Controller::TwoPhase { gains } => plain(nonovershooting_two_phase(sigma, qc, gains)),
            Controller::NonovHigh { gains } => {
                let p = p.ok_or_else(|| Error::param("p", "double integrator state missing"))?;
                plain(nonovershooting_high(sigma, qc, p, gains)?)
            }
            Controller::Qp { gains } => {
                let f = qp_filter(u_o, sigma, qc, gains);
                ControlDecision { u: f.u_applied, filter: Some(f) }
            }
            Controller::QpUpper { gains, q_bar } => {
                let f = qp_filter_upper(u_o, sigma, qc, gains, *q_bar);
                ControlDecision { u: f.u_applied, filter: Some(f) }
            }
        })
    }
}
