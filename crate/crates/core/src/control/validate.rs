//! Gain conditions and initial-data assumptions, evaluated with margins.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Controller, NonovGains};
use crate::cbf::SetpointSpec;
use crate::error::{Error, Result};
use crate::model::{MaterialProperties, OnePhaseState};
use crate::solver::{s_infinity, TwoPhaseMaterial, TwoPhaseState};

/// One inequality with its slack. Positive margin means satisfied with room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `margin >= 0`.
    pub fn at_least(&mut self, name: &str, margin: f64, detail: impl Into<String>) {
        self.push(name, margin >= 0.0, margin, detail.into());
    }

    /// Records `margin > 0`.
    pub fn positive(&mut self, name: &str, margin: f64, detail: impl Into<String>) {
        self.push(name, margin > 0.0, margin, detail.into());
    }

    fn push(&mut self, name: &str, passed: bool, margin: f64, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            margin,
            detail,
        });
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Turns a failing report into [`Error::Assumptions`].
    pub fn into_result(self) -> Result<Self> {
        if self.all_passed() {
            Ok(self)
        } else {
            Err(Error::Assumptions(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "  {} {:<38} margin {:>12.4e}  {}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.margin,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Barrier-relevant quantities at the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub sigma0: f64,
    pub qc0: f64,
    pub p0: Option<f64>,
}

/// Checks that the configured gains make every barrier nonnegative at
/// `t = 0`. Fails outright when `sigma0 <= 0`, since then no gain helps.
pub fn validate_gains(init: &InitialData, controller: &Controller) -> Result<ValidationReport> {
    let InitialData { sigma0, qc0, .. } = *init;
    if !(sigma0 > 0.0) {
        return Err(Error::SetpointAssumption { sigma0 });
    }
    let ratio = qc0 / sigma0;
    let mut r = ValidationReport::new();
    let c1_check = |r: &mut ValidationReport, name: &str, c1: f64| {
        r.at_least(name, c1 - ratio, format!("needs >= qc0/sigma0 = {ratio:.6e}, got {c1:.6e}"));
    };

    match controller {
        Controller::Nonov { gains } | Controller::TwoPhase { gains } => {
            c1_check(&mut r, "c1 >= qc0/sigma0", gains.c1);
        }
        Controller::NonovUpper { gains, q_bar } => {
            c1_check(&mut r, "c1 >= qc0/sigma0", gains.c1);
            upper_c2_check(&mut r, gains, *q_bar, sigma0, qc0);
        }
        Controller::NonovHigh { gains } => {
            c1_check(&mut r, "c1 >= qc0/sigma0", gains.c1);
            high_order_checks(&mut r, gains, init)?;
        }
        Controller::Qp { gains } | Controller::QpUpper { gains, .. } => {
            c1_check(&mut r, "k1 >= qc0/sigma0", gains.k1);
            r.positive("k2 > 0", gains.k2, "");
            r.at_least("delta1 >= 0", gains.delta1, "");
            r.at_least("delta2 >= 0", gains.delta2, "");
            if let Controller::QpUpper { q_bar, .. } = controller {
                // Keeps U_* <= k1 (q_bar - qc) while sigma decreases from sigma0.
                let need = gains.k2 * sigma0;
                r.at_least(
                    "k1 q_bar >= k2 sigma0",
                    gains.k1 * q_bar - need,
                    format!("k1 q_bar = {:.6e}, k2 sigma0 = {need:.6e}", gains.k1 * q_bar),
                );
            }
        }
    }
    Ok(r)
}

fn upper_c2_check(r: &mut ValidationReport, gains: &NonovGains, q_bar: f64, sigma0: f64, qc0: f64) {
    let h3_0 = gains.c1 * sigma0 - qc0;
    if h3_0 > 0.0 {
        let bound = gains.c1 * q_bar / h3_0;
        r.at_least(
            "c2 <= c1 q_bar/(c1 sigma0 - qc0)",
            bound - gains.c2,
            format!("needs <= {bound:.6e}, got {:.6e}", gains.c2),
        );
    } else {
        r.at_least("c2 <= c1 q_bar/(c1 sigma0 - qc0)", f64::INFINITY, "h3(0) = 0, any c2 works");
    }
}

fn high_order_checks(r: &mut ValidationReport, gains: &NonovGains, init: &InitialData) -> Result<()> {
    let p0 = init
        .p0
        .ok_or_else(|| Error::param("p0", "the double integrator needs an initial flux rate"))?;
    let (c1, c2, qc0, sigma0) = (gains.c1, gains.c2, init.qc0, init.sigma0);
    r.positive("c3 > 0", gains.c3.unwrap_or(0.0), "");

    // h5(0) = p0 + c1 qc0 >= 0
    if qc0 > 0.0 {
        let need = -p0 / qc0;
        r.at_least("c1 >= -p0/qc0", c1 - need, format!("needs >= {need:.6e}, got {c1:.6e}"));
    } else {
        r.at_least("c1 >= -p0/qc0", p0, "qc0 = 0 requires p0 >= 0");
    }

    // h4(0) = c2 (c1 sigma0 - qc0) - (p0 + c1 qc0) >= 0
    let h3_0 = c1 * sigma0 - qc0;
    let h5_0 = p0 + c1 * qc0;
    if h3_0 > 0.0 {
        let need = h5_0 / h3_0;
        r.at_least(
            "c2 >= (p0 + c1 qc0)/(c1 sigma0 - qc0)",
            c2 - need,
            format!("needs >= {need:.6e}, got {c2:.6e}"),
        );
    } else {
        r.at_least("c2 >= (p0 + c1 qc0)/(c1 sigma0 - qc0)", -h5_0, "h3(0) = 0 requires h5(0) <= 0");
    }
    Ok(())
}

/// Initial-data and setpoint conditions for the one-phase plant.
pub fn one_phase_assumptions(
    initial: &OnePhaseState,
    qc0: f64,
    mat: &MaterialProperties,
    spec: &SetpointSpec,
    length: f64,
) -> Result<ValidationReport> {
    let consts = mat.derive()?;
    let mut r = ValidationReport::new();
    let s0 = initial.s();
    r.positive("interface inside slab", s0.min(length - s0), format!("s0 = {s0:.6e}, L = {length:.6e}"));
    r.at_least("liquid above melting", initial.min_theta(), "min of the initial excess");
    r.at_least("initial flux nonnegative", qc0, format!("qc0 = {qc0:.6e}"));

    let reach = s0 + consts.beta / consts.alpha * initial.integral();
    r.at_least(
        "setpoint beyond stored heat",
        spec.s_r - reach,
        format!("s0 + (beta/alpha) int theta0 = {reach:.6e}, s_r = {:.6e}", spec.s_r),
    );
    r.positive("setpoint inside slab", length - spec.s_r, "L - s_r");

    if let Some(q_bar) = spec.flux_ceiling(mat.k, mat.tm) {
        r.at_least("initial flux below ceiling", q_bar - qc0, format!("q_bar = {q_bar:.6e}"));
    }
    if let Some(t_star) = spec.t_star {
        let dt0 = s0 / spec.s_r * (t_star - mat.tm);
        let margin = initial
            .positions()
            .zip(initial.theta())
            .map(|(x, th)| dt0 * (1.0 - x / s0) - th)
            .fold(f64::INFINITY, f64::min);
        r.at_least("initial temperature envelope", margin, format!("bound {dt0:.6e} C at x = 0"));
    }
    Ok(r)
}

/// Declared bounds on the two-phase data class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseBounds {
    /// Liquid initial excess bound, °C.
    pub t_bar_l: f64,
    /// Solid initial deficit bound, °C.
    pub t_bar_s: f64,
    /// Liquid envelope steepness (dimensionless).
    pub eta_l: f64,
    pub eta_s: f64,
    /// Ceiling on the disturbance flux, W/m².
    pub qf_bar: f64,
}

/// Initial-data, setpoint, disturbance and well-posedness conditions for the
/// two-phase plant under the non-overshooting law with `gains`.
pub fn two_phase_assumptions(
    initial: &TwoPhaseState,
    qc0: f64,
    mat: &TwoPhaseMaterial,
    spec: &SetpointSpec,
    bounds: &TwoPhaseBounds,
    gains: &NonovGains,
) -> ValidationReport {
    let mut r = ValidationReport::new();
    let (s0, len) = (initial.s(), mat.length);
    let liq = mat.liquid_constants();
    let sol = mat.solid_constants();
    let gamma = mat.gamma();

    r.positive("interface inside slab", s0.min(len - s0), format!("s0 = {s0:.6e}, L = {len:.6e}"));
    r.at_least("initial flux nonnegative", qc0, format!("qc0 = {qc0:.6e}"));
    let min_l = initial.theta_l().iter().copied().fold(f64::INFINITY, f64::min);
    let max_s = initial.theta_s().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    r.at_least("liquid above melting", min_l, "min of the initial liquid excess");
    r.at_least("solid below melting", -max_s, "max of the initial solid excess");

    let grid = initial.grid();
    let kl = len * bounds.eta_l / liq.alpha;
    let margin_l = grid
        .nodes()
        .zip(initial.theta_l())
        .map(|(xi, th)| {
            let x = xi * s0;
            bounds.t_bar_l * (1.0 - (kl * (x - s0)).exp()) - th
        })
        .fold(f64::INFINITY, f64::min);
    r.at_least("liquid initial envelope", margin_l, format!("T_bar_l = {}", bounds.t_bar_l));

    // Decays away from the interface into the solid.
    let ks = len * bounds.eta_s / sol.alpha;
    let margin_s = grid
        .nodes()
        .zip(initial.theta_s())
        .map(|(eta, th)| {
            let d = eta * (len - s0);
            th + bounds.t_bar_s * (1.0 - (-ks * d).exp())
        })
        .fold(f64::INFINITY, f64::min);
    r.at_least("solid initial envelope", margin_s, format!("T_bar_s = {}", bounds.t_bar_s));

    let s_inf = s_infinity(initial, mat);
    r.positive("0 < s_inf < L", s_inf.min(len - s_inf), format!("s_inf = {s_inf:.6e}"));
    r.positive(
        "s_inf < s_r < L",
        (spec.s_r - s_inf).min(len - spec.s_r),
        format!("s_inf = {s_inf:.6e}, s_r = {:.6e}", spec.s_r),
    );

    let (c1, c2) = (gains.c1, gains.c2);
    let qf_cap = (qc0 + c1 * gamma * s_inf).min(c1 * c2 / (c1 + c2) * gamma * spec.s_r);
    r.positive(
        "disturbance ceiling",
        qf_cap - bounds.qf_bar,
        format!("q_f bar = {:.6e}, allowed < {qf_cap:.6e}", bounds.qf_bar),
    );

    let sigma0 = gamma * (spec.s_r - s_inf);
    let qc_bar = qc0.max(c2 / c1 * (c1 * sigma0 - qc0)).max(bounds.qf_bar);
    let eps_l = bounds.t_bar_l.max(qc_bar * len / liq.k);
    let eps_s = bounds.t_bar_s.max(bounds.qf_bar * len / sol.k);
    let lhs = (liq.heat_capacity() * eps_l * (1.0 + liq.alpha / (len * len * bounds.eta_l)))
        .max(sol.heat_capacity() * eps_s * (1.0 + sol.alpha / (len * len * bounds.eta_s)));
    r.positive(
        "well-posedness bound",
        gamma / 4.0 - lhs,
        format!("q_c bar = {qc_bar:.6e}, needs {lhs:.6e} < gamma/4 = {:.6e}", gamma / 4.0),
    );
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::QpGains;
    use crate::model::{Grid, MaterialProperties};

    fn am_init() -> InitialData {
        InitialData { sigma0: 8.0, qc0: 64.4, p0: None }
    }

    #[test]
    fn first_order_gain_condition() {
        let ok = Controller::Qp { gains: QpGains::new(64.4, 973.0, 0.0, 0.0).unwrap() };
        let r = validate_gains(&am_init(), &ok).unwrap();
        assert!(r.all_passed(), "{r}");

        let low = Controller::Qp { gains: QpGains::new(8.0, 973.0, 0.0, 0.0).unwrap() };
        let r = validate_gains(&am_init(), &low).unwrap();
        let c = r.get("k1 >= qc0/sigma0").unwrap();
        assert!(!c.passed);
        assert!((c.margin + 0.05).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_deficit_is_an_error() {
        let g = Controller::Nonov { gains: NonovGains::new(1.0, 1.0).unwrap() };
        let init = InitialData { sigma0: 0.0, qc0: 1.0, p0: None };
        assert!(matches!(validate_gains(&init, &g), Err(Error::SetpointAssumption { .. })));
    }

    #[test]
    fn order_two_conditions() {
        let init = InitialData { sigma0: 2.0, qc0: 1.0, p0: Some(-3.0) };
        let check = |c1: f64, c2: f64| {
            let g = Controller::NonovHigh { gains: NonovGains::order_two(c1, c2, 1.0).unwrap() };
            validate_gains(&init, &g).unwrap()
        };
        // c1 >= max{0.5, 3}; with c1 = 3, h5(0) = 0 so any c2 passes.
        assert!(check(3.0, 0.1).all_passed());
        assert!(!check(2.9, 10.0).all_passed());
        // c1 = 4: h3(0) = 7, h5(0) = 1, so c2 >= 1/7.
        assert!(check(4.0, 0.15).all_passed());
        assert!(!check(4.0, 0.14).all_passed());
    }

    #[test]
    fn upper_bound_condition() {
        let init = InitialData { sigma0: 2.0, qc0: 1.0, p0: None };
        // c1 = 1: h3(0) = 1, c2 <= q_bar.
        let mk = |c2| Controller::NonovUpper { gains: NonovGains::new(1.0, c2).unwrap(), q_bar: 3.0 };
        assert!(validate_gains(&init, &mk(3.0)).unwrap().all_passed());
        assert!(!validate_gains(&init, &mk(3.1)).unwrap().all_passed());
    }

    #[test]
    fn am_assumptions_pass() {
        let mat = MaterialProperties::TI6AL4V;
        let st = OnePhaseState::affine(Grid::new(100).unwrap(), 1e-5, 1.0).unwrap();
        let spec = SetpointSpec::new(2e-4);
        let r = one_phase_assumptions(&st, 1.7e6, &mat, &spec, 1e-3).unwrap();
        assert!(r.all_passed(), "{r}");
        let reach = 2e-4 - r.get("setpoint beyond stored heat").unwrap().margin;
        assert!((reach - 1.00145e-5).abs() < 1e-10);

        let spec = SetpointSpec::new(5e-6);
        let r = one_phase_assumptions(&st, 1.7e6, &mat, &spec, 1e-3).unwrap();
        assert!(!r.get("setpoint beyond stored heat").unwrap().passed);
    }

    #[test]
    fn ceilings_enter_the_one_phase_checks() {
        let mat = MaterialProperties::TI6AL4V;
        let st = OnePhaseState::affine(Grid::new(100).unwrap(), 1e-5, 1.0).unwrap();
        let mut spec = SetpointSpec::new(2e-4);
        spec.t_star = Some(1700.0);
        spec.q_star = Some(5e6);
        let r = one_phase_assumptions(&st, 1.7e6, &mat, &spec, 1e-3).unwrap();
        assert!(r.all_passed(), "{r}");
        // The envelope peaks at s0/s_r * 50 = 2.5 and meets the profile at s0.
        assert!(r.get("initial temperature envelope").unwrap().margin.abs() < 1e-12);
        let hot = OnePhaseState::affine(Grid::new(100).unwrap(), 1e-5, 3.0).unwrap();
        let r = one_phase_assumptions(&hot, 1.7e6, &mat, &spec, 1e-3).unwrap();
        assert!(!r.get("initial temperature envelope").unwrap().passed);
        let r = one_phase_assumptions(&st, 6e6, &mat, &spec, 1e-3).unwrap();
        assert!(!r.get("initial flux below ceiling").unwrap().passed);
    }

    #[test]
    fn zero_excess_two_phase_passes_s_inf_check() {
        let mat = TwoPhaseMaterial::new(MaterialProperties::UNIT, MaterialProperties::UNIT, 1.0).unwrap();
        let st = TwoPhaseState::from_fns(Grid::new(16).unwrap(), 0.3, 1.0, |_| 0.0, |_| 0.0).unwrap();
        let bounds = TwoPhaseBounds { t_bar_l: 1.0, t_bar_s: 1.0, eta_l: 1.0, eta_s: 1.0, qf_bar: 0.01 };
        let r = two_phase_assumptions(&st, 0.0, &mat, &SetpointSpec::new(0.6), &bounds, &NonovGains::new(1.0, 1.0).unwrap());
        assert!(r.get("0 < s_inf < L").unwrap().passed);
        assert!((r.get("0 < s_inf < L").unwrap().margin - 0.3).abs() < 1e-15);
    }
}
