//! Runtime safety monitor, the Lyapunov-type norm `Phi`, decay fitting, and
//! reference solutions for the closed-loop barrier dynamics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cbf::{CbfBundle, SetpointSpec};
use crate::control::{Clamp, ValidationReport};
use crate::error::{Error, Result};
use crate::model::{integrate_uniform, ActuatorState, DerivedConstants, Grid, OnePhaseState};
use crate::solver::{step, traveling_wave_oracle, SolverConfig, TravelingWave, TwoPhaseMaterial, TwoPhaseState};

/// Slack granted to each monitored inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyTolerances {
    /// Temperature, °C.
    pub tol_t: f64,
    /// Interface position, m.
    pub tol_s: f64,
    /// Heat flux, W/m².
    pub tol_q: f64,
    /// Energy deficit, J/m².
    pub tol_cbf: f64,
}

impl SafetyTolerances {
    pub const ZERO: SafetyTolerances = SafetyTolerances {
        tol_t: 0.0,
        tol_s: 0.0,
        tol_q: 0.0,
        tol_cbf: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tol_t", self.tol_t),
            ("tol_s", self.tol_s),
            ("tol_q", self.tol_q),
            ("tol_cbf", self.tol_cbf),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("tolerance must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// The guarantees a run is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    pub s_r: f64,
    pub length: f64,
    /// Enforce `s <= s_r`. The two-phase guarantees do not include it.
    pub no_overshoot: bool,
    pub q_bar: Option<f64>,
    /// Temperature excess ceiling `T* - Tm`, °C.
    pub theta_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// `h1 < 0`: more energy stored than the setpoint allows.
    EnergyDeficit,
    /// `h2 < 0`: the heater is cooling.
    NegativeFlux,
    /// `h < 0`: liquid below the melting point.
    LiquidBelowMelting,
    /// `s > s_r`.
    Overshoot,
    /// `s` outside `(0, L)`.
    InterfaceOutside,
    /// `q_c > q_bar`.
    FluxCeiling,
    /// `T > T*`.
    TemperatureCeiling,
    /// Solid above the melting point.
    SolidAboveMelting,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 8] = [
        ViolationKind::EnergyDeficit,
        ViolationKind::NegativeFlux,
        ViolationKind::LiquidBelowMelting,
        ViolationKind::Overshoot,
        ViolationKind::InterfaceOutside,
        ViolationKind::FluxCeiling,
        ViolationKind::TemperatureCeiling,
        ViolationKind::SolidAboveMelting,
    ];
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub kind: ViolationKind,
    /// How far past the limit (plus tolerance) the value was.
    pub magnitude: f64,
}

/// Plant quantities the monitor needs beyond the barrier bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub s: f64,
    pub max_theta: f64,
    /// Largest solid excess, two-phase only.
    pub max_theta_s: Option<f64>,
}

impl Observation {
    pub fn one_phase(state: &OnePhaseState) -> Self {
        Observation {
            t: state.t(),
            s: state.s(),
            max_theta: state.max_theta(),
            max_theta_s: None,
        }
    }

    pub fn two_phase(state: &TwoPhaseState) -> Self {
        let fold = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Observation {
            t: state.t(),
            s: state.s(),
            max_theta: fold(state.theta_l()),
            max_theta_s: Some(fold(state.theta_s())),
        }
    }
}

/// Every violated inequality at one instant.
pub fn monitor_step(
    obs: &Observation,
    bundle: &CbfBundle,
    limits: &SafetyLimits,
    tol: &SafetyTolerances,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |kind, excess: f64| {
        // NaN counts as a violation.
        if !(excess <= 0.0) {
            out.push(Violation {
                t: obs.t,
                kind,
                magnitude: excess,
            });
        }
    };
    check(ViolationKind::EnergyDeficit, -bundle.h1 - tol.tol_cbf);
    check(ViolationKind::NegativeFlux, -bundle.h2 - tol.tol_q);
    check(ViolationKind::LiquidBelowMelting, -bundle.h_min - tol.tol_t);
    if limits.no_overshoot {
        check(ViolationKind::Overshoot, obs.s - limits.s_r - tol.tol_s);
    }
    check(
        ViolationKind::InterfaceOutside,
        (tol.tol_s - obs.s).max(obs.s - (limits.length - tol.tol_s)),
    );
    if let Some(q_bar) = limits.q_bar {
        check(ViolationKind::FluxCeiling, bundle.h2 - q_bar - tol.tol_q);
    }
    if let Some(ceiling) = limits.theta_ceiling {
        check(ViolationKind::TemperatureCeiling, obs.max_theta - ceiling - tol.tol_t);
    }
    if let Some(m) = obs.max_theta_s {
        check(ViolationKind::SolidAboveMelting, m - tol.tol_t);
    }
    out
}

/// `||theta||² + (s - s_r)² + q_c² (+ p²)`.
pub fn phi_one_phase(state: &OnePhaseState, actuator: &ActuatorState, spec: &SetpointSpec) -> f64 {
    let sq: Vec<f64> = state.theta().iter().map(|v| v * v).collect();
    integrate_uniform(&sq, state.dx()) + phi_lumped(state.s(), actuator, spec)
}

/// One-phase norm plus `||theta_s||²` over the solid.
pub fn phi_two_phase(
    state: &TwoPhaseState,
    mat: &TwoPhaseMaterial,
    actuator: &ActuatorState,
    spec: &SetpointSpec,
) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    integrate_uniform(&sq(state.theta_l()), state.liquid_dx())
        + integrate_uniform(&sq(state.theta_s()), state.solid_dx(mat.length))
        + phi_lumped(state.s(), actuator, spec)
}

fn phi_lumped(s: f64, actuator: &ActuatorState, spec: &SetpointSpec) -> f64 {
    let ds = s - spec.s_r;
    ds * ds + actuator.qc * actuator.qc + actuator.p.map_or(0.0, |p| p * p)
}

/// Exponential envelope `Phi(t) <= M Phi(0) exp(-b t)` fitted to a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares overshoot constant, `exp(intercept) / Phi(0)`.
    pub m: f64,
    /// Least-squares decay rate, 1/s.
    pub b: f64,
    /// `max_t Phi(t) / (M Phi(0) exp(-b t))`.
    pub envelope_ratio: f64,
    /// Smallest `M` for which the envelope with rate `b` covers every sample.
    pub m_envelope: f64,
}

pub const MIN_DECAY_SAMPLES: usize = 10;

/// Least-squares fit of `ln Phi` against `t`.
pub fn fit_decay(series: &[(f64, f64)]) -> Result<DecayFit> {
    if series.len() < MIN_DECAY_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "decay fit needs at least {MIN_DECAY_SAMPLES} samples, got {}",
            series.len()
        )));
    }
    let floor = series.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if !(floor > 0.0) {
        return Err(Error::DegenerateSeries { floor });
    }
    let n = series.len() as f64;
    let t_mean = series.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = series.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, phi) in series {
        sxy += (t - t_mean) * (phi.ln() - y_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = y_mean - slope * t_mean;
    let phi0 = series[0].1;
    let m = intercept.exp() / phi0;
    let b = -slope;
    let envelope_ratio = series
        .iter()
        .map(|&(t, phi)| phi / (m * phi0 * (-b * t).exp()))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit {
        m,
        b,
        envelope_ratio,
        m_envelope: m * envelope_ratio.max(1.0),
    })
}

/// Interface error of the explicit solver driven by the traveling-wave flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveError {
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    /// `max |s - s_exact|` over every step.
    pub max_s_error: f64,
    /// Relative sup-norm error of the temperature profile at the horizon.
    pub final_theta_error: f64,
}

/// Starts from the exact profile at `t = 0`, feeds the exact flux held over
/// each step, and compares the interface after every step. The step is
/// `safety_factor` times the explicit bound at `s0`.
pub fn traveling_wave_error(
    tw: &TravelingWave,
    consts: &DerivedConstants,
    n: usize,
    safety_factor: f64,
    horizon: f64,
) -> Result<WaveError> {
    let grid = Grid::new(n)?;
    let dt = SolverConfig::stable_dt(grid, safety_factor, consts.alpha, tw.s0);
    let cfg = SolverConfig::new(grid, dt)?.with_safety_factor(safety_factor)?;
    let mut state = traveling_wave_oracle(tw, consts, 0.0)?.state(grid, 0.0)?;
    let steps = crate::solver::step_count(horizon, dt);
    let mut max_s_error = 0.0f64;
    for _ in 0..steps {
        let mut local = cfg;
        local.dt = dt.min(horizon - state.t());
        if local.dt <= 0.0 {
            break;
        }
        let q = traveling_wave_oracle(tw, consts, state.t())?.flux;
        state = step(&state, q, consts, &local)?;
        let exact = traveling_wave_oracle(tw, consts, state.t())?;
        max_s_error = max_s_error.max((state.s() - exact.s_exact).abs());
    }
    let exact = traveling_wave_oracle(tw, consts, state.t())?;
    let scale = exact.theta(0.0).abs().max(f64::MIN_POSITIVE);
    let final_theta_error = state
        .positions()
        .zip(state.theta())
        .map(|(x, th)| (th - exact.theta(x)).abs())
        .fold(0.0, f64::max)
        / scale;
    Ok(WaveError { n, dt, steps, max_s_error, final_theta_error })
}

/// Closed-form `(h1, h2, h3)` of the non-overshooting closed loop.
pub fn analytic_h_oracle(h1_0: f64, h2_0: f64, c1: f64, c2: f64, t: f64) -> Result<(f64, f64, f64)> {
    if c1 == c2 {
        return Err(Error::ConfluentRates(c1));
    }
    let h3_0 = c1 * h1_0 - h2_0;
    let e1 = (-c1 * t).exp();
    let e2 = (-c2 * t).exp();
    let mix = h3_0 / (c2 - c1) * (e1 - e2);
    Ok((h1_0 * e1 + mix, h2_0 * e1 + c2 * mix, h3_0 * e2))
}

/// Generator of `(h1, h2, h3)` under the first-order non-overshooting law.
pub fn cbf_chain_order1(c1: f64, c2: f64) -> [[f64; 3]; 3] {
    [[-c1, 0.0, 1.0], [0.0, -c1, c2], [0.0, 0.0, -c2]]
}

/// Generator of `(h1, ..., h5)` under the double-integrator law.
pub fn cbf_chain_order2(c1: f64, c2: f64, c3: f64) -> [[f64; 5]; 5] {
    [
        [-c1, 0.0, 1.0, 0.0, 0.0],
        [0.0, -c1, 0.0, 0.0, 1.0],
        [0.0, 0.0, -c2, 1.0, 0.0],
        [0.0, 0.0, 0.0, -c3, 0.0],
        [0.0, 0.0, 0.0, c3, -c2],
    ]
}

/// Classical fourth-order Runge-Kutta for `x' = A x`, returning the state
/// after each of `steps` equal steps up to `t_end`.
pub fn integrate_linear<const N: usize>(
    a: &[[f64; N]; N],
    x0: [f64; N],
    t_end: f64,
    steps: usize,
) -> Vec<[f64; N]> {
    let h = t_end / steps as f64;
    let f = |x: &[f64; N]| {
        let mut y = [0.0; N];
        for (i, row) in a.iter().enumerate() {
            y[i] = row.iter().zip(x).map(|(r, v)| r * v).sum();
        }
        y
    };
    let axpy = |x: &[f64; N], k: &[f64; N], s: f64| {
        let mut y = *x;
        for i in 0..N {
            y[i] += s * k[i];
        }
        y
    };
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&axpy(&x, &k1, h / 2.0));
        let k3 = f(&axpy(&x, &k2, h / 2.0));
        let k4 = f(&axpy(&x, &k3, h));
        for i in 0..N {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(x);
    }
    out
}

/// Step counts per clamp state of the safety filter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClampStats {
    pub steps: u64,
    pub none: u64,
    pub lower: u64,
    pub upper: u64,
    pub infeasible_resolved: u64,
}

impl ClampStats {
    pub fn record(&mut self, clamp: Clamp) {
        self.steps += 1;
        match clamp {
            Clamp::None => self.none += 1,
            Clamp::Lower => self.lower += 1,
            Clamp::Upper => self.upper += 1,
            Clamp::InfeasibleResolved => self.infeasible_resolved += 1,
        }
    }

    pub fn fraction_lower(&self) -> f64 {
        self.lower as f64 / self.steps.max(1) as f64
    }

    pub fn fraction_upper(&self) -> f64 {
        self.upper as f64 / self.steps.max(1) as f64
    }
}

pub const REPORT_SCHEMA: u32 = 1;

/// Summary of a run. Serialized as `report.json`; all quantities in SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub scenario: String,
    pub controller: String,
    pub steps: u64,
    pub t_end: f64,
    pub s_end: f64,
    pub s_r: f64,
    /// Largest interface position seen, m.
    pub s_max: f64,
    /// Smallest energy deficit seen, J/m².
    pub h1_min: f64,
    /// Smallest heat flux seen, W/m².
    pub qc_min: f64,
    /// Largest heat flux seen, W/m².
    pub qc_max: f64,
    /// Smallest liquid temperature excess seen, °C.
    pub theta_min: f64,
    /// Largest liquid temperature excess seen, °C.
    pub theta_max: f64,
    /// True when the interface never moved backwards by more than 1e-12 m.
    pub s_monotone: bool,
    pub tolerances: SafetyTolerances,
    pub violations: Vec<Violation>,
    /// Violations beyond those listed, when the list was truncated.
    pub violations_dropped: u64,
    pub phi_series: Vec<(f64, f64)>,
    pub decay: Option<DecayFit>,
    pub decay_error: Option<String>,
    pub clamp_stats: Option<ClampStats>,
    pub assumption_report: ValidationReport,
    /// Set when the run stopped early.
    pub error: Option<String>,
}

impl RunReport {
    pub fn violation_count(&self) -> u64 {
        self.violations.len() as u64 + self.violations_dropped
    }

    pub fn is_clean(&self) -> bool {
        self.error.is_none() && self.violation_count() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::{cbf_bundle, CbfGains};
    use crate::model::{DerivedConstants, Grid};
    use approx::assert_relative_eq;

    fn limits() -> SafetyLimits {
        SafetyLimits {
            s_r: 0.5,
            length: 1.0,
            no_overshoot: true,
            q_bar: None,
            theta_ceiling: None,
        }
    }

    #[test]
    fn equilibrium_is_clean() {
        let st = OnePhaseState::affine(Grid::new(10).unwrap(), 0.5, 0.0).unwrap();
        let c = DerivedConstants::nondimensional(1.0, 1.0, 1.0);
        let act = ActuatorState::first_order(0.0);
        let b = cbf_bundle(&st, &act, &c, &SetpointSpec::new(0.5), &CbfGains::new(1.0)).unwrap();
        assert!(monitor_step(&Observation::one_phase(&st), &b, &limits(), &SafetyTolerances::ZERO).is_empty());
        assert_eq!(phi_one_phase(&st, &act, &SetpointSpec::new(0.5)), 0.0);
    }

    #[test]
    fn negative_flux_is_flagged_once() {
        let st = OnePhaseState::affine(Grid::new(10).unwrap(), 0.4, 0.0).unwrap();
        let b = CbfBundle::from_parts(0.1, 0.0, &ActuatorState::first_order(-1e-6), &CbfGains::new(100.0));
        let v = monitor_step(&Observation::one_phase(&st), &b, &limits(), &SafetyTolerances::ZERO);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NegativeFlux);
        assert_relative_eq!(v[0].magnitude, 1e-6);
    }

    #[test]
    fn every_kind_is_reachable() {
        let obs = Observation {
            t: 0.0,
            s: 1.5,
            max_theta: 10.0,
            max_theta_s: Some(1.0),
        };
        let b = CbfBundle {
            h1: -1.0,
            h2: -1.0,
            h3: 0.0,
            h_min: -1.0,
            h2_star: None,
            h4: None,
            h5: None,
        };
        let lim = SafetyLimits {
            q_bar: Some(-2.0),
            theta_ceiling: Some(1.0),
            ..limits()
        };
        let kinds: Vec<_> = monitor_step(&obs, &b, &lim, &SafetyTolerances::ZERO)
            .into_iter()
            .map(|v| v.kind)
            .collect();
        assert_eq!(kinds, ViolationKind::ALL.to_vec());
    }

    #[test]
    fn phi_single_term() {
        let st = OnePhaseState::affine(Grid::new(10).unwrap(), 0.5, 0.0).unwrap();
        assert_eq!(phi_one_phase(&st, &ActuatorState::first_order(3.0), &SetpointSpec::new(0.5)), 9.0);
        assert_eq!(phi_one_phase(&st, &ActuatorState::second_order(0.0, 2.0), &SetpointSpec::new(0.5)), 4.0);
    }

    #[test]
    fn decay_fit_on_exact_exponential() {
        let series: Vec<_> = (0..50).map(|i| {
            let t = i as f64 * 0.1;
            (t, 5.0 * (-2.0 * t).exp())
        }).collect();
        let fit = fit_decay(&series).unwrap();
        assert_relative_eq!(fit.m * series[0].1, 5.0, max_relative = 1e-9);
        assert_relative_eq!(fit.b, 2.0, max_relative = 1e-9);
        assert!(fit.envelope_ratio <= 1.0 + 1e-9);

        let flat: Vec<_> = (0..20).map(|i| (i as f64, 3.0)).collect();
        assert!(fit_decay(&flat).unwrap().b.abs() < 1e-12);
    }

    #[test]
    fn decay_fit_rejects_bad_series() {
        let short: Vec<_> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(fit_decay(&short).is_err());
        let mut zero: Vec<_> = (0..20).map(|i| (i as f64, 1.0)).collect();
        zero[7].1 = 0.0;
        assert!(matches!(fit_decay(&zero), Err(Error::DegenerateSeries { .. })));
    }

    #[test]
    fn oracle_examples() {
        let (h1, h2, h3) = analytic_h_oracle(1.0, 0.5, 1.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(h3, 0.5 * (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(h3, 0.06767, max_relative = 1e-4);
        assert_relative_eq!(h1, 0.48415, max_relative = 1e-5);
        assert!(h2 > 0.0);
        assert_eq!(analytic_h_oracle(1.0, 0.5, 1.0, 2.0, 0.0).unwrap(), (1.0, 0.5, 0.5));
        let (h1, h2, h3) = analytic_h_oracle(1.0, 2.0, 2.0, 5.0, 0.7).unwrap();
        assert_eq!(h3, 0.0);
        assert_relative_eq!(h1, (-1.4f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(h2, 2.0 * (-1.4f64).exp(), max_relative = 1e-14);
        assert!(matches!(analytic_h_oracle(1.0, 0.5, 2.0, 2.0, 1.0), Err(Error::ConfluentRates(_))));
    }

    #[test]
    fn rk4_on_scalar_decay() {
        let path = integrate_linear(&[[-1.0]], [1.0], 1.0, 1000);
        assert_relative_eq!(path[1000][0], (-1.0f64).exp(), max_relative = 1e-12);
    }
}
