use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Disturbance, InitialProfile, ScenarioConfig};
use crate::cbf::{sigma_one_phase, sigma_two_phase, CbfBundle, CbfGains, SetpointSpec};
use crate::control::{
    one_phase_assumptions, two_phase_assumptions, validate_gains, Clamp, ControlDecision, Controller,
    InitialData, ValidationReport,
};
use crate::error::{Error, Result};
use crate::model::{ActuatorState, DerivedConstants, OnePhaseState};
use crate::solver::{step, step_two_phase, SolverConfig, TwoPhaseMaterial, TwoPhaseState};
use crate::verification::{
    fit_decay, monitor_step, phi_one_phase, phi_two_phase, ClampStats, Observation, RunReport,
    SafetyLimits, SafetyTolerances, Violation, REPORT_SCHEMA,
};

/// One output row. Optional columns are empty when they do not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub s: f64,
    pub qc: f64,
    pub p: Option<f64>,
    #[serde(rename = "U_applied")]
    pub u_applied: f64,
    #[serde(rename = "U_o")]
    pub u_o: Option<f64>,
    #[serde(rename = "U_lower")]
    pub u_lower: Option<f64>,
    #[serde(rename = "U_upper")]
    pub u_upper: Option<f64>,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h2_star: Option<f64>,
    pub h4: Option<f64>,
    pub h5: Option<f64>,
    pub h_min: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
    pub clamp: Option<Clamp>,
}

pub const CSV_COLUMNS: [&str; 17] = [
    "t", "s", "qc", "p", "U_applied", "U_o", "U_lower", "U_upper", "h1", "h2", "h3", "h2_star", "h4", "h5",
    "h_min", "Phi", "clamp",
];

/// Barrier values and the control decision at the current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub bundle: CbfBundle,
    pub decision: ControlDecision,
    pub phi: f64,
}

struct DisturbanceSource {
    kind: Disturbance,
    rng: ChaCha8Rng,
    segment: i64,
    value: f64,
}

impl DisturbanceSource {
    fn new(kind: Disturbance, seed: u64) -> Self {
        DisturbanceSource {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            segment: -1,
            value: 0.0,
        }
    }

    /// Only called with nondecreasing `t`.
    fn at(&mut self, t: f64) -> f64 {
        match self.kind {
            Disturbance::Zero => 0.0,
            Disturbance::Constant(v) => v,
            Disturbance::Random { max, hold } => {
                let seg = (t / hold).floor() as i64;
                while self.segment < seg {
                    self.value = self.rng.gen_range(0.0..max);
                    self.segment += 1;
                }
                self.value
            }
        }
    }
}

#[allow(clippy::large_enum_variant)]
enum Plant {
    One {
        state: OnePhaseState,
        consts: DerivedConstants,
    },
    Two {
        state: TwoPhaseState,
        mat: TwoPhaseMaterial,
        qf: DisturbanceSource,
    },
}

/// A running closed loop: plant, actuator and controller advanced together
/// with a zero-order hold on the input.
pub struct ClosedLoop {
    plant: Plant,
    actuator: ActuatorState,
    controller: Controller,
    cbf_gains: CbfGains,
    spec: SetpointSpec,
    solver: SolverConfig,
    limits: SafetyLimits,
    tol: SafetyTolerances,
    horizon: f64,
    steps_total: usize,
    steps_done: usize,
    assumptions: ValidationReport,
}

fn liquid_profile(initial: &InitialProfile, s0: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x: f64| match initial {
        InitialProfile::Affine { peak } => peak * (1.0 - x / s0),
        InitialProfile::Sampled(v) => {
            let pos = (x / s0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
            let i = (pos.floor() as usize).min(v.len() - 2);
            let w = pos - i as f64;
            v[i] * (1.0 - w) + v[i + 1] * w
        }
    }
}

/// Monitor slack derived from the discretization when the config gives none.
///
/// Temperatures and fluxes are exact up to rounding. The interface and the
/// energy deficit carry the first-order quadrature and front-tracking error.
pub fn default_tolerances(cfg: &ScenarioConfig, theta_scale: f64) -> SafetyTolerances {
    let dxi = cfg.solver.grid.dxi();
    let mat = cfg.material.derive().expect("validated at load");
    let q_scale = cfg.qc0.abs().max(cfg.controller.q_bar().unwrap_or(0.0)).max(1.0);
    SafetyTolerances {
        tol_t: 1e-9 * theta_scale.max(1.0),
        tol_s: 1e-2 * dxi * cfg.setpoint.s_r,
        tol_q: 1e-9 * q_scale,
        tol_cbf: 1e-2 * dxi * mat.k / mat.beta * cfg.setpoint.s_r,
    }
}

impl ClosedLoop {
    /// Builds the initial state and checks every assumption and gain
    /// condition; failures come back as [`Error::Assumptions`].
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let grid = cfg.solver.grid;
        let theta0 = liquid_profile(&cfg.initial, cfg.s0);
        let actuator = match cfg.p0 {
            Some(p0) => ActuatorState::second_order(cfg.qc0, p0),
            None => ActuatorState::first_order(cfg.qc0),
        };

        let (plant, mut report, sigma0, theta_scale) = match &cfg.solid {
            None => {
                let state = OnePhaseState::from_fn(grid, cfg.s0, &theta0)?;
                let consts = cfg.material.derive()?;
                let report = one_phase_assumptions(&state, cfg.qc0, &cfg.material, &cfg.setpoint, cfg.length)?;
                let sigma0 = sigma_one_phase(&state, &consts, &cfg.setpoint);
                let scale = state.max_theta().abs().max(state.min_theta().abs());
                (Plant::One { state, consts }, report, sigma0, scale)
            }
            Some(solid) => {
                let mat = TwoPhaseMaterial::new(cfg.material, solid.material, cfg.length)?;
                let (s0, len, end) = (cfg.s0, cfg.length, solid.end_excess);
                let state = TwoPhaseState::from_fns(grid, s0, len, &theta0, |x| end * (x - s0) / (len - s0))?;
                let Controller::TwoPhase { gains } = cfg.controller else {
                    return Err(Error::param("controller.variant", "two-phase scenarios use the two-phase law"));
                };
                let report = two_phase_assumptions(&state, cfg.qc0, &mat, &cfg.setpoint, &solid.bounds, &gains);
                let sigma0 = sigma_two_phase(&state, &mat, &cfg.setpoint);
                let scale = state
                    .theta_l()
                    .iter()
                    .chain(state.theta_s())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                let qf = DisturbanceSource::new(solid.disturbance, cfg.seed);
                (Plant::Two { state, mat, qf }, report, sigma0, scale)
            }
        };

        if !report.all_passed() {
            return Err(Error::Assumptions(report));
        }
        let init = InitialData { sigma0, qc0: cfg.qc0, p0: cfg.p0 };
        report.extend(validate_gains(&init, &cfg.controller)?);
        let report = report.into_result()?;

        let limits = SafetyLimits {
            s_r: cfg.setpoint.s_r,
            length: cfg.length,
            no_overshoot: cfg.solid.is_none(),
            q_bar: cfg.controller.q_bar(),
            theta_ceiling: cfg.setpoint.t_star.map(|t| t - cfg.material.tm),
        };
        Ok(ClosedLoop {
            plant,
            actuator,
            controller: cfg.controller,
            cbf_gains: cfg.controller.cbf_gains(),
            spec: cfg.setpoint,
            solver: cfg.solver,
            limits,
            tol: cfg.tolerances.unwrap_or_else(|| default_tolerances(cfg, theta_scale)),
            horizon: cfg.horizon,
            steps_total: crate::solver::step_count(cfg.horizon, cfg.solver.dt),
            steps_done: 0,
            assumptions: report,
        })
    }

    pub fn t(&self) -> f64 {
        match &self.plant {
            Plant::One { state, .. } => state.t(),
            Plant::Two { state, .. } => state.t(),
        }
    }

    pub fn s(&self) -> f64 {
        match &self.plant {
            Plant::One { state, .. } => state.s(),
            Plant::Two { state, .. } => state.s(),
        }
    }

    pub fn actuator(&self) -> &ActuatorState {
        &self.actuator
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn spec(&self) -> &SetpointSpec {
        &self.spec
    }

    pub fn limits(&self) -> &SafetyLimits {
        &self.limits
    }

    pub fn tolerances(&self) -> &SafetyTolerances {
        &self.tol
    }

    pub fn dt(&self) -> f64 {
        self.solver.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn finished(&self) -> bool {
        self.steps_done >= self.steps_total
    }

    pub fn assumptions(&self) -> &ValidationReport {
        &self.assumptions
    }

    /// Liquid temperature excess with node positions, at most `max_points`
    /// samples (the interface node is always included).
    pub fn liquid_profile(&self, max_points: usize) -> (Vec<f64>, Vec<f64>) {
        let (theta, s) = match &self.plant {
            Plant::One { state, .. } => (state.theta(), state.s()),
            Plant::Two { state, .. } => (state.theta_l(), state.s()),
        };
        let n = theta.len() - 1;
        let stride = n.div_ceil(max_points.max(2) - 1).max(1);
        let mut idx: Vec<usize> = (0..=n).step_by(stride).collect();
        if *idx.last().expect("non-empty") != n {
            idx.push(n);
        }
        let dxi = 1.0 / n as f64;
        idx.iter().map(|&i| (i as f64 * dxi * s, theta[i])).unzip()
    }

    fn sigma(&self) -> f64 {
        match &self.plant {
            Plant::One { state, consts } => sigma_one_phase(state, consts, &self.spec),
            Plant::Two { state, mat, .. } => sigma_two_phase(state, mat, &self.spec),
        }
    }

    fn bundle(&self) -> CbfBundle {
        let h_min = match &self.plant {
            Plant::One { state, .. } => state.min_theta(),
            Plant::Two { state, .. } => state.theta_l().iter().copied().fold(f64::INFINITY, f64::min),
        };
        CbfBundle::from_parts(self.sigma(), h_min, &self.actuator, &self.cbf_gains)
    }

    fn phi(&self) -> f64 {
        match &self.plant {
            Plant::One { state, .. } => phi_one_phase(state, &self.actuator, &self.spec),
            Plant::Two { state, mat, .. } => phi_two_phase(state, mat, &self.actuator, &self.spec),
        }
    }

    fn observation(&self) -> Observation {
        match &self.plant {
            Plant::One { state, .. } => Observation::one_phase(state),
            Plant::Two { state, .. } => Observation::two_phase(state),
        }
    }

    /// Barriers and the control input at the current state, given the held
    /// operator sample.
    pub fn evaluate(&self, u_o: f64) -> Result<Evaluation> {
        let bundle = self.bundle();
        let decision = self.controller.decide(bundle.h1, bundle.h2, self.actuator.p, u_o)?;
        Ok(Evaluation { bundle, decision, phi: self.phi() })
    }

    pub fn monitor(&self) -> Vec<Violation> {
        monitor_step(&self.observation(), &self.bundle(), &self.limits, &self.tol)
    }

    pub fn record(&self, ev: &Evaluation) -> TrajectoryRecord {
        let f = ev.decision.filter;
        TrajectoryRecord {
            t: self.t(),
            s: self.s(),
            qc: self.actuator.qc,
            p: self.actuator.p,
            u_applied: ev.decision.u,
            u_o: f.map(|f| f.u_operator),
            u_lower: f.map(|f| f.u_lower),
            u_upper: f.map(|f| f.u_upper),
            h1: ev.bundle.h1,
            h2: ev.bundle.h2,
            h3: ev.bundle.h3,
            h2_star: ev.bundle.h2_star,
            h4: ev.bundle.h4,
            h5: ev.bundle.h5,
            h_min: ev.bundle.h_min,
            phi: ev.phi,
            clamp: f.map(|f| f.clamp),
        }
    }

    /// Applies `ev`'s input over one step (shortened to land on the
    /// horizon), then returns the violations at the new state.
    pub fn advance(&mut self, ev: &Evaluation) -> Result<Vec<Violation>> {
        if self.finished() {
            return Err(Error::InvalidInput("the run already reached its horizon".into()));
        }
        let last = self.steps_done + 1 == self.steps_total;
        let mut cfg = self.solver;
        if last {
            cfg.dt = self.horizon - self.t();
        }
        if cfg.dt > 0.0 {
            self.actuator = self.actuator.advance(ev.decision.u, cfg.dt);
            let qc = self.actuator.qc;
            match &mut self.plant {
                Plant::One { state, consts } => *state = step(state, qc, consts, &cfg)?,
                Plant::Two { state, mat, qf } => {
                    let q = qf.at(state.t());
                    *state = step_two_phase(state, qc, q, mat, &cfg)?;
                }
            }
        }
        self.steps_done += 1;
        Ok(self.monitor())
    }
}

/// Folds a run into the summary statistics of its report.
#[derive(Debug, Clone)]
pub struct Tracker {
    violations: Vec<Violation>,
    dropped: u64,
    phi_series: Vec<(f64, f64)>,
    clamp: Option<ClampStats>,
    s_prev: f64,
    s_max: f64,
    s_monotone: bool,
    h1_min: f64,
    qc_min: f64,
    qc_max: f64,
    theta_min: f64,
    theta_max: f64,
}

/// Violations kept in a report; the rest are only counted.
pub const MAX_LISTED_VIOLATIONS: usize = 1000;

impl Tracker {
    pub fn new(cl: &ClosedLoop) -> Self {
        Tracker {
            violations: Vec::new(),
            dropped: 0,
            phi_series: Vec::new(),
            clamp: cl.controller.uses_operator().then(ClampStats::default),
            s_prev: cl.s(),
            s_max: f64::NEG_INFINITY,
            s_monotone: true,
            h1_min: f64::INFINITY,
            qc_min: f64::INFINITY,
            qc_max: f64::NEG_INFINITY,
            theta_min: f64::INFINITY,
            theta_max: f64::NEG_INFINITY,
        }
    }

    pub fn violations(&self) -> u64 {
        self.violations.len() as u64 + self.dropped
    }

    pub fn add_violations(&mut self, v: Vec<Violation>) {
        for v in v {
            if self.violations.len() < MAX_LISTED_VIOLATIONS {
                self.violations.push(v);
            } else {
                self.dropped += 1;
            }
        }
    }

    /// Records the state of `cl` and, when it will be applied, the decision.
    pub fn observe(&mut self, cl: &ClosedLoop, ev: &Evaluation, applied: bool) {
        let s = cl.s();
        if s < self.s_prev - 1e-12 {
            self.s_monotone = false;
        }
        self.s_prev = s;
        self.s_max = self.s_max.max(s);
        self.h1_min = self.h1_min.min(ev.bundle.h1);
        self.qc_min = self.qc_min.min(cl.actuator.qc);
        self.qc_max = self.qc_max.max(cl.actuator.qc);
        self.theta_min = self.theta_min.min(ev.bundle.h_min);
        self.theta_max = self.theta_max.max(cl.observation().max_theta);
        if applied {
            if let (Some(stats), Some(f)) = (self.clamp.as_mut(), ev.decision.filter) {
                stats.record(f.clamp);
            }
        }
    }

    pub fn sample_phi(&mut self, t: f64, phi: f64) {
        self.phi_series.push((t, phi));
    }

    pub fn report(self, name: &str, cl: &ClosedLoop, error: Option<String>) -> RunReport {
        let (decay, decay_error) = match fit_decay(&self.phi_series) {
            Ok(fit) => (Some(fit), None),
            Err(e) => (None, Some(e.to_string())),
        };
        RunReport {
            schema: REPORT_SCHEMA,
            scenario: name.to_string(),
            controller: cl.controller.name().to_string(),
            steps: cl.steps_done as u64,
            t_end: cl.t(),
            s_end: cl.s(),
            s_r: cl.spec.s_r,
            s_max: self.s_max,
            h1_min: self.h1_min,
            qc_min: self.qc_min,
            qc_max: self.qc_max,
            theta_min: self.theta_min,
            theta_max: self.theta_max,
            s_monotone: self.s_monotone,
            tolerances: cl.tol,
            violations: self.violations,
            violations_dropped: self.dropped,
            phi_series: self.phi_series,
            decay,
            decay_error,
            clamp_stats: self.clamp,
            assumption_report: cl.assumptions.clone(),
            error,
        }
    }
}
