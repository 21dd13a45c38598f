use serde::{Deserialize, Serialize};

use super::{advance_phase, end_slope, limited_end_slope, PhaseCoefficients, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{DerivedConstants, Grid, OnePhaseState};

/// Temperature gradient `T_x` at the interface, °C/m, from a second-order
/// backward difference.
pub fn interface_gradient(state: &OnePhaseState) -> f64 {
    end_slope(state.theta()) / state.s()
}

/// Advances the one-phase system by `cfg.dt` under boundary flux `qc`.
///
/// The front speed is taken from the current profile before the
/// temperature update.
pub fn step(
    state: &OnePhaseState,
    qc: f64,
    consts: &DerivedConstants,
    cfg: &SolverConfig,
) -> Result<OnePhaseState> {
    let s = state.s();
    cfg.check_stability(consts.alpha, s)?;

    let s_dot = -consts.beta * limited_end_slope(state.theta()) / s;
    let coeffs = PhaseCoefficients {
        diffusion: consts.alpha / (s * s),
        drift: s_dot / s,
        flux_slope: -qc * s / consts.k,
    };
    let mut theta = state.theta().to_vec();
    advance_phase(&mut theta, coeffs, cfg.dt, cfg.scheme);

    let t = state.t() + cfg.dt;
    let s_next = s + cfg.dt * s_dot;
    if !s_next.is_finite() || theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup { t });
    }
    if s_next < cfg.min_interface {
        return Err(Error::DegenerateInterface { t, s: s_next });
    }
    Ok(OnePhaseState::from_parts(t, s_next, theta))
}

/// States recorded by [`simulate`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<OnePhaseState>,
}

impl Trajectory {
    pub fn last(&self) -> &OnePhaseState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Integrates the open-loop system from `initial` to `initial.t() + horizon`
/// with `flux(t)` held over each step. Every `decimate`-th state and the
/// final state are recorded.
pub fn simulate(
    initial: &OnePhaseState,
    mut flux: impl FnMut(f64) -> f64,
    horizon: f64,
    consts: &DerivedConstants,
    cfg: &SolverConfig,
    decimate: usize,
) -> Result<Trajectory> {
    if !(horizon >= 0.0) {
        return Err(Error::param("horizon", format!("must be non-negative, got {horizon}")));
    }
    cfg.validate()?;
    let decimate = decimate.max(1);
    let mut out = Trajectory { states: vec![initial.clone()] };
    let steps = step_count(horizon, cfg.dt);
    let t_end = initial.t() + horizon;
    let mut state = initial.clone();
    for j in 1..=steps {
        let mut local = *cfg;
        local.dt = cfg.dt.min(t_end - state.t());
        let q = flux(state.t());
        state = step(&state, q, consts, &local)?;
        if j == steps {
            state = state.with_time(t_end);
        }
        if j % decimate == 0 || j == steps {
            out.states.push(state.clone());
        }
    }
    Ok(out)
}

pub(crate) fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon <= 0.0 {
        return 0;
    }
    (horizon / dt - 1e-9).ceil().max(1.0) as usize
}

/// Self-similar melting front moving at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelingWave {
    pub v: f64,
    pub s0: f64,
}

/// Exact solution of the one-phase problem at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelingWaveSample {
    pub flux: f64,
    pub s_exact: f64,
    v: f64,
    alpha: f64,
    beta: f64,
}

impl TravelingWaveSample {
    /// Temperature excess at depth `x`.
    pub fn theta(&self, x: f64) -> f64 {
        (self.alpha / self.beta) * ((-self.v * (x - self.s_exact) / self.alpha).exp() - 1.0)
    }

    pub fn profile(&self, grid: Grid) -> Vec<f64> {
        grid.nodes().map(|xi| self.theta(xi * self.s_exact)).collect()
    }

    pub fn state(&self, grid: Grid, t: f64) -> Result<OnePhaseState> {
        OnePhaseState::new(t, self.s_exact, self.profile(grid))
    }
}

/// `theta = (alpha/beta)(exp(-v (x - s)/alpha) - 1)`, `s = s0 + v t`,
/// `q_c = (k v / beta) exp(v s / alpha)`.
pub fn traveling_wave_oracle(
    tw: &TravelingWave,
    consts: &DerivedConstants,
    t: f64,
) -> Result<TravelingWaveSample> {
    if !(tw.v > 0.0 && tw.s0 > 0.0) {
        return Err(Error::param("traveling_wave", "v and s0 must be positive"));
    }
    let s = tw.s0 + tw.v * t;
    let peclet = tw.v * s / consts.alpha;
    if peclet > 20.0 {
        return Err(Error::param(
            "traveling_wave",
            format!("v s / alpha = {peclet:.3} exceeds the overflow guard of 20"),
        ));
    }
    Ok(TravelingWaveSample {
        flux: consts.k * tw.v / consts.beta * peclet.exp(),
        s_exact: s,
        v: tw.v,
        alpha: consts.alpha,
        beta: consts.beta,
    })
}
