use crate::error::{Error, Result};
use crate::scenario::{ClosedLoop, Evaluation, ScenarioConfig, Tracker};
use crate::verification::RunReport;

use super::protocol::{SessionState, StateFrame};

/// Operator samples closer together than this are coalesced.
pub const MIN_SAMPLE_INTERVAL: f64 = 1e-3;
/// Profile points sent per frame.
pub const FRAME_POINTS: usize = 128;
/// Largest accepted timescale, simulated seconds per wall second.
pub const MAX_TIMESCALE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    /// Simulated seconds per wall-clock second.
    pub timescale: f64,
    /// Steps a single tick may take; the rest of a late tick is dropped.
    pub max_steps_per_tick: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { timescale: 0.01, max_steps_per_tick: 200_000 }
    }
}

/// What became of an operator sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    /// Now the held value.
    Held,
    /// Arrived within the rate limit; held at the next tick unless replaced.
    Coalesced,
    /// Not finite; the previous hold stays.
    Rejected,
}

/// One live closed loop driven by wall-clock ticks and operator samples.
///
/// All methods are synchronous; the server owns a session on a single thread
/// and feeds it commands.
pub struct Session {
    id: String,
    cfg: ScenarioConfig,
    cl: ClosedLoop,
    tracker: Tracker,
    state: SessionState,
    timescale: f64,
    opts: SessionOptions,
    held_uo: f64,
    held_ct: Option<f64>,
    pending: Option<(f64, Option<f64>)>,
    last_held_at: f64,
    budget: f64,
    seq: u64,
    error: Option<String>,
    report: Option<RunReport>,
    report_taken: bool,
}

fn new_id(cfg: &ScenarioConfig) -> String {
    use std::hash::{BuildHasher, Hasher};
    let mut h = std::collections::hash_map::RandomState::new().build_hasher();
    h.write(cfg.name.as_bytes());
    format!("{}-{:016x}", cfg.name, h.finish())
}

impl Session {
    /// Validates `cfg` and builds a paused session at `t = 0`. The operator
    /// signal in `cfg` is ignored; commands come from [`Session::ingest`].
    pub fn start(cfg: ScenarioConfig, opts: SessionOptions) -> Result<Self> {
        check_timescale(opts.timescale)?;
        let cl = ClosedLoop::new(&cfg)?;
        let mut tracker = Tracker::new(&cl);
        tracker.add_violations(cl.monitor());
        let mut s = Session {
            id: new_id(&cfg),
            cfg,
            cl,
            tracker,
            state: SessionState::Paused,
            timescale: opts.timescale,
            opts,
            held_uo: 0.0,
            held_ct: None,
            pending: None,
            last_held_at: f64::NEG_INFINITY,
            budget: 0.0,
            seq: 0,
            error: None,
            report: None,
            report_taken: false,
        };
        s.check_horizon();
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn t(&self) -> f64 {
        self.cl.t()
    }

    pub fn timescale(&self) -> f64 {
        self.timescale
    }

    /// The operator value the filter currently sees, with its client time.
    pub fn held(&self) -> (f64, Option<f64>) {
        (self.held_uo, self.held_ct)
    }

    pub fn violations(&self) -> u64 {
        self.tracker.violations()
    }

    /// Offers an operator sample received at wall time `now` (seconds).
    pub fn ingest(&mut self, u_o: f64, ct: Option<f64>, now: f64) -> Ingest {
        if !u_o.is_finite() {
            return Ingest::Rejected;
        }
        if now - self.last_held_at >= MIN_SAMPLE_INTERVAL {
            self.hold(u_o, ct, now);
            Ingest::Held
        } else {
            self.pending = Some((u_o, ct));
            Ingest::Coalesced
        }
    }

    fn hold(&mut self, u_o: f64, ct: Option<f64>, now: f64) {
        self.held_uo = u_o;
        self.held_ct = ct;
        self.pending = None;
        self.last_held_at = now;
    }

    pub fn pause(&mut self) -> Result<()> {
        match self.state {
            SessionState::Running | SessionState::Paused => {
                self.state = SessionState::Paused;
                Ok(())
            }
            s => Err(Error::InvalidInput(format!("session is {s:?}, reset it first"))),
        }
    }

    pub fn resume(&mut self) -> Result<()> {
        match self.state {
            SessionState::Running | SessionState::Paused => {
                self.state = SessionState::Running;
                Ok(())
            }
            s => Err(Error::InvalidInput(format!("session is {s:?}, reset it first"))),
        }
    }

    /// Back to the initial state, paused, with the operator hold cleared.
    pub fn reset(&mut self) -> Result<()> {
        let cl = ClosedLoop::new(&self.cfg)?;
        let mut tracker = Tracker::new(&cl);
        tracker.add_violations(cl.monitor());
        self.cl = cl;
        self.tracker = tracker;
        self.state = SessionState::Paused;
        self.held_uo = 0.0;
        self.held_ct = None;
        self.pending = None;
        self.budget = 0.0;
        self.error = None;
        self.report = None;
        self.report_taken = false;
        self.check_horizon();
        Ok(())
    }

    pub fn set_timescale(&mut self, r: f64) -> Result<()> {
        check_timescale(r)?;
        self.timescale = r;
        Ok(())
    }

    /// Advances by `wall_dt` scaled by the timescale (when running) and
    /// returns the resulting frame.
    pub fn tick(&mut self, wall_dt: f64, now: f64) -> StateFrame {
        if let Some((u, ct)) = self.pending {
            if now - self.last_held_at >= MIN_SAMPLE_INTERVAL {
                self.hold(u, ct, now);
            }
        }
        if self.state == SessionState::Running && wall_dt > 0.0 {
            self.run_for(wall_dt * self.timescale);
        }
        self.frame()
    }

    /// Advances the simulation by `sim_dt` seconds regardless of the pause
    /// flag, carrying any fraction of a step over to the next call.
    pub fn run_for(&mut self, sim_dt: f64) {
        if matches!(self.state, SessionState::Finished | SessionState::Faulted) {
            return;
        }
        let dt = self.cl.dt();
        self.budget += sim_dt;
        let mut taken = 0;
        while self.budget >= dt * (1.0 - 1e-9) && !self.cl.finished() {
            if taken == self.opts.max_steps_per_tick {
                self.budget = 0.0;
                break;
            }
            if let Err(e) = self.step() {
                self.fault(e);
                return;
            }
            self.budget -= dt;
            taken += 1;
        }
        self.check_horizon();
    }

    fn evaluate(&self) -> Result<Evaluation> {
        self.cl.evaluate(self.held_uo)
    }

    fn step(&mut self) -> Result<()> {
        let ev = self.evaluate()?;
        self.tracker.observe(&self.cl, &ev, true);
        if self.cl.steps_done().is_multiple_of(self.cfg.decimate) {
            self.tracker.sample_phi(self.cl.t(), ev.phi);
        }
        let v = self.cl.advance(&ev)?;
        self.tracker.add_violations(v);
        Ok(())
    }

    fn check_horizon(&mut self) {
        if self.cl.finished() && self.state != SessionState::Finished {
            if let Ok(ev) = self.evaluate() {
                self.tracker.observe(&self.cl, &ev, false);
                self.tracker.sample_phi(self.cl.t(), ev.phi);
            }
            self.state = SessionState::Finished;
            self.report = Some(self.tracker.clone().report(&self.cfg.name, &self.cl, None));
        }
    }

    fn fault(&mut self, e: Error) {
        let msg = e.to_string();
        self.state = SessionState::Faulted;
        self.report = Some(self.tracker.clone().report(&self.cfg.name, &self.cl, Some(msg.clone())));
        self.error = Some(msg);
    }

    /// The end-of-session report, handed out once per run.
    pub fn take_report(&mut self) -> Option<RunReport> {
        if self.report_taken {
            return None;
        }
        let r = self.report.clone()?;
        self.report_taken = true;
        Some(r)
    }

    /// Snapshot of the current state with the decision the held sample
    /// would produce.
    pub fn frame(&mut self) -> StateFrame {
        self.seq += 1;
        let (x, theta) = self.cl.liquid_profile(FRAME_POINTS);
        let act = *self.cl.actuator();
        let base = StateFrame {
            seq: self.seq,
            state: self.state,
            t: self.cl.t(),
            s: self.cl.s(),
            s_r: self.cl.spec().s_r,
            qc: act.qc,
            p: act.p,
            x,
            theta,
            h1: f64::NAN,
            h2: f64::NAN,
            h3: f64::NAN,
            h_min: f64::NAN,
            u_o: None,
            u_lower: None,
            u_upper: None,
            u_applied: f64::NAN,
            clamp: None,
            violations: self.tracker.violations(),
            timescale: self.timescale,
            error: self.error.clone(),
        };
        match self.evaluate() {
            Ok(ev) => {
                let f = ev.decision.filter;
                StateFrame {
                    h1: ev.bundle.h1,
                    h2: ev.bundle.h2,
                    h3: ev.bundle.h3,
                    h_min: ev.bundle.h_min,
                    u_o: f.map(|f| f.u_operator),
                    u_lower: f.map(|f| f.u_lower),
                    u_upper: f.map(|f| f.u_upper),
                    u_applied: ev.decision.u,
                    clamp: f.map(|f| f.clamp),
                    ..base
                }
            }
            Err(e) => StateFrame { error: Some(e.to_string()), ..base },
        }
    }
}

fn check_timescale(r: f64) -> Result<()> {
    if r > 0.0 && r <= MAX_TIMESCALE {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("timescale must lie in (0, {MAX_TIMESCALE}], got {r}")))
    }
}
