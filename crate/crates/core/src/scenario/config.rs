//! Flat `section.key = value` scenario files.
//!
//! ```text
//! # comment
//! geometry.s0 = 0.01 mm
//! controller.variant = nonov
//! ```
//!
//! Lengths accept an `mm` or `m` suffix. Unknown keys are rejected so typos
//! surface as errors rather than silently falling back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cbf::SetpointSpec;
use crate::control::{Controller, NonovGains, QpGains, TwoPhaseBounds};
use crate::error::{Error, Result};
use crate::model::{Grid, MaterialProperties};
use crate::solver::{Scheme, SolverConfig};
use crate::verification::SafetyTolerances;

/// How the liquid (and solid) start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialProfile {
    /// `theta0(x) = peak (1 - x/s0)`.
    Affine { peak: f64 },
    /// Samples on uniform positions spanning `[0, s0]`, linearly interpolated.
    Sampled(Vec<f64>),
}

/// The operator command `U_o(t)` fed to the safety filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorSignal {
    Zero,
    Constant(f64),
    /// `amplitude sin(2 pi t / period) + offset`.
    Sine { amplitude: f64, period: f64, offset: f64 },
    /// `(t, u)` pairs held from each time until the next.
    Samples(Vec<(f64, f64)>),
    /// Supplied at runtime by the operator service.
    Live,
}

impl OperatorSignal {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            OperatorSignal::Zero | OperatorSignal::Live => 0.0,
            OperatorSignal::Constant(u) => *u,
            OperatorSignal::Sine { amplitude, period, offset } => {
                amplitude * (2.0 * std::f64::consts::PI * t / period).sin() + offset
            }
            OperatorSignal::Samples(s) => {
                let i = s.partition_point(|p| p.0 <= t);
                if i == 0 {
                    0.0
                } else {
                    s[i - 1].1
                }
            }
        }
    }
}

/// Boundary heat loss on the solid side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Disturbance {
    Zero,
    Constant(f64),
    /// Independent uniform draws in `[0, max)`, each held for `hold` seconds.
    Random { max: f64, hold: f64 },
}

/// Second phase of a two-phase scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolidPhase {
    pub material: MaterialProperties,
    /// Initial solid excess at `x = L` (non-positive), affine from the interface.
    pub end_excess: f64,
    pub bounds: TwoPhaseBounds,
    pub disturbance: Disturbance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub material: MaterialProperties,
    pub s0: f64,
    pub length: f64,
    pub setpoint: SetpointSpec,
    pub initial: InitialProfile,
    pub qc0: f64,
    pub p0: Option<f64>,
    pub controller: Controller,
    pub operator: OperatorSignal,
    pub solver: SolverConfig,
    pub horizon: f64,
    pub decimate: usize,
    pub seed: u64,
    /// Explicit monitor tolerances; derived from the discretization if absent.
    pub tolerances: Option<SafetyTolerances>,
    pub solid: Option<SolidPhase>,
}

impl ScenarioConfig {
    pub fn is_two_phase(&self) -> bool {
        self.solid.is_some()
    }
}

/// Reads and parses a scenario file. Sampled operator files are resolved
/// relative to the scenario's directory.
pub fn load_config_file(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&text, Some(&base))
}

/// Parses a scenario document.
pub fn load_config(text: &str) -> Result<ScenarioConfig> {
    parse(text, None)
}

struct Entry {
    line: usize,
    value: String,
}

struct Doc {
    entries: BTreeMap<String, Entry>,
    used: std::cell::RefCell<Vec<String>>,
}

const KEYS: &[&str] = &[
    "name",
    "material.k",
    "material.rho",
    "material.cp",
    "material.dh",
    "material.tm",
    "geometry.s0",
    "geometry.length",
    "geometry.s_r",
    "geometry.t_star",
    "geometry.q_star",
    "initial.peak",
    "initial.samples",
    "actuator.order",
    "actuator.qc0",
    "actuator.p0",
    "controller.variant",
    "controller.k1",
    "controller.k2",
    "controller.c1",
    "controller.c2",
    "controller.c3",
    "controller.delta1",
    "controller.delta2",
    "operator.kind",
    "operator.value",
    "operator.amplitude",
    "operator.period",
    "operator.offset",
    "operator.file",
    "solver.n",
    "solver.dt",
    "solver.scheme",
    "solver.safety_factor",
    "solver.min_interface",
    "run.horizon",
    "run.decimate",
    "run.seed",
    "tolerance.temperature",
    "tolerance.interface",
    "tolerance.flux",
    "tolerance.cbf",
    "solid.k",
    "solid.rho",
    "solid.cp",
    "solid.dh",
    "solid.end_excess",
    "solid.t_bar_l",
    "solid.t_bar_s",
    "solid.eta_l",
    "solid.eta_s",
    "disturbance.kind",
    "disturbance.max",
    "disturbance.value",
    "disturbance.hold",
];

impl Doc {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Parse { line, msg: format!("unknown key `{key}`") });
            }
            let value = value.trim().to_string();
            if value.is_empty() {
                return Err(Error::Parse { line, msg: format!("`{key}` has no value") });
            }
            if let Some(prev) = entries.insert(key.clone(), Entry { line, value }) {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{key}` already set on line {}", prev.line),
                });
            }
        }
        Ok(Doc { entries, used: Default::default() })
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        self.used.borrow_mut().push(key.to_string());
        self.entries.get(key)
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn string(&self, key: &str) -> Option<String> {
        self.raw(key).map(|e| e.value.clone())
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        parse_number(&e.value).map(Some).map_err(|msg| Error::Parse { line: e.line, msg: format!("`{key}`: {msg}") })
    }

    fn length(&self, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        parse_length(&e.value)
            .map(Some)
            .map_err(|msg| Error::Parse { line: e.line, msg: format!("`{key}`: {msg}") })
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::InvalidInput(format!("missing required key `{key}`")))
    }

    fn integer(&self, key: &str) -> Result<Option<u64>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        e.value
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Parse { line: e.line, msg: format!("`{key}` must be a non-negative integer") })
    }

    fn invalid(&self, key: &str, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line_of(key), msg: format!("`{key}`: {}", msg.into()) }
    }

    /// Keys present in the document but never consulted for this scenario.
    fn unused(&self) -> Option<(String, usize)> {
        let used = self.used.borrow();
        self.entries
            .iter()
            .find(|(k, _)| !used.iter().any(|u| u == *k))
            .map(|(k, e)| (k.clone(), e.line))
    }
}

fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_length(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Some(v) = s.strip_suffix("mm") {
        parse_number(v).map(|v| v * 1e-3)
    } else if let Some(v) = s.strip_suffix('m') {
        parse_number(v)
    } else {
        parse_number(s)
    }
}

fn material(doc: &Doc, section: &str, base: MaterialProperties) -> Result<MaterialProperties> {
    let get = |field: &str, default: f64| -> Result<f64> {
        Ok(doc.number(&format!("{section}.{field}"))?.unwrap_or(default))
    };
    Ok(MaterialProperties {
        k: get("k", base.k)?,
        rho: get("rho", base.rho)?,
        cp: get("cp", base.cp)?,
        dh: get("dh", base.dh)?,
        tm: if section == "material" { get("tm", base.tm)? } else { base.tm },
    })
}

fn parse(text: &str, base_dir: Option<&PathBuf>) -> Result<ScenarioConfig> {
    let doc = Doc::parse(text)?;

    let name = doc.string("name").unwrap_or_else(|| "scenario".to_string());
    let material = material(&doc, "material", MaterialProperties::TI6AL4V)?;
    material.validate().map_err(|e| doc.invalid("material.k", e.to_string()))?;

    let s0 = doc.require("geometry.s0", doc.length("geometry.s0")?)?;
    let length = doc.require("geometry.length", doc.length("geometry.length")?)?;
    let s_r = doc.require("geometry.s_r", doc.length("geometry.s_r")?)?;
    let setpoint = SetpointSpec {
        s_r,
        t_star: doc.number("geometry.t_star")?,
        q_star: doc.number("geometry.q_star")?,
    };
    setpoint
        .validate(length, material.tm)
        .map_err(|e| doc.invalid("geometry.s_r", e.to_string()))?;

    let initial = match (doc.number("initial.peak")?, doc.string("initial.samples")) {
        (Some(_), Some(_)) => return Err(doc.invalid("initial.samples", "give either a peak or samples")),
        (Some(peak), None) => InitialProfile::Affine { peak },
        (None, Some(list)) => {
            let vals = list
                .split(',')
                .map(parse_number)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|m| doc.invalid("initial.samples", m))?;
            if vals.len() < 2 {
                return Err(doc.invalid("initial.samples", "need at least two samples"));
            }
            InitialProfile::Sampled(vals)
        }
        (None, None) => InitialProfile::Affine { peak: 0.0 },
    };

    let order = doc.integer("actuator.order")?.unwrap_or(1);
    let qc0 = doc.require("actuator.qc0", doc.number("actuator.qc0")?)?;
    let p0 = match order {
        1 => None,
        2 => Some(doc.number("actuator.p0")?.unwrap_or(0.0)),
        _ => return Err(doc.invalid("actuator.order", "must be 1 or 2")),
    };

    let variant = doc.require("controller.variant", doc.string("controller.variant"))?;
    let q_bar = setpoint.flux_ceiling(material.k, material.tm);
    let need_q_bar = || {
        q_bar.ok_or_else(|| doc.invalid("controller.variant", "needs geometry.t_star or geometry.q_star"))
    };
    let controller = match variant.as_str() {
        "nonov" | "nonov-upper" | "two-phase" => {
            let gains = nonov_gains(&doc, false)?;
            match variant.as_str() {
                "nonov" => Controller::Nonov { gains },
                "nonov-upper" => Controller::NonovUpper { gains, q_bar: need_q_bar()? },
                _ => Controller::TwoPhase { gains },
            }
        }
        "nonov-2" => Controller::NonovHigh { gains: nonov_gains(&doc, true)? },
        "qp" | "qp-upper" => {
            let get = |k: &str| -> Result<f64> { doc.require(k, doc.number(k)?) };
            let gains = QpGains::new(
                get("controller.k1")?,
                get("controller.k2")?,
                doc.number("controller.delta1")?.unwrap_or(0.0),
                doc.number("controller.delta2")?.unwrap_or(0.0),
            )
            .map_err(|e| doc.invalid("controller.k1", e.to_string()))?;
            if variant == "qp" {
                Controller::Qp { gains }
            } else {
                Controller::QpUpper { gains, q_bar: need_q_bar()? }
            }
        }
        other => return Err(doc.invalid("controller.variant", format!("unknown variant `{other}`"))),
    };
    if controller.actuator_order() != order as u8 {
        return Err(doc.invalid(
            "actuator.order",
            format!("controller `{}` drives an order-{} actuator", controller.name(), controller.actuator_order()),
        ));
    }

    let operator = operator(&doc, base_dir)?;
    if !controller.uses_operator() && operator != OperatorSignal::Zero {
        return Err(doc.invalid("operator.kind", "only the QP filters take an operator input"));
    }

    let n = doc.integer("solver.n")?.unwrap_or(200) as usize;
    let grid = Grid::new(n).map_err(|e| doc.invalid("solver.n", e.to_string()))?;
    let scheme = match doc.string("solver.scheme").as_deref() {
        None | Some("explicit") => Scheme::Explicit,
        Some("implicit") => Scheme::Implicit,
        Some(other) => return Err(doc.invalid("solver.scheme", format!("unknown scheme `{other}`"))),
    };
    let safety_factor = doc.number("solver.safety_factor")?.unwrap_or(0.4);
    let alpha = material.derive()?.alpha;
    let dt = match doc.number("solver.dt")? {
        Some(dt) => dt,
        None if scheme == Scheme::Explicit => SolverConfig::stable_dt(grid, safety_factor, alpha, s0),
        None => return Err(doc.invalid("solver.scheme", "the implicit scheme needs solver.dt")),
    };
    let mut solver = SolverConfig::new(grid, dt)
        .and_then(|c| c.with_safety_factor(safety_factor))
        .map_err(|e| doc.invalid("solver.dt", e.to_string()))?
        .with_scheme(scheme);
    if let Some(m) = doc.length("solver.min_interface")? {
        solver = solver.with_min_interface(m).map_err(|e| doc.invalid("solver.min_interface", e.to_string()))?;
    }

    let horizon = doc.require("run.horizon", doc.number("run.horizon")?)?;
    if !(horizon >= 0.0) {
        return Err(doc.invalid("run.horizon", "must be non-negative"));
    }
    let decimate = doc.integer("run.decimate")?.unwrap_or(1).max(1) as usize;
    let seed = doc.integer("run.seed")?.unwrap_or(0);

    let tol_keys = ["tolerance.temperature", "tolerance.interface", "tolerance.flux", "tolerance.cbf"];
    let tol_vals = tol_keys.iter().map(|k| doc.number(k)).collect::<Result<Vec<_>>>()?;
    let tolerances = if tol_vals.iter().all(Option::is_none) {
        None
    } else {
        let t = SafetyTolerances {
            tol_t: tol_vals[0].unwrap_or(0.0),
            tol_s: tol_vals[1].unwrap_or(0.0),
            tol_q: tol_vals[2].unwrap_or(0.0),
            tol_cbf: tol_vals[3].unwrap_or(0.0),
        };
        t.validate().map_err(|e| doc.invalid("tolerance.cbf", e.to_string()))?;
        Some(t)
    };

    let solid = if matches!(controller, Controller::TwoPhase { .. }) {
        Some(solid_phase(&doc, material)?)
    } else {
        None
    };

    if let Some((key, line)) = doc.unused() {
        return Err(Error::Parse {
            line,
            msg: format!("`{key}` does not apply to a `{variant}` scenario"),
        });
    }

    Ok(ScenarioConfig {
        name,
        material,
        s0,
        length,
        setpoint,
        initial,
        qc0,
        p0,
        controller,
        operator,
        solver,
        horizon,
        decimate,
        seed,
        tolerances,
        solid,
    })
}

fn nonov_gains(doc: &Doc, order_two: bool) -> Result<NonovGains> {
    let k1 = doc.number("controller.k1")?;
    let k2 = doc.number("controller.k2")?;
    let c1 = doc.number("controller.c1")?;
    let c2 = doc.number("controller.c2")?;
    let mut gains = match (k1, k2, c1, c2) {
        (Some(k1), Some(k2), None, None) => {
            NonovGains::from_feedback(k1, k2).map_err(|e| doc.invalid("controller.k1", e.to_string()))?
        }
        (None, None, Some(c1), Some(c2)) => {
            NonovGains::new(c1, c2).map_err(|e| doc.invalid("controller.c1", e.to_string()))?
        }
        _ => {
            return Err(doc.invalid(
                "controller.variant",
                "give either controller.k1 and controller.k2, or controller.c1 and controller.c2",
            ))
        }
    };
    let c3 = doc.number("controller.c3")?;
    match (order_two, c3) {
        (true, Some(c3)) => {
            gains = NonovGains::order_two(gains.c1, gains.c2, c3)
                .map_err(|e| doc.invalid("controller.c3", e.to_string()))?;
        }
        (true, None) => return Err(doc.invalid("controller.variant", "missing controller.c3")),
        (false, Some(_)) => return Err(doc.invalid("controller.c3", "only the nonov-2 variant uses c3")),
        (false, None) => {}
    }
    Ok(gains)
}

fn operator(doc: &Doc, base_dir: Option<&PathBuf>) -> Result<OperatorSignal> {
    let kind = doc.string("operator.kind").unwrap_or_else(|| "zero".to_string());
    let num = |k: &str| -> Result<f64> { doc.require(k, doc.number(k)?) };
    Ok(match kind.as_str() {
        "zero" => OperatorSignal::Zero,
        "constant" => OperatorSignal::Constant(num("operator.value")?),
        "sine" => {
            let period = num("operator.period")?;
            if !(period > 0.0) {
                return Err(doc.invalid("operator.period", "must be positive"));
            }
            OperatorSignal::Sine {
                amplitude: num("operator.amplitude")?,
                period,
                offset: doc.number("operator.offset")?.unwrap_or(0.0),
            }
        }
        "file" => {
            let file = doc.require("operator.file", doc.string("operator.file"))?;
            let path = match base_dir {
                Some(b) => b.join(&file),
                None => PathBuf::from(&file),
            };
            OperatorSignal::Samples(read_samples(&path).map_err(|e| doc.invalid("operator.file", e.to_string()))?)
        }
        "live" => OperatorSignal::Live,
        other => return Err(doc.invalid("operator.kind", format!("unknown kind `{other}`"))),
    })
}

/// Two-column `t,u` CSV without a header, times increasing.
fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for rec in rdr.deserialize() {
        let (t, u): (f64, f64) = rec?;
        if !(t.is_finite() && u.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample ({t}, {u})")));
        }
        if out.last().is_some_and(|p| p.0 >= t) {
            return Err(Error::InvalidInput(format!("sample times must increase (at t = {t})")));
        }
        out.push((t, u));
    }
    Ok(out)
}

fn solid_phase(doc: &Doc, liquid: MaterialProperties) -> Result<SolidPhase> {
    let material = material(doc, "solid", liquid)?;
    material.validate().map_err(|e| doc.invalid("solid.k", e.to_string()))?;
    let end_excess = doc.number("solid.end_excess")?.unwrap_or(0.0);
    if end_excess > 0.0 {
        return Err(doc.invalid("solid.end_excess", "the solid starts at or below melting"));
    }
    let num = |k: &str| -> Result<f64> { doc.require(k, doc.number(k)?) };
    let disturbance = match doc.string("disturbance.kind").as_deref().unwrap_or("zero") {
        "zero" => Disturbance::Zero,
        "constant" => Disturbance::Constant(num("disturbance.value")?),
        "random" => Disturbance::Random {
            max: num("disturbance.max")?,
            hold: num("disturbance.hold")?,
        },
        other => return Err(doc.invalid("disturbance.kind", format!("unknown kind `{other}`"))),
    };
    let qf_bar = match disturbance {
        Disturbance::Zero => 0.0,
        Disturbance::Constant(v) => v,
        Disturbance::Random { max, hold } => {
            if !(hold > 0.0) {
                return Err(doc.invalid("disturbance.hold", "must be positive"));
            }
            max
        }
    };
    if qf_bar < 0.0 {
        return Err(doc.invalid("disturbance.kind", "the heat loss must be non-negative"));
    }
    Ok(SolidPhase {
        material,
        end_excess,
        bounds: TwoPhaseBounds {
            t_bar_l: num("solid.t_bar_l")?,
            t_bar_s: num("solid.t_bar_s")?,
            eta_l: num("solid.eta_l")?,
            eta_s: num("solid.eta_s")?,
            qf_bar,
        },
        disturbance,
    })
}
