//! Scenario files, batch closed-loop runs, and their CSV/JSON outputs.

mod config;
mod engine;

pub use config::{
    load_config, load_config_file, Disturbance, InitialProfile, OperatorSignal, ScenarioConfig, SolidPhase,
};
pub use engine::{default_tolerances, ClosedLoop, Evaluation, Tracker, TrajectoryRecord, CSV_COLUMNS};

use std::path::Path;

use crate::error::{Error, Result};
use crate::verification::RunReport;

/// Trajectory and report of a finished (or failed) run.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub report: RunReport,
    /// Numerical failure that stopped the run early. The records up to it are
    /// kept.
    pub failure: Option<Error>,
}

/// Runs a configured scenario to its horizon.
///
/// Configuration and assumption problems are returned as errors before any
/// step is taken. Solver failures end the run early and are reported in
/// [`RunOutput::failure`].
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let mut cl = ClosedLoop::new(cfg)?;
    let mut tracker = Tracker::new(&cl);
    tracker.add_violations(cl.monitor());
    let mut records = Vec::new();
    let mut failure = None;
    loop {
        let ev = cl.evaluate(cfg.operator.at(cl.t()))?;
        let finished = cl.finished();
        tracker.observe(&cl, &ev, !finished);
        if cl.steps_done() % cfg.decimate == 0 || finished {
            records.push(cl.record(&ev));
            tracker.sample_phi(cl.t(), ev.phi);
        }
        if finished {
            break;
        }
        match cl.advance(&ev) {
            Ok(v) => tracker.add_violations(v),
            Err(e) => {
                // Keep the last state that was reached.
                let ev = cl.evaluate(cfg.operator.at(cl.t()))?;
                if records.last().map(|r| r.t) != Some(cl.t()) {
                    records.push(cl.record(&ev));
                }
                failure = Some(e);
                break;
            }
        }
    }
    let report = tracker.report(&cfg.name, &cl, failure.as_ref().map(|e| e.to_string()));
    Ok(RunOutput { records, report, failure })
}

/// Runs independent scenarios on up to `jobs` worker threads. Results come
/// back in input order.
pub fn run_batch(cfgs: &[ScenarioConfig], jobs: usize) -> Vec<Result<RunOutput>> {
    let jobs = jobs.clamp(1, cfgs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunOutput>>>> =
        cfgs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(cfg) = cfgs.get(i) else { break };
                *slots[i].lock().expect("worker panicked") = Some(run_scenario(cfg));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("worker panicked").expect("every slot filled"))
        .collect()
}

pub fn write_trajectory_csv<W: std::io::Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trajectory.csv` and `report.json` into `dir`, creating it.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join("trajectory.csv"))?;
    write_trajectory_csv(std::io::BufWriter::new(csv), &output.records)?;
    let json = std::fs::File::create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(json), &output.report)?;
    Ok(())
}
