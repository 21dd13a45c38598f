mod common;

use common::{bundled, median, scenario_path};
use stefan_cbf::control::{Clamp, Controller};
use stefan_cbf::scenario::{
    load_config, load_config_file, run_batch, run_scenario, write_outputs, write_trajectory_csv, OperatorSignal,
    CSV_COLUMNS,
};
use stefan_cbf::verification::ViolationKind;
use stefan_cbf::Error;

const BUNDLED: [&str; 5] =
    ["nonovershooting.cfg", "qp_sine.cfg", "upper_bound_stress.cfg", "order_two.cfg", "two_phase.cfg"];

fn with(name: &str, edits: &[(&str, &str)]) -> String {
    let mut text = std::fs::read_to_string(scenario_path(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{name} has no `{from}`");
        text = text.replace(from, to);
    }
    text
}

#[test]
fn bundled_scenarios_load() {
    for name in BUNDLED {
        bundled(name);
    }
}

#[test]
fn nonovershooting_config_carries_the_case_study_gains() {
    let c = bundled("nonovershooting.cfg");
    let Controller::Nonov { gains } = c.controller else { panic!("{:?}", c.controller) };
    assert!((gains.c1 + gains.c2 - 64.4).abs() < 1e-12);
    assert!((gains.c1 * gains.c2 - 973.0).abs() < 1e-9);
    assert_eq!((c.s0, c.setpoint.s_r), (1e-5, 2e-4));
}

#[test]
fn qp_sine_config_carries_the_operator_signal() {
    let c = bundled("qp_sine.cfg");
    assert_eq!(c.operator, OperatorSignal::Sine { amplitude: 1.14e7, period: 0.02, offset: -5e5 });
    let Controller::Qp { gains } = c.controller else { panic!() };
    assert_eq!((gains.k1, gains.k2, gains.delta1, gains.delta2), (64.4, 973.0, 129.0, 195.0));
}

#[test]
fn setpoint_below_the_initial_front_is_rejected() {
    let text = with("nonovershooting.cfg", &[("geometry.s_r = 0.2 mm", "geometry.s_r = 0.005 mm")]);
    let cfg = load_config(&text).unwrap();
    match run_scenario(&cfg) {
        Err(Error::Assumptions(report)) => {
            let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
            assert_eq!(failed, ["setpoint beyond stored heat"]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn zero_horizon_gives_one_row() {
    let text = with("qp_sine.cfg", &[("run.horizon = 0.4", "run.horizon = 0")]);
    let out = run_scenario(&load_config(&text).unwrap()).unwrap();
    assert_eq!(out.records.len(), 1);
    assert!(out.report.violations.is_empty());
    assert_eq!(out.report.steps, 0);
}

#[test]
fn identical_configs_give_identical_csv() {
    let cfg = bundled("two_phase.cfg");
    let csv = |cfg| {
        let out = run_scenario(cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &out.records).unwrap();
        buf
    };
    let a = csv(&cfg);
    assert_eq!(a, csv(&cfg));
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(a, csv(&other));
}

#[test]
fn csv_layout() {
    let out = run_scenario(&bundled("nonovershooting.cfg")).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &out.records[..2]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), CSV_COLUMNS.len());
    // p, U_o, U_lower, U_upper, h2_star, h4, h5 and clamp do not apply
    for col in ["p", "U_o", "U_lower", "U_upper", "h2_star", "h4", "h5", "clamp"] {
        let i = CSV_COLUMNS.iter().position(|c| *c == col).unwrap();
        assert_eq!(row[i], "", "{col}");
    }

    let mut empty = Vec::new();
    write_trajectory_csv(&mut empty, &[]).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap().trim(), CSV_COLUMNS.join(","));
}

#[test]
fn records_are_decimated_and_time_ordered() {
    let cfg = bundled("nonovershooting.cfg");
    let out = run_scenario(&cfg).unwrap();
    // 40000 steps kept every 10th, plus the start
    assert_eq!(out.records.len(), 4001);
    assert!(out.records.windows(2).all(|w| w[0].t < w[1].t));
    assert!((out.records.last().unwrap().t - cfg.horizon).abs() < 1e-12);
}

#[test]
fn actuator_integrates_the_held_input_exactly() {
    let mut cfg = bundled("qp_sine.cfg");
    cfg.horizon = 0.01;
    cfg.decimate = 1;
    let out = run_scenario(&cfg).unwrap();
    for w in out.records.windows(2) {
        let dt = w[1].t - w[0].t;
        assert!((w[1].qc - (w[0].qc + w[0].u_applied * dt)).abs() <= 1e-9 * w[0].qc.abs().max(1.0));
    }
}

#[test]
fn filtered_input_is_the_median_of_the_bounds_and_command() {
    let mut cfg = bundled("upper_bound_stress.cfg");
    cfg.decimate = 1;
    cfg.horizon = 0.05;
    let out = run_scenario(&cfg).unwrap();
    for r in &out.records {
        let (lo, hi, uo) = (r.u_lower.unwrap(), r.u_upper.unwrap(), r.u_o.unwrap());
        assert_eq!(r.u_applied, median(lo, uo, hi));
        assert_eq!(r.clamp == Some(Clamp::InfeasibleResolved), lo > hi);
    }
}

#[test]
fn coarse_sampling_is_caught_by_the_monitor() {
    // A 30 ms hold on a 40/s feedback is far outside the continuous-time design.
    let text = with("nonovershooting.cfg", &[("solver.dt = 1e-5", "solver.dt = 3e-2"), ("solver.n = 100", "solver.n = 20")]);
    let out = run_scenario(&load_config(&text).unwrap()).unwrap();
    assert!(out.failure.is_none());
    let kinds: Vec<_> = out.report.violations.iter().map(|v| v.kind).collect();
    assert!(kinds.contains(&ViolationKind::NegativeFlux), "{kinds:?}");
}

#[test]
fn solver_failure_keeps_the_partial_trajectory() {
    let text = with("nonovershooting.cfg", &[("solver.dt = 1e-5", "solver.dt = 1e-1"), ("solver.n = 100", "solver.n = 20")]);
    let out = run_scenario(&load_config(&text).unwrap()).unwrap();
    let e = out.failure.as_ref().expect("the run should fail");
    assert!(e.is_numerical());
    assert!(out.records.len() >= 2);
    assert_eq!(out.report.error.as_deref(), Some(e.to_string().as_str()));
}

#[test]
fn batch_results_keep_input_order() {
    let cfgs: Vec<_> = ["qp_sine.cfg", "nonovershooting.cfg", "order_two.cfg"]
        .iter()
        .map(|n| {
            let mut c = bundled(n);
            c.horizon = 0.02;
            c
        })
        .collect();
    let serial: Vec<_> = cfgs.iter().map(|c| run_scenario(c).unwrap().records).collect();
    for (i, r) in run_batch(&cfgs, 3).into_iter().enumerate() {
        let r = r.unwrap();
        assert_eq!(r.report.scenario, cfgs[i].name);
        assert_eq!(r.records, serial[i]);
    }
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled("qp_sine.cfg");
    cfg.horizon = 0.01;
    let out = run_scenario(&cfg).unwrap();
    write_outputs(dir.path(), &out).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["controller"], "qp");
    assert!(report["clamp_stats"]["steps"].as_u64().unwrap() > 0);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), out.records.len() + 1);
}

#[test]
fn sampled_operator_file_is_resolved_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.csv"), "# t, u\n0, 1e6\n0.005, -1e9\n").unwrap();
    let text = with(
        "qp_sine.cfg",
        &[(
            "operator.kind = sine\noperator.amplitude = 1.14e7\noperator.period = 0.02\noperator.offset = -5e5",
            "operator.kind = file\noperator.file = u.csv",
        )],
    );
    std::fs::write(dir.path().join("run.cfg"), text).unwrap();
    let cfg = load_config_file(&dir.path().join("run.cfg")).unwrap();
    assert_eq!(cfg.operator, OperatorSignal::Samples(vec![(0.0, 1e6), (0.005, -1e9)]));
}

#[test]
fn operator_signal_needs_a_filter() {
    let text = format!("{}\noperator.kind = constant\noperator.value = 1\n", std::fs::read_to_string(scenario_path("nonovershooting.cfg")).unwrap());
    assert!(matches!(load_config(&text), Err(Error::Parse { .. })));
}
