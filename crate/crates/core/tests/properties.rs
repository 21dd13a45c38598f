use proptest::prelude::*;

use stefan_cbf::cbf::{sigma_one_phase, SetpointSpec};
use stefan_cbf::model::{ActuatorState, DerivedConstants, Grid, OnePhaseState};
use stefan_cbf::solver::{step, Scheme, SolverConfig};

fn unit() -> DerivedConstants {
    DerivedConstants::nondimensional(1.0, 1.0, 1.0)
}

/// Runs `steps` implicit steps with the flux drawn from `fluxes`, held for
/// `hold` steps each.
fn run(
    s0: f64,
    peak: f64,
    n: usize,
    dt: f64,
    fluxes: &[f64],
    hold: usize,
    mut check: impl FnMut(&OnePhaseState, &OnePhaseState, f64),
) {
    let consts = unit();
    let cfg = SolverConfig::new(Grid::new(n).unwrap(), dt).unwrap().with_scheme(Scheme::Implicit);
    let mut state = OnePhaseState::affine(cfg.grid, s0, peak).unwrap();
    for q in fluxes.iter().flat_map(|q| std::iter::repeat_n(*q, hold)) {
        let next = step(&state, q, &consts, &cfg).unwrap();
        check(&state, &next, q);
        state = next;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heating_never_freezes_or_cools_below_melting(
        s0 in 0.05f64..1.0,
        peak in 0.0f64..5.0,
        n in 10usize..60,
        dt in 1e-5f64..1e-3,
        fluxes in prop::collection::vec(0.0f64..20.0, 1..10),
    ) {
        run(s0, peak, n, dt, &fluxes, 20, |prev, next, _| {
            assert!(next.s() >= prev.s(), "s fell from {} to {}", prev.s(), next.s());
            assert!(next.min_theta() >= -1e-12, "theta {}", next.min_theta());
        });
    }

    #[test]
    fn energy_deficit_falls_by_the_delivered_heat(
        s0 in 0.2f64..1.0,
        peak in 0.0f64..2.0,
        fluxes in prop::collection::vec(0.0f64..5.0, 1..6),
    ) {
        let consts = unit();
        let spec = SetpointSpec::new(2.0);
        let dt = 1e-4;
        let mut delivered = 0.0;
        let mut first = None;
        let mut last = 0.0;
        run(s0, peak, 100, dt, &fluxes, 200, |prev, next, q| {
            first.get_or_insert(sigma_one_phase(prev, &consts, &spec));
            delivered += q * dt;
            last = sigma_one_phase(next, &consts, &spec);
        });
        let drop = first.unwrap() - last;
        let scale = delivered.max(peak * s0).max(1e-3);
        prop_assert!((drop - delivered).abs() <= 5e-3 * scale, "drop {drop}, delivered {delivered}");
    }

    #[test]
    fn actuator_is_affine_in_the_held_input(
        qc in -1e6f64..1e6,
        p in -1e6f64..1e6,
        u in -1e9f64..1e9,
        dt in 1e-7f64..1e-2,
    ) {
        let a = ActuatorState::first_order(qc).advance(u, dt);
        prop_assert_eq!(a.qc, qc + u * dt);
        let b = ActuatorState::second_order(qc, p).advance(u, dt);
        let want = qc + p * dt + 0.5 * u * dt * dt;
        prop_assert!((b.qc - want).abs() <= 1e-12 * (qc.abs() + (p * dt).abs() + (u * dt * dt).abs()));
        prop_assert_eq!(b.p, Some(p + u * dt));
    }
}
