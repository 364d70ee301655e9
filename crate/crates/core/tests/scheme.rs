use drlm::mesh::Grid;
use drlm::oracle::compare_pdrlm1_step;
use drlm::problems::{no_slip_box_state, run_vortex};
use drlm::scheme::{
    solve_multiplier_quadratic, step_pdrlm1, Integrator, NoSlip, SchemeConfig, State,
};
use drlm::{Error, SchemeKind, SolverConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn negative_constant_term_gives_the_positive_root(
        a in 1e-3f64..1e3,
        b in -1e3f64..1e3,
        c in -1e3f64..-1e-3,
        q_prev in -2.0f64..2.0,
    ) {
        let q = solve_multiplier_quadratic(a, b, c, q_prev).unwrap();
        prop_assert!(q > 0.0);
        let scale = (a * q * q).abs() + (b * q).abs() + c.abs();
        prop_assert!((a * q * q + b * q + c).abs() <= 1e-13 * scale);
        // the other root c / (a q) is negative
        prop_assert!(c / (a * q) < 0.0);
    }

    #[test]
    fn nonnegative_constant_term_picks_the_nearest_root(
        r1 in -3.0f64..3.0,
        r2 in -3.0f64..3.0,
        a in 0.1f64..10.0,
        q_prev in -3.0f64..3.0,
    ) {
        prop_assume!(r1 * r2 >= 0.0 && (r1 - r2).abs() > 1e-3);
        let (b, c) = (-a * (r1 + r2), a * r1 * r2);
        let q = solve_multiplier_quadratic(a, b, c, q_prev).unwrap();
        let want = if (r1 - q_prev).abs() <= (r2 - q_prev).abs() { r1 } else { r2 };
        prop_assert!((q - want).abs() <= 1e-9 * want.abs().max(1.0), "{q} vs {want}");
    }

    #[test]
    fn complex_roots_are_reported(a in 0.1f64..10.0, b in -1.0f64..1.0, extra in 0.1f64..10.0) {
        let c = b * b / (4.0 * a) + extra;
        let r = solve_multiplier_quadratic(a, b, c, 1.0);
        let unsolvable = matches!(r, Err(Error::MultiplierUnsolvable { .. }));
        prop_assert!(unsolvable);
    }
}

#[test]
fn nonpositive_leading_coefficient_is_rejected() {
    for a in [0.0, -1.0, f64::NAN] {
        assert!(matches!(
            solve_multiplier_quadratic(a, 0.0, -1.0, 1.0),
            Err(Error::Contract(_))
        ));
    }
}

fn box_config(kind: SchemeKind, tau: f64, nu: f64) -> SchemeConfig {
    SchemeConfig::new(kind, tau, 1.0, nu).unwrap()
}

#[test]
fn rest_is_a_fixed_point_of_every_scheme() {
    let g = Grid::unit_square(8).unwrap();
    for kind in [
        SchemeKind::Pdrlm1,
        SchemeKind::Pdrlm2,
        SchemeKind::BaselinePc,
    ] {
        let setup = NoSlip;
        let mut it = Integrator::new(box_config(kind, 0.1, 0.01), &setup, State::zero(&g)).unwrap();
        let diags = it.run_until(0.5).unwrap();
        assert_eq!(diags.len(), 5);
        let s = it.state();
        assert_eq!(s.u.max_abs(), 0.0, "{kind}");
        assert_eq!(s.p.max_abs(), 0.0, "{kind}");
        assert_eq!(s.q, 1.0, "{kind}");
        assert!(diags.iter().all(|d| d.k == 0.0 && d.div_inf == 0.0));
    }
}

#[test]
fn modified_energy_is_non_increasing_in_the_box() {
    let g = Grid::unit_square(16).unwrap();
    for tau in [0.01, 0.1, 0.5] {
        let init = no_slip_box_state(&g);
        let k0 = 0.5 * drlm::mesh::inner_vel(&init.u, &init.u);
        let setup = NoSlip;
        let mut it =
            Integrator::new(box_config(SchemeKind::Pdrlm1, tau, 0.01), &setup, init).unwrap();
        let mut prev = k0;
        for _ in 0..20 {
            let d = it.advance().unwrap();
            assert!(
                d.e_mod <= prev + 1e-10 * (k0 + 1.0),
                "tau {tau} step {}",
                d.step
            );
            let q = d.quad.unwrap();
            assert!(q.a > 0.0 && q.c < 0.0);
            prev = d.e_mod;
        }
    }
}

#[test]
fn stokes_multiplier_never_decreases() {
    // without advection the second branch vanishes: A = 2 theta, B = 0 and
    // Q^2 = Q_n^2 + ||u_hat1 - u^n||^2 / (2 theta)
    let g = Grid::unit_square(12).unwrap();
    let mut cfg = box_config(SchemeKind::Pdrlm1, 0.05, 0.02);
    cfg.convection = false;
    let setup = NoSlip;
    let mut it = Integrator::new(cfg, &setup, no_slip_box_state(&g)).unwrap();
    let mut q_prev = 1.0;
    for _ in 0..10 {
        let d = it.advance().unwrap();
        let quad = d.quad.unwrap();
        assert!((quad.a - 2.0).abs() < 1e-14);
        assert!(quad.b.abs() < 1e-14);
        assert!(d.q >= q_prev);
        q_prev = d.q;
    }
}

#[test]
fn second_order_energy_is_non_increasing_for_small_steps() {
    let g = Grid::unit_square(16).unwrap();
    let setup = NoSlip;
    let mut it = Integrator::new(
        box_config(SchemeKind::Pdrlm2, 0.005, 0.01),
        &setup,
        no_slip_box_state(&g),
    )
    .unwrap();
    let first = it.advance().unwrap();
    assert_eq!(first.q, 1.0);
    assert!(first.e_bdf2.is_none());
    let mut prev = f64::INFINITY;
    for _ in 0..60 {
        let d = it.advance().unwrap();
        let e = d.e_bdf2.unwrap();
        assert!(e <= prev + 1e-10, "step {}", d.step);
        prev = e;
    }
}

#[test]
fn baseline_energy_law_holds_without_advection() {
    let g = Grid::unit_square(16).unwrap();
    let mut cfg = box_config(SchemeKind::BaselinePc, 0.05, 0.05);
    cfg.convection = false;
    let setup = NoSlip;
    let mut it = Integrator::new(cfg, &setup, no_slip_box_state(&g)).unwrap();
    let mut k_prev = f64::INFINITY;
    for _ in 0..20 {
        let d = it.advance().unwrap();
        assert!(d.residual("energy").unwrap() < 1e-10);
        assert!(d.k < k_prev);
        k_prev = d.k;
    }
}

#[test]
fn invariant_violation_carries_the_step_record() {
    let g = Grid::unit_square(8).unwrap();
    let mut cfg = box_config(SchemeKind::Pdrlm1, 0.1, 0.01);
    cfg.invariant_rel_tol = 1e-300;
    match step_pdrlm1(&no_slip_box_state(&g), &cfg, &NoSlip) {
        Err(Error::Invariant { diagnostics, .. }) => assert_eq!(diagnostics.step, 1),
        other => panic!("expected an invariant failure, got {other:?}"),
    }
    cfg.assert_invariants = false;
    assert!(step_pdrlm1(&no_slip_box_state(&g), &cfg, &NoSlip).is_ok());
}

#[test]
fn modular_step_matches_dense_oracle_on_rectangles() {
    for (i, g) in [
        Grid::new(4, 3, 0.0, 1.0, 0.0, 0.8).unwrap(),
        Grid::new(3, 5, -0.5, 0.5, 0.0, 2.0).unwrap(),
    ]
    .iter()
    .enumerate()
    {
        for seed in 0..3 {
            let c = compare_pdrlm1_step(g, 100 * i as u64 + seed, 0.02, 0.5, 0.1).unwrap();
            assert!(c.max() < 1e-11, "grid {i} seed {seed}: {c:?}");
        }
    }
}

#[test]
fn vortex_errors_shrink_with_the_step() {
    let solver = SolverConfig::default();
    let run = |kind, tau| {
        run_vortex(0.1, 1.0, 32, tau, 0.5, kind, &solver, true, |_| Ok(()))
            .unwrap()
            .1
    };
    for kind in [
        SchemeKind::Pdrlm1,
        SchemeKind::Pdrlm2,
        SchemeKind::BaselinePc,
    ] {
        let coarse = run(kind, 0.1);
        let fine = run(kind, 0.025);
        assert!(fine.e_u < coarse.e_u, "{kind}: {coarse:?} {fine:?}");
        assert!(fine.e_p < coarse.e_p, "{kind}: {coarse:?} {fine:?}");
    }
}

#[test]
fn integrator_is_deterministic() {
    let g = Grid::unit_square(16).unwrap();
    let run = || {
        let setup = NoSlip;
        let mut it = Integrator::new(
            box_config(SchemeKind::Pdrlm2, 0.01, 0.01),
            &setup,
            no_slip_box_state(&g),
        )
        .unwrap();
        it.run_until(0.1).unwrap();
        it.into_state()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.u.u, b.u.u);
    assert_eq!(a.u.v, b.u.v);
    assert_eq!(a.p.values, b.p.values);
    assert_eq!(a.q.to_bits(), b.q.to_bits());
}
