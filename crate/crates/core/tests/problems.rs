use std::f64::consts::PI;

use drlm::io::load_reference_table;
use drlm::mesh::{Grid, ScalarField, VelocityField};
use drlm::problems::{
    centerline_against, check_halving, compute_errors, extract_centerline, lattice_vortex,
    run_cavity, CavityParams, ExactSolution, PlateauDetector, RateTable,
};
use drlm::scheme::State;
use drlm::SchemeKind;
use proptest::prelude::*;

fn d1(f: impl Fn(f64) -> f64, s: f64, h: f64) -> f64 {
    (f(s - 2.0 * h) - 8.0 * f(s - h) + 8.0 * f(s + h) - f(s + 2.0 * h)) / (12.0 * h)
}

fn d2(f: impl Fn(f64) -> f64, s: f64, h: f64) -> f64 {
    (-f(s - 2.0 * h) + 16.0 * f(s - h) - 30.0 * f(s) + 16.0 * f(s + h) - f(s + 2.0 * h))
        / (12.0 * h * h)
}

/// Residuals of the momentum and continuity equations by fourth-order
/// central differences of the closed form.
fn navier_stokes_residual<E: ExactSolution>(e: &E, x: f64, y: f64, t: f64) -> f64 {
    let h = 1e-3;
    let [u0, v0] = e.velocity(x, y, t);
    let mut worst = 0.0f64;
    for c in 0..2 {
        let dt = d1(|s| e.velocity(x, y, s)[c], t, h);
        let dx = d1(|s| e.velocity(s, y, t)[c], x, h);
        let dy = d1(|s| e.velocity(x, s, t)[c], y, h);
        let lap = d2(|s| e.velocity(s, y, t)[c], x, h) + d2(|s| e.velocity(x, s, t)[c], y, h);
        let dp = if c == 0 {
            d1(|s| e.pressure(s, y, t), x, h)
        } else {
            d1(|s| e.pressure(x, s, t), y, h)
        };
        worst = worst.max((dt + u0 * dx + v0 * dy + dp - e.nu() * lap).abs());
    }
    let div = d1(|s| e.velocity(s, y, t)[0], x, h) + d1(|s| e.velocity(x, s, t)[1], y, h);
    worst.max(div.abs())
}

proptest! {
    #[test]
    fn vortex_solves_the_equations(x in 0.0f64..1.0, y in 0.0f64..1.0, t in 0.0f64..1.0, nu in 0.001f64..0.2) {
        let e = lattice_vortex(nu).unwrap();
        let r = navier_stokes_residual(&e, x, y, t);
        prop_assert!(r <= 1e-6, "residual {r}");
    }

    #[test]
    fn error_norms_behave(scale in 0.1f64..10.0, shift in -5.0f64..5.0, q in 0.0f64..2.0) {
        let e = lattice_vortex(0.1).unwrap();
        let g = Grid::unit_square(16).unwrap();
        let exact_u = VelocityField::sample(&g, |x, y| e.velocity(x, y, 0.3));
        let exact_p = ScalarField::sample(&g, |x, y| e.pressure(x, y, 0.3));
        let bump = VelocityField::sample(&g, |x, y| [x * y, 1.0 - x]);

        let make = |k: f64, c: f64, q: f64| State {
            step: 0,
            t: 0.3,
            u: VelocityField::lincomb(1.0, &exact_u, k, &bump),
            p: {
                let mut p = exact_p.clone();
                p.values.iter_mut().for_each(|v| *v += c);
                p
            },
            q,
        };
        let exact = compute_errors(&make(0.0, 0.0, 1.0), &e);
        prop_assert!(exact.e_u == 0.0 && exact.e_q == 0.0);
        prop_assert!(exact.e_p < 1e-14);

        let one = compute_errors(&make(scale, shift, q), &e);
        let two = compute_errors(&make(2.0 * scale, 0.0, q), &e);
        prop_assert!((two.e_u - 2.0 * one.e_u).abs() <= 1e-12 * one.e_u);
        prop_assert!(one.e_p < 1e-12);
        prop_assert!((one.e_q - (1.0 - q).abs()).abs() < 1e-15);
    }
}

#[test]
fn vortex_decays_at_the_viscous_rate() {
    let e = lattice_vortex(0.05).unwrap();
    let [u0, _] = e.velocity(0.25, 0.25, 0.0);
    let [u1, _] = e.velocity(0.25, 0.25, 1.0);
    assert!((u1 / u0 - (-8.0 * 0.05 * PI * PI).exp()).abs() < 1e-15);
    assert!(lattice_vortex(0.0).is_err());
    assert!(lattice_vortex(f64::NAN).is_err());
}

#[test]
fn halving_sequences() {
    assert!(check_halving(&[0.5, 0.25, 0.125]).is_ok());
    assert!(check_halving(&[0.5, 0.2]).is_err());
    assert!(check_halving(&[0.5]).is_ok());
    assert!(check_halving(&[]).is_err());
    assert!(check_halving(&[0.5, -0.25]).is_err());
}

#[test]
fn rates_follow_the_error_ratios() {
    let mk = |e: f64| drlm::problems::ErrorReport {
        e_u: e,
        e_p: 2.0 * e,
        e_q: e * e,
        t: 1.0,
    };
    let t = RateTable::from_rows(
        &[0.4, 0.2, 0.1],
        vec![Ok(mk(0.4)), Ok(mk(0.2)), Err("diverged".into())],
    )
    .unwrap();
    assert!(!t.all_succeeded());
    assert!((t.rows[1].rate_u.unwrap() - 1.0).abs() < 1e-14);
    assert!((t.rows[1].rate_q.unwrap() - 2.0).abs() < 1e-14);
    assert!(t.rows[0].rate_u.is_none());
    assert!(t.rows[2].rate_u.is_none());
    assert_eq!(t.rows[2].failure.as_deref(), Some("diverged"));
}

#[test]
fn centerline_of_a_bilinear_field_is_exact() {
    let g = Grid::unit_square(10).unwrap();
    let f = |x: f64, y: f64| [0.3 + x - 2.0 * y + x * y, y - 0.5 * x];
    let vel = VelocityField::sample(&g, f);
    let ys = [0.0, 0.03, 0.5, 0.97, 1.0];
    let prof = extract_centerline(&vel, &ys, &ys).unwrap();
    for &(y, u) in &prof.u_line {
        assert!((u - f(0.5, y)[0]).abs() < 1e-12);
    }
    for &(x, v) in &prof.v_line {
        assert!((v - f(x, 0.5)[1]).abs() < 1e-12);
    }
    assert!(prof.max_deviation_u().is_none());
    assert!(extract_centerline(&vel, &[0.5, 0.2], &ys).is_err());
    assert!(extract_centerline(&vel, &[1.5], &ys).is_err());
}

#[test]
fn plateau_needs_a_full_quiet_window() {
    let mut d = PlateauDetector::new(1e-4);
    let tau = 0.01;
    let mut fired = None;
    for k in 0..=600 {
        let t = k as f64 * tau;
        // relaxes to a constant; changes <= 1e-4 per unit time from t ~ 3.3
        let e = 1.0 - (-4.0 * t).exp();
        if let Some(f) = d.push(t, e) {
            fired = Some(f);
            break;
        }
    }
    let f = fired.expect("fires");
    assert!(f > 4.2 && f < 4.4, "fired at {f}");

    let mut growing = PlateauDetector::new(1e-4);
    for k in 0..=500 {
        let t = k as f64 * 0.01;
        assert!(growing.push(t, 1.0 + 0.01 * t).is_none());
    }
    assert!(growing.last_change().unwrap() > 1e-4);
}

fn data(name: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

#[test]
fn shipped_reference_tables_load() {
    for re in ["1000", "5000"] {
        let u = load_reference_table(&data(&format!("ghia1982_re{re}_u.csv"))).unwrap();
        let v = load_reference_table(&data(&format!("ghia1982_re{re}_v.csv"))).unwrap();
        assert_eq!(u.rows.len(), 17);
        assert_eq!(v.rows.len(), 17);
        assert!(!u.source.is_empty());
        // wall values: lid on top, rest elsewhere
        assert_eq!(u.rows[0], (0.0, 0.0));
        assert_eq!(u.rows[16], (1.0, 1.0));
        assert_eq!(v.rows[0].1, 0.0);
        assert_eq!(v.rows[16].1, 0.0);
    }
}

#[test]
fn short_cavity_run_is_consistent() {
    let u_ref = load_reference_table(&data("ghia1982_re1000_u.csv")).unwrap();
    let v_ref = load_reference_table(&data("ghia1982_re1000_v.csv")).unwrap();
    let mut p = CavityParams::new(100.0, 1.0, 16, 0.01, 0.2, SchemeKind::Pdrlm1);
    p.snapshot_times = vec![0.1];
    let mut snaps = 0;
    let mut steps = 0;
    let out = run_cavity(
        &p,
        |d| {
            steps += 1;
            assert!(d.q > 0.0 && d.q <= 1.0 + 1e-12);
            Ok(())
        },
        |s| {
            snaps += 1;
            assert_eq!(s.step, 10);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!((steps, snaps), (20, 1));
    assert!(out.plateau_time.is_none());
    let prof = centerline_against(&out.state.u, &u_ref, &v_ref).unwrap();
    // the lid row is reproduced exactly through the trace
    assert_eq!(prof.u_line.last().unwrap().1, 1.0);
    assert!(prof.max_deviation_u().unwrap() > 0.0);

    p.snapshot_times = vec![0.015];
    assert!(run_cavity(&p, |_| Ok(()), |_| Ok(())).is_err());
    p.re = -1.0;
    assert!(run_cavity(&p, |_| Ok(()), |_| Ok(())).is_err());
}
