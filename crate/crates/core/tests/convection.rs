use std::f64::consts::PI;

use drlm::convection::{convect, convect_bilinear, trilinear_b};
use drlm::mesh::{inner_vel, Grid, VelocityField};
use drlm::problems::{lattice_vortex, ExactSolution};
use drlm::selftest::random_velocity;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vortex(g: &Grid) -> VelocityField {
    let e = lattice_vortex(0.1).unwrap();
    VelocityField::sample(g, |x, y| e.velocity(x, y, 0.0))
}

/// Max error of the advection of the vortex against
/// `(u . grad) u = (pi sin 4 pi x, -pi sin 4 pi y)`, skipping the two
/// face layers next to each wall.
fn vortex_advection_error(n: usize) -> f64 {
    let g = Grid::unit_square(n).unwrap();
    let c = convect(&vortex(&g));
    let mut e = 0.0f64;
    for j in 2..n - 2 {
        for i in 2..n - 1 {
            let (x, _) = g.u_face(i, j);
            e = e.max((c.u[g.u_idx(i, j)] - PI * (4.0 * PI * x).sin()).abs());
        }
    }
    for j in 2..n - 1 {
        for i in 2..n - 2 {
            let (_, y) = g.v_face(i, j);
            e = e.max((c.v[g.v_idx(i, j)] + PI * (4.0 * PI * y).sin()).abs());
        }
    }
    e
}

#[test]
fn vortex_advection_is_second_order() {
    let errs: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| vortex_advection_error(n))
        .collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate >= 1.9, "rate {rate}, errors {errs:?}");
    }
}

#[test]
fn skew_defect_shrinks_under_refinement() {
    // b(u, v, v) vanishes for the continuous operator when u is solenoidal
    // with zero normal trace; the discrete defect goes to 0.
    let defect = |n: usize| {
        let g = Grid::unit_square(n).unwrap();
        let u = drlm::problems::no_slip_box_velocity(&g);
        let v = VelocityField::sample(&g, |x, y| {
            let b = (PI * x).sin() * (PI * y).sin();
            [b * x.exp() * (1.0 + y), b * x * y * y]
        });
        trilinear_b(&u, &v, &v).abs()
    };
    let d: Vec<f64> = [16, 32, 64].iter().map(|&n| defect(n)).collect();
    assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
    assert!(d[2] < 1e-2, "{d:?}");
}

#[test]
fn self_advection_of_uniform_flow_vanishes() {
    let g = Grid::new(7, 5, 0.0, 2.0, -1.0, 1.0).unwrap();
    let u = VelocityField::sample(&g, |_, _| [0.3, -1.1]);
    assert!(convect(&u).max_abs() < 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn advection_is_bilinear(seed in any::<u64>(), n in 2usize..8, s in -2.0f64..2.0) {
        let g = Grid::new(n, n + 1, 0.0, 1.0, 0.0, 1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_velocity(&g, &mut rng, false);
        let b = random_velocity(&g, &mut rng, false);
        let c = random_velocity(&g, &mut rng, false);
        let w = random_velocity(&g, &mut rng, false);

        let ab = VelocityField::lincomb(1.0, &a, s, &b);
        let lhs = convect_bilinear(&ab, &c);
        let rhs = VelocityField::lincomb(1.0, &convect_bilinear(&a, &c), s, &convect_bilinear(&b, &c));
        prop_assert!(VelocityField::lincomb(1.0, &lhs, -1.0, &rhs).max_abs() < 1e-10);

        // linear in the second slot, trace included
        let lhs = convect_bilinear(&a, &ab);
        let rhs = VelocityField::lincomb(1.0, &convect_bilinear(&a, &a), s, &convect_bilinear(&a, &b));
        prop_assert!(VelocityField::lincomb(1.0, &lhs, -1.0, &rhs).max_abs() < 1e-10);

        let t = trilinear_b(&a, &c, &w);
        prop_assert!((t - inner_vel(&convect_bilinear(&a, &c), &w)).abs() <= 1e-12 * t.abs().max(1.0));
    }

    #[test]
    fn boundary_normal_faces_are_zero(seed in any::<u64>(), n in 2usize..8) {
        let g = Grid::unit_square(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_velocity(&g, &mut rng, false);
        let c = convect(&a);
        for j in 0..g.ny {
            prop_assert_eq!(c.u[g.u_idx(0, j)], 0.0);
            prop_assert_eq!(c.u[g.u_idx(g.nx, j)], 0.0);
        }
        for i in 0..g.nx {
            prop_assert_eq!(c.v[g.v_idx(i, 0)], 0.0);
            prop_assert_eq!(c.v[g.v_idx(i, g.ny)], 0.0);
        }
    }
}
