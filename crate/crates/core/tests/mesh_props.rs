use std::f64::consts::PI;

use drlm::mesh::{
    divergence, grad_inner_cell, grad_inner_vel, gradient, inner_cell, inner_vel,
    laplacian_velocity, Grid, ScalarField, VelocityField,
};
use drlm::problems::{lattice_vortex, ExactSolution};
use drlm::scheme::project_divergence_free;
use drlm::selftest::{random_scalar, random_velocity};
use drlm::SolverConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (
        2usize..9,
        2usize..9,
        0.2f64..3.0,
        0.2f64..3.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
    )
        .prop_map(|(nx, ny, lx, ly, x0, y0)| Grid::new(nx, ny, x0, x0 + lx, y0, y0 + ly).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_is_minus_adjoint_of_divergence(g in grid_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_velocity(&g, &mut rng, true);
        let p = random_scalar(&g, &mut rng);
        let lhs = inner_vel(&gradient(&p), &w);
        let rhs = -inner_cell(&p, &divergence(&w));
        prop_assert!(close(lhs, rhs, 1e-13), "{lhs} vs {rhs}");
    }

    #[test]
    fn laplacian_is_symmetric_and_negative(g in grid_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_velocity(&g, &mut rng, true);
        let b = random_velocity(&g, &mut rng, true);
        let ab = inner_vel(&laplacian_velocity(&a), &b);
        let ba = inner_vel(&a, &laplacian_velocity(&b));
        prop_assert!(close(ab, ba, 1e-12), "{ab} vs {ba}");
        let aa = -inner_vel(&laplacian_velocity(&a), &a);
        prop_assert!(close(aa, grad_inner_vel(&a, &a), 1e-12));
        prop_assert!(aa > 0.0);
    }

    #[test]
    fn dirichlet_form_is_symmetric_bilinear(g in grid_strategy(), seed in any::<u64>(), s in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_velocity(&g, &mut rng, false);
        let b = random_velocity(&g, &mut rng, false);
        let c = random_velocity(&g, &mut rng, false);
        prop_assert!(close(grad_inner_vel(&a, &b), grad_inner_vel(&b, &a), 1e-13));
        let lhs = grad_inner_vel(&VelocityField::lincomb(1.0, &a, s, &b), &c);
        let rhs = grad_inner_vel(&a, &c) + s * grad_inner_vel(&b, &c);
        prop_assert!(close(lhs, rhs, 1e-12));
    }

    #[test]
    fn pressure_seminorm_ignores_constants(g in grid_strategy(), seed in any::<u64>(), k in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_scalar(&g, &mut rng);
        let mut q = p.clone();
        q.values.iter_mut().for_each(|x| *x += k);
        prop_assert!(close(grad_inner_cell(&p, &p), grad_inner_cell(&q, &q), 1e-12));
        prop_assert!(close(grad_inner_cell(&p, &p), inner_vel(&gradient(&p), &gradient(&p)), 1e-12));
    }
}

fn vortex_velocity(g: &Grid) -> VelocityField {
    let e = lattice_vortex(0.1).unwrap();
    VelocityField::sample(g, |x, y| e.velocity(x, y, 0.0))
}

/// Velocity of `psi = e^x sin(pi y)` sampled pointwise. Its MAC divergence
/// is `2 e^x cos(pi y) (pi sinh(h/2) - sin(pi h/2)) / h`, so O(h^2) but not 0.
fn exp_velocity(g: &Grid) -> VelocityField {
    VelocityField::sample(g, |x, y| {
        [PI * x.exp() * (PI * y).cos(), -x.exp() * (PI * y).sin()]
    })
}

#[test]
fn sampled_vortex_is_discretely_solenoidal() {
    for n in [8, 33, 128] {
        let d = divergence(&vortex_velocity(&Grid::unit_square(n).unwrap())).max_abs();
        assert!(d < 1e-11, "n {n}: {d}");
    }
}

#[test]
fn sampled_divergence_is_second_order() {
    let errs: Vec<f64> = [16, 32, 64, 128]
        .iter()
        .map(|&n| divergence(&exp_velocity(&Grid::unit_square(n).unwrap())).max_abs())
        .collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 1.9, "rate {rate}, errors {errs:?}");
    }
}

#[test]
fn laplacian_converges_away_from_walls() {
    // lap u = -8 pi^2 u for the vortex velocity
    let mut errs = Vec::new();
    for n in [16, 32, 64, 128] {
        let g = Grid::unit_square(n).unwrap();
        let vel = vortex_velocity(&g);
        let lap = laplacian_velocity(&vel);
        let mut e = 0.0f64;
        for j in 2..n - 2 {
            for i in 2..n - 1 {
                let k = g.u_idx(i, j);
                e = e.max((lap.u[k] + 8.0 * PI * PI * vel.u[k]).abs());
            }
        }
        for j in 2..n - 1 {
            for i in 2..n - 2 {
                let k = g.v_idx(i, j);
                e = e.max((lap.v[k] + 8.0 * PI * PI * vel.v[k]).abs());
            }
        }
        errs.push(e);
    }
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 1.9, "rate {rate}, errors {errs:?}");
    }
}

#[test]
fn vortex_velocity_norm_is_one_half() {
    let g = Grid::unit_square(128).unwrap();
    let v = vortex_velocity(&g);
    assert!((inner_vel(&v, &v) - 0.5).abs() < 1e-3);
}

#[test]
fn vortex_pressure_gradient_norm_matches_quadrature() {
    let e = lattice_vortex(0.1).unwrap();
    // midpoint rule of |grad p|^2 with the analytic gradient
    // (-pi sin 4 pi x, pi sin 4 pi y) on a fine grid
    let m = 2000;
    let h = 1.0 / m as f64;
    let mut quad = 0.0;
    for j in 0..m {
        for i in 0..m {
            let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let px = -PI * (4.0 * PI * x).sin();
            let py = PI * (4.0 * PI * y).sin();
            quad += (px * px + py * py) * h * h;
        }
    }
    assert!((quad - PI * PI).abs() < 1e-8, "quadrature {quad}");
    let g = Grid::unit_square(128).unwrap();
    let p = ScalarField::sample(&g, |x, y| e.pressure(x, y, 0.0));
    let disc = grad_inner_cell(&p, &p);
    assert!(
        (disc - quad).abs() / quad < 2e-3,
        "discrete {disc}, quadrature {quad}"
    );
}

#[test]
fn initial_projection_moves_sampled_field_by_o_h2() {
    let solver = SolverConfig::default();
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let g = Grid::unit_square(n).unwrap();
        let s = exp_velocity(&g);
        let p = project_divergence_free(&s, &solver).unwrap();
        assert!(divergence(&p).max_abs() < 1e-8);
        let d = VelocityField::lincomb(1.0, &p, -1.0, &s);
        errs.push(inner_vel(&d, &d).sqrt());
    }
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 1.8, "rate {rate}, errors {errs:?}");
    }
}

#[test]
fn projection_is_idempotent() {
    let g = Grid::new(12, 9, 0.0, 1.5, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_velocity(&g, &mut rng, true);
    let solver = SolverConfig::default();
    let once = project_divergence_free(&w, &solver).unwrap();
    let twice = project_divergence_free(&once, &solver).unwrap();
    let d = VelocityField::lincomb(1.0, &once, -1.0, &twice);
    assert!(d.max_abs() < 1e-8, "{}", d.max_abs());
}
