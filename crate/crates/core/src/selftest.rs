//! Operator identities and dense-oracle agreement on random data.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convection::convect_bilinear;
use crate::mesh::{
    divergence, grad_inner_vel, gradient, inner_cell, inner_vel, laplacian_velocity,
    neg_laplacian_neumann, Grid, ScalarField, VelocityField,
};
use crate::oracle::{compare_pdrlm1_step, DenseOperators};
use crate::scheme::solve_multiplier_quadratic;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn ok(&self) -> bool {
        self.failed() == 0
    }

    fn push(&mut self, name: impl Into<String>, err: f64, tol: f64) {
        self.checks.push(Check {
            name: name.into(),
            passed: err <= tol,
            detail: format!("error {err:.3e}, tolerance {tol:.1e}"),
        });
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.checks.iter().filter(|c| !c.passed) {
            writeln!(f, "FAIL {}: {}", c.name, c.detail)?;
        }
        write!(
            f,
            "{} identities checked, {} passed, {} failed",
            self.checks.len(),
            self.passed(),
            self.failed()
        )
    }
}

/// Random faces and trace; `homogeneous` zeroes all boundary data.
pub fn random_velocity(grid: &Grid, rng: &mut impl Rng, homogeneous: bool) -> VelocityField {
    let mut v = VelocityField::zeros(grid);
    v.u.iter_mut()
        .chain(v.v.iter_mut())
        .for_each(|x| *x = rng.gen_range(-1.0..1.0));
    if homogeneous {
        v.clear_normal_boundary();
    } else {
        let t = &mut v.trace;
        for part in [&mut t.south, &mut t.north, &mut t.west, &mut t.east] {
            part.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
    }
    v
}

pub fn random_scalar(grid: &Grid, rng: &mut impl Rng) -> ScalarField {
    let values = (0..grid.n_cells())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    ScalarField::from_values(grid, values).expect("sizes match")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn max_gap(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn grids() -> Vec<Grid> {
    vec![
        Grid::unit_square(4).expect("valid"),
        Grid::new(5, 3, 0.0, 1.0, -0.5, 0.25).expect("valid"),
        Grid::new(7, 6, -1.0, 2.0, 0.0, 1.0).expect("valid"),
    ]
}

/// Runs every check with a fixed seed.
pub fn run(seed: u64) -> SelftestReport {
    let mut rep = SelftestReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for g in grids() {
        let tag = format!("{}x{}", g.nx, g.ny);
        let w0 = random_velocity(&g, &mut rng, true);
        let w1 = random_velocity(&g, &mut rng, true);
        let wb = random_velocity(&g, &mut rng, false);
        let wc = random_velocity(&g, &mut rng, false);
        let p = random_scalar(&g, &mut rng);

        // (grad p, w) = -(p, div w) when w has zero normal trace
        let lhs = inner_vel(&gradient(&p), &w0);
        let rhs = -inner_cell(&p, &divergence(&w0));
        rep.push(
            format!("{tag}: gradient/divergence adjoint"),
            rel(lhs, rhs),
            1e-13,
        );

        let lhs = inner_vel(&laplacian_velocity(&w0), &w1);
        let rhs = inner_vel(&w0, &laplacian_velocity(&w1));
        rep.push(format!("{tag}: Laplacian symmetric"), rel(lhs, rhs), 1e-12);

        let lhs = -inner_vel(&laplacian_velocity(&w0), &w0);
        rep.push(
            format!("{tag}: (-lap v, v) = |grad v|^2"),
            rel(lhs, grad_inner_vel(&w0, &w0)),
            1e-12,
        );

        let dg = divergence(&gradient(&p));
        let nl = neg_laplacian_neumann(&p);
        rep.push(
            format!("{tag}: div grad = Neumann Laplacian"),
            max_gap(dg.values.iter().copied(), nl.values.iter().map(|x| -x)),
            1e-9,
        );

        let ops = DenseOperators::new(&g);
        let (zb, zc) = (ops.pack(&wb), ops.pack(&wc));
        let nf = ops.n_faces();
        let lap = &ops.laplacian * &zb;
        let l = laplacian_velocity(&wb);
        rep.push(
            format!("{tag}: Laplacian matches dense"),
            max_gap(l.u.iter().chain(&l.v).copied(), lap.iter().copied()),
            1e-9,
        );
        let d = &ops.divergence * zb.rows(0, nf);
        rep.push(
            format!("{tag}: divergence matches dense"),
            max_gap(divergence(&wb).values.iter().copied(), d.iter().copied()),
            1e-10,
        );
        let gp = &ops.gradient * DVector::from_column_slice(&p.values);
        let gm = gradient(&p);
        rep.push(
            format!("{tag}: gradient matches dense"),
            max_gap(gm.u.iter().chain(&gm.v).copied(), gp.iter().copied()),
            1e-10,
        );
        let conv = ops.convection(&wb) * &zc;
        let cm = convect_bilinear(&wb, &wc);
        rep.push(
            format!("{tag}: advection matches dense"),
            max_gap(cm.u.iter().chain(&cm.v).copied(), conv.iter().copied()),
            1e-10,
        );
        rep.push(
            format!("{tag}: inner product matches dense"),
            rel(inner_vel(&wb, &wc), ops.inner(&zb, &zc)),
            1e-13,
        );
        rep.push(
            format!("{tag}: Dirichlet form matches dense"),
            rel(grad_inner_vel(&wb, &wc), ops.energy_inner(&zb, &zc)),
            1e-12,
        );
    }

    for k in 0..16 {
        let a = rng.gen_range(0.1..10.0);
        let b = rng.gen_range(-10.0..10.0);
        let c = -rng.gen_range(0.1..10.0);
        let res = match solve_multiplier_quadratic(a, b, c, 1.0) {
            Ok(q) if q > 0.0 => (a * q * q + b * q + c).abs() / (a * q * q).max(c.abs()),
            _ => f64::INFINITY,
        };
        rep.push(format!("quadratic root {k}"), res, 1e-14);
    }

    let g = Grid::unit_square(4).expect("valid");
    for k in 0..4 {
        let s = seed.wrapping_mul(31).wrapping_add(k);
        let gap = compare_pdrlm1_step(&g, s, 0.05, 1.0, 0.3)
            .map(|c| c.max())
            .unwrap_or(f64::INFINITY);
        rep.push(format!("dense P-DRLM1 step, seed {s}"), gap, 1e-12);
    }
    rep
}
