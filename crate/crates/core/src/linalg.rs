//! Conjugate-gradient solvers for the two elliptic problems of a step: the
//! velocity Helmholtz problem `(alpha I - nu lap) x = rhs` with Dirichlet
//! data, and the cell-centered pure-Neumann pressure Poisson problem.
//!
//! Both run preconditioned CG with minimal-residual smoothing (Schönauer /
//! Zhou–Walker): the returned iterate is the smoothed one, whose residual
//! norm is non-increasing from one iteration to the next. All reductions
//! are sequential, so results are bit-reproducible.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::mesh::{
    laplacian_raw, neg_laplacian_neumann_raw, DirichletData, Grid, ScalarField, TangentialTrace,
    VelocityField,
};

/// Preconditioner used by the pressure Poisson solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    /// Diagonal scaling.
    #[default]
    Jacobi,
    /// Exact inverse of the uniform-grid Neumann Laplacian through a 2D
    /// cosine transform. CG then converges in one or two iterations.
    Cosine,
}

impl std::str::FromStr for Preconditioner {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jacobi" => Ok(Self::Jacobi),
            "cosine" | "spectral" | "dct" => Ok(Self::Cosine),
            other => Err(format!("unknown preconditioner `{other}` (jacobi|cosine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `None` means `10 (nx + ny)`.
    pub max_iter: Option<usize>,
    pub poisson_preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_iter: None,
            poisson_preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !self.rel_tol.is_finite() {
            return Err(Error::argument("rel_tol", "must be a positive number"));
        }
        if !(self.abs_tol >= 0.0) || !self.abs_tol.is_finite() {
            return Err(Error::argument("abs_tol", "must be non-negative"));
        }
        if self.max_iter == Some(0) {
            return Err(Error::argument("max_iter", "must be at least 1"));
        }
        Ok(())
    }

    pub fn max_iter_for(&self, grid: &Grid) -> usize {
        self.max_iter.unwrap_or(10 * (grid.nx + grid.ny))
    }

    pub fn with_preconditioner(mut self, p: Preconditioner) -> Self {
        self.poisson_preconditioner = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Euclidean norm of the true residual of the returned iterate.
    pub final_residual: f64,
    /// `max(rel_tol * ||rhs||, abs_tol)`.
    pub target: f64,
    pub converged: bool,
    /// Smoothed residual norm after each iteration (entry 0 is the initial residual).
    pub residual_history: Vec<f64>,
    /// Set by the Neumann solve when the right-hand side had a non-negligible
    /// mean before projection (boundary-flux imbalance).
    pub compatibility_warning: bool,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, residual {:.3e} (target {:.3e}){}",
            self.iterations,
            self.final_residual,
            self.target,
            if self.compatibility_warning {
                ", incompatible rhs projected"
            } else {
                ""
            }
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(a: &mut [f64]) {
    let m = a.iter().sum::<f64>() / a.len() as f64;
    a.iter_mut().for_each(|x| *x -= m);
}

/// Preconditioned CG with minimal-residual smoothing on `x` (initial guess
/// in, solution out). With `zero_mean` every residual and search direction
/// is kept orthogonal to constants.
fn smoothed_pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    target: f64,
    max_iter: usize,
    zero_mean: bool,
) -> SolveReport {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut cg_x = x.to_vec();

    let true_residual = |apply: &mut dyn FnMut(&[f64], &mut [f64]), x: &[f64], r: &mut [f64]| {
        apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        if zero_mean {
            remove_mean(r);
        }
    };

    true_residual(&mut apply, x, &mut r);
    let mut s = r.clone();
    let mut s_norm = norm(&s);
    let mut history = vec![s_norm];
    let mut iterations = 0;

    // Restarts only happen when the recursive residual drifted below target
    // while the true residual did not.
    'outer: for _restart in 0..4 {
        if s_norm <= target {
            break;
        }
        precond(&r, &mut z);
        if zero_mean {
            remove_mean(&mut z);
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);

        while iterations < max_iter {
            apply(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) || !(rz > 0.0) {
                break 'outer;
            }
            let alpha = rz / pq;
            for i in 0..n {
                cg_x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if zero_mean {
                remove_mean(&mut r);
            }
            iterations += 1;

            let mut sd = 0.0;
            let mut dd = 0.0;
            for i in 0..n {
                let d = r[i] - s[i];
                sd += s[i] * d;
                dd += d * d;
            }
            if dd > 0.0 {
                let eta = -sd / dd;
                for i in 0..n {
                    x[i] += eta * (cg_x[i] - x[i]);
                    s[i] += eta * (r[i] - s[i]);
                }
                s_norm = norm(&s);
            }
            history.push(s_norm);

            if s_norm <= target {
                true_residual(&mut apply, x, &mut r);
                let rn = norm(&r);
                if rn <= target {
                    break 'outer;
                }
                cg_x.copy_from_slice(x);
                s.copy_from_slice(&r);
                s_norm = rn;
                continue 'outer;
            }

            precond(&r, &mut z);
            if zero_mean {
                remove_mean(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        break;
    }

    let mut res = vec![0.0; n];
    true_residual(&mut apply, x, &mut res);
    let final_residual = norm(&res);
    SolveReport {
        iterations,
        final_residual,
        target,
        converged: final_residual <= target,
        residual_history: history,
        compatibility_warning: false,
    }
}

/// Solves `alpha x - nu lap x = rhs` on interior faces with the Dirichlet
/// data `bc` imposed on `x`. Boundary-normal entries of `rhs` are ignored.
pub fn helmholtz_solve(
    alpha: f64,
    nu: f64,
    rhs: &VelocityField,
    bc: &DirichletData,
    cfg: &SolverConfig,
) -> Result<(VelocityField, SolveReport)> {
    if !(alpha > 0.0) || !(nu >= 0.0) {
        return Err(Error::contract(format!(
            "helmholtz needs alpha > 0 and nu >= 0, got alpha={alpha}, nu={nu}"
        )));
    }
    let g = rhs.grid;
    let (nu_, nv) = (g.n_u(), g.n_v());

    // lifting: zero interior, Dirichlet data on the boundary
    let mut lift = VelocityField::zeros(&g);
    lift.impose(bc);
    let mut lift_lap = VelocityField::zeros(&g);
    laplacian_raw(
        &g,
        &lift.u,
        &lift.v,
        &lift.trace,
        &mut lift_lap.u,
        &mut lift_lap.v,
    );

    let mut b = vec![0.0; nu_ + nv];
    b[..nu_].copy_from_slice(&rhs.u);
    b[nu_..].copy_from_slice(&rhs.v);
    for (bi, li) in b.iter_mut().zip(lift_lap.u.iter().chain(&lift_lap.v)) {
        *bi += nu * li;
    }
    // boundary-normal unknowns are not part of the system
    let mut mask = vec![1.0; nu_ + nv];
    for j in 0..g.ny {
        mask[g.u_idx(0, j)] = 0.0;
        mask[g.u_idx(g.nx, j)] = 0.0;
    }
    for i in 0..g.nx {
        mask[nu_ + g.v_idx(i, 0)] = 0.0;
        mask[nu_ + g.v_idx(i, g.ny)] = 0.0;
    }
    for (bi, m) in b.iter_mut().zip(&mask) {
        *bi *= m;
    }

    if nu == 0.0 {
        let mut x = lift;
        for (k, xi) in x.u.iter_mut().enumerate() {
            *xi += b[k] / alpha;
        }
        for (k, xi) in x.v.iter_mut().enumerate() {
            *xi += b[nu_ + k] / alpha;
        }
        let report = SolveReport {
            iterations: 0,
            final_residual: 0.0,
            target: 0.0,
            converged: true,
            residual_history: vec![0.0],
            compatibility_warning: false,
        };
        return Ok((x, report));
    }

    let (rx2, ry2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    let mut diag = vec![0.0; nu_ + nv];
    for j in 0..g.ny {
        let wall = if j == 0 || j == g.ny - 1 { 1.0 } else { 0.0 };
        for i in 1..g.nx {
            diag[g.u_idx(i, j)] = alpha + nu * (2.0 * rx2 + (2.0 + wall) * ry2);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let wall = if i == 0 || i == g.nx - 1 { 1.0 } else { 0.0 };
            diag[nu_ + g.v_idx(i, j)] = alpha + nu * ((2.0 + wall) * rx2 + 2.0 * ry2);
        }
    }

    let zero_trace = TangentialTrace::zeros(&g);
    let mut lap = vec![0.0; nu_ + nv];
    let apply = |x: &[f64], out: &mut [f64]| {
        let (lu, lv) = lap.split_at_mut(nu_);
        laplacian_raw(&g, &x[..nu_], &x[nu_..], &zero_trace, lu, lv);
        for k in 0..out.len() {
            out[k] = mask[k] * (alpha * x[k] - nu * lap[k]);
        }
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        for k in 0..r.len() {
            z[k] = if diag[k] > 0.0 { r[k] / diag[k] } else { 0.0 };
        }
    };

    let target = (cfg.rel_tol * norm(&b)).max(cfg.abs_tol);
    // start from rhs / alpha: exact for nu -> 0 and a good guess when alpha dominates
    let mut x: Vec<f64> = b.iter().map(|bi| bi / alpha).collect();
    let report = smoothed_pcg(
        apply,
        precond,
        &b,
        &mut x,
        target,
        cfg.max_iter_for(&g),
        false,
    );

    let mut sol = lift;
    for (k, xi) in sol.u.iter_mut().enumerate() {
        *xi += x[k];
    }
    for (k, xi) in sol.v.iter_mut().enumerate() {
        *xi += x[nu_ + k];
    }
    if !report.converged {
        return Err(Error::SolverDiverged {
            solve: "helmholtz",
            report,
        });
    }
    Ok((sol, report))
}

/// Exact inverse of the uniform-grid Neumann Laplacian on zero-mean fields.
struct CosineInverse {
    nx: usize,
    ny: usize,
    cx: Vec<f64>,
    cy: Vec<f64>,
    inv_eig: Vec<f64>,
    buf: Vec<f64>,
    line: Vec<f64>,
}

impl CosineInverse {
    fn new(g: &Grid) -> Self {
        let table = |n: usize| {
            let mut c = vec![0.0; n * n];
            for k in 0..n {
                for i in 0..n {
                    c[k * n + i] = (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
                }
            }
            c
        };
        let (nx, ny) = (g.nx, g.ny);
        let mut inv_eig = vec![0.0; nx * ny];
        for l in 0..ny {
            let ey = 4.0 / (g.hy * g.hy) * (PI * l as f64 / (2.0 * ny as f64)).sin().powi(2);
            for k in 0..nx {
                let ex = 4.0 / (g.hx * g.hx) * (PI * k as f64 / (2.0 * nx as f64)).sin().powi(2);
                let lam = ex + ey;
                inv_eig[l * nx + k] = if k == 0 && l == 0 { 0.0 } else { 1.0 / lam };
            }
        }
        Self {
            nx,
            ny,
            cx: table(nx),
            cy: table(ny),
            inv_eig,
            buf: vec![0.0; nx * ny],
            line: vec![0.0; nx.max(ny)],
        }
    }

    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        // forward along x: buf[j][k] = sum_i r[j][i] cx[k][i]
        for j in 0..ny {
            let row = &r[j * nx..(j + 1) * nx];
            for k in 0..nx {
                self.buf[j * nx + k] = dot(&self.cx[k * nx..(k + 1) * nx], row);
            }
        }
        // forward along y, scale, inverse along y (column by column)
        for k in 0..nx {
            for j in 0..ny {
                self.line[j] = self.buf[j * nx + k];
            }
            let mut spec = vec![0.0; ny];
            for (l, s) in spec.iter_mut().enumerate() {
                let w = if l == 0 { 1.0 } else { 2.0 } / ny as f64;
                *s = w
                    * self.inv_eig[l * nx + k]
                    * dot(&self.cy[l * ny..(l + 1) * ny], &self.line[..ny]);
            }
            for j in 0..ny {
                let mut acc = 0.0;
                for (l, s) in spec.iter().enumerate() {
                    acc += self.cy[l * ny + j] * s;
                }
                self.buf[j * nx + k] = acc;
            }
        }
        // inverse along x
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = self.buf[j * nx] / nx as f64;
                for k in 1..nx {
                    acc += 2.0 / nx as f64 * self.cx[k * nx + i] * self.buf[j * nx + k];
                }
                z[j * nx + i] = acc;
            }
        }
    }
}

/// Solves `-lap phi = rhs` with homogeneous Neumann data for zero-mean
/// `phi`. The mean of `rhs` is projected out first.
pub fn poisson_neumann_solve(
    rhs: &ScalarField,
    cfg: &SolverConfig,
) -> Result<(ScalarField, SolveReport)> {
    if !rhs.is_finite() {
        return Err(Error::contract("poisson right-hand side is not finite"));
    }
    let g = rhs.grid;
    let n = g.n_cells();
    let mut b = rhs.values.clone();
    let mean = b.iter().sum::<f64>() / n as f64;
    let rms = (dot(&b, &b) / n as f64).sqrt();
    let compatibility_warning = mean.abs() > 1e-6 * rms;
    remove_mean(&mut b);

    let apply = |x: &[f64], out: &mut [f64]| neg_laplacian_neumann_raw(&g, x, out);
    let target = (cfg.rel_tol * norm(&b)).max(cfg.abs_tol);
    let mut x = vec![0.0; n];
    let max_iter = cfg.max_iter_for(&g);

    let mut report = match cfg.poisson_preconditioner {
        Preconditioner::Jacobi => {
            let (rx2, ry2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
            let mut diag = vec![0.0; n];
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let nbx = (i > 0) as u8 + (i + 1 < g.nx) as u8;
                    let nby = (j > 0) as u8 + (j + 1 < g.ny) as u8;
                    diag[g.c_idx(i, j)] = nbx as f64 * rx2 + nby as f64 * ry2;
                }
            }
            let precond = |r: &[f64], z: &mut [f64]| {
                for k in 0..r.len() {
                    z[k] = r[k] / diag[k];
                }
            };
            smoothed_pcg(apply, precond, &b, &mut x, target, max_iter, true)
        }
        Preconditioner::Cosine => {
            let mut inv = CosineInverse::new(&g);
            let precond = |r: &[f64], z: &mut [f64]| inv.apply(r, z);
            smoothed_pcg(apply, precond, &b, &mut x, target, max_iter, true)
        }
    };
    report.compatibility_warning = compatibility_warning;

    remove_mean(&mut x);
    let phi = ScalarField::from_values(&g, x)?;
    if !report.converged {
        return Err(Error::SolverDiverged {
            solve: "poisson",
            report,
        });
    }
    Ok((phi, report))
}
