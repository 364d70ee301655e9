//! Time steppers.
//!
//! * [`SchemeKind::Pdrlm1`]: first-order pressure correction with a
//!   dynamically regularized Lagrange multiplier `Q` on the convection term.
//!   Each step solves two Helmholtz problems and two Neumann Poisson
//!   problems that do not depend on `Q`, then a scalar quadratic for `Q`.
//! * [`SchemeKind::Pdrlm2`]: BDF2 variant with rotational pressure update,
//!   bootstrapped by one first-order step with `Q = 1`.
//! * [`SchemeKind::BaselinePc`]: plain incremental pressure correction with
//!   explicit convection (`Q = 1`), for comparison.
//!
//! For the multiplier schemes the quadratic is assembled so that the
//! discrete energy balance holds exactly:
//!
//! ```text
//! K(u^{n+1}, p^{n+1}) - K(u^n, p^n) + theta (Q_{n+1}^2 - Q_n^2) = -nu tau ||grad u_hat^{n+1}||^2
//! ```
//!
//! with `K(u, p) = (||u||^2 + tau^2 ||grad p||^2) / 2`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::convection::{convect, convect_bilinear};
use crate::error::{Error, Result};
use crate::linalg::{helmholtz_solve, poisson_neumann_solve, SolveReport, SolverConfig};
use crate::mesh::{
    divergence, divergence_max, grad_inner_cell, grad_inner_vel, gradient, inner_vel,
    DirichletData, Grid, ScalarField, VelocityField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Pdrlm1,
    Pdrlm2,
    BaselinePc,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Pdrlm1 => "pdrlm1",
            SchemeKind::Pdrlm2 => "pdrlm2",
            SchemeKind::BaselinePc => "baseline_pc",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pdrlm1" | "p-drlm1" => Ok(SchemeKind::Pdrlm1),
            "pdrlm2" | "p-drlm2" => Ok(SchemeKind::Pdrlm2),
            "baseline_pc" | "baseline" | "pc" => Ok(SchemeKind::BaselinePc),
            other => Err(format!(
                "unknown scheme `{other}` (pdrlm1|pdrlm2|baseline_pc)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub tau: f64,
    pub theta: f64,
    pub nu: f64,
    pub assert_invariants: bool,
    pub invariant_rel_tol: f64,
    /// Disabling convection turns the flow into unsteady Stokes.
    pub convection: bool,
    pub solver: SolverConfig,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, tau: f64, theta: f64, nu: f64) -> Result<Self> {
        let cfg = Self {
            kind,
            tau,
            theta,
            nu,
            assert_invariants: true,
            invariant_rel_tol: 1e-8,
            convection: true,
            solver: SolverConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::argument(
                    name,
                    format!("must be positive and finite, got {x}"),
                ))
            }
        };
        positive("tau", self.tau)?;
        positive("theta", self.theta)?;
        positive("nu", self.nu)?;
        positive("invariant_rel_tol", self.invariant_rel_tol)?;
        self.solver.validate()
    }
}

/// Boundary data and forcing of a flow problem.
pub trait FlowSetup: Sync {
    fn dirichlet(&self, grid: &Grid, t: f64) -> DirichletData;

    /// Whether the velocity Dirichlet data vanishes for all times.
    fn homogeneous(&self) -> bool {
        false
    }

    /// Body force sampled on faces, `None` when identically zero.
    fn forcing(&self, _grid: &Grid, _t: f64) -> Option<VelocityField> {
        None
    }
}

/// No-slip walls, no forcing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSlip;

impl FlowSetup for NoSlip {
    fn dirichlet(&self, grid: &Grid, _t: f64) -> DirichletData {
        DirichletData::homogeneous(grid)
    }

    fn homogeneous(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub step: usize,
    pub t: f64,
    pub u: VelocityField,
    pub p: ScalarField,
    pub q: f64,
}

impl State {
    pub fn new(t: f64, u: VelocityField, p: ScalarField, q: f64) -> Result<Self> {
        u.grid.check_same(&p.grid)?;
        if !u.is_finite() || !p.is_finite() || !q.is_finite() {
            return Err(Error::contract("initial state is not finite"));
        }
        Ok(Self {
            step: 0,
            t,
            u,
            p: p.centered(),
            q,
        })
    }

    pub fn zero(grid: &Grid) -> Self {
        Self {
            step: 0,
            t: 0.0,
            u: VelocityField::zeros(grid),
            p: ScalarField::zeros(grid),
            q: 1.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.u.grid
    }
}

/// Intermediate fields of one multiplier step. For P-DRLM2 the fields
/// `p1`, `p2` are the pressure branches after the rotational update.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    pub u_hat1: VelocityField,
    pub u_hat2: VelocityField,
    pub u1: VelocityField,
    pub u2: VelocityField,
    pub p1: ScalarField,
    pub p2: ScalarField,
    pub u_hat: VelocityField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `-||u_hat1 - u^n||^2 - 2 theta Q_n^2`, which equals `c` for zero
    /// forcing and homogeneous Dirichlet data (first-order scheme only).
    pub c_crosscheck: Option<f64>,
    pub discriminant: f64,
}

impl QuadraticCoefficients {
    pub fn new(a: f64, b: f64, c: f64, c_crosscheck: Option<f64>) -> Self {
        Self {
            a,
            b,
            c,
            c_crosscheck,
            discriminant: b * b - 4.0 * a * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub kind: SchemeKind,
    /// `K(u, p) = (||u||^2 + tau^2 ||grad p||^2) / 2` of the new state.
    pub k: f64,
    /// `K + theta (Q^2 - 1)`.
    pub e_mod: f64,
    /// Two-level BDF2 energy `3/2 K^{n+1} - 1/2 K^n + theta (3/2 Q_{n+1}^2 - 1/2 Q_n^2 - 1)`;
    /// set by the second-order scheme only.
    pub e_bdf2: Option<f64>,
    pub q: f64,
    pub kinetic: f64,
    /// `nu tau ||grad u_hat^{n+1}||^2`.
    pub dissipation: f64,
    pub quad: Option<QuadraticCoefficients>,
    pub div_inf: f64,
    pub identity_residuals: BTreeMap<&'static str, f64>,
    pub solver_reports: Vec<SolveReport>,
}

impl StepDiagnostics {
    pub fn cg_iterations(&self) -> usize {
        self.solver_reports.iter().map(|r| r.iterations).sum()
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.identity_residuals.get(name).copied()
    }

    pub fn is_finite(&self) -> bool {
        let quad_ok = self.quad.map_or(true, |q| {
            q.a.is_finite() && q.b.is_finite() && q.c.is_finite()
        });
        [self.t, self.k, self.e_mod, self.q, self.div_inf]
            .iter()
            .all(|x| x.is_finite())
            && quad_ok
            && self.identity_residuals.values().all(|x| x.is_finite())
    }
}

pub fn energy_k(u: &VelocityField, p: &ScalarField, tau: f64) -> f64 {
    0.5 * (inner_vel(u, u) + tau * tau * grad_inner_cell(p, p))
}

pub fn energy_modified(k: f64, q: f64, theta: f64) -> f64 {
    k + theta * (q * q - 1.0)
}

/// Root of `a Q^2 + b Q + c = 0` for the multiplier.
///
/// With `c < 0` the roots have opposite signs and the positive one is
/// returned. With `c >= 0` the real root closest to `q_prev` is returned,
/// and a negative discriminant is an error.
pub fn solve_multiplier_quadratic(a: f64, b: f64, c: f64, q_prev: f64) -> Result<f64> {
    if !(a > 0.0) || !b.is_finite() || !c.is_finite() || !a.is_finite() {
        return Err(Error::contract(format!(
            "multiplier quadratic needs finite coefficients with A > 0 (A={a:e}, B={b:e}, C={c:e})"
        )));
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::MultiplierUnsolvable { a, b, c });
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
    let (r1, r2) = if q == 0.0 {
        // b = 0 and disc = 0 (so c = 0): double root at zero
        (0.0, 0.0)
    } else {
        (q / a, c / q)
    };
    if c < 0.0 {
        let root = r1.max(r2);
        if !(root > 0.0) {
            return Err(Error::MultiplierInternal { a, b, c, root });
        }
        Ok(root)
    } else if (r1 - q_prev).abs() <= (r2 - q_prev).abs() {
        Ok(r1)
    } else {
        Ok(r2)
    }
}

struct Ctx<'a> {
    cfg: &'a SchemeConfig,
    setup: &'a dyn FlowSetup,
    reports: Vec<SolveReport>,
}

impl<'a> Ctx<'a> {
    fn helmholtz(
        &mut self,
        alpha: f64,
        rhs: &VelocityField,
        bc: &DirichletData,
    ) -> Result<VelocityField> {
        let (x, rep) = helmholtz_solve(alpha, self.cfg.nu, rhs, bc, &self.cfg.solver)?;
        self.reports.push(rep);
        Ok(x)
    }

    /// Projects `u_hat` with `-lap phi = -(scale) div u_hat`, returning
    /// `(phi, u_hat - grad(phi) / scale)`.
    fn project(
        &mut self,
        u_hat: &VelocityField,
        scale: f64,
    ) -> Result<(ScalarField, VelocityField)> {
        let rhs = divergence(u_hat).scaled(-scale);
        let (phi, rep) = poisson_neumann_solve(&rhs, &self.cfg.solver)?;
        self.reports.push(rep);
        let mut u = u_hat.clone();
        u.axpy(-1.0 / scale, &gradient(&phi));
        Ok((phi, u))
    }

    fn forcing_free(&self, grid: &Grid, t: f64) -> (Option<VelocityField>, bool) {
        let f = self.setup.forcing(grid, t);
        let free = f.is_none();
        (f, free)
    }
}

fn invariant(
    check: &'static str,
    ok: bool,
    detail: impl FnOnce() -> String,
    diag: &StepDiagnostics,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Invariant {
            check,
            detail: detail(),
            diagnostics: Box::new(diag.clone()),
        })
    }
}

/// `|a - b| / max(a, b)`, zero when both vanish.
fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn divergence_bound(cfg: &SchemeConfig, u: &VelocityField) -> f64 {
    let g = u.grid;
    cfg.invariant_rel_tol * (u.max_abs() / g.hx.min(g.hy)).max(1.0)
}

fn check_common(
    cfg: &SchemeConfig,
    diag: &StepDiagnostics,
    u: &VelocityField,
    proj_scale: f64,
) -> Result<()> {
    let tol = cfg.invariant_rel_tol;
    if let Some(q) = diag.quad {
        invariant("A > 0", q.a > 0.0, || format!("A = {:e}", q.a), diag)?;
    }
    let proj = diag.residual("proj1").unwrap_or(0.0);
    invariant(
        "projection identity",
        proj <= tol * proj_scale + f64::MIN_POSITIVE,
        || format!("residual {proj:e}, scale {proj_scale:e}"),
        diag,
    )?;
    let bound = divergence_bound(cfg, u);
    invariant(
        "discrete divergence",
        diag.div_inf <= bound,
        || format!("|div u|_inf = {:e} > {bound:e}", diag.div_inf),
        diag,
    )?;
    invariant(
        "finite diagnostics",
        diag.is_finite(),
        || "non-finite value".into(),
        diag,
    )
}

/// One P-DRLM1 step. See [`step_pdrlm1_detailed`].
pub fn step_pdrlm1(
    state: &State,
    cfg: &SchemeConfig,
    setup: &dyn FlowSetup,
) -> Result<(State, StepDiagnostics)> {
    step_pdrlm1_detailed(state, cfg, setup).map(|(s, d, _)| (s, d))
}

/// One P-DRLM1 step, also returning the decomposed intermediate fields.
pub fn step_pdrlm1_detailed(
    state: &State,
    cfg: &SchemeConfig,
    setup: &dyn FlowSetup,
) -> Result<(State, StepDiagnostics, StepWorkspace)> {
    let g = *state.grid();
    let (tau, nu, theta) = (cfg.tau, cfg.nu, cfg.theta);
    let t_new = state.t + tau;
    let mut ctx = Ctx {
        cfg,
        setup,
        reports: Vec::with_capacity(4),
    };
    let bc = setup.dirichlet(&g, t_new);
    let homogeneous = DirichletData::homogeneous(&g);
    let (forcing, forcing_free) = ctx.forcing_free(&g, t_new);

    // u_hat1: (1/tau - nu lap) u_hat1 = u^n / tau - grad p^n + f, full Dirichlet data
    let mut rhs1 = state.u.scaled(1.0 / tau);
    rhs1.axpy(-1.0, &gradient(&state.p));
    if let Some(f) = &forcing {
        rhs1.axpy(1.0, f);
    }
    let u_hat1 = ctx.helmholtz(1.0 / tau, &rhs1, &bc)?;

    // u_hat2: (1/tau - nu lap) u_hat2 = -N(u^n) u^n, homogeneous data
    let rhs2 = if cfg.convection {
        convect(&state.u).scaled(-1.0)
    } else {
        VelocityField::zeros(&g)
    };
    let u_hat2 = ctx.helmholtz(1.0 / tau, &rhs2, &homogeneous)?;

    // projections
    let (phi1, u1) = ctx.project(&u_hat1, 1.0 / tau)?;
    let mut p1 = state.p.clone();
    p1.axpy(1.0, &phi1);
    p1.center();
    let (p2, u2) = ctx.project(&u_hat2, 1.0 / tau)?;

    // quadratic in Q
    let tau2 = tau * tau;
    let un_sq = inner_vel(&state.u, &state.u);
    let gpn_sq = grad_inner_cell(&state.p, &state.p);
    let a = inner_vel(&u2, &u2)
        + 2.0 * theta
        + tau2 * grad_inner_cell(&p2, &p2)
        + 2.0 * tau * nu * grad_inner_vel(&u_hat2, &u_hat2);
    let b = 2.0 * inner_vel(&u1, &u2)
        + 2.0 * tau2 * grad_inner_cell(&p1, &p2)
        + 4.0 * nu * tau * grad_inner_vel(&u_hat1, &u_hat2);
    let c = inner_vel(&u1, &u1) - un_sq + tau2 * grad_inner_cell(&p1, &p1)
        - tau2 * gpn_sq
        - 2.0 * theta * state.q * state.q
        + 2.0 * tau * nu * grad_inner_vel(&u_hat1, &u_hat1);
    let jump = VelocityField::lincomb(1.0, &u_hat1, -1.0, &state.u);
    let c_cross = -inner_vel(&jump, &jump) - 2.0 * theta * state.q * state.q;
    let quad = QuadraticCoefficients::new(a, b, c, Some(c_cross));
    let q_new = solve_multiplier_quadratic(a, b, c, state.q)?;

    // recombine
    let u_new = VelocityField::lincomb(1.0, &u1, q_new, &u2);
    let mut p_new = p1.clone();
    p_new.axpy(q_new, &p2);
    p_new.center();
    let u_hat = VelocityField::lincomb(1.0, &u_hat1, q_new, &u_hat2);

    // diagnostics
    let k_old = 0.5 * (un_sq + tau2 * gpn_sq);
    let k_new = energy_k(&u_new, &p_new, tau);
    let dissipation = nu * tau * grad_inner_vel(&u_hat, &u_hat);
    let corr = VelocityField::lincomb(1.0, &u1, -1.0, &u_hat1);
    let corr_sq = inner_vel(&corr, &corr);
    let phi_sq = tau2 * grad_inner_cell(&phi1, &phi1);
    let energy_res =
        (k_new + theta * q_new * q_new) - (k_old + theta * state.q * state.q) + dissipation;

    let mut identity_residuals = BTreeMap::new();
    identity_residuals.insert("proj1", (corr_sq - phi_sq).abs());
    identity_residuals.insert("proj1_rel", relative(corr_sq, phi_sq));
    identity_residuals.insert("energy", energy_res.abs());
    identity_residuals.insert("c_crosscheck", (c - c_cross).abs());

    let diag = StepDiagnostics {
        step: state.step + 1,
        t: t_new,
        kind: SchemeKind::Pdrlm1,
        k: k_new,
        e_mod: energy_modified(k_new, q_new, theta),
        e_bdf2: None,
        q: q_new,
        kinetic: inner_vel(&u_new, &u_new),
        dissipation,
        quad: Some(quad),
        div_inf: divergence_max(&u_new),
        identity_residuals,
        solver_reports: ctx.reports,
    };

    if cfg.assert_invariants {
        let tol = cfg.invariant_rel_tol;
        check_common(cfg, &diag, &u_new, corr_sq.max(phi_sq))?;
        if forcing_free && setup.homogeneous() {
            invariant("C < 0", c < 0.0, || format!("C = {c:e}"), &diag)?;
            invariant(
                "C crosscheck",
                (c - c_cross).abs() <= tol * (c.abs() + 2.0 * theta),
                || format!("C = {c:e}, crosscheck = {c_cross:e}"),
                &diag,
            )?;
            let scale = k_old + theta * state.q * state.q;
            invariant(
                "energy balance",
                energy_res.abs() <= tol * scale,
                || format!("residual {energy_res:e}, scale {scale:e}"),
                &diag,
            )?;
        }
    }

    let next = State {
        step: state.step + 1,
        t: t_new,
        u: u_new,
        p: p_new,
        q: q_new,
    };
    let work = StepWorkspace {
        u_hat1,
        u_hat2,
        u1,
        u2,
        p1,
        p2,
        u_hat,
    };
    Ok((next, diag, work))
}

/// One P-DRLM2 step from two consecutive states.
pub fn step_pdrlm2(
    state: &State,
    prev: &State,
    cfg: &SchemeConfig,
    setup: &dyn FlowSetup,
) -> Result<(State, StepDiagnostics)> {
    step_pdrlm2_detailed(state, prev, cfg, setup).map(|(s, d, _)| (s, d))
}

pub fn step_pdrlm2_detailed(
    state: &State,
    prev: &State,
    cfg: &SchemeConfig,
    setup: &dyn FlowSetup,
) -> Result<(State, StepDiagnostics, StepWorkspace)> {
    let g = *state.grid();
    g.check_same(prev.grid())?;
    let (tau, nu, theta) = (cfg.tau, cfg.nu, cfg.theta);
    let t_new = state.t + tau;
    let alpha = 1.5 / tau;
    let mut ctx = Ctx {
        cfg,
        setup,
        reports: Vec::with_capacity(4),
    };
    let bc = setup.dirichlet(&g, t_new);
    let homogeneous = DirichletData::homogeneous(&g);
    let (forcing, forcing_free) = ctx.forcing_free(&g, t_new);

    // (3/(2 tau) - nu lap) u_hat1 = (4 u^n - u^{n-1}) / (2 tau) - grad p^n + f
    let mut rhs1 = VelocityField::lincomb(2.0 / tau, &state.u, -0.5 / tau, &prev.u);
    rhs1.axpy(-1.0, &gradient(&state.p));
    if let Some(f) = &forcing {
        rhs1.axpy(1.0, f);
    }
    let u_hat1 = ctx.helmholtz(alpha, &rhs1, &bc)?;

    let rhs2 = if cfg.convection {
        let extrap = VelocityField::lincomb(2.0, &state.u, -1.0, &prev.u);
        convect_bilinear(&extrap, &extrap).scaled(-1.0)
    } else {
        VelocityField::zeros(&g)
    };
    let u_hat2 = ctx.helmholtz(alpha, &rhs2, &homogeneous)?;

    // rotational projection: u_k = u_hat_k - (2 tau / 3) grad psi_k
    let (psi1, u1) = ctx.project(&u_hat1, alpha)?;
    let mut p1 = state.p.clone();
    p1.axpy(1.0, &psi1);
    p1.axpy(-nu, &divergence(&u_hat1));
    p1.center();
    let (psi2, u2) = ctx.project(&u_hat2, alpha)?;
    let mut p2 = psi2;
    p2.axpy(-nu, &divergence(&u_hat2));
    p2.center();

    // 3 K^{n+1} - 4 K^n + K^{n-1} + theta (3 Q^2 - 4 Q_n^2 + Q_{n-1}^2) + 2 tau nu ||grad u_hat||^2 = 0
    let tau2 = tau * tau;
    let k_n = energy_k(&state.u, &state.p, tau);
    let k_nm1 = energy_k(&prev.u, &prev.p, tau);
    let a = 1.5 * (inner_vel(&u2, &u2) + tau2 * grad_inner_cell(&p2, &p2))
        + 3.0 * theta
        + 2.0 * tau * nu * grad_inner_vel(&u_hat2, &u_hat2);
    let b = 3.0 * (inner_vel(&u1, &u2) + tau2 * grad_inner_cell(&p1, &p2))
        + 4.0 * tau * nu * grad_inner_vel(&u_hat1, &u_hat2);
    let c = 1.5 * (inner_vel(&u1, &u1) + tau2 * grad_inner_cell(&p1, &p1)) - 4.0 * k_n + k_nm1
        - theta * (4.0 * state.q * state.q - prev.q * prev.q)
        + 2.0 * tau * nu * grad_inner_vel(&u_hat1, &u_hat1);
    let quad = QuadraticCoefficients::new(a, b, c, None);
    let q_new = solve_multiplier_quadratic(a, b, c, state.q)?;

    let u_new = VelocityField::lincomb(1.0, &u1, q_new, &u2);
    let mut p_new = p1.clone();
    p_new.axpy(q_new, &p2);
    p_new.center();
    let u_hat = VelocityField::lincomb(1.0, &u_hat1, q_new, &u_hat2);

    let k_new = energy_k(&u_new, &p_new, tau);
    let dissipation = nu * tau * grad_inner_vel(&u_hat, &u_hat);
    let q2 = q_new * q_new;
    let (qn2, qnm2) = (state.q * state.q, prev.q * prev.q);
    let balance =
        3.0 * k_new - 4.0 * k_n + k_nm1 + theta * (3.0 * q2 - 4.0 * qn2 + qnm2) + 2.0 * dissipation;
    let e_bdf2 = 1.5 * k_new - 0.5 * k_n + theta * (1.5 * q2 - 0.5 * qn2 - 1.0);
    let corr = VelocityField::lincomb(1.0, &u1, -1.0, &u_hat1);
    let corr_sq = inner_vel(&corr, &corr);
    let psi_sq = grad_inner_cell(&psi1, &psi1) / (alpha * alpha);

    let mut identity_residuals = BTreeMap::new();
    identity_residuals.insert("proj1", (corr_sq - psi_sq).abs());
    identity_residuals.insert("proj1_rel", relative(corr_sq, psi_sq));
    identity_residuals.insert("energy", balance.abs());

    let diag = StepDiagnostics {
        step: state.step + 1,
        t: t_new,
        kind: SchemeKind::Pdrlm2,
        k: k_new,
        e_mod: energy_modified(k_new, q_new, theta),
        e_bdf2: Some(e_bdf2),
        q: q_new,
        kinetic: inner_vel(&u_new, &u_new),
        dissipation,
        quad: Some(quad),
        div_inf: divergence_max(&u_new),
        identity_residuals,
        solver_reports: ctx.reports,
    };

    if cfg.assert_invariants {
        let tol = cfg.invariant_rel_tol;
        check_common(cfg, &diag, &u_new, corr_sq.max(psi_sq))?;
        if forcing_free && setup.homogeneous() {
            let scale = 3.0 * k_n + k_nm1 + theta * (4.0 * qn2 + qnm2);
            invariant(
                "BDF2 energy balance",
                balance.abs() <= tol * scale,
                || format!("residual {balance:e}, scale {scale:e}"),
                &diag,
            )?;
        }
    }

    let next = State {
        step: state.step + 1,
        t: t_new,
        u: u_new,
        p: p_new,
        q: q_new,
    };
    let work = StepWorkspace {
        u_hat1,
        u_hat2,
        u1,
        u2,
        p1,
        p2,
        u_hat,
    };
    Ok((next, diag, work))
}

/// One step of the incremental pressure-correction baseline (`Q = 1`).
pub fn step_baseline_pc(
    state: &State,
    cfg: &SchemeConfig,
    setup: &dyn FlowSetup,
) -> Result<(State, StepDiagnostics)> {
    let g = *state.grid();
    let (tau, nu) = (cfg.tau, cfg.nu);
    let t_new = state.t + tau;
    let mut ctx = Ctx {
        cfg,
        setup,
        reports: Vec::with_capacity(2),
    };
    let bc = setup.dirichlet(&g, t_new);
    let (forcing, forcing_free) = ctx.forcing_free(&g, t_new);

    let mut rhs = state.u.scaled(1.0 / tau);
    rhs.axpy(-1.0, &gradient(&state.p));
    if cfg.convection {
        rhs.axpy(-1.0, &convect(&state.u));
    }
    if let Some(f) = &forcing {
        rhs.axpy(1.0, f);
    }
    let u_hat = ctx.helmholtz(1.0 / tau, &rhs, &bc)?;
    let (phi, u_new) = ctx.project(&u_hat, 1.0 / tau)?;
    let mut p_new = state.p.clone();
    p_new.axpy(1.0, &phi);
    p_new.center();

    let k_old = energy_k(&state.u, &state.p, tau);
    let k_new = energy_k(&u_new, &p_new, tau);
    let dissipation = nu * tau * grad_inner_vel(&u_hat, &u_hat);
    let jump = VelocityField::lincomb(1.0, &u_hat, -1.0, &state.u);
    let energy_res = k_new - k_old + dissipation + 0.5 * inner_vel(&jump, &jump);
    let corr = VelocityField::lincomb(1.0, &u_new, -1.0, &u_hat);
    let corr_sq = inner_vel(&corr, &corr);
    let phi_sq = tau * tau * grad_inner_cell(&phi, &phi);

    let mut identity_residuals = BTreeMap::new();
    identity_residuals.insert("proj1", (corr_sq - phi_sq).abs());
    identity_residuals.insert("proj1_rel", relative(corr_sq, phi_sq));
    identity_residuals.insert("energy", energy_res.abs());

    let diag = StepDiagnostics {
        step: state.step + 1,
        t: t_new,
        kind: SchemeKind::BaselinePc,
        k: k_new,
        e_mod: k_new,
        e_bdf2: None,
        q: 1.0,
        kinetic: inner_vel(&u_new, &u_new),
        dissipation,
        quad: None,
        div_inf: divergence_max(&u_new),
        identity_residuals,
        solver_reports: ctx.reports,
    };

    if cfg.assert_invariants {
        check_common(cfg, &diag, &u_new, corr_sq.max(phi_sq))?;
        if forcing_free && setup.homogeneous() && !cfg.convection {
            let scale = k_old + 1.0;
            invariant(
                "pressure-correction energy law",
                energy_res.abs() <= cfg.invariant_rel_tol * scale,
                || format!("residual {energy_res:e}, scale {scale:e}"),
                &diag,
            )?;
        }
    }

    let next = State {
        step: state.step + 1,
        t: t_new,
        u: u_new,
        p: p_new,
        q: 1.0,
    };
    Ok((next, diag))
}

/// Owns a trajectory and dispatches on the scheme kind. The second-order
/// scheme keeps the previous state and starts with a first-order step whose
/// multiplier is reset to 1.
pub struct Integrator<'a> {
    cfg: SchemeConfig,
    setup: &'a dyn FlowSetup,
    current: State,
    previous: Option<State>,
}

impl<'a> Integrator<'a> {
    pub fn new(cfg: SchemeConfig, setup: &'a dyn FlowSetup, initial: State) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            setup,
            current: initial,
            previous: None,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &State {
        &self.current
    }

    pub fn into_state(self) -> State {
        self.current
    }

    pub fn advance(&mut self) -> Result<StepDiagnostics> {
        let (next, diag) = match self.cfg.kind {
            SchemeKind::Pdrlm1 => step_pdrlm1(&self.current, &self.cfg, self.setup)?,
            SchemeKind::BaselinePc => step_baseline_pc(&self.current, &self.cfg, self.setup)?,
            SchemeKind::Pdrlm2 => match &self.previous {
                None => {
                    let (mut next, mut diag) = step_pdrlm1(&self.current, &self.cfg, self.setup)?;
                    next.q = 1.0;
                    diag.q = 1.0;
                    diag.e_mod = energy_modified(diag.k, 1.0, self.cfg.theta);
                    diag.kind = SchemeKind::Pdrlm2;
                    (next, diag)
                }
                Some(prev) => step_pdrlm2(&self.current, prev, &self.cfg, self.setup)?,
            },
        };
        let old = std::mem::replace(&mut self.current, next);
        if self.cfg.kind == SchemeKind::Pdrlm2 {
            self.previous = Some(old);
        }
        Ok(diag)
    }

    /// Advances until `t_end` (within half a step), collecting diagnostics.
    pub fn run_until(&mut self, t_end: f64) -> Result<Vec<StepDiagnostics>> {
        let mut out = Vec::new();
        while self.current.t < t_end - 0.5 * self.cfg.tau {
            out.push(self.advance()?);
        }
        Ok(out)
    }
}

/// Number of steps of size `tau` that reach `t_end`, or an error when
/// `t_end` is not an integer multiple of `tau` (relative slack `1e-9`).
pub fn step_count(t_end: f64, tau: f64) -> Result<usize> {
    let n = t_end / tau;
    let r = n.round();
    if !(r >= 1.0) || (n - r).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::argument(
            "T",
            format!("{t_end} is not a positive integer multiple of tau = {tau}"),
        ));
    }
    Ok(r as usize)
}

/// Makes a sampled velocity discretely divergence-free with one Neumann
/// solve. Boundary-normal faces and trace are kept.
pub fn project_divergence_free(u: &VelocityField, solver: &SolverConfig) -> Result<VelocityField> {
    let rhs = divergence(u).scaled(-1.0);
    let (phi, _) = poisson_neumann_solve(&rhs, solver)?;
    let mut out = u.clone();
    out.axpy(-1.0, &gradient(&phi));
    Ok(out)
}
