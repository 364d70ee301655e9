//! Incompressible Navier–Stokes on MAC grids with energy-stable
//! pressure-correction time stepping driven by a dynamically regularized
//! Lagrange multiplier.
//!
//! Module map:
//!
//! * [`mesh`]: staggered grid, fields, discrete operators and inner products
//! * [`linalg`]: CG solvers for the Helmholtz and Neumann Poisson problems
//! * [`convection`]: explicit advection term and the trilinear form
//! * [`scheme`]: P-DRLM1, P-DRLM2 and the baseline pressure-correction steppers
//! * [`problems`]: lattice vortex, lid-driven cavity, error norms, rate tables
//! * [`io`]: run configuration, CSV/snapshot writers, reference tables
//! * [`oracle`]: dense reference implementation of one first-order step
//! * [`selftest`]: operator identities and oracle agreement, used by the CLI

pub mod convection;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod problems;
pub mod scheme;
pub mod selftest;

pub use error::{Error, Result};
pub use linalg::{Preconditioner, SolveReport, SolverConfig};
pub use mesh::{DirichletData, Grid, ScalarField, TangentialTrace, VelocityField};
pub use scheme::{
    FlowSetup, Integrator, NoSlip, QuadraticCoefficients, SchemeConfig, SchemeKind, State,
    StepDiagnostics,
};
