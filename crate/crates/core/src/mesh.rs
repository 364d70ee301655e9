//! MAC staggered grid on a rectangle.
//!
//! Pressure-like scalars live at cell centers, the x-velocity on vertical
//! faces and the y-velocity on horizontal faces. Faces that lie on the
//! boundary carry the normal Dirichlet data; tangential Dirichlet data is
//! kept on the side in a [`TangentialTrace`] and enters the stencils through
//! linear ghost reflection (`ghost = 2 g - interior`).
//!
//! Storage is row-major in `j`:
//!
//! * u-face `(i, j)`, `i in 0..=nx`, `j in 0..ny`, at `(x0 + i hx, y0 + (j + 1/2) hy)`
//! * v-face `(i, j)`, `i in 0..nx`, `j in 0..=ny`, at `(x0 + (i + 1/2) hx, y0 + j hy)`
//! * cell `(i, j)`, `i in 0..nx`, `j in 0..ny`, at the cell center
//!
//! Discrete inner products weight interior faces and cells by `hx hy` and
//! boundary-normal faces by `hx hy / 2` (trapezoidal rule in the normal
//! direction). With these weights `gradient` and `divergence` are exact
//! negative adjoints on fields with zero normal trace.

use crate::error::{Error, Result};

/// Uniform rectangular MAC grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::contract(format!(
                "grid needs at least 2 cells per axis, got {nx}x{ny}"
            )));
        }
        if !(x1 > x0) || !(y1 > y0) || !(x1 - x0).is_finite() || !(y1 - y0).is_finite() {
            return Err(Error::contract(format!(
                "degenerate domain [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Self {
            nx,
            ny,
            x0,
            x1,
            y0,
            y1,
            hx: (x1 - x0) / nx as f64,
            hy: (y1 - y0) / ny as f64,
        })
    }

    /// `n x n` cells on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 0.0, 1.0, 0.0, 1.0)
    }

    pub fn n_u(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_v(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn u_idx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn v_idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn c_idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn u_face(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + i as f64 * self.hx,
            self.y0 + (j as f64 + 0.5) * self.hy,
        )
    }

    pub fn v_face(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.hx,
            self.y0 + j as f64 * self.hy,
        )
    }

    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.hx,
            self.y0 + (j as f64 + 0.5) * self.hy,
        )
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Quadrature weight of u-face `(i, _)`.
    #[inline]
    pub fn u_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx {
            0.5 * self.hx * self.hy
        } else {
            self.hx * self.hy
        }
    }

    /// Quadrature weight of v-face `(_, j)`.
    #[inline]
    pub fn v_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny {
            0.5 * self.hx * self.hy
        } else {
            self.hx * self.hy
        }
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::contract("fields live on different grids"))
        }
    }
}

/// Tangential Dirichlet values along the four walls.
///
/// `south`/`north` hold `u` at `(x_i, y0)`/`(x_i, y1)` for the `nx + 1`
/// vertical-face abscissae; `west`/`east` hold `v` at `(x0, y_j)`/`(x1, y_j)`
/// for the `ny + 1` horizontal-face ordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentialTrace {
    pub south: Vec<f64>,
    pub north: Vec<f64>,
    pub west: Vec<f64>,
    pub east: Vec<f64>,
}

impl TangentialTrace {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            south: vec![0.0; grid.nx + 1],
            north: vec![0.0; grid.nx + 1],
            west: vec![0.0; grid.ny + 1],
            east: vec![0.0; grid.ny + 1],
        }
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.south, &self.north, &self.west, &self.east]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.south,
            &mut self.north,
            &mut self.west,
            &mut self.east,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|&x| x == 0.0))
    }

    /// `self <- self + a * other`
    pub fn axpy(&mut self, a: f64, other: &TangentialTrace) {
        for (dst, src) in self.parts_mut().into_iter().zip(other.parts()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for p in self.parts_mut() {
            p.iter_mut().for_each(|x| *x *= a);
        }
    }
}

/// Full Dirichlet data for a velocity field: tangential trace plus the
/// normal values on boundary faces.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletData {
    pub tangential: TangentialTrace,
    /// `u` on the `i = 0` faces, one per row `j`.
    pub u_west: Vec<f64>,
    /// `u` on the `i = nx` faces.
    pub u_east: Vec<f64>,
    /// `v` on the `j = 0` faces, one per column `i`.
    pub v_south: Vec<f64>,
    /// `v` on the `j = ny` faces.
    pub v_north: Vec<f64>,
}

impl DirichletData {
    pub fn homogeneous(grid: &Grid) -> Self {
        Self {
            tangential: TangentialTrace::zeros(grid),
            u_west: vec![0.0; grid.ny],
            u_east: vec![0.0; grid.ny],
            v_south: vec![0.0; grid.nx],
            v_north: vec![0.0; grid.nx],
        }
    }

    /// Samples a velocity function `(x, y) -> [u, v]` at every boundary location.
    pub fn sample(grid: &Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut d = Self::homogeneous(grid);
        for i in 0..=nx {
            let x = grid.x0 + i as f64 * grid.hx;
            d.tangential.south[i] = f(x, grid.y0)[0];
            d.tangential.north[i] = f(x, grid.y1)[0];
        }
        for j in 0..=ny {
            let y = grid.y0 + j as f64 * grid.hy;
            d.tangential.west[j] = f(grid.x0, y)[1];
            d.tangential.east[j] = f(grid.x1, y)[1];
        }
        for j in 0..ny {
            d.u_west[j] = f(grid.u_face(0, j).0, grid.u_face(0, j).1)[0];
            let (x, y) = grid.u_face(nx, j);
            d.u_east[j] = f(x, y)[0];
        }
        for i in 0..nx {
            let (x, y) = grid.v_face(i, 0);
            d.v_south[i] = f(x, y)[1];
            let (x, y) = grid.v_face(i, ny);
            d.v_north[i] = f(x, y)[1];
        }
        d
    }

    pub fn is_homogeneous(&self) -> bool {
        self.tangential.is_zero()
            && [&self.u_west, &self.u_east, &self.v_south, &self.v_north]
                .iter()
                .all(|p| p.iter().all(|&x| x == 0.0))
    }

    /// Net outward normal flux through the boundary.
    pub fn net_flux(&self, grid: &Grid) -> f64 {
        let mut flux = 0.0;
        for j in 0..grid.ny {
            flux += (self.u_east[j] - self.u_west[j]) * grid.hy;
        }
        for i in 0..grid.nx {
            flux += (self.v_north[i] - self.v_south[i]) * grid.hx;
        }
        flux
    }
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::contract(format!(
                "scalar field needs {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn sample(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut s = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell(i, j);
                s.values[grid.c_idx(i, j)] = f(x, y);
            }
        }
        s
    }

    /// Arithmetic mean over cells (equal to the area-weighted mean on a uniform grid).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Subtracts the mean in place.
    pub fn center(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|x| *x -= m);
    }

    pub fn centered(mut self) -> Self {
        self.center();
        self
    }

    pub fn is_zero_mean(&self) -> bool {
        self.mean().abs() <= 1e-12 * self.max_abs().max(1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (d, s) in self.values.iter_mut().zip(&other.values) {
            *d += a * s;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|x| a * x).collect(),
        }
    }
}

/// Staggered velocity field with its tangential wall trace.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub trace: TangentialTrace,
}

impl VelocityField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            u: vec![0.0; grid.n_u()],
            v: vec![0.0; grid.n_v()],
            trace: TangentialTrace::zeros(grid),
        }
    }

    pub fn from_components(grid: &Grid, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != grid.n_u() || v.len() != grid.n_v() {
            return Err(Error::contract(format!(
                "velocity field needs {}+{} face values, got {}+{}",
                grid.n_u(),
                grid.n_v(),
                u.len(),
                v.len()
            )));
        }
        Ok(Self {
            grid: *grid,
            u,
            v,
            trace: TangentialTrace::zeros(grid),
        })
    }

    /// Samples `f(x, y) = [u, v]` on all faces, boundary faces included.
    /// The tangential trace is sampled from the same function.
    pub fn sample(grid: &Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut vel = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                let (x, y) = grid.u_face(i, j);
                vel.u[grid.u_idx(i, j)] = f(x, y)[0];
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.v_face(i, j);
                vel.v[grid.v_idx(i, j)] = f(x, y)[1];
            }
        }
        vel.trace = DirichletData::sample(grid, f).tangential;
        vel
    }

    /// Overwrites boundary-normal faces and the tangential trace with `bc`.
    pub fn impose(&mut self, bc: &DirichletData) {
        let g = self.grid;
        for j in 0..g.ny {
            self.u[g.u_idx(0, j)] = bc.u_west[j];
            self.u[g.u_idx(g.nx, j)] = bc.u_east[j];
        }
        for i in 0..g.nx {
            self.v[g.v_idx(i, 0)] = bc.v_south[i];
            self.v[g.v_idx(i, g.ny)] = bc.v_north[i];
        }
        self.trace = bc.tangential.clone();
    }

    /// Zeroes the boundary-normal faces (the trace is left alone).
    pub fn clear_normal_boundary(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            self.u[g.u_idx(0, j)] = 0.0;
            self.u[g.u_idx(g.nx, j)] = 0.0;
        }
        for i in 0..g.nx {
            self.v[g.v_idx(i, 0)] = 0.0;
            self.v[g.v_idx(i, g.ny)] = 0.0;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self <- self + a * other`, trace included.
    pub fn axpy(&mut self, a: f64, other: &VelocityField) {
        for (d, s) in self.u.iter_mut().zip(&other.u) {
            *d += a * s;
        }
        for (d, s) in self.v.iter_mut().zip(&other.v) {
            *d += a * s;
        }
        self.trace.axpy(a, &other.trace);
    }

    pub fn scale(&mut self, a: f64) {
        self.u.iter_mut().for_each(|x| *x *= a);
        self.v.iter_mut().for_each(|x| *x *= a);
        self.trace.scale(a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `a * x + b * y`
    pub fn lincomb(a: f64, x: &VelocityField, b: f64, y: &VelocityField) -> Self {
        let mut out = x.scaled(a);
        out.axpy(b, y);
        out
    }

    /// Velocity components averaged to cell centers.
    pub fn at_cell_centers(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        let mut uc = vec![0.0; g.n_cells()];
        let mut vc = vec![0.0; g.n_cells()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.c_idx(i, j);
                uc[c] = 0.5 * (self.u[g.u_idx(i, j)] + self.u[g.u_idx(i + 1, j)]);
                vc[c] = 0.5 * (self.v[g.v_idx(i, j)] + self.v[g.v_idx(i, j + 1)]);
            }
        }
        (uc, vc)
    }

    /// Bilinear interpolation of the x-velocity at `(x, y)`, using the
    /// tangential trace on the south and north walls.
    pub fn interpolate_u(&self, x: f64, y: f64) -> f64 {
        let g = self.grid;
        // rows: wall y0, face rows j = 0..ny at y0 + (j+1/2)hy, wall y1
        let sx = ((x - g.x0) / g.hx).clamp(0.0, g.nx as f64);
        let i = (sx.floor() as usize).min(g.nx - 1);
        let fx = sx - i as f64;
        let at_row = |r: isize, i: usize| -> (f64, f64) {
            if r < 0 {
                (g.y0, self.trace.south[i])
            } else if r as usize >= g.ny {
                (g.y1, self.trace.north[i])
            } else {
                let r = r as usize;
                (g.y0 + (r as f64 + 0.5) * g.hy, self.u[g.u_idx(i, r)])
            }
        };
        let sy = (y - g.y0) / g.hy - 0.5;
        let r0 = (sy.floor() as isize).clamp(-1, g.ny as isize - 1);
        let (ya, a0) = at_row(r0, i);
        let (_, a1) = at_row(r0, i + 1);
        let (yb, b0) = at_row(r0 + 1, i);
        let (_, b1) = at_row(r0 + 1, i + 1);
        let fy = ((y - ya) / (yb - ya)).clamp(0.0, 1.0);
        let lo = a0 + fx * (a1 - a0);
        let hi = b0 + fx * (b1 - b0);
        lo + fy * (hi - lo)
    }

    /// Bilinear interpolation of the y-velocity at `(x, y)`, using the
    /// tangential trace on the west and east walls.
    pub fn interpolate_v(&self, x: f64, y: f64) -> f64 {
        let g = self.grid;
        let sy = ((y - g.y0) / g.hy).clamp(0.0, g.ny as f64);
        let j = (sy.floor() as usize).min(g.ny - 1);
        let fy = sy - j as f64;
        let at_col = |c: isize, j: usize| -> (f64, f64) {
            if c < 0 {
                (g.x0, self.trace.west[j])
            } else if c as usize >= g.nx {
                (g.x1, self.trace.east[j])
            } else {
                let c = c as usize;
                (g.x0 + (c as f64 + 0.5) * g.hx, self.v[g.v_idx(c, j)])
            }
        };
        let sx = (x - g.x0) / g.hx - 0.5;
        let c0 = (sx.floor() as isize).clamp(-1, g.nx as isize - 1);
        let (xa, a0) = at_col(c0, j);
        let (_, a1) = at_col(c0, j + 1);
        let (xb, b0) = at_col(c0 + 1, j);
        let (_, b1) = at_col(c0 + 1, j + 1);
        let fx = ((x - xa) / (xb - xa)).clamp(0.0, 1.0);
        let lo = a0 + fy * (a1 - a0);
        let hi = b0 + fy * (b1 - b0);
        lo + fx * (hi - lo)
    }
}

/// Cell-centered divergence using the stored boundary-face values.
pub fn divergence(vel: &VelocityField) -> ScalarField {
    let g = vel.grid;
    let mut out = ScalarField::zeros(&g);
    let (rx, ry) = (1.0 / g.hx, 1.0 / g.hy);
    for j in 0..g.ny {
        for i in 0..g.nx {
            out.values[g.c_idx(i, j)] = (vel.u[g.u_idx(i + 1, j)] - vel.u[g.u_idx(i, j)]) * rx
                + (vel.v[g.v_idx(i, j + 1)] - vel.v[g.v_idx(i, j)]) * ry;
        }
    }
    out
}

/// Face gradient of a cell field; boundary-normal faces carry 0 and the
/// trace is zero.
pub fn gradient(s: &ScalarField) -> VelocityField {
    let g = s.grid;
    let mut out = VelocityField::zeros(&g);
    let (rx, ry) = (1.0 / g.hx, 1.0 / g.hy);
    for j in 0..g.ny {
        for i in 1..g.nx {
            out.u[g.u_idx(i, j)] = (s.values[g.c_idx(i, j)] - s.values[g.c_idx(i - 1, j)]) * rx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            out.v[g.v_idx(i, j)] = (s.values[g.c_idx(i, j)] - s.values[g.c_idx(i, j - 1)]) * ry;
        }
    }
    out
}

/// Five-point Laplacian of both components on interior faces. Normal
/// Dirichlet values are read from the boundary faces, tangential ones from
/// `trace` through ghost reflection. Boundary-normal faces of the output are 0.
pub(crate) fn laplacian_raw(
    g: &Grid,
    u: &[f64],
    v: &[f64],
    trace: &TangentialTrace,
    out_u: &mut [f64],
    out_v: &mut [f64],
) {
    let (nx, ny) = (g.nx, g.ny);
    let (rx2, ry2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    let su = nx + 1;
    for j in 0..ny {
        out_u[j * su] = 0.0;
        out_u[j * su + nx] = 0.0;
        for i in 1..nx {
            let k = j * su + i;
            let c = u[k];
            let south = if j == 0 {
                2.0 * trace.south[i] - c
            } else {
                u[k - su]
            };
            let north = if j == ny - 1 {
                2.0 * trace.north[i] - c
            } else {
                u[k + su]
            };
            out_u[k] = (u[k - 1] - 2.0 * c + u[k + 1]) * rx2 + (south - 2.0 * c + north) * ry2;
        }
    }
    let sv = nx;
    for i in 0..nx {
        out_v[i] = 0.0;
        out_v[ny * sv + i] = 0.0;
    }
    for j in 1..ny {
        for i in 0..nx {
            let k = j * sv + i;
            let c = v[k];
            let west = if i == 0 {
                2.0 * trace.west[j] - c
            } else {
                v[k - 1]
            };
            let east = if i == nx - 1 {
                2.0 * trace.east[j] - c
            } else {
                v[k + 1]
            };
            out_v[k] = (west - 2.0 * c + east) * rx2 + (v[k - sv] - 2.0 * c + v[k + sv]) * ry2;
        }
    }
}

/// Vector Laplacian with the field's own Dirichlet data.
pub fn laplacian_velocity(vel: &VelocityField) -> VelocityField {
    let g = vel.grid;
    let mut out = VelocityField::zeros(&g);
    laplacian_raw(&g, &vel.u, &vel.v, &vel.trace, &mut out.u, &mut out.v);
    out
}

/// Weighted L2 inner product of two velocity fields.
pub fn inner_vel(a: &VelocityField, b: &VelocityField) -> f64 {
    let g = a.grid;
    debug_assert_eq!(g, b.grid);
    let mut sum = 0.0;
    for j in 0..g.ny {
        for i in 0..=g.nx {
            let k = g.u_idx(i, j);
            sum += g.u_weight(i) * a.u[k] * b.u[k];
        }
    }
    for j in 0..=g.ny {
        let w = g.v_weight(j);
        for i in 0..g.nx {
            let k = g.v_idx(i, j);
            sum += w * a.v[k] * b.v[k];
        }
    }
    sum
}

pub fn norm_vel(a: &VelocityField) -> f64 {
    inner_vel(a, a).sqrt()
}

/// Checked variant of [`inner_vel`].
pub fn try_inner_vel(a: &VelocityField, b: &VelocityField) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(inner_vel(a, b))
}

pub fn inner_cell(a: &ScalarField, b: &ScalarField) -> f64 {
    let w = a.grid.cell_area();
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        * w
}

pub fn norm_cell(a: &ScalarField) -> f64 {
    inner_cell(a, a).sqrt()
}

/// Discrete `(grad a, grad b)` for velocity fields, consistent with
/// [`laplacian_velocity`]: for fields with zero Dirichlet data,
/// `(-lap a, b) = grad_inner_vel(a, b)` exactly.
///
/// Wall contributions use the one-sided difference between the first face
/// row and the wall value over half a cell.
pub fn grad_inner_vel(a: &VelocityField, b: &VelocityField) -> f64 {
    let g = a.grid;
    let (nx, ny) = (g.nx, g.ny);
    let area = g.hx * g.hy;
    let (rx2, ry2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut wall = 0.0;

    // u: x-differences between all horizontally adjacent faces
    for j in 0..ny {
        for i in 0..nx {
            let (k0, k1) = (g.u_idx(i, j), g.u_idx(i + 1, j));
            sx += (a.u[k1] - a.u[k0]) * (b.u[k1] - b.u[k0]);
        }
    }
    // u: y-differences on interior columns, plus the two walls
    for i in 1..nx {
        for j in 0..ny - 1 {
            let (k0, k1) = (g.u_idx(i, j), g.u_idx(i, j + 1));
            sy += (a.u[k1] - a.u[k0]) * (b.u[k1] - b.u[k0]);
        }
        let (ks, kn) = (g.u_idx(i, 0), g.u_idx(i, ny - 1));
        wall += 2.0
            * ((a.u[ks] - a.trace.south[i]) * (b.u[ks] - b.trace.south[i])
                + (a.u[kn] - a.trace.north[i]) * (b.u[kn] - b.trace.north[i]))
            * ry2;
    }
    // v: y-differences between all vertically adjacent faces
    for j in 0..ny {
        for i in 0..nx {
            let (k0, k1) = (g.v_idx(i, j), g.v_idx(i, j + 1));
            sy += (a.v[k1] - a.v[k0]) * (b.v[k1] - b.v[k0]);
        }
    }
    // v: x-differences on interior rows, plus the two walls
    for j in 1..ny {
        for i in 0..nx - 1 {
            let (k0, k1) = (g.v_idx(i, j), g.v_idx(i + 1, j));
            sx += (a.v[k1] - a.v[k0]) * (b.v[k1] - b.v[k0]);
        }
        let (kw, ke) = (g.v_idx(0, j), g.v_idx(nx - 1, j));
        wall += 2.0
            * ((a.v[kw] - a.trace.west[j]) * (b.v[kw] - b.trace.west[j])
                + (a.v[ke] - a.trace.east[j]) * (b.v[ke] - b.trace.east[j]))
            * rx2;
    }
    (sx * rx2 + sy * ry2 + wall) * area
}

/// `||grad vel||`, see [`grad_inner_vel`].
pub fn grad_seminorm_vel(vel: &VelocityField) -> f64 {
    grad_inner_vel(vel, vel).max(0.0).sqrt()
}

/// `(grad a, grad b)` for cell fields, over interior faces.
pub fn grad_inner_cell(a: &ScalarField, b: &ScalarField) -> f64 {
    let g = a.grid;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for j in 0..g.ny {
        for i in 1..g.nx {
            let (k0, k1) = (g.c_idx(i - 1, j), g.c_idx(i, j));
            sx += (a.values[k1] - a.values[k0]) * (b.values[k1] - b.values[k0]);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let (k0, k1) = (g.c_idx(i, j - 1), g.c_idx(i, j));
            sy += (a.values[k1] - a.values[k0]) * (b.values[k1] - b.values[k0]);
        }
    }
    (sx / (g.hx * g.hx) + sy / (g.hy * g.hy)) * g.hx * g.hy
}

/// Face-weighted norm of `gradient(s)`.
pub fn grad_norm_pressure(s: &ScalarField) -> f64 {
    grad_inner_cell(s, s).max(0.0).sqrt()
}

/// Cell-centered Neumann Laplacian `-div grad s` (positive semidefinite).
pub(crate) fn neg_laplacian_neumann_raw(g: &Grid, s: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (rx2, ry2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let c = s[k];
            let mut acc = 0.0;
            if i > 0 {
                acc += (c - s[k - 1]) * rx2;
            }
            if i + 1 < nx {
                acc += (c - s[k + 1]) * rx2;
            }
            if j > 0 {
                acc += (c - s[k - nx]) * ry2;
            }
            if j + 1 < ny {
                acc += (c - s[k + nx]) * ry2;
            }
            out[k] = acc;
        }
    }
}

/// `-div(grad s)` with homogeneous Neumann data.
pub fn neg_laplacian_neumann(s: &ScalarField) -> ScalarField {
    let mut out = ScalarField::zeros(&s.grid);
    neg_laplacian_neumann_raw(&s.grid, &s.values, &mut out.values);
    out
}

/// Max-norm of the divergence.
pub fn divergence_max(vel: &VelocityField) -> f64 {
    divergence(vel).max_abs()
}
