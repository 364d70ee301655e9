//! Dense reference implementation for small grids.
//!
//! Every operator is assembled as an explicit matrix from Kronecker
//! products of 1D difference matrices, and every linear solve is an LU
//! factorization. Nothing here calls the stencil loops in `mesh`,
//! `convection` or `linalg`, so agreement between the two is a real check.
//!
//! A velocity field is packed as `z = [u; v; south; north; west; east]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Preconditioner, SolverConfig};
use crate::mesh::{DirichletData, Grid, ScalarField, VelocityField};
use crate::problems::streamfunction_velocity;
use crate::scheme::{
    energy_k, solve_multiplier_quadratic, step_pdrlm1, FlowSetup, SchemeConfig, SchemeKind, State,
};

fn zeros(r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::zeros(r, c)
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Identity on the interior nodes of `0..=n`, zero at both ends.
fn interior_mask(n: usize) -> DMatrix<f64> {
    let mut m = eye(n + 1);
    m[(0, 0)] = 0.0;
    m[(n, n)] = 0.0;
    m
}

/// `(n-1) x (n+1)` selection of the interior nodes.
fn interior_select(n: usize) -> DMatrix<f64> {
    let mut m = zeros(n - 1, n + 1);
    for k in 0..n - 1 {
        m[(k, k + 1)] = 1.0;
    }
    m
}

/// Second difference on nodes `0..=n`, interior rows only.
fn second_diff_nodes(n: usize, h: f64) -> DMatrix<f64> {
    let mut m = zeros(n + 1, n + 1);
    for k in 1..n {
        m[(k, k - 1)] = 1.0 / (h * h);
        m[(k, k)] = -2.0 / (h * h);
        m[(k, k + 1)] = 1.0 / (h * h);
    }
    m
}

/// Second difference on `n` cell-centered points with reflected ghosts.
fn second_diff_reflect(n: usize, h: f64) -> DMatrix<f64> {
    let mut m = zeros(n, n);
    for k in 0..n {
        m[(k, k)] = -2.0 / (h * h);
        if k > 0 {
            m[(k, k - 1)] = 1.0 / (h * h);
        } else {
            m[(k, k)] -= 1.0 / (h * h);
        }
        if k + 1 < n {
            m[(k, k + 1)] = 1.0 / (h * h);
        } else {
            m[(k, k)] -= 1.0 / (h * h);
        }
    }
    m
}

/// Centered first difference on nodes `0..=n`, interior rows only.
fn centered_nodes(n: usize, h: f64) -> DMatrix<f64> {
    let mut m = zeros(n + 1, n + 1);
    for k in 1..n {
        m[(k, k - 1)] = -0.5 / h;
        m[(k, k + 1)] = 0.5 / h;
    }
    m
}

/// Centered first difference on `n` cell-centered points with reflected
/// ghosts; the ghost's wall part is returned separately as
/// `(matrix, low-wall column, high-wall column)`.
fn centered_reflect(n: usize, h: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut m = zeros(n, n);
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for k in 0..n {
        if k > 0 {
            m[(k, k - 1)] -= 0.5 / h;
        } else {
            // ghost = 2 g - c
            m[(k, k)] += 0.5 / h;
            lo[k] -= 1.0 / h;
        }
        if k + 1 < n {
            m[(k, k + 1)] += 0.5 / h;
        } else {
            m[(k, k)] -= 0.5 / h;
            hi[k] += 1.0 / h;
        }
    }
    (m, lo, hi)
}

/// Forward difference `n x (n+1)`.
fn forward_diff(n: usize, h: f64) -> DMatrix<f64> {
    let mut m = zeros(n, n + 1);
    for k in 0..n {
        m[(k, k)] = -1.0 / h;
        m[(k, k + 1)] = 1.0 / h;
    }
    m
}

/// Cell-to-node difference `(n+1) x n`, zero on the end nodes.
fn node_diff(n: usize, h: f64) -> DMatrix<f64> {
    let mut m = zeros(n + 1, n);
    for k in 1..n {
        m[(k, k - 1)] = -1.0 / h;
        m[(k, k)] = 1.0 / h;
    }
    m
}

/// Cell-to-node average `(n+1) x n`, zero on the end nodes.
fn node_avg(n: usize) -> DMatrix<f64> {
    let mut m = zeros(n + 1, n);
    for k in 1..n {
        m[(k, k - 1)] = 0.5;
        m[(k, k)] = 0.5;
    }
    m
}

/// Node-to-cell average `n x (n+1)`.
fn cell_avg(n: usize) -> DMatrix<f64> {
    let mut m = zeros(n, n + 1);
    for k in 0..n {
        m[(k, k)] = 0.5;
        m[(k, k + 1)] = 0.5;
    }
    m
}

fn unit_col(n: usize, k: usize) -> DMatrix<f64> {
    let mut m = zeros(n, 1);
    m[(k, 0)] = 1.0;
    m
}

/// Explicit matrices of the discrete operators on one grid.
pub struct DenseOperators {
    pub grid: Grid,
    pub n_u: usize,
    pub n_v: usize,
    pub n_trace: usize,
    /// Face-space quadrature weights.
    pub weights: DVector<f64>,
    /// Vector Laplacian, faces x packed (boundary-normal rows are 0).
    pub laplacian: DMatrix<f64>,
    /// Cells x faces.
    pub divergence: DMatrix<f64>,
    /// Faces x cells.
    pub gradient: DMatrix<f64>,
    /// Rows of the velocity Dirichlet form, packed input; the form is
    /// `(E a)^T diag(energy_weights) (E b)`.
    pub energy: DMatrix<f64>,
    pub energy_weights: DVector<f64>,
}

impl DenseOperators {
    pub fn new(grid: &Grid) -> Self {
        let g = *grid;
        let (nx, ny, hx, hy) = (g.nx, g.ny, g.hx, g.hy);
        let n_u = (nx + 1) * ny;
        let n_v = nx * (ny + 1);
        let (ns, nw) = (nx + 1, ny + 1);
        let n_trace = 2 * ns + 2 * nw;
        let nf = n_u + n_v;
        let nz = nf + n_trace;
        let (off_s, off_n, off_w, off_e) = (nf, nf + ns, nf + 2 * ns, nf + 2 * ns + nw);

        // weights: trapezoid in the normal direction
        let wx = {
            let mut w = DVector::from_element(nx + 1, hx);
            w[0] *= 0.5;
            w[nx] *= 0.5;
            w
        };
        let wy = {
            let mut w = DVector::from_element(ny + 1, hy);
            w[0] *= 0.5;
            w[ny] *= 0.5;
            w
        };
        let mut weights = DVector::zeros(nf);
        for j in 0..ny {
            for i in 0..=nx {
                weights[j * (nx + 1) + i] = wx[i] * hy;
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                weights[n_u + j * nx + i] = hx * wy[j];
            }
        }

        // Laplacian
        let mut lap = zeros(nf, nz);
        let mx = interior_mask(nx);
        let my = interior_mask(ny);
        let lu = eye(ny).kronecker(&second_diff_nodes(nx, hx))
            + second_diff_reflect(ny, hy).kronecker(&mx);
        lap.view_mut((0, 0), (n_u, n_u)).copy_from(&lu);
        let south = unit_col(ny, 0).kronecker(&mx) * (2.0 / (hy * hy));
        let north = unit_col(ny, ny - 1).kronecker(&mx) * (2.0 / (hy * hy));
        lap.view_mut((0, off_s), (n_u, ns)).copy_from(&south);
        lap.view_mut((0, off_n), (n_u, ns)).copy_from(&north);
        let lv = second_diff_nodes(ny, hy).kronecker(&eye(nx))
            + my.kronecker(&second_diff_reflect(nx, hx));
        lap.view_mut((n_u, n_u), (n_v, n_v)).copy_from(&lv);
        let west = my.kronecker(&unit_col(nx, 0)) * (2.0 / (hx * hx));
        let east = my.kronecker(&unit_col(nx, nx - 1)) * (2.0 / (hx * hx));
        lap.view_mut((n_u, off_w), (n_v, nw)).copy_from(&west);
        lap.view_mut((n_u, off_e), (n_v, nw)).copy_from(&east);

        // divergence and gradient
        let mut div = zeros(nx * ny, nf);
        div.view_mut((0, 0), (nx * ny, n_u))
            .copy_from(&eye(ny).kronecker(&forward_diff(nx, hx)));
        div.view_mut((0, n_u), (nx * ny, n_v))
            .copy_from(&forward_diff(ny, hy).kronecker(&eye(nx)));
        let mut grad = zeros(nf, nx * ny);
        grad.view_mut((0, 0), (n_u, nx * ny))
            .copy_from(&eye(ny).kronecker(&node_diff(nx, hx)));
        grad.view_mut((n_u, 0), (n_v, nx * ny))
            .copy_from(&node_diff(ny, hy).kronecker(&eye(nx)));

        // Dirichlet form: u_x, u_y (interior columns), u walls, then v
        let area = hx * hy;
        let s2 = std::f64::consts::SQRT_2;
        let sel_x = interior_select(nx);
        let sel_y = interior_select(ny);
        let blocks_u: Vec<(DMatrix<f64>, usize, Option<(usize, f64)>)> = vec![
            (eye(ny).kronecker(&forward_diff(nx, hx)), 0, None),
            (forward_diff(ny - 1, hy).kronecker(&sel_x), 0, None),
        ];
        let mut rows: Vec<DMatrix<f64>> = Vec::new();
        let mut push_rows = |m: DMatrix<f64>| rows.push(m);
        for (m, col, _) in blocks_u {
            let mut full = zeros(m.nrows(), nz);
            full.view_mut((0, col), (m.nrows(), m.ncols()))
                .copy_from(&m);
            push_rows(full);
        }
        // u walls: sqrt(2)/hy (u(i, 0) - south_i) and (u(i, ny-1) - north_i)
        for (jrow, off) in [(0, off_s), (ny - 1, off_n)] {
            let mut full = zeros(nx - 1, nz);
            let pick = unit_col(ny, jrow).transpose().kronecker(&sel_x) * (s2 / hy);
            full.view_mut((0, 0), (nx - 1, n_u)).copy_from(&pick);
            full.view_mut((0, off), (nx - 1, ns))
                .copy_from(&(-&sel_x * (s2 / hy)));
            push_rows(full);
        }
        {
            let m = forward_diff(ny, hy).kronecker(&eye(nx));
            let mut full = zeros(m.nrows(), nz);
            full.view_mut((0, n_u), (m.nrows(), n_v)).copy_from(&m);
            push_rows(full);
            let m = sel_y.kronecker(&forward_diff(nx - 1, hx));
            let mut full = zeros(m.nrows(), nz);
            full.view_mut((0, n_u), (m.nrows(), n_v)).copy_from(&m);
            push_rows(full);
        }
        for (irow, off) in [(0, off_w), (nx - 1, off_e)] {
            let mut full = zeros(ny - 1, nz);
            let pick = sel_y.kronecker(&unit_col(nx, irow).transpose()) * (s2 / hx);
            full.view_mut((0, n_u), (ny - 1, n_v)).copy_from(&pick);
            full.view_mut((0, off), (ny - 1, nw))
                .copy_from(&(-&sel_y * (s2 / hx)));
            push_rows(full);
        }
        let total: usize = rows.iter().map(|m| m.nrows()).sum();
        let mut energy = zeros(total, nz);
        let mut r0 = 0;
        for m in rows {
            energy.view_mut((r0, 0), (m.nrows(), nz)).copy_from(&m);
            r0 += m.nrows();
        }
        let energy_weights = DVector::from_element(total, area);

        Self {
            grid: g,
            n_u,
            n_v,
            n_trace,
            weights,
            laplacian: lap,
            divergence: div,
            gradient: grad,
            energy,
            energy_weights,
        }
    }

    pub fn n_faces(&self) -> usize {
        self.n_u + self.n_v
    }

    pub fn pack(&self, vel: &VelocityField) -> DVector<f64> {
        let t = &vel.trace;
        DVector::from_iterator(
            self.n_faces() + self.n_trace,
            vel.u
                .iter()
                .chain(&vel.v)
                .chain(&t.south)
                .chain(&t.north)
                .chain(&t.west)
                .chain(&t.east)
                .copied(),
        )
    }

    /// Packed vector with the faces and trace of `bc` only.
    pub fn pack_bc(&self, bc: &DirichletData) -> DVector<f64> {
        let mut vel = VelocityField::zeros(&self.grid);
        vel.impose(bc);
        self.pack(&vel)
    }

    pub fn unpack(&self, z: &DVector<f64>) -> VelocityField {
        let g = self.grid;
        let (nu, nf) = (self.n_u, self.n_faces());
        let mut vel = VelocityField::zeros(&g);
        vel.u.copy_from_slice(&z.as_slice()[..nu]);
        vel.v.copy_from_slice(&z.as_slice()[nu..nf]);
        let mut k = nf;
        for part in [
            &mut vel.trace.south,
            &mut vel.trace.north,
            &mut vel.trace.west,
            &mut vel.trace.east,
        ] {
            let n = part.len();
            part.copy_from_slice(&z.as_slice()[k..k + n]);
            k += n;
        }
        vel
    }

    fn faces<'a>(&self, z: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        z.rows(0, self.n_faces())
    }

    fn is_boundary_face(&self, k: usize) -> bool {
        let g = self.grid;
        if k < self.n_u {
            let i = k % (g.nx + 1);
            i == 0 || i == g.nx
        } else {
            let j = (k - self.n_u) / g.nx;
            j == 0 || j == g.ny
        }
    }

    /// Advection matrix of `(a . grad) b` as a map of packed `b`.
    pub fn convection(&self, a: &VelocityField) -> DMatrix<f64> {
        let g = self.grid;
        let (nx, ny, hx, hy) = (g.nx, g.ny, g.hx, g.hy);
        let (n_u, n_v, nf) = (self.n_u, self.n_v, self.n_faces());
        let ns = nx + 1;
        let nw = ny + 1;
        let (off_s, off_n, off_w, off_e) = (nf, nf + ns, nf + 2 * ns, nf + 2 * ns + nw);
        let mut m = zeros(nf, nf + self.n_trace);
        let za = self.pack(a);
        let au = za.rows(0, n_u).into_owned();
        let av = za.rows(n_u, n_v).into_owned();
        let mx = interior_mask(nx);
        let my = interior_mask(ny);

        // u rows: a_u d/dx u + avg(a_v) d/dy u
        let avg_v = cell_avg(ny).kronecker(&node_avg(nx)) * &av;
        let dudx = eye(ny).kronecker(&centered_nodes(nx, hx));
        let (cy, lo, hi) = centered_reflect(ny, hy);
        let dudy = cy.kronecker(&mx);
        let rows_u = DMatrix::from_diagonal(&au) * dudx + DMatrix::from_diagonal(&avg_v) * dudy;
        m.view_mut((0, 0), (n_u, n_u)).copy_from(&rows_u);
        let d_avg = DMatrix::from_diagonal(&avg_v);
        let lo_m = DMatrix::from_column_slice(ny, 1, lo.as_slice()).kronecker(&mx);
        let hi_m = DMatrix::from_column_slice(ny, 1, hi.as_slice()).kronecker(&mx);
        m.view_mut((0, off_s), (n_u, ns))
            .copy_from(&(&d_avg * lo_m));
        m.view_mut((0, off_n), (n_u, ns))
            .copy_from(&(&d_avg * hi_m));

        // v rows: avg(a_u) d/dx v + a_v d/dy v
        let avg_u = node_avg(ny).kronecker(&cell_avg(nx)) * &au;
        let dvdy = centered_nodes(ny, hy).kronecker(&eye(nx));
        let (cx, lo, hi) = centered_reflect(nx, hx);
        let dvdx = my.kronecker(&cx);
        let rows_v = DMatrix::from_diagonal(&avg_u) * dvdx + DMatrix::from_diagonal(&av) * dvdy;
        m.view_mut((n_u, n_u), (n_v, n_v)).copy_from(&rows_v);
        let d_avg = DMatrix::from_diagonal(&avg_u);
        let lo_m = my.kronecker(&DMatrix::from_column_slice(nx, 1, lo.as_slice()));
        let hi_m = my.kronecker(&DMatrix::from_column_slice(nx, 1, hi.as_slice()));
        m.view_mut((n_u, off_w), (n_v, nw))
            .copy_from(&(&d_avg * lo_m));
        m.view_mut((n_u, off_e), (n_v, nw))
            .copy_from(&(&d_avg * hi_m));

        for k in 0..nf {
            if self.is_boundary_face(k) {
                m.row_mut(k).fill(0.0);
            }
        }
        m
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.faces(a)
            .iter()
            .zip(self.faces(b).iter())
            .zip(self.weights.iter())
            .map(|((x, y), w)| x * y * w)
            .sum()
    }

    pub fn energy_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let ea = &self.energy * a;
        let eb = &self.energy * b;
        ea.iter()
            .zip(eb.iter())
            .zip(self.energy_weights.iter())
            .map(|((x, y), w)| x * y * w)
            .sum()
    }

    pub fn cell_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(b) * self.grid.hx * self.grid.hy
    }

    /// `(grad a, grad b)` for cell vectors, weighted like the face space
    /// restricted to interior faces.
    pub fn grad_cell_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let ga = &self.gradient * a;
        let gb = &self.gradient * b;
        ga.iter().zip(gb.iter()).map(|(x, y)| x * y).sum::<f64>() * self.grid.hx * self.grid.hy
    }

    /// Solves `(alpha - nu lap) x = rhs` on interior faces with `x = bc`
    /// on boundary faces and trace. Returns packed `x`.
    pub fn helmholtz(
        &self,
        alpha: f64,
        nu: f64,
        rhs: &DVector<f64>,
        bc: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let nf = self.n_faces();
        let nt = self.n_trace;
        let mut a = zeros(nf, nf);
        let mut b = DVector::zeros(nf);
        let lap_ff = self.laplacian.view((0, 0), (nf, nf));
        let lap_ft = self.laplacian.view((0, nf), (nf, nt));
        let lift = lap_ft * bc.rows(nf, nt);
        for k in 0..nf {
            if self.is_boundary_face(k) {
                a[(k, k)] = 1.0;
                b[k] = bc[k];
            } else {
                for c in 0..nf {
                    a[(k, c)] = -nu * lap_ff[(k, c)];
                }
                a[(k, k)] += alpha;
                b[k] = rhs[k] + nu * lift[k];
            }
        }
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::contract("dense Helmholtz matrix is singular"))?;
        let mut z = bc.clone();
        z.rows_mut(0, nf).copy_from(&x);
        Ok(z)
    }

    /// Zero-mean solution of `-div grad phi = rhs` (rhs projected to zero
    /// mean first), via the bordered system.
    pub fn poisson(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let nc = self.grid.n_cells();
        let k = -(&self.divergence * &self.gradient);
        let mut a = zeros(nc + 1, nc + 1);
        a.view_mut((0, 0), (nc, nc)).copy_from(&k);
        for i in 0..nc {
            a[(i, nc)] = 1.0;
            a[(nc, i)] = 1.0;
        }
        let mean = rhs.mean();
        let mut b = DVector::zeros(nc + 1);
        for i in 0..nc {
            b[i] = rhs[i] - mean;
        }
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::contract("dense Poisson matrix is singular"))?;
        Ok(x.rows(0, nc).into_owned())
    }

    /// Projection with scale `s`: `-lap phi = -s div u_hat`,
    /// `u = u_hat - grad(phi) / s`. The trace is kept.
    pub fn project(&self, u_hat: &DVector<f64>, s: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let rhs = -(&self.divergence * self.faces(u_hat)) * s;
        let phi = self.poisson(&rhs)?;
        let mut u = u_hat.clone();
        let corr = &self.gradient * &phi / s;
        let nf = self.n_faces();
        let mut faces = u.rows_mut(0, nf);
        faces -= corr;
        Ok((phi, u))
    }
}

/// Result of one dense P-DRLM1 step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub u: VelocityField,
    pub p: ScalarField,
    pub q: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

fn centered(v: &DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.map(|x| x - m)
}

/// One P-DRLM1 step with dense operators, exact solves and no forcing.
/// `bc` is the Dirichlet data at the new time level.
pub fn dense_pdrlm1_step(
    ops: &DenseOperators,
    state: &State,
    tau: f64,
    theta: f64,
    nu: f64,
    convection: bool,
    bc: &DirichletData,
) -> Result<DenseStep> {
    let g = ops.grid;
    let nf = ops.n_faces();
    let un = ops.pack(&state.u);
    let pn = DVector::from_column_slice(&state.p.values);
    let zbc = ops.pack_bc(bc);
    let zero_bc = DVector::zeros(un.len());

    let mut rhs1 = DVector::zeros(nf);
    rhs1 += ops.faces(&un) / tau;
    rhs1 -= &ops.gradient * &pn;
    let u_hat1 = ops.helmholtz(1.0 / tau, nu, &rhs1, &zbc)?;

    let rhs2 = if convection {
        -(ops.convection(&state.u) * &un)
    } else {
        DVector::zeros(nf)
    };
    let u_hat2 = ops.helmholtz(1.0 / tau, nu, &rhs2, &zero_bc)?;

    let (phi1, u1) = ops.project(&u_hat1, 1.0 / tau)?;
    let p1 = centered(&(&pn + &phi1));
    let (p2, u2) = ops.project(&u_hat2, 1.0 / tau)?;

    let t2 = tau * tau;
    let a = ops.inner(&u2, &u2)
        + 2.0 * theta
        + t2 * ops.grad_cell_inner(&p2, &p2)
        + 2.0 * tau * nu * ops.energy_inner(&u_hat2, &u_hat2);
    let b = 2.0 * ops.inner(&u1, &u2)
        + 2.0 * t2 * ops.grad_cell_inner(&p1, &p2)
        + 4.0 * tau * nu * ops.energy_inner(&u_hat1, &u_hat2);
    let c = ops.inner(&u1, &u1) - ops.inner(&un, &un) + t2 * ops.grad_cell_inner(&p1, &p1)
        - t2 * ops.grad_cell_inner(&pn, &pn)
        - 2.0 * theta * state.q * state.q
        + 2.0 * tau * nu * ops.energy_inner(&u_hat1, &u_hat1);
    let q = solve_multiplier_quadratic(a, b, c, state.q)?;

    let u = ops.unpack(&(&u1 + &u2 * q));
    let p = ScalarField::from_values(&g, centered(&(&p1 + &p2 * q)).as_slice().to_vec())?;
    Ok(DenseStep { u, p, q, a, b, c })
}

/// Modified energy computed through the dense weights, for cross-checks.
pub fn dense_energy(ops: &DenseOperators, u: &VelocityField, p: &ScalarField, tau: f64) -> f64 {
    let z = ops.pack(u);
    let pv = DVector::from_column_slice(&p.values);
    0.5 * (ops.inner(&z, &z) + tau * tau * ops.grad_cell_inner(&pv, &pv))
}

/// Agreement of `energy_k` with its dense counterpart, as a relative gap.
pub fn energy_gap(ops: &DenseOperators, u: &VelocityField, p: &ScalarField, tau: f64) -> f64 {
    let d = dense_energy(ops, u, p, tau);
    let m = energy_k(u, p, tau);
    (d - m).abs() / d.abs().max(1.0)
}

/// Dirichlet data frozen in time.
pub struct FixedDirichlet(pub DirichletData);

impl FlowSetup for FixedDirichlet {
    fn dirichlet(&self, _grid: &Grid, _t: f64) -> DirichletData {
        self.0.clone()
    }

    fn homogeneous(&self) -> bool {
        self.0.is_homogeneous()
    }
}

/// Random state and boundary data that a step can legally start from: the
/// velocity is discretely solenoidal (nodal stream function), the new
/// boundary data has zero net flux, `Q` lies in `[0.5, 1.5]`.
pub fn admissible_case(grid: &Grid, seed: u64) -> (State, DirichletData) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodal = |rng: &mut ChaCha8Rng| {
        let vals: Vec<f64> = (0..(grid.nx + 1) * (grid.ny + 1))
            .map(|_| rng.gen_range(-0.05..0.05))
            .collect();
        move |x: f64, y: f64| {
            let i = ((x - grid.x0) / grid.hx).round() as usize;
            let j = ((y - grid.y0) / grid.hy).round() as usize;
            vals[j * (grid.nx + 1) + i]
        }
    };
    let psi = nodal(&mut rng);
    let mut u = streamfunction_velocity(grid, psi, |_, _| [0.0, 0.0]);
    let trace = |rng: &mut ChaCha8Rng, t: &mut crate::mesh::TangentialTrace| {
        for part in [&mut t.south, &mut t.north, &mut t.west, &mut t.east] {
            part.iter_mut().for_each(|x| *x = rng.gen_range(-0.2..0.2));
        }
    };
    trace(&mut rng, &mut u.trace);
    let p = ScalarField::from_values(
        grid,
        (0..grid.n_cells())
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect(),
    )
    .expect("sizes match")
    .centered();
    let q = rng.gen_range(0.5..1.5);
    let state = State {
        step: 0,
        t: 0.0,
        u,
        p,
        q,
    };
    let psi_new = nodal(&mut rng);
    let mut next = streamfunction_velocity(grid, psi_new, |_, _| [0.0, 0.0]);
    trace(&mut rng, &mut next.trace);
    let g = *grid;
    let mut bc = DirichletData::homogeneous(grid);
    for j in 0..g.ny {
        bc.u_west[j] = next.u[g.u_idx(0, j)];
        bc.u_east[j] = next.u[g.u_idx(g.nx, j)];
    }
    for i in 0..g.nx {
        bc.v_south[i] = next.v[g.v_idx(i, 0)];
        bc.v_north[i] = next.v[g.v_idx(i, g.ny)];
    }
    bc.tangential = next.trace;
    (state, bc)
}

/// Largest deviations between the modular and the dense P-DRLM1 step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepComparison {
    pub du: f64,
    pub dp: f64,
    pub dq: f64,
}

impl StepComparison {
    pub fn max(&self) -> f64 {
        self.du.max(self.dp).max(self.dq)
    }
}

/// Runs one P-DRLM1 step both ways from [`admissible_case`]. The modular
/// solves use relative tolerance `1e-14`.
pub fn compare_pdrlm1_step(
    grid: &Grid,
    seed: u64,
    tau: f64,
    theta: f64,
    nu: f64,
) -> Result<StepComparison> {
    let (state, bc) = admissible_case(grid, seed);
    let mut cfg = SchemeConfig::new(SchemeKind::Pdrlm1, tau, theta, nu)?;
    cfg.assert_invariants = false;
    cfg.solver = SolverConfig {
        rel_tol: 1e-14,
        abs_tol: 0.0,
        max_iter: Some(2000),
        poisson_preconditioner: Preconditioner::Jacobi,
    };
    let setup = FixedDirichlet(bc.clone());
    let (next, _) = step_pdrlm1(&state, &cfg, &setup)?;
    let ops = DenseOperators::new(grid);
    let dense = dense_pdrlm1_step(&ops, &state, tau, theta, nu, true, &bc)?;
    let du = next
        .u
        .u
        .iter()
        .chain(&next.u.v)
        .zip(dense.u.u.iter().chain(&dense.u.v))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let dp = next
        .p
        .values
        .iter()
        .zip(&dense.p.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(StepComparison {
        du,
        dp,
        dq: (next.q - dense.q).abs(),
    })
}
