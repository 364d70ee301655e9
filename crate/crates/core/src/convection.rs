//! Explicit advection term `(a . grad) b` in advective form.
//!
//! Derivatives are centered. The transverse velocity is averaged from its
//! four surrounding faces. Next to a wall the tangential derivative uses the
//! reflected ghost value, which is first order there.

use crate::mesh::{inner_vel, VelocityField};

/// `(a . grad) b` on interior faces; boundary-normal faces and trace are 0.
pub fn convect_bilinear(a: &VelocityField, b: &VelocityField) -> VelocityField {
    let g = a.grid;
    debug_assert_eq!(g, b.grid);
    let (nx, ny) = (g.nx, g.ny);
    let (hx2, hy2) = (2.0 * g.hx, 2.0 * g.hy);
    let mut out = VelocityField::zeros(&g);

    for j in 0..ny {
        for i in 1..nx {
            let k = g.u_idx(i, j);
            let au = a.u[k];
            let av = 0.25
                * (a.v[g.v_idx(i - 1, j)]
                    + a.v[g.v_idx(i, j)]
                    + a.v[g.v_idx(i - 1, j + 1)]
                    + a.v[g.v_idx(i, j + 1)]);
            let dx = (b.u[g.u_idx(i + 1, j)] - b.u[g.u_idx(i - 1, j)]) / hx2;
            let below = if j == 0 {
                2.0 * b.trace.south[i] - b.u[k]
            } else {
                b.u[g.u_idx(i, j - 1)]
            };
            let above = if j == ny - 1 {
                2.0 * b.trace.north[i] - b.u[k]
            } else {
                b.u[g.u_idx(i, j + 1)]
            };
            out.u[k] = au * dx + av * (above - below) / hy2;
        }
    }

    for j in 1..ny {
        for i in 0..nx {
            let k = g.v_idx(i, j);
            let av = a.v[k];
            let au = 0.25
                * (a.u[g.u_idx(i, j - 1)]
                    + a.u[g.u_idx(i + 1, j - 1)]
                    + a.u[g.u_idx(i, j)]
                    + a.u[g.u_idx(i + 1, j)]);
            let dy = (b.v[g.v_idx(i, j + 1)] - b.v[g.v_idx(i, j - 1)]) / hy2;
            let left = if i == 0 {
                2.0 * b.trace.west[j] - b.v[k]
            } else {
                b.v[g.v_idx(i - 1, j)]
            };
            let right = if i == nx - 1 {
                2.0 * b.trace.east[j] - b.v[k]
            } else {
                b.v[g.v_idx(i + 1, j)]
            };
            out.v[k] = au * (right - left) / hx2 + av * dy;
        }
    }
    out
}

/// `N(u) u = (u . grad) u`.
pub fn convect(u: &VelocityField) -> VelocityField {
    convect_bilinear(u, u)
}

/// `b(u, v, w) = ((u . grad) v, w)`. Diagnostic only.
pub fn trilinear_b(u: &VelocityField, v: &VelocityField, w: &VelocityField) -> f64 {
    inner_vel(&convect_bilinear(u, v), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;

    #[test]
    fn zero_and_uniform_fields() {
        let g = Grid::unit_square(9).unwrap();
        assert_eq!(convect(&VelocityField::zeros(&g)).max_abs(), 0.0);
        let uni = VelocityField::sample(&g, |_, _| [0.7, -1.3]);
        assert!(convect(&uni).max_abs() < 1e-12);
    }

    #[test]
    fn b_with_zero_advector_vanishes() {
        let g = Grid::unit_square(6).unwrap();
        let v = VelocityField::sample(&g, |x, y| [x * y, x - y]);
        let w = VelocityField::sample(&g, |x, y| [y, x * x]);
        assert_eq!(trilinear_b(&VelocityField::zeros(&g), &v, &w), 0.0);
    }

    #[test]
    fn linear_field_is_advected_exactly_in_the_interior() {
        // (u . grad) u for u = (x, -y) is (x, y)
        let g = Grid::unit_square(8).unwrap();
        let u = VelocityField::sample(&g, |x, y| [x, -y]);
        let c = convect(&u);
        for j in 0..g.ny {
            for i in 1..g.nx {
                let (x, _) = g.u_face(i, j);
                assert!((c.u[g.u_idx(i, j)] - x).abs() < 1e-12);
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let (_, y) = g.v_face(i, j);
                assert!((c.v[g.v_idx(i, j)] - y).abs() < 1e-12);
            }
        }
    }
}
