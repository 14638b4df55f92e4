//! Discrete differential operators on the MAC grid.
//!
//! `gradient` and `-divergence` are exact adjoints under the hx*hy-weighted
//! cell/face inner products whenever the vector field has zero
//! boundary-normal faces; `neumann_laplacian` equals their composition
//! entrywise. These identities carry the discrete integration-by-parts used
//! by every conservation and energy check in the crate, so they must hold to
//! round-off, not just to truncation order.

use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::par;

/// Two-point face gradient with homogeneous Neumann ghost extension:
/// boundary-normal faces are exactly 0.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let mut out = VectorField::zeros(g);
    let vals = &f.values;

    par::for_each_row_mut(&mut out.xcomp, ny, |i, row| {
        if i == 0 || i == nx {
            return; // ghost reflection: normal derivative 0 at the wall
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = (vals[i * ny + j] - vals[(i - 1) * ny + j]) / hx;
        }
    });
    par::for_each_row_mut(&mut out.ycomp, ny + 1, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            if j == 0 || j == ny {
                continue;
            }
            *v = (vals[i * ny + j] - vals[i * ny + j - 1]) / hy;
        }
    });
    out
}

/// Cell-centered divergence of a face field.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let mut out = ScalarField::zeros(g);
    let xc = &v.xcomp;
    let yc = &v.ycomp;
    let _ = nx;

    par::for_each_row_mut(&mut out.values, ny, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let dx = (xc[(i + 1) * ny + j] - xc[i * ny + j]) / hx;
            let dy = (yc[i * (ny + 1) + j + 1] - yc[i * (ny + 1) + j]) / hy;
            *o = dx + dy;
        }
    });
    out
}

/// Five-point Laplacian with ghost-cell reflection (homogeneous Neumann).
/// Returns `lap f` (not `-lap f`); equals `divergence(gradient(f))` entrywise.
pub fn neumann_laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (ihx2, ihy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut out = ScalarField::zeros(g);
    let v = &f.values;

    par::for_each_row_mut(&mut out.values, ny, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let c = v[i * ny + j];
            let w = if i > 0 { v[(i - 1) * ny + j] } else { c };
            let e = if i + 1 < nx { v[(i + 1) * ny + j] } else { c };
            let s = if j > 0 { v[i * ny + j - 1] } else { c };
            let n = if j + 1 < ny { v[i * ny + j + 1] } else { c };
            *o = (w - 2.0 * c + e) * ihx2 + (s - 2.0 * c + n) * ihy2;
        }
    });
    out
}

/// Arithmetic-mean interpolation of a cell field to x faces; boundary faces
/// take the adjacent cell value (ghost reflection).
pub fn interp_to_x_faces(f: &ScalarField) -> Vec<f64> {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let v = &f.values;
    let mut out = vec![0.0; (nx + 1) * ny];
    par::for_each_row_mut(&mut out, ny, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            *o = if i == 0 {
                v[j]
            } else if i == nx {
                v[(nx - 1) * ny + j]
            } else {
                0.5 * (v[(i - 1) * ny + j] + v[i * ny + j])
            };
        }
    });
    out
}

/// Arithmetic-mean interpolation of a cell field to y faces.
pub fn interp_to_y_faces(f: &ScalarField) -> Vec<f64> {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let v = &f.values;
    let mut out = vec![0.0; nx * (ny + 1)];
    par::for_each_row_mut(&mut out, ny + 1, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            *o = if j == 0 {
                v[i * ny]
            } else if j == ny {
                v[i * ny + ny - 1]
            } else {
                0.5 * (v[i * ny + j - 1] + v[i * ny + j])
            };
        }
    });
    out
}

/// Conservative centered convection term `div(u phi)` built from the face
/// flux `u * mean(phi)`. With zero boundary-normal `u` the cell sum of the
/// result telescopes to exactly zero, which is what conserves total mass.
pub fn flux_divergence(u: &VectorField, phi: &ScalarField) -> ScalarField {
    let g = phi.grid;
    let fx = interp_to_x_faces(phi);
    let fy = interp_to_y_faces(phi);
    let mut flux = VectorField::zeros(g);
    for (o, (uf, pf)) in flux.xcomp.iter_mut().zip(u.xcomp.iter().zip(&fx)) {
        *o = uf * pf;
    }
    for (o, (uf, pf)) in flux.ycomp.iter_mut().zip(u.ycomp.iter().zip(&fy)) {
        *o = uf * pf;
    }
    divergence(&flux)
}

/// Squared discrete H^1 seminorm of a cell field: `|gradient(f)|^2` in the
/// face inner product.
pub fn grad_norm_sq(f: &ScalarField) -> f64 {
    let gr = gradient(f);
    gr.l2_inner(&gr).expect("same grid")
}

/// Cell sum weighted by the cell volume: `<f, 1>`.
pub fn cell_sum(f: &ScalarField) -> f64 {
    let ny = f.grid.ny;
    let s = par::sum_indexed(f.grid.nx, |i| f.values[i * ny..(i + 1) * ny].iter().sum::<f64>());
    s * f.grid.cell_volume()
}

/// Discrete eigenvalue of the 1D ghost-reflected Neumann Laplacian for the
/// cosine mode `cos(pi k (i+1/2)/n)`: `(2/h^2)(1 - cos(pi k / n))`.
pub fn neumann_mode_eigenvalue(k: usize, n: usize, h: f64) -> f64 {
    2.0 / (h * h) * (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos())
}

/// Seeded test field that is exactly divergence-free with zero normal faces:
/// the discrete curl of a random node stream function vanishing on the
/// boundary nodes. Used by the Helmholtz/Korteweg identity checks.
pub fn random_div_free(g: GridSpec, seed: u64) -> VectorField {
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let mut state = seed.max(1);
    let mut rnd = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut psi = vec![0.0; (nx + 1) * (ny + 1)];
    for i in 1..nx {
        for j in 1..ny {
            psi[i * (ny + 1) + j] = rnd();
        }
    }
    let mut v = VectorField::zeros(g);
    for i in 0..=nx {
        for j in 0..ny {
            v.xcomp[i * ny + j] = (psi[i * (ny + 1) + j + 1] - psi[i * (ny + 1) + j]) / hy;
        }
    }
    for i in 0..nx {
        for j in 0..=ny {
            v.ycomp[i * (ny + 1) + j] = -(psi[(i + 1) * (ny + 1) + j] - psi[i * (ny + 1) + j]) / hx;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny, 1.0, 1.0).unwrap()
    }

    fn rng_field(g: GridSpec, seed: u64) -> ScalarField {
        let mut state = seed.max(1);
        let mut rnd = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        ScalarField {
            grid: g,
            values: (0..g.cell_count()).map(|_| rnd()).collect(),
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let f = ScalarField::constant(grid(8, 8), 5.0);
        let v = gradient(&f);
        assert_eq!(v.linf(), 0.0);
    }

    #[test]
    fn gradient_of_linear_is_one_on_interior_faces() {
        let g = grid(8, 8);
        let f = ScalarField::from_fn(g, |x, _| x);
        let v = gradient(&f);
        for i in 1..g.nx {
            for j in 0..g.ny {
                assert!((v.x_at(i, j) - 1.0).abs() < 1e-13);
            }
        }
        // boundary-normal faces stay 0 (ghost extension)
        for j in 0..g.ny {
            assert_eq!(v.x_at(0, j), 0.0);
            assert_eq!(v.x_at(g.nx, j), 0.0);
        }
    }

    /// Oracle: assemble gradient and divergence as dense matrices on an 8x8
    /// grid and check <G f, v> = -<f, D v> by verifying G^T = -D entrywise
    /// (the uniform hx*hy weights cancel on both sides).
    #[test]
    fn adjointness_by_matrix_assembly() {
        let g = GridSpec::new(8, 8, 1.3, 0.7).unwrap();
        let (nx, ny) = (g.nx, g.ny);
        let n_cells = g.cell_count();
        let n_faces = (nx + 1) * ny + nx * (ny + 1);

        let mut gmat = vec![0.0; n_faces * n_cells]; // row = face, col = cell
        for c in 0..n_cells {
            let mut e = ScalarField::zeros(g);
            e.values[c] = 1.0;
            let v = gradient(&e);
            for (r, val) in v.xcomp.iter().chain(v.ycomp.iter()).enumerate() {
                gmat[r * n_cells + c] = *val;
            }
        }
        let mut dmat = vec![0.0; n_cells * n_faces]; // row = cell, col = face
        for fidx in 0..n_faces {
            let mut v = VectorField::zeros(g);
            let nxf = (nx + 1) * ny;
            if fidx < nxf {
                // skip boundary-normal faces: the adjointness statement is for
                // fields that vanish there
                let i = fidx / ny;
                if i == 0 || i == nx {
                    continue;
                }
                v.xcomp[fidx] = 1.0;
            } else {
                let k = fidx - nxf;
                let j = k % (ny + 1);
                if j == 0 || j == ny {
                    continue;
                }
                v.ycomp[k] = 1.0;
            }
            let d = divergence(&v);
            for (r, val) in d.values.iter().enumerate() {
                dmat[r * n_faces + fidx] = *val;
            }
        }
        for r in 0..n_faces {
            for c in 0..n_cells {
                let gt = gmat[r * n_cells + c];
                let dv = dmat[c * n_faces + r];
                assert!(
                    (gt + dv).abs() < 1e-13,
                    "G^T != -D at face {r}, cell {c}: {gt} vs {dv}"
                );
            }
        }
    }

    #[test]
    fn adjointness_on_random_fields() {
        let g = GridSpec::new(16, 12, 2.0, 1.0).unwrap();
        for seed in 1..6 {
            let f = rng_field(g, seed);
            let v = random_div_free(g, seed + 100);
            let lhs = gradient(&f).l2_inner(&v).unwrap();
            let rhs = -f.l2_inner(&divergence(&v)).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs() + 1.0),
                "adjointness broken: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn summation_by_parts_zero_total_divergence() {
        let g = grid(16, 16);
        let v = random_div_free(g, 7);
        // any v with zero normal faces, not just divergence-free ones
        let mut w = v.clone();
        for (k, x) in w.xcomp.iter_mut().enumerate() {
            *x += ((k % 17) as f64 - 8.0) / 17.0;
        }
        w.zero_normal_boundary();
        let total = cell_sum(&divergence(&w));
        assert!(total.abs() < 1e-13);
    }

    #[test]
    fn laplacian_matches_composition() {
        let g = GridSpec::new(12, 10, 1.0, 2.0).unwrap();
        let f = rng_field(g, 3);
        let direct = neumann_laplacian(&f);
        let composed = divergence(&gradient(&f));
        for (a, b) in direct.values.iter().zip(&composed.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = ScalarField::constant(grid(8, 8), 42.0);
        assert_eq!(neumann_laplacian(&f).linf(), 0.0);
    }

    #[test]
    fn cosine_mode_is_discrete_eigenfunction() {
        let g = GridSpec::new(32, 8, 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _| (PI * x / g.lx).cos());
        let lam = neumann_mode_eigenvalue(1, g.nx, g.hx());
        let lf = neumann_laplacian(&f);
        for (l, v) in lf.values.iter().zip(&f.values) {
            assert!((l + lam * v).abs() < 1e-11, "{l} vs {}", -lam * v);
        }
    }

    #[test]
    fn divergence_of_gradient_converges_to_analytic_laplacian() {
        // grid-refinement oracle: -(pi/lx)^2 f with observed order >= 1.9
        let errs: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&n| {
                let g = GridSpec::new(n, 4, 1.0, 1.0).unwrap();
                let f = ScalarField::from_fn(g, |x, _| (PI * x).cos());
                let num = divergence(&gradient(&f));
                let mut err2 = 0.0;
                for (nv, fv) in num.values.iter().zip(&f.values) {
                    let exact = -(PI * PI) * fv;
                    err2 += (nv - exact) * (nv - exact);
                }
                (err2 * g.cell_volume()).sqrt()
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn constant_interior_field_with_zero_boundary_has_boundary_supported_divergence() {
        let g = grid(8, 8);
        let mut v = VectorField::from_fn(g, |_, _| 1.0, |_, _| 1.0);
        v.zero_normal_boundary();
        let d = divergence(&v);
        for i in 1..g.nx - 1 {
            for j in 1..g.ny - 1 {
                assert!(d.at(i, j).abs() < 1e-13);
            }
        }
        assert!(d.at(0, 0).abs() > 0.1); // boundary-adjacent cells see the jump
    }

    #[test]
    fn transport_conserves_cell_sum() {
        let g = grid(16, 16);
        let u = random_div_free(g, 11);
        let phi = rng_field(g, 12);
        let d = flux_divergence(&u, &phi);
        assert!(cell_sum(&d).abs() < 1e-12);
    }
}
