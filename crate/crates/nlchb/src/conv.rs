//! FFT convolution over the bounded domain, with linear (zero-extension)
//! semantics and an O(N^2) direct-sum oracle.
//!
//! Grids are padded by a factor 2 per dimension, which makes the circular
//! convolution on the padded box an exact linear convolution for every
//! cell-to-cell and cell-to-face offset that occurs: the 2nx padded circle
//! indexes the offsets `i - i' in [-(nx-1), nx]` bijectively, so no aliasing
//! correction is needed. Kernels are sampled at the exact cell-center (or
//! face-center) difference vectors with the midpoint weight hx*hy, which is
//! what turns `convolve(ones) == a` into an identity instead of an
//! approximation.

use crate::error::Error;
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::kernel::KernelSpec;
use crate::par;
use crate::Result;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct ConvolutionEngine {
    pub grid: GridSpec,
    pub spec: KernelSpec,
    px: usize,
    py: usize,
    fft_fwd_x: Arc<dyn Fft<f64>>,
    fft_inv_x: Arc<dyn Fft<f64>>,
    fft_fwd_y: Arc<dyn Fft<f64>>,
    fft_inv_y: Arc<dyn Fft<f64>>,
    /// Spectra of the sampled kernel tables, pre-scaled by hx*hy/(px*py).
    khat_cell: Vec<Complex<f64>>,
    khat_gx: Vec<Complex<f64>>,
    khat_gy: Vec<Complex<f64>>,
    a: ScalarField,
    grad_a_sampled: VectorField,
    a_star: f64,
    j_l1: f64,
    j_grad_l1: f64,
}

impl ConvolutionEngine {
    pub fn new(grid: GridSpec, spec: KernelSpec) -> Result<Self> {
        let (nx, ny) = (grid.nx, grid.ny);
        let (px, py) = (2 * nx, 2 * ny);
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut planner = FftPlanner::new();
        let fft_fwd_x = planner.plan_fft_forward(px);
        let fft_inv_x = planner.plan_fft_inverse(px);
        let fft_fwd_y = planner.plan_fft_forward(py);
        let fft_inv_y = planner.plan_fft_inverse(py);

        // signed offset of a padded index; the p = n entry maps to +n, which
        // is only reachable by face targets
        let off = |p: usize, n: usize| -> f64 {
            if p <= n {
                p as f64
            } else {
                p as f64 - 2.0 * n as f64
            }
        };

        let scale = hx * hy / (px * py) as f64;
        let mut khat_cell = vec![Complex::new(0.0, 0.0); px * py];
        let mut khat_gx = vec![Complex::new(0.0, 0.0); px * py];
        let mut khat_gy = vec![Complex::new(0.0, 0.0); px * py];
        for p in 0..px {
            let sx = off(p, nx);
            for q in 0..py {
                let sy = off(q, ny);
                let k = p * py + q;
                khat_cell[k] = Complex::new(spec.eval(sx * hx, sy * hy) * scale, 0.0);
                let (gx, _) = spec.eval_grad((sx - 0.5) * hx, sy * hy);
                khat_gx[k] = Complex::new(gx * scale, 0.0);
                let (_, gy) = spec.eval_grad(sx * hx, (sy - 0.5) * hy);
                khat_gy[k] = Complex::new(gy * scale, 0.0);
            }
        }
        fft2(&mut khat_cell, px, py, &fft_fwd_x, &fft_fwd_y);
        fft2(&mut khat_gx, px, py, &fft_fwd_x, &fft_fwd_y);
        fft2(&mut khat_gy, px, py, &fft_fwd_x, &fft_fwd_y);

        let mut engine = Self {
            grid,
            spec,
            px,
            py,
            fft_fwd_x,
            fft_inv_x,
            fft_fwd_y,
            fft_inv_y,
            khat_cell,
            khat_gx,
            khat_gy,
            a: ScalarField::zeros(grid),
            grad_a_sampled: VectorField::zeros(grid),
            a_star: 0.0,
            j_l1: 0.0,
            j_grad_l1: 0.0,
        };

        let ones = ScalarField::constant(grid, 1.0);
        let a = engine.convolve(&ones)?;
        let a_star = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_a = a.values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if min_a < -1e-12 * a_star {
            return Err(Error::NegativeA { min: min_a, a_star });
        }
        engine.a = a;
        engine.a_star = a_star;
        engine.grad_a_sampled = engine.convolve_grad(&ones)?;

        // W^{1,1} seminorms by midpoint quadrature on the offset grid
        let (mut j_l1, mut j_grad_l1) = (0.0, 0.0);
        for p in 0..px {
            let sx = off(p, nx);
            for q in 0..py {
                let sy = off(q, ny);
                let r = ((sx * hx).powi(2) + (sy * hy).powi(2)).sqrt();
                if r <= engine.spec.support_radius {
                    j_l1 += engine.spec.profile(r).abs();
                    j_grad_l1 += engine.spec.profile_d1(r).abs();
                }
            }
        }
        engine.j_l1 = j_l1 * hx * hy;
        engine.j_grad_l1 = j_grad_l1 * hx * hy;
        Ok(engine)
    }

    /// `a(x) = int_Omega J(x - y) dy` on the cells; computed once as
    /// `convolve(ones)` so the identity `J * 1 = a` is exact.
    pub fn a(&self) -> &ScalarField {
        &self.a
    }

    /// `a* = |a|_inf`.
    pub fn a_star(&self) -> f64 {
        self.a_star
    }

    /// `(grad J) * 1` sampled at faces with the same quadrature as
    /// [`ConvolutionEngine::convolve_grad`].
    pub fn grad_a_sampled(&self) -> &VectorField {
        &self.grad_a_sampled
    }

    /// `|J|_{L^1} + |grad J|_{L^1}` on the offset sampling grid.
    pub fn j_w11(&self) -> f64 {
        self.j_l1 + self.j_grad_l1
    }

    pub fn j_l1(&self) -> f64 {
        self.j_l1
    }

    /// `(J * phi)(x_i) = sum_j J(x_i - y_j) phi_j hx hy` at cell centers.
    pub fn convolve(&self, phi: &ScalarField) -> Result<ScalarField> {
        self.grid.check_match(&phi.grid)?;
        let ny = self.grid.ny;
        let py = self.py;
        let mut buf = self.padded(phi);
        fft2(&mut buf, self.px, py, &self.fft_fwd_x, &self.fft_fwd_y);
        for (b, k) in buf.iter_mut().zip(&self.khat_cell) {
            *b *= k;
        }
        fft2(&mut buf, self.px, py, &self.fft_inv_x, &self.fft_inv_y);
        let mut out = ScalarField::zeros(self.grid);
        par::for_each_row_mut(&mut out.values, ny, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = buf[i * py + j].re;
            }
        });
        Ok(out)
    }

    /// `(grad J * phi)` sampled on the MAC faces from analytic kernel
    /// derivative tables at the face-center difference vectors.
    pub fn convolve_grad(&self, phi: &ScalarField) -> Result<VectorField> {
        self.grid.check_match(&phi.grid)?;
        let ny = self.grid.ny;
        let (px, py) = (self.px, self.py);
        let phat = {
            let mut buf = self.padded(phi);
            fft2(&mut buf, px, py, &self.fft_fwd_x, &self.fft_fwd_y);
            buf
        };
        let mut out = VectorField::zeros(self.grid);

        let mut bufx: Vec<Complex<f64>> =
            phat.iter().zip(&self.khat_gx).map(|(p, k)| p * k).collect();
        fft2(&mut bufx, px, py, &self.fft_inv_x, &self.fft_inv_y);
        par::for_each_row_mut(&mut out.xcomp, ny, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = bufx[i * py + j].re;
            }
        });

        let mut bufy: Vec<Complex<f64>> =
            phat.iter().zip(&self.khat_gy).map(|(p, k)| p * k).collect();
        fft2(&mut bufy, px, py, &self.fft_inv_x, &self.fft_inv_y);
        par::for_each_row_mut(&mut out.ycomp, ny + 1, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = bufy[i * py + j].re;
            }
        });
        Ok(out)
    }

    fn padded(&self, phi: &ScalarField) -> Vec<Complex<f64>> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let py = self.py;
        let mut buf = vec![Complex::new(0.0, 0.0); self.px * py];
        par::for_each_row_mut(&mut buf[..nx * py], py, |i, row| {
            for j in 0..ny {
                row[j] = Complex::new(phi.values[i * ny + j], 0.0);
            }
        });
        buf
    }
}

fn fft2(
    buf: &mut [Complex<f64>],
    px: usize,
    py: usize,
    fx: &Arc<dyn Fft<f64>>,
    fy: &Arc<dyn Fft<f64>>,
) {
    par::for_each_row_mut(buf, py, |_, row| {
        fy.process(row);
    });
    let mut t = vec![Complex::new(0.0, 0.0); px * py];
    for i in 0..px {
        for j in 0..py {
            t[j * px + i] = buf[i * py + j];
        }
    }
    par::for_each_row_mut(&mut t, px, |_, row| {
        fx.process(row);
    });
    for j in 0..py {
        for i in 0..px {
            buf[i * py + j] = t[j * px + i];
        }
    }
}

/// O(N^2) direct-sum convolution at cell centers; the oracle for
/// [`ConvolutionEngine::convolve`]. Samples the kernel directly and shares
/// no code with the FFT path.
pub fn convolve_direct(spec: &KernelSpec, grid: GridSpec, phi: &ScalarField) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let vol = grid.cell_volume();
    let mut out = ScalarField::zeros(grid);
    par::for_each_row_mut(&mut out.values, ny, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for ii in 0..nx {
                let dx = (i as f64 - ii as f64) * hx;
                for jj in 0..ny {
                    let dy = (j as f64 - jj as f64) * hy;
                    s += spec.eval(dx, dy) * phi.values[ii * ny + jj];
                }
            }
            *o = s * vol;
        }
    });
    out
}

/// Direct-sum face-sampled kernel-gradient convolution; the oracle for
/// [`ConvolutionEngine::convolve_grad`].
pub fn convolve_grad_direct(spec: &KernelSpec, grid: GridSpec, phi: &ScalarField) -> VectorField {
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let vol = grid.cell_volume();
    let mut out = VectorField::zeros(grid);
    par::for_each_row_mut(&mut out.xcomp, ny, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for ii in 0..nx {
                let dx = (i as f64 - ii as f64 - 0.5) * hx;
                for jj in 0..ny {
                    let dy = (j as f64 - jj as f64) * hy;
                    s += spec.eval_grad(dx, dy).0 * phi.values[ii * ny + jj];
                }
            }
            *o = s * vol;
        }
    });
    par::for_each_row_mut(&mut out.ycomp, ny + 1, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for ii in 0..nx {
                let dx = (i as f64 - ii as f64) * hx;
                for jj in 0..ny {
                    let dy = (j as f64 - jj as f64 - 0.5) * hy;
                    s += spec.eval_grad(dx, dy).1 * phi.values[ii * ny + jj];
                }
            }
            *o = s * vol;
        }
    });
    out
}

/// Direct-sum `a(x)`; the oracle for [`ConvolutionEngine::a`].
pub fn a_direct(spec: &KernelSpec, grid: GridSpec) -> ScalarField {
    convolve_direct(spec, grid, &ScalarField::constant(grid, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 1.0, 1.0).unwrap()
    }

    fn rng_field(g: GridSpec, seed: u64) -> ScalarField {
        let mut state = seed.max(1);
        ScalarField {
            grid: g,
            values: (0..g.cell_count())
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect(),
        }
    }

    fn gaussian_engine(n: usize) -> ConvolutionEngine {
        let spec = KernelSpec::gaussian(0.04, 5.0).unwrap();
        ConvolutionEngine::new(grid(n), spec).unwrap()
    }

    #[test]
    fn convolve_zero_is_zero() {
        let e = gaussian_engine(16);
        let out = e.convolve(&ScalarField::zeros(e.grid)).unwrap();
        assert_eq!(out.linf(), 0.0);
    }

    #[test]
    fn convolve_ones_is_a_entrywise() {
        let e = gaussian_engine(16);
        let out = e.convolve(&ScalarField::constant(e.grid, 1.0)).unwrap();
        for (x, y) in out.values.iter().zip(&e.a().values) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn fft_path_matches_direct_sum_oracle() {
        for n in [16usize, 32] {
            let e = gaussian_engine(n);
            let phi = rng_field(e.grid, 7);
            let fast = e.convolve(&phi).unwrap();
            let slow = convolve_direct(&e.spec, e.grid, &phi);
            let scale = slow.l2_norm();
            let err = ScalarField::difference(&fast, &slow).unwrap().l2_norm();
            assert!(err <= 1e-10 * scale, "{n}: rel err {}", err / scale);
        }
    }

    #[test]
    fn grad_fft_path_matches_direct_sum_oracle() {
        let e = gaussian_engine(16);
        let phi = rng_field(e.grid, 9);
        let fast = e.convolve_grad(&phi).unwrap();
        let slow = convolve_grad_direct(&e.spec, e.grid, &phi);
        let scale = slow.l2_norm();
        let err = VectorField::difference(&fast, &slow).unwrap().l2_norm();
        assert!(err <= 1e-10 * scale, "rel err {}", err / scale);
    }

    #[test]
    fn a_matches_direct_sum_and_is_nonnegative() {
        let e = gaussian_engine(16);
        let slow = a_direct(&e.spec, e.grid);
        let err = ScalarField::difference(e.a(), &slow).unwrap().l2_norm();
        assert!(err <= 1e-10 * slow.l2_norm());
        assert!(e.a().values.iter().all(|&v| v >= -1e-12 * e.a_star()));
    }

    #[test]
    fn grad_of_constant_matches_sampled_grad_a() {
        let e = gaussian_engine(16);
        let c = 2.5;
        let out = e.convolve_grad(&ScalarField::constant(e.grid, c)).unwrap();
        for (x, y) in out.xcomp.iter().zip(&e.grad_a_sampled().xcomp) {
            assert!((x - c * y).abs() < 1e-12 * (1.0 + y.abs()));
        }
        for (x, y) in out.ycomp.iter().zip(&e.grad_a_sampled().ycomp) {
            assert!((x - c * y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn full_mass_capture_at_center() {
        // support radius 0.32 fits inside the unit square from the center
        let e = gaussian_engine(64);
        let g = e.grid;
        let center = e.a().at(g.nx / 2, g.ny / 2);
        assert!(
            (center - e.j_l1()).abs() <= 1e-8 * e.j_l1(),
            "center a {center} vs |J|_L1 {}",
            e.j_l1()
        );
    }

    #[test]
    fn corner_a_below_center_a() {
        let e = gaussian_engine(16);
        let g = e.grid;
        assert!(e.a().at(0, 0) < e.a().at(g.nx / 2, g.ny / 2));
    }

    #[test]
    fn bilinear_form_is_symmetric() {
        let e = gaussian_engine(16);
        for seed in 0..5 {
            let f = rng_field(e.grid, 2 * seed + 1);
            let h = rng_field(e.grid, 2 * seed + 2);
            let lhs = e.convolve(&f).unwrap().l2_inner(&h).unwrap();
            let rhs = f.l2_inner(&e.convolve(&h).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * (lhs.abs() + 1.0));
        }
    }

    #[test]
    fn nonlocal_quadratic_form_is_nonnegative() {
        // (1/2)(<a phi, phi> - <J*phi, phi>) = (1/4) sum_ij J (phi_i - phi_j)^2 >= 0
        let e = gaussian_engine(16);
        for seed in 0..5 {
            let phi = rng_field(e.grid, 31 + seed);
            let af = ScalarField {
                grid: e.grid,
                values: e
                    .a()
                    .values
                    .iter()
                    .zip(&phi.values)
                    .map(|(a, p)| a * p)
                    .collect(),
            };
            let quad = 0.5
                * (af.l2_inner(&phi).unwrap()
                    - e.convolve(&phi).unwrap().l2_inner(&phi).unwrap());
            let n2 = phi.l2_inner(&phi).unwrap();
            assert!(quad >= -1e-10 * n2, "quad {quad}");
        }
    }

    #[test]
    fn negative_kernel_mass_is_rejected() {
        let spec = KernelSpec::gaussian(0.04, -1.0).unwrap();
        assert!(matches!(
            ConvolutionEngine::new(grid(16), spec),
            Err(Error::NegativeA { .. })
        ));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let e = gaussian_engine(16);
        let other = ScalarField::zeros(grid(8));
        assert!(matches!(e.convolve(&other), Err(Error::GridMismatch { .. })));
    }
}
