//! Uniform rectangular grid, cell-centered scalar fields and MAC-staggered
//! vector fields, with the hx*hy-weighted inner products everything else is
//! built on.
//!
//! Cells are centered at `((i+1/2) hx, (j+1/2) hy)`. A vector field stores
//! its x component on vertical faces `(i hx, (j+1/2) hy)` (an `(nx+1) x ny`
//! array) and its y component on horizontal faces (`nx x (ny+1)`). Arrays are
//! row-major with the x index outermost: `idx = i * ny + j`.

use crate::error::Error;
use crate::par;
use crate::Result;

/// Geometry of the rectangle `(0, lx) x (0, ly)` split into `nx x ny` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be >= 4, got {nx} x {ny}"
            )));
        }
        if !(lx > 0.0) || !(ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "edge lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Cell volume hx*hy; the quadrature weight of every cell and face sum.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// |Omega| = lx*ly.
    #[inline]
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// x coordinate of the cell center column `i`.
    #[inline]
    pub fn cell_x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }

    /// y coordinate of the cell center row `j`.
    #[inline]
    pub fn cell_y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub(crate) fn check_match(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: (self.nx, self.ny),
                got: (other.nx, other.ny),
            })
        }
    }
}

/// Cell-centered grid function (phase field, chemical potential, pressure, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.cell_count()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.cell_count()],
        }
    }

    /// Sample `f(x, y)` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        let ny = grid.ny;
        for i in 0..grid.nx {
            let x = grid.cell_x(i);
            for j in 0..ny {
                out.values[i * ny + j] = f(x, grid.cell_y(j));
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.grid.idx(i, j);
        &mut self.values[k]
    }

    /// Mean value |Omega|^-1 <f, 1>.
    pub fn mean(&self) -> f64 {
        let ny = self.grid.ny;
        let sum = par::sum_indexed(self.grid.nx, |i| {
            self.values[i * ny..(i + 1) * ny].iter().sum::<f64>()
        });
        sum * self.grid.cell_volume() / self.grid.area()
    }

    /// hx*hy-weighted inner product in L^2(Omega).
    pub fn l2_inner(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_match(&other.grid)?;
        let ny = self.grid.ny;
        let sum = par::sum_indexed(self.grid.nx, |i| {
            let a = &self.values[i * ny..(i + 1) * ny];
            let b = &other.values[i * ny..(i + 1) * ny];
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
        });
        Ok(sum * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).expect("same grid").max(0.0).sqrt()
    }

    /// Max |value|; NaN if any entry is not finite.
    pub fn linf(&self) -> f64 {
        let mut m = 0.0f64;
        for &v in &self.values {
            if !v.is_finite() {
                return f64::NAN;
            }
            if v.abs() > m {
                m = v.abs();
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += alpha * other (panics on grid mismatch; internal math helper).
    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) {
        assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        for v in &mut self.values {
            *v += c;
        }
    }

    /// Subtract the mean in place; afterwards `mean()` is zero to round-off.
    pub fn project_zero_mean(&mut self) {
        let m = self.mean();
        self.add_constant(-m);
    }

    pub fn difference(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
        a.grid.check_match(&b.grid)?;
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x - y)
            .collect();
        Ok(ScalarField {
            grid: a.grid,
            values,
        })
    }

    /// Elementwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        let ny = self.grid.ny;
        let src = &self.values;
        par::for_each_row_mut(&mut out.values, ny, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(src[i * ny + j]);
            }
        });
        out
    }
}

/// MAC-staggered vector field (velocity, forces, gradients).
///
/// Boundary-normal faces (`i = 0, nx` for x, `j = 0, ny` for y) carry the
/// boundary condition value; every constructor and operator in this crate
/// leaves them at 0 unless a snapshot explicitly stores something else.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    /// (nx+1) x ny values on vertical faces, idx = i * ny + j.
    pub xcomp: Vec<f64>,
    /// nx x (ny+1) values on horizontal faces, idx = i * (ny+1) + j.
    pub ycomp: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            xcomp: vec![0.0; (grid.nx + 1) * grid.ny],
            ycomp: vec![0.0; grid.nx * (grid.ny + 1)],
        }
    }

    /// Sample analytic components at face centers. Boundary-normal faces get
    /// whatever the closure returns; call [`VectorField::zero_normal_boundary`]
    /// afterwards to impose no-penetration exactly.
    pub fn from_fn(
        grid: GridSpec,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(grid);
        let (hx, hy) = (grid.hx(), grid.hy());
        for i in 0..=grid.nx {
            let x = i as f64 * hx;
            for j in 0..grid.ny {
                out.xcomp[i * grid.ny + j] = fx(x, grid.cell_y(j));
            }
        }
        for i in 0..grid.nx {
            let x = grid.cell_x(i);
            for j in 0..=grid.ny {
                out.ycomp[i * (grid.ny + 1) + j] = fy(x, j as f64 * hy);
            }
        }
        out
    }

    #[inline]
    pub fn x_at(&self, i: usize, j: usize) -> f64 {
        self.xcomp[i * self.grid.ny + j]
    }

    #[inline]
    pub fn y_at(&self, i: usize, j: usize) -> f64 {
        self.ycomp[i * (self.grid.ny + 1) + j]
    }

    /// Set all boundary-normal faces to exactly 0.
    pub fn zero_normal_boundary(&mut self) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        for j in 0..ny {
            self.xcomp[j] = 0.0;
            self.xcomp[nx * ny + j] = 0.0;
        }
        for i in 0..nx {
            self.ycomp[i * (ny + 1)] = 0.0;
            self.ycomp[i * (ny + 1) + ny] = 0.0;
        }
    }

    pub fn normal_boundary_is_zero(&self) -> bool {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        (0..ny).all(|j| self.xcomp[j] == 0.0 && self.xcomp[nx * ny + j] == 0.0)
            && (0..nx).all(|i| {
                self.ycomp[i * (ny + 1)] == 0.0 && self.ycomp[i * (ny + 1) + ny] == 0.0
            })
    }

    /// hx*hy-weighted inner product over all faces of both components.
    pub fn l2_inner(&self, other: &VectorField) -> Result<f64> {
        self.grid.check_match(&other.grid)?;
        let ny = self.grid.ny;
        let sx = par::sum_indexed(self.grid.nx + 1, |i| {
            let a = &self.xcomp[i * ny..(i + 1) * ny];
            let b = &other.xcomp[i * ny..(i + 1) * ny];
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
        });
        let nyp = ny + 1;
        let sy = par::sum_indexed(self.grid.nx, |i| {
            let a = &self.ycomp[i * nyp..(i + 1) * nyp];
            let b = &other.ycomp[i * nyp..(i + 1) * nyp];
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
        });
        Ok((sx + sy) * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).expect("same grid").max(0.0).sqrt()
    }

    /// Max face magnitude over both components; NaN if anything is non-finite.
    pub fn linf(&self) -> f64 {
        let mut m = 0.0f64;
        for v in self.xcomp.iter().chain(&self.ycomp) {
            if !v.is_finite() {
                return f64::NAN;
            }
            if v.abs() > m {
                m = v.abs();
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.xcomp.iter().chain(&self.ycomp).all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, alpha: f64, other: &VectorField) {
        assert_eq!(self.grid, other.grid);
        for (a, b) in self.xcomp.iter_mut().zip(&other.xcomp) {
            *a += alpha * b;
        }
        for (a, b) in self.ycomp.iter_mut().zip(&other.ycomp) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.xcomp.iter_mut().chain(&mut self.ycomp) {
            *v *= alpha;
        }
    }

    pub fn difference(a: &VectorField, b: &VectorField) -> Result<VectorField> {
        a.grid.check_match(&b.grid)?;
        let mut out = a.clone();
        out.axpy(-1.0, b);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny, 1.0, 1.0).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(GridSpec::new(3, 8, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 1.0, f64::NAN).is_err());
        let g = GridSpec::new(8, 16, 2.0, 1.0).unwrap();
        assert!((g.hx() - 0.25).abs() < 1e-15);
        assert!((g.hy() - 0.0625).abs() < 1e-15);
        assert!(g.cell_volume() > 0.0);
        assert!((g.area() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mean_of_constant_is_the_constant() {
        let f = ScalarField::constant(grid(8, 8), 3.0);
        assert!((f.mean() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn l2_norm_of_ones_is_sqrt_area() {
        let g = GridSpec::new(16, 8, 2.0, 0.5).unwrap();
        let f = ScalarField::constant(g, 1.0);
        assert!((f.l2_norm() - g.area().sqrt()).abs() < 1e-13);
    }

    #[test]
    fn cauchy_schwarz_on_random_pairs() {
        let g = grid(16, 16);
        let mut state = 0x12345u64;
        let mut rnd = || {
            // xorshift, good enough for test fields
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..50 {
            let f = ScalarField {
                grid: g,
                values: (0..g.cell_count()).map(|_| rnd()).collect(),
            };
            let h = ScalarField {
                grid: g,
                values: (0..g.cell_count()).map(|_| rnd()).collect(),
            };
            let lhs = f.l2_inner(&h).unwrap().abs();
            let rhs = f.l2_norm() * h.l2_norm();
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let f = ScalarField::zeros(grid(8, 8));
        let h = ScalarField::zeros(grid(8, 16));
        assert!(matches!(
            f.l2_inner(&h),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn vector_linf_and_boundary() {
        let g = grid(4, 4);
        let mut v = VectorField::from_fn(g, |_, _| 2.0, |_, _| -3.0);
        assert!((v.linf() - 3.0).abs() < 1e-15);
        assert!(!v.normal_boundary_is_zero());
        v.zero_normal_boundary();
        assert!(v.normal_boundary_is_zero());
    }

    #[test]
    fn linf_flags_non_finite() {
        let g = grid(4, 4);
        let mut f = ScalarField::zeros(g);
        f.values[5] = f64::NAN;
        assert!(f.linf().is_nan());
        assert!(!f.is_finite());
    }
}
