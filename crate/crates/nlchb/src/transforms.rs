//! Fast cosine and sine transforms built on complex FFTs of length 2n.
//!
//! Three bases cover every boundary condition in the crate:
//!
//! * [`CosineTransform`] (DCT-II/III pair), eigenbasis of the ghost-reflected
//!   Neumann Laplacian on cell centers: `cos(pi k (i+1/2)/n)`.
//! * [`SineNodeTransform`] (DST-I), eigenbasis for values pinned to zero at
//!   the nodes `i = 0, n`: `sin(pi k i / n)` at `i = 1..n-1`.
//! * [`SineHalfTransform`] (DST-II/III pair), eigenbasis for a zero wall half
//!   a cell outside the samples (no-slip ghost `v[-1] = -v[0]`):
//!   `sin(pi k (j+1/2)/n)`.
//!
//! Forward transforms are plain (unnormalized) analysis sums; `inverse` is
//! the exact synthesis, so `inverse(forward(x)) == x` to round-off. All mode
//! eigenvalues of the 1D three-point Laplacian are `(2/h^2)(1 - cos(pi k/n))`.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

fn plan_pair(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
}

/// DCT-II analysis / DCT-III synthesis on `n` cell-centered samples.
pub struct CosineTransform {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl CosineTransform {
    pub fn new(n: usize) -> Self {
        let (fwd, inv) = plan_pair(2 * n);
        Self { n, fwd, inv }
    }

    /// `out[k] = sum_i x[i] cos(pi k (i+1/2)/n)`, k = 0..n-1.
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for i in 0..n {
            buf[i] = Complex::new(x[i], 0.0);
            buf[2 * n - 1 - i] = Complex::new(x[i], 0.0);
        }
        self.fwd.process(&mut buf);
        for k in 0..n {
            let tw = Complex::from_polar(1.0, -PI * k as f64 / (2 * n) as f64);
            out[k] = 0.5 * (tw * buf[k]).re;
        }
    }

    /// Exact inverse of [`CosineTransform::forward`].
    pub fn inverse(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(coeffs.len(), n);
        debug_assert_eq!(out.len(), n);
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for k in 0..n {
            let tw = Complex::from_polar(2.0, PI * k as f64 / (2 * n) as f64);
            buf[k] = tw * coeffs[k];
        }
        for k in 1..n {
            buf[2 * n - k] = buf[k].conj();
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / (2 * n) as f64;
        for i in 0..n {
            out[i] = buf[i].re * scale;
        }
    }
}

/// DST-I on the `n-1` interior node samples of an interval split into `n` cells.
pub struct SineNodeTransform {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl SineNodeTransform {
    pub fn new(n: usize) -> Self {
        let (fwd, inv) = plan_pair(2 * n);
        Self { n, fwd, inv }
    }

    /// `out[k-1] = sum_{i=1}^{n-1} x[i-1] sin(pi k i / n)`, k = 1..n-1.
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n - 1);
        debug_assert_eq!(out.len(), n - 1);
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for i in 1..n {
            buf[i] = Complex::new(x[i - 1], 0.0);
            buf[2 * n - i] = Complex::new(-x[i - 1], 0.0);
        }
        self.fwd.process(&mut buf);
        for k in 1..n {
            out[k - 1] = -0.5 * buf[k].im;
        }
    }

    pub fn inverse(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(coeffs.len(), n - 1);
        debug_assert_eq!(out.len(), n - 1);
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for k in 1..n {
            buf[k] = Complex::new(0.0, -2.0 * coeffs[k - 1]);
            buf[2 * n - k] = Complex::new(0.0, 2.0 * coeffs[k - 1]);
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / (2 * n) as f64;
        for i in 1..n {
            out[i - 1] = buf[i].re * scale;
        }
    }
}

/// Half-sample sine transform on `n` samples with zero walls half a cell
/// outside (`v[-1] = -v[0]`, `v[n] = -v[n-1]`).
pub struct SineHalfTransform {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl SineHalfTransform {
    pub fn new(n: usize) -> Self {
        let (fwd, inv) = plan_pair(2 * n);
        Self { n, fwd, inv }
    }

    /// `out[k-1] = sum_j x[j] sin(pi k (j+1/2)/n)`, k = 1..n.
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for j in 0..n {
            buf[j] = Complex::new(x[j], 0.0);
            buf[2 * n - 1 - j] = Complex::new(-x[j], 0.0);
        }
        self.fwd.process(&mut buf);
        for k in 1..=n {
            let tw = Complex::from_polar(0.5, PI / 2.0 - PI * k as f64 / (2 * n) as f64);
            out[k - 1] = (tw * buf[k]).re;
        }
    }

    pub fn inverse(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(coeffs.len(), n);
        debug_assert_eq!(out.len(), n);
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for k in 1..=n {
            let tw = Complex::from_polar(2.0, PI * k as f64 / (2 * n) as f64 - PI / 2.0);
            buf[k] = tw * coeffs[k - 1];
        }
        for k in 1..n {
            buf[2 * n - k] = buf[k].conj();
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / (2 * n) as f64;
        for j in 0..n {
            out[j] = buf[j].re * scale;
        }
    }
}

/// Laplacian eigenvalues `(2/h^2)(1 - cos(pi k/n))` for the cosine modes
/// k = 0..n-1.
pub fn cell_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| 2.0 / (h * h) * (1.0 - (PI * k as f64 / n as f64).cos()))
        .collect()
}

/// Eigenvalues for the node-Dirichlet sine modes k = 1..n-1.
pub fn node_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (1..n)
        .map(|k| 2.0 / (h * h) * (1.0 - (PI * k as f64 / n as f64).cos()))
        .collect()
}

/// Eigenvalues for the half-sample sine modes k = 1..n.
pub fn half_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (1..=n)
        .map(|k| 2.0 / (h * h) * (1.0 - (PI * k as f64 / n as f64).cos()))
        .collect()
}
