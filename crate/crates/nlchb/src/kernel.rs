//! Interaction kernels `J` for the nonlocal free energy.
//!
//! Every kernel is radial with a hard support cutoff: `J(x) = Jtilde(|x|)`
//! for `|x| <= support_radius` and 0 beyond. The Gaussian profile is
//! normalized to unit plane integral before the `strength` factor; the
//! mollified Newtonian profile `-(1/4 pi) ln(r^2 + delta^2)` is shifted by
//! its cutoff value so it is continuous and nonnegative on its support.
//! Tabulated profiles come from a two-column CSV (radius, value) and are
//! interpolated linearly.

use crate::error::Error;
use crate::Result;
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `strength / (2 pi eps^2) * exp(-r^2 / (2 eps^2))`.
    Gaussian { width: f64 },
    /// `strength / (4 pi) * (ln(Rs^2 + d^2) - ln(r^2 + d^2))`, zero at `r = Rs`.
    MollifiedNewtonian { core_radius: f64 },
    /// Piecewise-linear radial profile from sampled `(r, J(r))` pairs.
    Tabulated { table: KernelTable },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub support_radius: f64,
    pub strength: f64,
}

impl KernelSpec {
    pub fn gaussian(width: f64, strength: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Config(format!("gaussian width must be positive, got {width}")));
        }
        Ok(Self {
            kind: KernelKind::Gaussian { width },
            support_radius: 8.0 * width,
            strength,
        })
    }

    pub fn mollified_newtonian(core_radius: f64, support_radius: f64, strength: f64) -> Result<Self> {
        if !(core_radius > 0.0) || !(support_radius > core_radius) {
            return Err(Error::Config(format!(
                "mollified newtonian needs 0 < core_radius < support_radius, got {core_radius}, {support_radius}"
            )));
        }
        Ok(Self {
            kind: KernelKind::MollifiedNewtonian { core_radius },
            support_radius,
            strength,
        })
    }

    pub fn tabulated(table: KernelTable, strength: f64) -> Self {
        let support = table.max_radius();
        Self {
            kind: KernelKind::Tabulated { table },
            support_radius: support,
            strength,
        }
    }

    pub fn with_support_radius(mut self, r: f64) -> Self {
        self.support_radius = r;
        self
    }

    /// Radial profile before the support cutoff.
    pub fn profile(&self, r: f64) -> f64 {
        let raw = match &self.kind {
            KernelKind::Gaussian { width } => {
                (-(r * r) / (2.0 * width * width)).exp() / (2.0 * PI * width * width)
            }
            KernelKind::MollifiedNewtonian { core_radius } => {
                let d2 = core_radius * core_radius;
                let rs2 = self.support_radius * self.support_radius;
                ((rs2 + d2).ln() - (r * r + d2).ln()) / (4.0 * PI)
            }
            KernelKind::Tabulated { table } => table.eval(r),
        };
        self.strength * raw
    }

    /// Radial derivative of the profile.
    pub fn profile_d1(&self, r: f64) -> f64 {
        let raw = match &self.kind {
            KernelKind::Gaussian { width } => {
                let w2 = width * width;
                -r / w2 * (-(r * r) / (2.0 * w2)).exp() / (2.0 * PI * w2)
            }
            KernelKind::MollifiedNewtonian { core_radius } => {
                let d2 = core_radius * core_radius;
                -2.0 * r / (r * r + d2) / (4.0 * PI)
            }
            KernelKind::Tabulated { table } => table.eval_d1(r),
        };
        self.strength * raw
    }

    /// `J(dx, dy)`: even by construction, zero beyond the support radius.
    #[inline]
    pub fn eval(&self, dx: f64, dy: f64) -> f64 {
        let r = (dx * dx + dy * dy).sqrt();
        if r > self.support_radius {
            0.0
        } else {
            self.profile(r)
        }
    }

    /// `grad J (dx, dy)`; zero at the origin and beyond the support.
    #[inline]
    pub fn eval_grad(&self, dx: f64, dy: f64) -> (f64, f64) {
        let r = (dx * dx + dy * dy).sqrt();
        if r > self.support_radius || r < 1e-300 {
            (0.0, 0.0)
        } else {
            let d = self.profile_d1(r) / r;
            (d * dx, d * dy)
        }
    }

    /// Sample the radial profile and its derivatives on a log-spaced radius
    /// grid and report how far the kernel is from being admissible:
    /// non-increasing profile and a third derivative bounded by
    /// `C r^{-(d+1)}` (d = 2). Advisory for simulations; the selftest treats a
    /// monotonicity violation as a failure.
    pub fn check_admissible(&self) -> AdmissibilityReport {
        let n = 400;
        let r_max = self.support_radius;
        let r_min = r_max * 1e-4;
        let radii: Vec<f64> = (0..n)
            .map(|k| r_min * (r_max / r_min * (1.0 - 1e-9)).powf(k as f64 / (n - 1) as f64))
            .collect();
        let prof: Vec<f64> = radii.iter().map(|&r| self.profile(r)).collect();
        let scale = prof.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut first_violation = None;
        for k in 1..n {
            if prof[k] > prof[k - 1] + 1e-12 * scale {
                first_violation = Some(radii[k]);
                break;
            }
        }

        // |J'''(r)| by central differences with a radius-relative step;
        // fit |J'''| ~ C r^s over the upper radius decade (but away from the
        // cutoff kink) and record the empirical constant of C r^{-(d+1)}.
        let d3 = |r: f64| -> f64 {
            let h = (r * 1e-2).max(1e-7);
            (self.profile(r + 2.0 * h) - 2.0 * self.profile(r + h) + 2.0 * self.profile(r - h)
                - self.profile(r - 2.0 * h))
                / (2.0 * h * h * h)
        };
        let fit_lo = r_max / 30.0;
        let fit_hi = r_max / 3.0;
        let mut pts: Vec<(f64, f64)> = Vec::new();
        let mut c_emp = 0.0f64;
        for &r in &radii {
            if r < fit_lo || r > fit_hi {
                continue;
            }
            let v = d3(r).abs();
            c_emp = c_emp.max(v * r.powi(3));
            if v > 0.0 {
                pts.push((r.ln(), v.ln()));
            }
        }
        let d3_slope = if pts.len() >= 4 { Some(ls_slope(&pts)) } else { None };

        let integrability_note = match &self.kind {
            KernelKind::Tabulated { .. } => Some(
                "tabulated profile: W^{1,1} integrability checked only on the sampled range".to_string(),
            ),
            _ => None,
        };

        AdmissibilityReport {
            radially_symmetric: true,
            monotone_nonincreasing: first_violation.is_none(),
            first_violation_radius: first_violation,
            d3_constant: c_emp,
            d3_slope,
            integrability_note,
        }
    }
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    /// All kernel kinds here are radial by construction.
    pub radially_symmetric: bool,
    pub monotone_nonincreasing: bool,
    pub first_violation_radius: Option<f64>,
    /// Empirical constant in `|D^3 J| <= C r^{-(d+1)}` over the fit window.
    pub d3_constant: f64,
    /// Log-log slope of `|D^3 J|` vs `r` over the fit window.
    pub d3_slope: Option<f64>,
    pub integrability_note: Option<String>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.radially_symmetric && self.monotone_nonincreasing
    }
}

/// Piecewise-linear radial profile from `(r, J(r))` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    rs: Vec<f64>,
    vals: Vec<f64>,
}

impl KernelTable {
    pub fn new(rs: Vec<f64>, vals: Vec<f64>) -> Result<Self> {
        if rs.len() != vals.len() || rs.len() < 2 {
            return Err(Error::KernelTable(
                "need at least two (r, J) samples of equal length".into(),
            ));
        }
        if rs[0] != 0.0 {
            return Err(Error::KernelTable(format!(
                "radius column must start at 0, got {}",
                rs[0]
            )));
        }
        for w in rs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::KernelTable(format!(
                    "radius column must be strictly increasing, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::KernelTable("non-finite kernel value".into()));
        }
        Ok(Self { rs, vals })
    }

    /// Two-column CSV `r, J(r)`; an optional non-numeric header line is skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rs = Vec::new();
        let mut vals = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (a, b) = (parts.next(), parts.next());
            match (a.and_then(|s| s.parse::<f64>().ok()), b.and_then(|s| s.parse::<f64>().ok())) {
                (Some(r), Some(v)) => {
                    rs.push(r);
                    vals.push(v);
                }
                _ if lineno == 0 => continue, // header
                _ => {
                    return Err(Error::KernelTable(format!(
                        "line {}: expected two numeric columns, got '{line}'",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(rs, vals)
    }

    pub fn max_radius(&self) -> f64 {
        *self.rs.last().unwrap()
    }

    fn segment(&self, r: f64) -> Option<usize> {
        if r < 0.0 || r > self.max_radius() {
            return None;
        }
        // rs strictly increasing; binary search for the segment containing r
        match self.rs.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(k) => Some(k.min(self.rs.len() - 2)),
            Err(k) => Some(k - 1),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self.segment(r) {
            None => 0.0,
            Some(k) => {
                let t = (r - self.rs[k]) / (self.rs[k + 1] - self.rs[k]);
                self.vals[k] + t * (self.vals[k + 1] - self.vals[k])
            }
        }
    }

    pub fn eval_d1(&self, r: f64) -> f64 {
        match self.segment(r) {
            None => 0.0,
            Some(k) => (self.vals[k + 1] - self.vals[k]) / (self.rs[k + 1] - self.rs[k]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_is_even_and_admissible() {
        let k = KernelSpec::gaussian(0.05, 1.0).unwrap();
        for &(dx, dy) in &[(0.01, 0.02), (0.1, -0.05), (-0.03, 0.0)] {
            assert_eq!(k.eval(dx, dy), k.eval(-dx, -dy));
        }
        let rep = k.check_admissible();
        assert!(rep.radially_symmetric);
        assert!(rep.monotone_nonincreasing, "{rep:?}");
        assert!(rep.passed());
    }

    #[test]
    fn gaussian_unit_mass_analytically() {
        // int J = strength; midpoint quadrature over a wide disc
        let k = KernelSpec::gaussian(0.05, 1.0).unwrap();
        let h = 0.004;
        let n = 200i64;
        let mut total = 0.0;
        for i in -n..n {
            for j in -n..n {
                let x = (i as f64 + 0.5) * h;
                let y = (j as f64 + 0.5) * h;
                total += k.eval(x, y) * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "mass {total}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let k = KernelSpec::gaussian(0.07, 2.0).unwrap();
        let h = 1e-6;
        for &(x, y) in &[(0.02, 0.03), (0.1, -0.04), (-0.06, -0.01)] {
            let (gx, gy) = k.eval_grad(x, y);
            let fx = (k.eval(x + h, y) - k.eval(x - h, y)) / (2.0 * h);
            let fy = (k.eval(x, y + h) - k.eval(x, y - h)) / (2.0 * h);
            assert!((gx - fx).abs() < 1e-5 * (1.0 + gx.abs()));
            assert!((gy - fy).abs() < 1e-5 * (1.0 + gy.abs()));
        }
    }

    #[test]
    fn newtonian_is_nonnegative_nonincreasing_with_cubic_d3_decay() {
        let k = KernelSpec::mollified_newtonian(0.005, 0.4, 1.0).unwrap();
        assert!(k.profile(0.0) > 0.0);
        assert!((k.profile(0.4)).abs() < 1e-14); // shifted to zero at the cutoff
        let rep = k.check_admissible();
        assert!(rep.monotone_nonincreasing);
        let slope = rep.d3_slope.expect("fit window populated");
        assert!(
            (slope + 3.0).abs() < 0.3,
            "expected |D^3 J| ~ r^-3 for r >> core radius, got slope {slope}"
        );
        assert!(rep.d3_constant > 0.0);
    }

    #[test]
    fn tabulated_bump_fails_monotonicity_with_located_radius() {
        let rs: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = rs
            .iter()
            .map(|&r| {
                let base = (1.0 - r / 0.49).max(0.0);
                let bump = 0.3 * (-((r - 0.3) / 0.02).powi(2)).exp();
                base + bump
            })
            .collect();
        let k = KernelSpec::tabulated(KernelTable::new(rs, vals).unwrap(), 1.0);
        let rep = k.check_admissible();
        assert!(!rep.monotone_nonincreasing);
        let r = rep.first_violation_radius.unwrap();
        assert!((0.2..0.32).contains(&r), "violation located at {r}");
        assert!(!rep.passed());
    }

    #[test]
    fn table_rejects_bad_input() {
        assert!(KernelTable::new(vec![0.1, 0.2], vec![1.0, 0.5]).is_err()); // no r=0
        assert!(KernelTable::new(vec![0.0, 0.0], vec![1.0, 0.5]).is_err()); // not increasing
        assert!(KernelTable::new(vec![0.0], vec![1.0]).is_err()); // too short
    }

    #[test]
    fn table_interpolates_linearly() {
        let t = KernelTable::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0]).unwrap();
        assert!((t.eval(0.5) - 0.75).abs() < 1e-15);
        assert!((t.eval(1.5) - 0.25).abs() < 1e-15);
        assert_eq!(t.eval(2.5), 0.0);
        assert!((t.eval_d1(0.25) + 0.5).abs() < 1e-15);
    }
}
