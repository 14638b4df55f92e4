//! Double-well potential `F`, its derivatives, the convex/concave split
//! `F(s) = G(s) - (a*/2) s^2`, and numeric validation of the structural
//! hypotheses the energy-stable stepper relies on.
//!
//! Only polynomial potentials are supported: they are C^2 everywhere, their
//! derivatives are exact, and the divided difference `(F(b)-F(a))/(b-a)` has
//! a removable singularity that can be evaluated as a polynomial in both
//! endpoints (used by the discrete Korteweg identity).

use crate::error::Error;
use crate::grid::ScalarField;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `F(s) = (1/4)(s^2 - 1)^2`.
    Quartic,
    /// `F(s) = sum_k coeffs[k] s^k`.
    Polynomial(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Hypotheses are validated on `[-s_max, s_max]`; the range monitor
    /// aborts any run whose phase field leaves it.
    pub s_max: f64,
    pub c0_override: Option<f64>,
}

impl PotentialSpec {
    pub fn quartic() -> Self {
        Self {
            kind: PotentialKind::Quartic,
            s_max: 3.0,
            c0_override: None,
        }
    }

    pub fn polynomial(coeffs: Vec<f64>, s_max: f64) -> Self {
        Self {
            kind: PotentialKind::Polynomial(coeffs),
            s_max,
            c0_override: None,
        }
    }

    fn coeffs(&self) -> &[f64] {
        const QUARTIC: [f64; 5] = [0.25, 0.0, -0.5, 0.0, 0.25];
        match &self.kind {
            PotentialKind::Quartic => &QUARTIC,
            PotentialKind::Polynomial(c) => c,
        }
    }

    pub fn f_val(&self, s: f64) -> f64 {
        horner(self.coeffs(), s)
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        let c = self.coeffs();
        let d: Vec<f64> = (1..c.len()).map(|k| c[k] * k as f64).collect();
        horner(&d, s)
    }

    pub fn f_second(&self, s: f64) -> f64 {
        let c = self.coeffs();
        let d: Vec<f64> = (2..c.len()).map(|k| c[k] * (k * (k - 1)) as f64).collect();
        horner(&d, s)
    }

    /// Exact polynomial divided difference `(F(b) - F(a)) / (b - a)`,
    /// evaluated without the division: `sum_k c_k sum_{m<k} a^m b^{k-1-m}`.
    /// Tends to `F'(a)` as `b -> a`.
    pub fn f_divided_diff(&self, a: f64, b: f64) -> f64 {
        let c = self.coeffs();
        let mut total = 0.0;
        for (k, &ck) in c.iter().enumerate().skip(1) {
            if ck == 0.0 {
                continue;
            }
            // sum_{m=0}^{k-1} a^m b^{k-1-m}
            let mut s = 0.0;
            let mut apow = 1.0;
            for m in 0..k {
                s += apow * b.powi((k - 1 - m) as i32);
                apow *= a;
            }
            total += ck * s;
        }
        total
    }

    pub fn f_map(&self, phi: &ScalarField) -> ScalarField {
        phi.map(|s| self.f_val(s))
    }

    pub fn f_prime_map(&self, phi: &ScalarField) -> ScalarField {
        phi.map(|s| self.f_prime(s))
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

/// Outcome of the hypothesis validation on a sampled range.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    /// `min over sampled s of F''(s) + min_x a(x)`; must be positive.
    pub c0: f64,
    pub a_min: f64,
    /// Fitted growth exponent `q` of `F''(s) + a ~ c |s|^{2q}` at large |s|.
    pub q_fit: f64,
    /// Fitted exponent `p` of `|F'(s)|^p <= c (|F(s)| + 1)` at large |s|.
    pub p_fit: f64,
    /// Empirical constant of the p-bound over the sampled range.
    pub p_constant: f64,
    pub samples: usize,
    pub s_max: f64,
}

/// Sample `F'' + a` over `[-s_max, s_max] x Omega` and report the measured
/// constants. The positivity of `c0` is hard-enforced (the stepper's energy
/// stability needs it); the growth fits are report-only.
pub fn validate_hypotheses(
    spec: &PotentialSpec,
    a: &ScalarField,
    n_samples: usize,
) -> Result<HypothesisReport> {
    let n = n_samples.max(10_000);
    let a_min = a.values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let s_max = spec.s_max;

    let mut c0 = f64::INFINITY;
    for k in 0..n {
        let s = -s_max + 2.0 * s_max * k as f64 / (n - 1) as f64;
        c0 = c0.min(spec.f_second(s) + a_min);
    }
    if c0 <= 0.0 {
        return Err(Error::HypothesisViolated {
            hypothesis: "H2",
            detail: format!(
                "min(F'' + a) = {c0:e} <= 0 on [-{s_max}, {s_max}] with min a = {a_min:e}; \
                 increase the kernel strength or soften the potential"
            ),
        });
    }
    if let Some(ov) = spec.c0_override {
        if ov > c0 {
            return Err(Error::Config(format!(
                "c0 override {ov:e} exceeds the measured value {c0:e}"
            )));
        }
    }

    // growth fits over the top quarter of the range, where the leading
    // monomials dominate
    let mut pts_q = Vec::new();
    let mut pts_p = Vec::new();
    let mut p_constant = 0.0f64;
    for k in 0..n {
        let s = -s_max + 2.0 * s_max * k as f64 / (n - 1) as f64;
        if s.abs() < 0.75 * s_max {
            continue;
        }
        let y = spec.f_second(s) + a_min;
        if y > 0.0 {
            pts_q.push((s.abs().ln(), y.ln()));
        }
        let fp = spec.f_prime(s).abs();
        let fv = spec.f_val(s).abs();
        if fp > 1.0 {
            pts_p.push((fp.ln(), (fv + 1.0).ln()));
        }
    }
    let q_fit = slope(&pts_q) / 2.0;
    let p_fit = slope(&pts_p);
    for k in 0..n {
        let s = -s_max + 2.0 * s_max * k as f64 / (n - 1) as f64;
        let fp = spec.f_prime(s).abs();
        let fv = spec.f_val(s).abs();
        p_constant = p_constant.max(fp.powf(p_fit) / (fv + 1.0));
    }

    Ok(HypothesisReport {
        c0,
        a_min,
        q_fit,
        p_fit,
        p_constant,
        samples: n,
        s_max,
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// The split `F(s) = G(s) - (shift/2) s^2` with `G' (s) = F'(s) + shift s`
/// convex on the sampled range, plus the stabilization constant used by the
/// linearized stepper.
#[derive(Debug, Clone, Copy)]
pub struct ConvexSplit {
    /// `a*`; the quadratic shift of the split.
    pub shift: f64,
    /// `S = max(a*, sup sampled -F'')`; the semi-implicit stabilization.
    pub stab: f64,
}

impl ConvexSplit {
    pub fn g_prime(&self, spec: &PotentialSpec, s: f64) -> f64 {
        spec.f_prime(s) + self.shift * s
    }

    pub fn g_second(&self, spec: &PotentialSpec, s: f64) -> f64 {
        spec.f_second(s) + self.shift
    }
}

pub fn convex_split(spec: &PotentialSpec, a_star: f64) -> ConvexSplit {
    let n = 10_000;
    let mut sup_neg_fpp = f64::NEG_INFINITY;
    for k in 0..n {
        let s = -spec.s_max + 2.0 * spec.s_max * k as f64 / (n - 1) as f64;
        sup_neg_fpp = sup_neg_fpp.max(-spec.f_second(s));
    }
    ConvexSplit {
        shift: a_star,
        stab: a_star.max(sup_neg_fpp),
    }
}
