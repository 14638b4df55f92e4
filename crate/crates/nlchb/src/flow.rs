//! Brinkman and Darcy (Hele-Shaw) flow solvers on the MAC grid, and the
//! Korteweg capillary force in its raw and rotational forms.
//!
//! Brinkman: `-div(nu grad u) + eta u + grad p = f`, `div u = 0`, no-slip
//! walls (normal faces pinned to 0, tangential ghost `u[-1] = -u[0]`).
//! Darcy: `eta u + grad p = f`, `div u = 0`, no-penetration walls. At nu = 0
//! the discrete Brinkman operator degenerates to exactly the discrete Darcy
//! operator, which is what makes the vanishing-viscosity comparison clean.
//!
//! The saddle point is solved by CG on the pressure Schur complement
//! `p -> -div A^{-1} grad p` with the `nu I + eta (-lap_N)^{-1}` spectral
//! preconditioner. For constant coefficients the velocity block `A` is
//! inverted exactly in its sine eigenbasis; otherwise by an inner PCG
//! preconditioned with the constant-coefficient solve at the mean values.

use crate::error::Error;
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::conv::ConvolutionEngine;
use crate::ops;
use crate::par;
use crate::poisson::NeumannPoissonSolver;
use crate::potential::PotentialSpec;
use crate::transforms::{half_eigenvalues, node_eigenvalues, SineHalfTransform, SineNodeTransform};
use crate::Result;

/// Relative target for the pressure/velocity Krylov loops; one order tighter
/// than the `|div u| <= 1e-8 (|u| + 1)` contract it must guarantee.
pub const KRYLOV_TOL: f64 = 1e-9;
const INNER_TOL: f64 = 1e-12;
const MAX_OUTER: usize = 600;
const MAX_INNER: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum ViscosityModel {
    Constant(f64),
    /// Smooth Lipschitz profile bounded between `nu0` and `nu1`:
    /// `nu(s) = nu0 + (nu1 - nu0) (1 + s / sqrt(1 + s^2)) / 2`.
    LipschitzProfile { nu0: f64, nu1: f64 },
}

impl ViscosityModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ViscosityModel::Constant(nu) if nu > 0.0 && nu.is_finite() => Ok(()),
            ViscosityModel::Constant(nu) => Err(Error::HypothesisViolated {
                hypothesis: "H6",
                detail: format!("constant viscosity must be positive, got {nu}"),
            }),
            ViscosityModel::LipschitzProfile { nu0, nu1 } if nu0 > 0.0 && nu1 >= nu0 => Ok(()),
            ViscosityModel::LipschitzProfile { nu0, nu1 } => Err(Error::HypothesisViolated {
                hypothesis: "H6",
                detail: format!("need 0 < nu0 <= nu1, got {nu0}, {nu1}"),
            }),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ViscosityModel::Constant(nu) => nu,
            ViscosityModel::LipschitzProfile { nu0, nu1 } => {
                nu0 + (nu1 - nu0) * 0.5 * (1.0 + s / (1.0 + s * s).sqrt())
            }
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            ViscosityModel::Constant(nu) => Some(nu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PermeabilityModel {
    Constant(f64),
    Cellwise(ScalarField),
}

impl PermeabilityModel {
    /// (H5): eta >= 0. `darcy = true` additionally demands a strictly
    /// positive floor (H8).
    pub fn validate(&self, darcy: bool) -> Result<()> {
        let min = self.min_value();
        if min < 0.0 || !min.is_finite() {
            return Err(Error::HypothesisViolated {
                hypothesis: "H5",
                detail: format!("permeability must be nonnegative, min = {min}"),
            });
        }
        if darcy && min < 1e-12 {
            return Err(Error::HypothesisViolated {
                hypothesis: "H8",
                detail: format!("Darcy mode needs eta >= eta0 > 0, min = {min:e}"),
            });
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        match self {
            PermeabilityModel::Constant(e) => *e,
            PermeabilityModel::Cellwise(f) => {
                f.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
            }
        }
    }

    pub fn mean_value(&self, grid: GridSpec) -> f64 {
        match self {
            PermeabilityModel::Constant(e) => *e,
            PermeabilityModel::Cellwise(f) => {
                let _ = grid;
                f.mean()
            }
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            PermeabilityModel::Constant(e) => Some(*e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowParams {
    pub viscosity: ViscosityModel,
    pub permeability: PermeabilityModel,
    pub body_force: Option<VectorField>,
}

impl FlowParams {
    pub fn validate(&self, darcy: bool) -> Result<()> {
        self.viscosity.validate()?;
        self.permeability.validate(darcy)?;
        if let Some(h) = &self.body_force {
            if !h.is_finite() {
                return Err(Error::NonFinite { what: "body force" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KortewegForm {
    Raw,
    Rotational,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub u: VectorField,
    /// Mean-zero pressure.
    pub p: ScalarField,
    pub stats: SolveStats,
}

/// Permeability interpolated to faces by harmonic averaging, the flux-side
/// interpolation that keeps the nu -> 0 Brinkman limit and the Darcy solve
/// on the same operator.
#[derive(Debug, Clone)]
pub struct EtaFaces {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn eta_faces(grid: GridSpec, eta: &PermeabilityModel) -> EtaFaces {
    let (nx, ny) = (grid.nx, grid.ny);
    match eta {
        PermeabilityModel::Constant(e) => EtaFaces {
            x: vec![*e; (nx + 1) * ny],
            y: vec![*e; nx * (ny + 1)],
        },
        PermeabilityModel::Cellwise(f) => {
            let mut x = vec![0.0; (nx + 1) * ny];
            for i in 0..=nx {
                for j in 0..ny {
                    x[i * ny + j] = if i == 0 {
                        f.at(0, j)
                    } else if i == nx {
                        f.at(nx - 1, j)
                    } else {
                        harmonic(f.at(i - 1, j), f.at(i, j))
                    };
                }
            }
            let mut y = vec![0.0; nx * (ny + 1)];
            for i in 0..nx {
                for j in 0..=ny {
                    y[i * (ny + 1) + j] = if j == 0 {
                        f.at(i, 0)
                    } else if j == ny {
                        f.at(i, ny - 1)
                    } else {
                        harmonic(f.at(i, j - 1), f.at(i, j))
                    };
                }
            }
            EtaFaces { x, y }
        }
    }
}

/// Cellwise viscosity coefficient for the variable-coefficient operator.
#[derive(Debug, Clone)]
pub enum NuCoeffs {
    Const(f64),
    Cells(ScalarField),
}

impl NuCoeffs {
    pub fn from_model(model: &ViscosityModel, phi: Option<&ScalarField>, grid: GridSpec) -> NuCoeffs {
        match (model.constant_value(), phi) {
            (Some(nu), _) => NuCoeffs::Const(nu),
            (None, Some(phi)) => NuCoeffs::Cells(phi.map(|s| model.eval(s))),
            (None, None) => NuCoeffs::Cells(ScalarField::constant(grid, model.eval(0.0))),
        }
    }

    fn at_cell(&self, grid: GridSpec, i: usize, j: usize) -> f64 {
        match self {
            NuCoeffs::Const(nu) => *nu,
            NuCoeffs::Cells(f) => {
                let _ = grid;
                f.at(i, j)
            }
        }
    }

    /// Harmonic mean at the node (corner) `(i, j)` of the up-to-four
    /// surrounding cells, with ghost reflection at the walls.
    fn at_node(&self, grid: GridSpec, i: usize, j: usize) -> f64 {
        match self {
            NuCoeffs::Const(nu) => *nu,
            NuCoeffs::Cells(f) => {
                let (nx, ny) = (grid.nx, grid.ny);
                let il = i.saturating_sub(1).min(nx - 1);
                let ir = i.min(nx - 1);
                let jl = j.saturating_sub(1).min(ny - 1);
                let jr = j.min(ny - 1);
                let vals = [f.at(il, jl), f.at(ir, jl), f.at(il, jr), f.at(ir, jr)];
                let inv: f64 = vals.iter().map(|v| 1.0 / v).sum();
                4.0 / inv
            }
        }
    }

    pub fn mean(&self, grid: GridSpec) -> f64 {
        match self {
            NuCoeffs::Const(nu) => *nu,
            NuCoeffs::Cells(f) => {
                let _ = grid;
                f.mean()
            }
        }
    }
}

/// `A u = -div(nu grad u) + eta u` on the interior faces, with no-slip ghost
/// values (`u = 0` at the walls, half a cell outside the tangential samples).
/// Output boundary-normal faces are 0.
pub fn apply_velocity_op(u: &VectorField, nu: &NuCoeffs, eta: &EtaFaces) -> VectorField {
    let g = u.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let (ihx2, ihy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let mut out = VectorField::zeros(g);

    let ux = &u.xcomp;
    par::for_each_row_mut(&mut out.xcomp, ny, |i, row| {
        if i == 0 || i == nx {
            return;
        }
        for (j, o) in row.iter_mut().enumerate() {
            let c = ux[i * ny + j];
            // x fluxes live at cell centers i-1 and i
            let nw = nu.at_cell(g, i - 1, j);
            let ne = nu.at_cell(g, i, j);
            let left = ux[(i - 1) * ny + j]; // face 0 is pinned to 0, included
            let right = ux[(i + 1) * ny + j];
            let lap_x = (ne * (right - c) - nw * (c - left)) * ihx2;
            // y fluxes live at the nodes j and j+1; wall ghost u = -c
            let ns = nu.at_node(g, i, j);
            let nn = nu.at_node(g, i, j + 1);
            let below = if j == 0 { -c } else { ux[i * ny + j - 1] };
            let above = if j + 1 == ny { -c } else { ux[i * ny + j + 1] };
            let lap_y = (nn * (above - c) - ns * (c - below)) * ihy2;
            *o = -(lap_x + lap_y) + eta.x[i * ny + j] * c;
        }
    });

    let uy = &u.ycomp;
    let nyp = ny + 1;
    par::for_each_row_mut(&mut out.ycomp, nyp, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            if j == 0 || j == ny {
                continue;
            }
            let c = uy[i * nyp + j];
            let ns = nu.at_cell(g, i, j - 1);
            let nn = nu.at_cell(g, i, j);
            let below = uy[i * nyp + j - 1];
            let above = uy[i * nyp + j + 1];
            let lap_y = (nn * (above - c) - ns * (c - below)) * ihy2;
            let nw = nu.at_node(g, i, j);
            let ne = nu.at_node(g, i + 1, j);
            let left = if i == 0 { -c } else { uy[(i - 1) * nyp + j] };
            let right = if i + 1 == nx { -c } else { uy[(i + 1) * nyp + j] };
            let lap_x = (ne * (right - c) - nw * (c - left)) * ihx2;
            *o = -(lap_x + lap_y) + eta.y[i * nyp + j] * c;
        }
    });
    out
}

/// `<nu grad u, grad u>` evaluated as `<-div(nu grad u), u>` with the same
/// stencil and ghosts as the solver, so the energy identity closes exactly.
pub fn viscous_dissipation(u: &VectorField, nu: &NuCoeffs) -> f64 {
    let zero = EtaFaces {
        x: vec![0.0; (u.grid.nx + 1) * u.grid.ny],
        y: vec![0.0; u.grid.nx * (u.grid.ny + 1)],
    };
    apply_velocity_op(u, nu, &zero).l2_inner(u).expect("same grid")
}

/// `<eta u, u>` with the face-averaged permeability.
pub fn permeability_dissipation(u: &VectorField, eta: &EtaFaces) -> f64 {
    let g = u.grid;
    let ny = g.ny;
    let sx = par::sum_indexed(g.nx + 1, |i| {
        (0..ny)
            .map(|j| eta.x[i * ny + j] * u.xcomp[i * ny + j].powi(2))
            .sum::<f64>()
    });
    let nyp = ny + 1;
    let sy = par::sum_indexed(g.nx, |i| {
        (0..nyp)
            .map(|j| eta.y[i * nyp + j] * u.ycomp[i * nyp + j].powi(2))
            .sum::<f64>()
    });
    (sx + sy) * g.cell_volume()
}

/// Max face magnitude; logged every step as the boundedness monitor.
pub fn velocity_linf_report(u: &VectorField) -> f64 {
    u.linf()
}

// ---------------------------------------------------------------------------
// Korteweg force
// ---------------------------------------------------------------------------

/// Capillary force `mu grad(phi)` at the faces.
///
/// `form = Rotational` evaluates `phi grad(J*phi) - (1/2) phi^2 grad(a)`
/// with discrete gradients of the cell convolutions and arithmetic face
/// means of `phi`, `phi^2`.
///
/// `form = Raw` evaluates `mu_face * grad(phi)` where the face value of
/// `mu = a phi + F'(phi) - J*phi` is assembled term by term (product of
/// means for `a phi`, the exact divided difference for `F'`, arithmetic mean
/// for `J*phi`). With these interpolations the two forms differ by exactly
/// the discrete gradient of `F(phi) + (1/2) a phi^2 - (J*phi) phi`, so they
/// produce the same velocity: the discrete counterpart of the pressure
/// absorbing `mu grad(phi) - [phi grad(J*phi) - (1/2) phi^2 grad(a)]`.
///
/// `mu` must be the chemical potential of `phi` (checked in debug builds);
/// `w` must be `engine.convolve(phi)`.
pub fn korteweg_force_with(
    phi: &ScalarField,
    mu: &ScalarField,
    w: &ScalarField,
    engine: &ConvolutionEngine,
    potential: &PotentialSpec,
    form: KortewegForm,
) -> Result<VectorField> {
    engine.grid.check_match(&phi.grid)?;
    debug_assert!({
        let scale = mu.linf().max(1.0);
        let a = engine.a();
        phi.values.iter().enumerate().all(|(k, &p)| {
            let rebuilt = a.values[k] * p + potential.f_prime(p) - w.values[k];
            (rebuilt - mu.values[k]).abs() <= 1e-8 * scale
        })
    });
    let g = phi.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let a = engine.a();
    let mut out = VectorField::zeros(g);

    match form {
        KortewegForm::Rotational => {
            let gw = ops::gradient(w);
            let ga = ops::gradient(a);
            par::for_each_row_mut(&mut out.xcomp, ny, |i, row| {
                if i == 0 || i == nx {
                    return;
                }
                for (j, o) in row.iter_mut().enumerate() {
                    let pl = phi.values[(i - 1) * ny + j];
                    let pr = phi.values[i * ny + j];
                    let pbar = 0.5 * (pl + pr);
                    let p2bar = 0.5 * (pl * pl + pr * pr);
                    *o = pbar * gw.xcomp[i * ny + j] - 0.5 * p2bar * ga.xcomp[i * ny + j];
                }
            });
            let nyp = ny + 1;
            par::for_each_row_mut(&mut out.ycomp, nyp, |i, row| {
                for (j, o) in row.iter_mut().enumerate() {
                    if j == 0 || j == ny {
                        continue;
                    }
                    let pl = phi.values[i * ny + j - 1];
                    let pr = phi.values[i * ny + j];
                    let pbar = 0.5 * (pl + pr);
                    let p2bar = 0.5 * (pl * pl + pr * pr);
                    *o = pbar * gw.ycomp[i * nyp + j] - 0.5 * p2bar * ga.ycomp[i * nyp + j];
                }
            });
        }
        KortewegForm::Raw => {
            par::for_each_row_mut(&mut out.xcomp, ny, |i, row| {
                if i == 0 || i == nx {
                    return;
                }
                for (j, o) in row.iter_mut().enumerate() {
                    let kl = (i - 1) * ny + j;
                    let kr = i * ny + j;
                    let (pl, pr) = (phi.values[kl], phi.values[kr]);
                    let mu_face = 0.5 * (a.values[kl] + a.values[kr]) * 0.5 * (pl + pr)
                        + potential.f_divided_diff(pl, pr)
                        - 0.5 * (w.values[kl] + w.values[kr]);
                    *o = mu_face * (pr - pl) / hx;
                }
            });
            let nyp = ny + 1;
            par::for_each_row_mut(&mut out.ycomp, nyp, |i, row| {
                for (j, o) in row.iter_mut().enumerate() {
                    if j == 0 || j == ny {
                        continue;
                    }
                    let kl = i * ny + j - 1;
                    let kr = i * ny + j;
                    let (pl, pr) = (phi.values[kl], phi.values[kr]);
                    let mu_face = 0.5 * (a.values[kl] + a.values[kr]) * 0.5 * (pl + pr)
                        + potential.f_divided_diff(pl, pr)
                        - 0.5 * (w.values[kl] + w.values[kr]);
                    *o = mu_face * (pr - pl) / hy;
                }
            });
        }
    }
    Ok(out)
}

/// Convenience wrapper computing `J * phi` itself.
pub fn korteweg_force(
    phi: &ScalarField,
    mu: &ScalarField,
    engine: &ConvolutionEngine,
    potential: &PotentialSpec,
    form: KortewegForm,
) -> Result<VectorField> {
    let w = engine.convolve(phi)?;
    korteweg_force_with(phi, mu, &w, engine, potential, form)
}

// ---------------------------------------------------------------------------
// Constant-coefficient velocity solve in the sine eigenbasis
// ---------------------------------------------------------------------------

struct VelocitySpectral {
    grid: GridSpec,
    stx_node: SineNodeTransform,
    sty_node: SineNodeTransform,
    stx_half: SineHalfTransform,
    sty_half: SineHalfTransform,
    eigx_node: Vec<f64>,
    eigy_node: Vec<f64>,
    eigx_half: Vec<f64>,
    eigy_half: Vec<f64>,
}

impl VelocitySpectral {
    fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            stx_node: SineNodeTransform::new(grid.nx),
            sty_node: SineNodeTransform::new(grid.ny),
            stx_half: SineHalfTransform::new(grid.nx),
            sty_half: SineHalfTransform::new(grid.ny),
            eigx_node: node_eigenvalues(grid.nx, grid.hx()),
            eigy_node: node_eigenvalues(grid.ny, grid.hy()),
            eigx_half: half_eigenvalues(grid.nx, grid.hx()),
            eigy_half: half_eigenvalues(grid.ny, grid.hy()),
        }
    }

    /// Exact solve of `(eta - nu lap) u = rhs` for constant coefficients.
    fn solve_const(&self, nu: f64, eta: f64, rhs: &VectorField) -> VectorField {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let mut out = VectorField::zeros(g);

        // x component: interior block (nx-1) x ny
        if nx > 1 {
            let mut w = vec![0.0; (nx - 1) * ny];
            for i in 1..nx {
                w[(i - 1) * ny..i * ny].copy_from_slice(&rhs.xcomp[i * ny..(i + 1) * ny]);
            }
            par::for_each_row_mut(&mut w, ny, |_, row| {
                let tmp = row.to_vec();
                self.sty_half.forward(&tmp, row);
            });
            let mut t = vec![0.0; (nx - 1) * ny];
            transpose(&w, &mut t, nx - 1, ny);
            par::for_each_row_mut(&mut t, nx - 1, |_, row| {
                let tmp = row.to_vec();
                self.stx_node.forward(&tmp, row);
            });
            for ky in 0..ny {
                for kx in 0..nx - 1 {
                    t[ky * (nx - 1) + kx] /=
                        eta + nu * (self.eigx_node[kx] + self.eigy_half[ky]);
                }
            }
            par::for_each_row_mut(&mut t, nx - 1, |_, row| {
                let tmp = row.to_vec();
                self.stx_node.inverse(&tmp, row);
            });
            transpose(&t, &mut w, ny, nx - 1);
            par::for_each_row_mut(&mut w, ny, |_, row| {
                let tmp = row.to_vec();
                self.sty_half.inverse(&tmp, row);
            });
            // synthesis normalization: node inverse restores samples, half
            // inverse restores samples; combined round trip is exact
            for i in 1..nx {
                out.xcomp[i * ny..(i + 1) * ny].copy_from_slice(&w[(i - 1) * ny..i * ny]);
            }
        }

        // y component: interior block nx x (ny-1)
        if ny > 1 {
            let nyp = ny + 1;
            let mut w = vec![0.0; nx * (ny - 1)];
            for i in 0..nx {
                for j in 1..ny {
                    w[i * (ny - 1) + j - 1] = rhs.ycomp[i * nyp + j];
                }
            }
            par::for_each_row_mut(&mut w, ny - 1, |_, row| {
                let tmp = row.to_vec();
                self.sty_node.forward(&tmp, row);
            });
            let mut t = vec![0.0; nx * (ny - 1)];
            transpose(&w, &mut t, nx, ny - 1);
            par::for_each_row_mut(&mut t, nx, |_, row| {
                let tmp = row.to_vec();
                self.stx_half.forward(&tmp, row);
            });
            for ky in 0..ny - 1 {
                for kx in 0..nx {
                    t[ky * nx + kx] /= eta + nu * (self.eigx_half[kx] + self.eigy_node[ky]);
                }
            }
            par::for_each_row_mut(&mut t, nx, |_, row| {
                let tmp = row.to_vec();
                self.stx_half.inverse(&tmp, row);
            });
            transpose(&t, &mut w, ny - 1, nx);
            par::for_each_row_mut(&mut w, ny - 1, |_, row| {
                let tmp = row.to_vec();
                self.sty_node.inverse(&tmp, row);
            });
            for i in 0..nx {
                for j in 1..ny {
                    out.ycomp[i * nyp + j] = w[i * (ny - 1) + j - 1];
                }
            }
        }
        out
    }
}

fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

// ---------------------------------------------------------------------------
// Brinkman solver
// ---------------------------------------------------------------------------

pub struct BrinkmanSolver {
    pub grid: GridSpec,
    spectral: VelocitySpectral,
    poisson: std::sync::Arc<NeumannPoissonSolver>,
}

impl BrinkmanSolver {
    pub fn new(grid: GridSpec, poisson: std::sync::Arc<NeumannPoissonSolver>) -> Self {
        Self {
            grid,
            spectral: VelocitySpectral::new(grid),
            poisson,
        }
    }

    /// Solve the Brinkman saddle-point problem for the total face force
    /// `force` (Korteweg force plus body force). `phi` feeds `nu(phi)` when
    /// the viscosity model is not constant.
    pub fn solve(
        &self,
        force: &VectorField,
        phi: Option<&ScalarField>,
        params: &FlowParams,
    ) -> Result<FlowSolution> {
        self.grid.check_match(&force.grid)?;
        params.validate(false)?;
        let nu = NuCoeffs::from_model(&params.viscosity, phi, self.grid);
        let eta = eta_faces(self.grid, &params.permeability);
        let nu_mean = nu.mean(self.grid);
        let eta_mean = params.permeability.mean_value(self.grid);
        let exact_block = matches!(nu, NuCoeffs::Const(_))
            && params.permeability.constant_value().is_some();

        let mut inner_iters = 0usize;
        let apply_a_inv = |rhs: &VectorField, iters: &mut usize| -> Result<VectorField> {
            if exact_block {
                Ok(self.spectral.solve_const(nu_mean, eta_mean, rhs))
            } else {
                let (u, it) = self.velocity_pcg(rhs, &nu, &eta, nu_mean, eta_mean)?;
                *iters += it;
                Ok(u)
            }
        };

        // u0 = A^{-1} f; b = -div(u0)
        let u0 = apply_a_inv(force, &mut inner_iters)?;
        let mut b = ops::divergence(&u0);
        b.scale(-1.0);
        b.project_zero_mean();

        let mut u = u0;
        let mut p = ScalarField::zeros(self.grid);
        let mut r = b.clone();
        let b_norm = b.l2_norm();
        let mut iterations = 0usize;

        let stop = |r_norm: f64, u_norm: f64| r_norm <= KRYLOV_TOL * (u_norm + 1.0);

        if !stop(r.l2_norm(), u.l2_norm()) && b_norm > 0.0 {
            // CG on the (negated) pressure Schur complement, preconditioned
            // by nu I + eta (-lap)^{-1}
            let precond = |r: &ScalarField| -> ScalarField {
                let mut z = r.clone();
                z.project_zero_mean();
                let inv = self.poisson.solve(&z).expect("projected rhs");
                let mut out = z;
                out.scale(nu_mean);
                out.axpy(eta_mean, &inv);
                out
            };
            let mut z = precond(&r);
            let mut d = z.clone();
            let mut rz = r.l2_inner(&z)?;
            loop {
                iterations += 1;
                let gd = ops::gradient(&d);
                let w_vel = apply_a_inv(&gd, &mut inner_iters)?;
                let mut nd = ops::divergence(&w_vel);
                nd.scale(-1.0);
                let dnd = d.l2_inner(&nd)?;
                if dnd <= 0.0 {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: r.l2_norm(),
                    });
                }
                let alpha = rz / dnd;
                p.axpy(alpha, &d);
                u.axpy(-alpha, &w_vel);
                r.axpy(-alpha, &nd);
                let r_norm = r.l2_norm();
                if stop(r_norm, u.l2_norm()) || r_norm <= 1e-14 * b_norm {
                    break;
                }
                if iterations >= MAX_OUTER {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: r_norm,
                    });
                }
                z = precond(&r);
                let rz_new = r.l2_inner(&z)?;
                let beta = rz_new / rz;
                rz = rz_new;
                let mut d_new = z.clone();
                d_new.axpy(beta, &d);
                d = d_new;
            }
        }

        p.project_zero_mean();
        u.zero_normal_boundary();
        let div_norm = ops::divergence(&u).l2_norm();
        let u_norm = u.l2_norm();
        if !u.is_finite() || div_norm > 1e-8 * (u_norm + 1.0) {
            return Err(Error::NonConvergence {
                iterations,
                residual: div_norm,
            });
        }
        Ok(FlowSolution {
            u,
            p,
            stats: SolveStats {
                iterations: iterations + inner_iters,
                residual: div_norm / (u_norm + 1.0),
            },
        })
    }

    /// Inner PCG for the variable-coefficient velocity block, preconditioned
    /// by the exact constant-coefficient solve at the mean values.
    fn velocity_pcg(
        &self,
        rhs: &VectorField,
        nu: &NuCoeffs,
        eta: &EtaFaces,
        nu_mean: f64,
        eta_mean: f64,
    ) -> Result<(VectorField, usize)> {
        let mut u = VectorField::zeros(self.grid);
        let mut r = rhs.clone();
        r.zero_normal_boundary();
        let rhs_norm = r.l2_norm();
        if rhs_norm == 0.0 {
            return Ok((u, 0));
        }
        let mut z = self.spectral.solve_const(nu_mean, eta_mean.max(1e-300), &r);
        let mut d = z.clone();
        let mut rz = r.l2_inner(&z)?;
        for it in 1..=MAX_INNER {
            let ad = apply_velocity_op(&d, nu, eta);
            let dad = d.l2_inner(&ad)?;
            let alpha = rz / dad;
            u.axpy(alpha, &d);
            r.axpy(-alpha, &ad);
            if r.l2_norm() <= INNER_TOL * rhs_norm {
                return Ok((u, it));
            }
            z = self.spectral.solve_const(nu_mean, eta_mean.max(1e-300), &r);
            let rz_new = r.l2_inner(&z)?;
            let beta = rz_new / rz;
            rz = rz_new;
            let mut d_new = z;
            d_new.axpy(beta, &d);
            d = d_new;
        }
        Err(Error::LinearSolveFailure {
            what: "velocity block",
            iterations: MAX_INNER,
            residual: r.l2_norm() / rhs_norm,
        })
    }
}

// ---------------------------------------------------------------------------
// Darcy solver
// ---------------------------------------------------------------------------

/// Solve `eta u + grad p = f`, `div u = 0`, `u . n = 0`. For constant eta
/// this is a single fast Poisson solve; cellwise eta takes a PCG on
/// `div(eta^{-1} grad p)` preconditioned by the constant-coefficient solve.
pub fn solve_darcy(
    force: &VectorField,
    params: &FlowParams,
    poisson: &NeumannPoissonSolver,
) -> Result<FlowSolution> {
    poisson.grid.check_match(&force.grid)?;
    params.permeability.validate(true).map_err(|e| match e {
        Error::HypothesisViolated { .. } => Error::PermeabilityTooSmall {
            min: params.permeability.min_value(),
        },
        other => other,
    })?;
    let grid = poisson.grid;
    let eta = eta_faces(grid, &params.permeability);
    let mut f = force.clone();
    f.zero_normal_boundary();

    let apply_force_scaled = |src: &VectorField| -> VectorField {
        let mut out = src.clone();
        for (v, e) in out.xcomp.iter_mut().zip(&eta.x) {
            *v /= e;
        }
        for (v, e) in out.ycomp.iter_mut().zip(&eta.y) {
            *v /= e;
        }
        out.zero_normal_boundary();
        out
    };

    let rhs_vec = apply_force_scaled(&f);
    let mut rhs = ops::divergence(&rhs_vec);
    rhs.project_zero_mean();

    let (p, iterations) = match params.permeability {
        PermeabilityModel::Constant(eta_c) => {
            // lap p = div f  =>  p = -(-lap)^{-1}(div f); eta cancels
            let mut div_f = ops::divergence(&f);
            div_f.project_zero_mean();
            let mut p = poisson.solve(&div_f)?;
            p.scale(-1.0);
            let _ = eta_c;
            (p, 1)
        }
        PermeabilityModel::Cellwise(_) => {
            // PCG on -div(eta^{-1} grad p) = -div(eta^{-1} f); since the CG
            // residual is exactly -div(u) for the reconstructed velocity,
            // iterate until the divergence contract holds with a 10x margin
            let eta_mean = params.permeability.mean_value(grid);
            let apply = |p: &ScalarField| -> ScalarField {
                let gp = apply_force_scaled(&ops::gradient(p));
                let mut out = ops::divergence(&gp);
                out.scale(-1.0);
                out
            };
            let velocity_of = |p: &ScalarField| -> VectorField {
                let mut u = f.clone();
                u.axpy(-1.0, &ops::gradient(p));
                apply_force_scaled(&u)
            };
            let mut b = rhs.clone();
            b.scale(-1.0);
            let mut p = ScalarField::zeros(grid);
            let mut r = b.clone();
            let b_norm = b.l2_norm();
            let mut its = 0usize;
            if b_norm > 0.0 {
                let precond = |r: &ScalarField| -> ScalarField {
                    let mut z = r.clone();
                    z.project_zero_mean();
                    let mut out = poisson.solve(&z).expect("projected rhs");
                    out.scale(eta_mean);
                    out
                };
                let mut z = precond(&r);
                let mut d = z.clone();
                let mut rz = r.l2_inner(&z)?;
                loop {
                    its += 1;
                    let ad = apply(&d);
                    let alpha = rz / d.l2_inner(&ad)?;
                    p.axpy(alpha, &d);
                    r.axpy(-alpha, &ad);
                    let r_norm = r.l2_norm();
                    if r_norm <= KRYLOV_TOL * (velocity_of(&p).l2_norm() + 1.0)
                        || r_norm <= 1e-14 * b_norm
                    {
                        break;
                    }
                    if its >= MAX_OUTER {
                        return Err(Error::NonConvergence {
                            iterations: its,
                            residual: r_norm / b_norm,
                        });
                    }
                    z = precond(&r);
                    let rz_new = r.l2_inner(&z)?;
                    let beta = rz_new / rz;
                    rz = rz_new;
                    let mut d_new = z;
                    d_new.axpy(beta, &d);
                    d = d_new;
                }
            }
            (p, its)
        }
    };

    let mut u = f;
    u.axpy(-1.0, &ops::gradient(&p));
    u = apply_force_scaled(&u);
    let mut p = p;
    p.project_zero_mean();
    let div_norm = ops::divergence(&u).l2_norm();
    let u_norm = u.l2_norm();
    if !u.is_finite() || div_norm > 1e-8 * (u_norm + 1.0) {
        return Err(Error::NonConvergence {
            iterations,
            residual: div_norm,
        });
    }
    Ok(FlowSolution {
        u,
        p,
        stats: SolveStats {
            iterations,
            residual: div_norm / (u_norm + 1.0),
        },
    })
}
