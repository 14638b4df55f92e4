//! Per-step diagnostics: the nonlocal free energy, dissipation terms, mass
//! and boundedness monitors, and their CSV persistence.
//!
//! Energy is evaluated through the convolution identity
//!
//! ```text
//! E(phi) = (1/2)(<a phi, phi> - <J*phi, phi>) + sum F(phi) vol
//! ```
//!
//! which equals the double-sum form
//! `(1/4) sum_ij J(x_i - x_j)(phi_i - phi_j)^2 vol^2 + sum F(phi_i) vol`
//! exactly under the shared midpoint quadrature; the double sum is kept as a
//! test oracle only.

use crate::conv::ConvolutionEngine;
use crate::error::Error;
use crate::grid::{GridSpec, ScalarField};
use crate::kernel::KernelSpec;
use crate::poisson::NeumannPoissonSolver;
use crate::potential::PotentialSpec;
use crate::Result;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One time sample of every quantity in the energy identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    /// Nonlocal free energy E(phi).
    pub e: f64,
    /// `|grad mu|^2`.
    pub grad_mu_sq: f64,
    /// `<nu grad u, grad u>` (0 in Darcy mode).
    pub visc_diss: f64,
    /// `<eta u, u>`.
    pub perm_diss: f64,
    /// `<h, u>`.
    pub forcing: f64,
    /// mean(phi).
    pub mass: f64,
    pub phi_linf: f64,
    pub u_linf: f64,
    /// `|phi|_#`.
    pub sharp_self: f64,
    /// Total Krylov/Newton iterations spent on this step (flow + phase).
    pub solver_iters: u64,
    /// Worst relative linear-solver residual of this step.
    pub residual: f64,
}

pub const CSV_SCHEMA: &str = "diagnostics-v1";
pub const CSV_HEADER: &str =
    "t,E,grad_mu_sq,visc_diss,perm_diss,forcing,mass,phi_linf,u_linf,sharp_self,solver_iters,residual";

/// Free energy via one convolution; `w` must be `engine.convolve(phi)`.
pub fn energy_with(
    phi: &ScalarField,
    w: &ScalarField,
    engine: &ConvolutionEngine,
    potential: &PotentialSpec,
) -> f64 {
    let a = engine.a();
    let vol = phi.grid.cell_volume();
    let ny = phi.grid.ny;
    let quad = crate::par::sum_indexed(phi.grid.nx, |i| {
        let mut s = 0.0;
        for j in 0..ny {
            let k = i * ny + j;
            let p = phi.values[k];
            s += 0.5 * (a.values[k] * p - w.values[k]) * p + potential.f_val(p);
        }
        s
    });
    quad * vol
}

pub fn energy(
    phi: &ScalarField,
    engine: &ConvolutionEngine,
    potential: &PotentialSpec,
) -> Result<f64> {
    let w = engine.convolve(phi)?;
    Ok(energy_with(phi, &w, engine, potential))
}

/// Literal double-sum energy; O(N^2) oracle for [`energy`].
pub fn energy_double_sum(
    phi: &ScalarField,
    spec: &KernelSpec,
    grid: GridSpec,
    potential: &PotentialSpec,
) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let vol = grid.cell_volume();
    let mut nonlocal = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let pi = phi.values[i * ny + j];
            for ii in 0..nx {
                let dx = (i as f64 - ii as f64) * hx;
                for jj in 0..ny {
                    let dy = (j as f64 - jj as f64) * hy;
                    let diff = pi - phi.values[ii * ny + jj];
                    nonlocal += spec.eval(dx, dy) * diff * diff;
                }
            }
        }
    }
    let well: f64 = phi.values.iter().map(|&s| potential.f_val(s)).sum();
    0.25 * nonlocal * vol * vol + well * vol
}

/// `|phi1 - phi2|_#`.
pub fn sharp_distance(
    solver: &NeumannPoissonSolver,
    phi1: &ScalarField,
    phi2: &ScalarField,
) -> Result<f64> {
    let d = ScalarField::difference(phi1, phi2)?;
    Ok(solver.sharp_norm(&d))
}

/// Residual of the discrete energy identity over one step, from the two
/// bracketing records: record `n` carries the state at `t_n` together with
/// the dissipation of the velocity advancing `t_n -> t_{n+1}`.
pub fn residual_from_records(prev: &EnergyRecord, next: &EnergyRecord, dt: f64) -> f64 {
    ((next.e - prev.e) / dt + next.grad_mu_sq + prev.visc_diss + prev.perm_diss - prev.forcing)
        .abs()
}

/// Append-only CSV sink with a schema comment line and fixed header.
pub struct CsvWriter {
    w: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# schema: {CSV_SCHEMA}")?;
        writeln!(w, "{CSV_HEADER}")?;
        Ok(Self { w })
    }

    pub fn write_record(&mut self, r: &EnergyRecord) -> Result<()> {
        writeln!(
            self.w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
            r.t,
            r.e,
            r.grad_mu_sq,
            r.visc_diss,
            r.perm_diss,
            r.forcing,
            r.mass,
            r.phi_linf,
            r.u_linf,
            r.sharp_self,
            r.solver_iters,
            r.residual
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Read a diagnostics CSV back; numbers round-trip exactly (17 significant
/// digits). Malformed rows are reported with their 1-based line number.
pub fn read_series(path: &Path) -> Result<Vec<EnergyRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("t,") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::MalformedRecord {
                line: lineno + 1,
                msg: format!("expected 12 columns, got {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|e| Error::MalformedRecord {
                line: lineno + 1,
                msg: format!("column {}: {e}", k + 1),
            })
        };
        out.push(EnergyRecord {
            t: num(0)?,
            e: num(1)?,
            grad_mu_sq: num(2)?,
            visc_diss: num(3)?,
            perm_diss: num(4)?,
            forcing: num(5)?,
            mass: num(6)?,
            phi_linf: num(7)?,
            u_linf: num(8)?,
            sharp_self: num(9)?,
            solver_iters: fields[10].parse().map_err(|e| Error::MalformedRecord {
                line: lineno + 1,
                msg: format!("column 11: {e}"),
            })?,
            residual: num(11)?,
        });
    }
    Ok(out)
}
