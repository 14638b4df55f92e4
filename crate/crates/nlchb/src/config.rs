//! Run configuration: a sectioned key-value file, parsed strictly (unknown
//! keys are rejected with their name) and validated eagerly — a config that
//! parses but violates a structural hypothesis never reaches a solver.
//!
//! Sections: `[grid]`, `[kernel]`, `[potential]`, `[flow]`, `[stepper]`,
//! `[initial]` (optional) and `[experiment]`. The full key list is documented
//! in the repository README; a resolved echo with all defaults filled in is
//! written next to the outputs of every run.

use crate::ch::{CHScheme, CHStepperConfig};
use crate::error::Error;
use crate::experiments::PerturbationShape;
use crate::flow::{FlowParams, KortewegForm, PermeabilityModel, ViscosityModel};
use crate::grid::GridSpec;
use crate::kernel::{KernelSpec, KernelTable};
use crate::potential::{PotentialKind, PotentialSpec};
use crate::snapshot;
use crate::system::{InitialData, SimConfig, System, SystemMode};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: GridSection,
    kernel: KernelSection,
    potential: PotentialSection,
    flow: FlowSection,
    stepper: StepperSection,
    #[serde(default)]
    initial: InitialSection,
    experiment: ExperimentSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    nx: usize,
    ny: usize,
    #[serde(default = "one")]
    lx: f64,
    #[serde(default = "one")]
    ly: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSection {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    core_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    support_radius: Option<f64>,
    #[serde(default = "one")]
    strength: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialSection {
    #[serde(default = "quartic_kind")]
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    coefficients: Option<Vec<f64>>,
    #[serde(default = "default_s_max")]
    s_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    c0_override: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    viscosity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    viscosity_profile: Option<ViscosityProfileSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permeability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permeability_field: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    body_force: Option<PathBuf>,
    #[serde(default = "rotational")]
    korteweg_form: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViscosityProfileSection {
    nu0: f64,
    nu1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepperSection {
    dt: f64,
    #[serde(default = "convex_splitting")]
    scheme: String,
    #[serde(default = "default_newton_tol")]
    newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    newton_max_iter: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    #[serde(default = "random_kind")]
    kind: String,
    #[serde(default = "default_amplitude")]
    amplitude: f64,
    #[serde(default)]
    mean: f64,
    #[serde(default = "two")]
    smoothing_passes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    width_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: random_kind(),
            amplitude: default_amplitude(),
            mean: 0.0,
            smoothing_passes: 2,
            width_fraction: None,
            radius: None,
            width: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    mode: String,
    t_end: f64,
    #[serde(default)]
    snapshot_cadence: usize,
    #[serde(default)]
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_values: Option<Vec<f64>>,
    #[serde(default = "mean_zero_random")]
    perturbation: String,
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn quartic_kind() -> String {
    "quartic".into()
}
fn random_kind() -> String {
    "random".into()
}
fn rotational() -> String {
    "rotational".into()
}
fn convex_splitting() -> String {
    "convex_splitting".into()
}
fn mean_zero_random() -> String {
    "mean_zero_random".into()
}
fn default_s_max() -> f64 {
    3.0
}
fn default_amplitude() -> f64 {
    0.05
}
fn default_newton_tol() -> f64 {
    1e-10
}
fn default_newton_max_iter() -> usize {
    30
}

/// Everything a subcommand needs: the validated simulation setup plus the
/// experiment lists, and a resolved echo of the configuration.
pub struct ResolvedConfig {
    pub sim: SimConfig,
    pub system: System,
    pub nu_values: Option<Vec<f64>>,
    pub delta_values: Option<Vec<f64>>,
    pub perturbation: PerturbationShape,
    pub echo: String,
}

/// Parse and validate a configuration file. Unknown keys, malformed values,
/// and hypothesis violations are all reported here, before any output is
/// produced.
pub fn parse_config(path: &Path) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path)?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| Error::ParseError(e.to_string()))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(raw, base_dir)
}

fn resolve(raw: RawConfig, base_dir: &Path) -> Result<ResolvedConfig> {
    let grid = GridSpec::new(raw.grid.nx, raw.grid.ny, raw.grid.lx, raw.grid.ly)?;

    let kernel = match raw.kernel.kind.as_str() {
        "gaussian" => {
            let width = raw
                .kernel
                .width
                .ok_or_else(|| Error::Config("gaussian kernel needs `width`".into()))?;
            let mut k = KernelSpec::gaussian(width, raw.kernel.strength)?;
            if let Some(r) = raw.kernel.support_radius {
                k = k.with_support_radius(r);
            }
            k
        }
        "mollified_newtonian" => {
            let core = raw
                .kernel
                .core_radius
                .ok_or_else(|| Error::Config("mollified_newtonian kernel needs `core_radius`".into()))?;
            let support = raw.kernel.support_radius.ok_or_else(|| {
                Error::Config("mollified_newtonian kernel needs `support_radius`".into())
            })?;
            KernelSpec::mollified_newtonian(core, support, raw.kernel.strength)?
        }
        "tabulated" => {
            let p = raw
                .kernel
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("tabulated kernel needs `path`".into()))?;
            let table = KernelTable::from_csv(&base_dir.join(p))?;
            let mut k = KernelSpec::tabulated(table, raw.kernel.strength);
            if let Some(r) = raw.kernel.support_radius {
                k = k.with_support_radius(r);
            }
            k
        }
        other => {
            return Err(Error::Config(format!(
                "unknown kernel kind '{other}' (gaussian | mollified_newtonian | tabulated)"
            )))
        }
    };

    let potential = {
        let kind = match raw.potential.kind.as_str() {
            "quartic" => PotentialKind::Quartic,
            "polynomial" => PotentialKind::Polynomial(raw.potential.coefficients.clone().ok_or_else(
                || Error::Config("polynomial potential needs `coefficients`".into()),
            )?),
            other => {
                return Err(Error::Config(format!(
                    "unknown potential kind '{other}' (quartic | polynomial)"
                )))
            }
        };
        PotentialSpec {
            kind,
            s_max: raw.potential.s_max,
            c0_override: raw.potential.c0_override,
        }
    };

    let viscosity = match (raw.flow.viscosity, &raw.flow.viscosity_profile) {
        (Some(nu), None) => ViscosityModel::Constant(nu),
        (None, Some(p)) => ViscosityModel::LipschitzProfile { nu0: p.nu0, nu1: p.nu1 },
        (None, None) => {
            return Err(Error::Config(
                "flow needs `viscosity` or `viscosity_profile`".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "`viscosity` and `viscosity_profile` are mutually exclusive".into(),
            ))
        }
    };
    let permeability = match (raw.flow.permeability, &raw.flow.permeability_field) {
        (Some(e), None) => PermeabilityModel::Constant(e),
        (None, Some(p)) => {
            let f = snapshot::read_scalar(&base_dir.join(p))?;
            grid.check_match(&f.grid)?;
            PermeabilityModel::Cellwise(f)
        }
        (None, None) => {
            return Err(Error::Config(
                "flow needs `permeability` or `permeability_field`".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "`permeability` and `permeability_field` are mutually exclusive".into(),
            ))
        }
    };
    let body_force = match &raw.flow.body_force {
        Some(p) => {
            let mut v = snapshot::read_vector(&base_dir.join(p))?;
            grid.check_match(&v.grid)?;
            v.zero_normal_boundary();
            Some(v)
        }
        None => None,
    };
    let korteweg = match raw.flow.korteweg_form.as_str() {
        "rotational" => KortewegForm::Rotational,
        "raw" => KortewegForm::Raw,
        other => {
            return Err(Error::Config(format!(
                "unknown korteweg_form '{other}' (rotational | raw)"
            )))
        }
    };

    let scheme = match raw.stepper.scheme.as_str() {
        "convex_splitting" => CHScheme::ConvexSplittingNonlinear,
        "stabilized" => CHScheme::StabilizedSemiImplicit,
        other => {
            return Err(Error::Config(format!(
                "unknown scheme '{other}' (convex_splitting | stabilized)"
            )))
        }
    };
    let mut stepper = CHStepperConfig::new(raw.stepper.dt, scheme)?;
    stepper.newton_tol = raw.stepper.newton_tol;
    stepper.newton_max_iter = raw.stepper.newton_max_iter;

    let initial = match raw.initial.kind.as_str() {
        "random" => InitialData::Random {
            amplitude: raw.initial.amplitude,
            mean: raw.initial.mean,
            smoothing_passes: raw.initial.smoothing_passes,
        },
        "stripe" => InitialData::Stripe {
            amplitude: raw.initial.amplitude,
            mean: raw.initial.mean,
            width_fraction: raw.initial.width_fraction.unwrap_or(0.5),
            smoothing_passes: raw.initial.smoothing_passes,
        },
        "annulus" => InitialData::Annulus {
            amplitude: raw.initial.amplitude,
            mean: raw.initial.mean,
            radius: raw.initial.radius.unwrap_or(0.25),
            width: raw.initial.width.unwrap_or(0.1),
            smoothing_passes: raw.initial.smoothing_passes,
        },
        "file" => InitialData::File(
            base_dir.join(raw.initial.path.as_ref().ok_or_else(|| {
                Error::Config("initial kind 'file' needs `path`".into())
            })?),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown initial kind '{other}' (random | stripe | annulus | file)"
            )))
        }
    };

    let mode = match raw.experiment.mode.as_str() {
        "chb" => SystemMode::Chb,
        "chhs" => SystemMode::Chhs,
        other => return Err(Error::Config(format!("unknown mode '{other}' (chb | chhs)"))),
    };
    let perturbation = match raw.experiment.perturbation.as_str() {
        "mean_zero_random" => PerturbationShape::MeanZeroRandom,
        "mean_shift" => PerturbationShape::MeanShift,
        other => {
            return Err(Error::Config(format!(
                "unknown perturbation '{other}' (mean_zero_random | mean_shift)"
            )))
        }
    };
    if let Some(nus) = &raw.experiment.nu_values {
        for w in nus.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(
                    "nu_values must be strictly decreasing".into(),
                ));
            }
        }
        if nus.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("nu_values must be positive".into()));
        }
    }
    if let Some(ds) = &raw.experiment.delta_values {
        for w in ds.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(
                    "delta_values must be strictly decreasing".into(),
                ));
            }
        }
        if ds.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("delta_values must be positive".into()));
        }
    }

    let sim = SimConfig {
        grid,
        kernel,
        potential,
        flow: FlowParams {
            viscosity,
            permeability,
            body_force,
        },
        mode,
        stepper,
        korteweg,
        t_end: raw.experiment.t_end,
        snapshot_cadence: raw.experiment.snapshot_cadence,
        seed: raw.experiment.seed,
        initial,
    };

    // eager validation: kernel positivity, (H2), (H5)/(H6), (H8) all fire here
    let system = System::new(sim.clone())?;

    let echo = toml::to_string_pretty(&raw).map_err(|e| Error::ParseError(e.to_string()))?;
    Ok(ResolvedConfig {
        sim,
        system,
        nu_values: raw.experiment.nu_values,
        delta_values: raw.experiment.delta_values,
        perturbation,
        echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
nx = 16
ny = 16

[kernel]
kind = "gaussian"
width = 0.04
strength = 5.0

[potential]

[flow]
viscosity = 0.1
permeability = 1.0

[stepper]
dt = 1e-3

[experiment]
mode = "chb"
t_end = 0.01
seed = 7
"#;

    fn parse_str(text: &str) -> Result<ResolvedConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, text).unwrap();
        parse_config(&path)
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let rc = parse_str(MINIMAL).unwrap();
        assert_eq!(rc.sim.grid.nx, 16);
        assert!(matches!(rc.sim.mode, SystemMode::Chb));
        assert!(matches!(rc.sim.initial, InitialData::Random { .. }));
        assert!(rc.echo.contains("korteweg_form"));
        assert!(rc.echo.contains("s_max"));
        assert!(rc.system.hypothesis_report.c0 > 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let bad = MINIMAL.replace("dt = 1e-3", "dt = 1e-3\nmobilty = 2.0");
        match parse_str(&bad) {
            Err(Error::ParseError(msg)) => assert!(msg.contains("mobilty"), "{msg}"),
            other => panic!("expected ParseError, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn chhs_with_zero_permeability_violates_h8() {
        let bad = MINIMAL
            .replace("permeability = 1.0", "permeability = 0.0")
            .replace("mode = \"chb\"", "mode = \"chhs\"");
        match parse_str(&bad) {
            Err(Error::HypothesisViolated { hypothesis, .. }) => assert_eq!(hypothesis, "H8"),
            other => panic!("expected H8 violation, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn sweep_lists_must_decrease() {
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nnu_values = [1e-3, 1e-2]");
        assert!(matches!(parse_str(&bad), Err(Error::Config(_))));
        let good = MINIMAL.replace("seed = 7", "seed = 7\nnu_values = [1e-1, 1e-2, 1e-3, 1e-4]");
        let rc = parse_str(&good).unwrap();
        assert_eq!(rc.nu_values.unwrap().len(), 4);
    }

    #[test]
    fn bundled_configs_parse() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["run_chb.toml", "run_chhs.toml", "sweep.toml", "probe.toml"] {
            let rc = parse_config(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(rc.system.hypothesis_report.c0 > 0.0, "{name}");
        }
    }

    #[test]
    fn tabulated_kernel_loads_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("kern.csv");
        let mut rows = String::from("r,J\n");
        for i in 0..40 {
            let r = i as f64 * 0.01;
            rows.push_str(&format!("{r},{}\n", 30.0 * (1.0 - r / 0.4)));
        }
        std::fs::write(&csv, rows).unwrap();
        let text = MINIMAL.replace(
            "kind = \"gaussian\"\nwidth = 0.04\nstrength = 5.0",
            "kind = \"tabulated\"\npath = \"kern.csv\"",
        );
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, text).unwrap();
        let rc = parse_config(&path).unwrap();
        assert!(rc.system.engine.a_star() > 0.0);
    }
}
