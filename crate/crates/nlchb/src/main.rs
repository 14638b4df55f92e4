//! Command-line driver: `run`, `sweep-nu`, `probe`, `selftest`, `info`.
//!
//! Exit codes: 0 success, 2 config error, 3 hypothesis violation,
//! 4 numerical failure, 5 acceptance/selftest failure.

use clap::{Parser, Subcommand, ValueEnum};
use nlchb::config::{parse_config, ResolvedConfig};
use nlchb::diagnostics::CsvWriter;
use nlchb::error::Error;
use nlchb::experiments::{
    run_dependence_probe, run_nu_sweep, run_selftest, SelfTestLevel, SelfTestReport,
};
use nlchb::snapshot;
use nlchb::system::{System, Trajectory};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nlchb",
    about = "2D nonlocal Cahn-Hilliard-Brinkman / Hele-Shaw simulator",
    version
)]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the data-parallel loops and experiment fan-out.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write diagnostics + snapshots.
    Run { config: PathBuf },
    /// Vanishing-viscosity sweep: CHHS reference vs CHB at each nu.
    SweepNu { config: PathBuf },
    /// Continuous-dependence probe over perturbation amplitudes.
    Probe { config: PathBuf },
    /// Built-in oracle battery (FFT vs direct sums, adjointness, orders).
    Selftest {
        #[arg(long, value_enum, default_value_t = Level::Quick)]
        level: Level,
        /// Optional config whose kernel/hypotheses are checked too.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the header and basic statistics of a field snapshot.
    Info { snapshot: PathBuf },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Level {
    Quick,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        // ignore the error if a pool already exists (tests, repeated init)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the `parallel` feature; --threads ignored");
    }

    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::Run { config } => cmd_run(config, &cli.out, cli.seed),
        Command::SweepNu { config } => cmd_sweep(config, &cli.out, cli.seed),
        Command::Probe { config } => cmd_probe(config, &cli.out, cli.seed),
        Command::Selftest { level, config } => cmd_selftest(*level, config.as_deref(), &cli.out),
        Command::Info { snapshot } => cmd_info(snapshot),
    }
}

fn load(config: &Path, out: &Path, seed: Option<u64>) -> Result<ResolvedConfig, Error> {
    let mut rc = parse_config(config)?;
    if let Some(seed) = seed {
        rc.sim.seed = seed;
        rc.system = System::new(rc.sim.clone())?;
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved.toml"), &rc.echo)?;
    Ok(rc)
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), Error> {
    let mut w = CsvWriter::create(path)?;
    for rec in &traj.records {
        w.write_record(rec)?;
    }
    w.flush()
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> Result<ExitCode, Error> {
    let rc = load(config, out, seed)?;
    let system = &rc.system;
    println!(
        "run: {}x{} grid, mode {:?}, dt {:e}, t_end {}, seed {}",
        rc.sim.grid.nx, rc.sim.grid.ny, rc.sim.mode, rc.sim.stepper.dt, rc.sim.t_end, rc.sim.seed
    );
    println!(
        "hypotheses: c0 = {:.6e}, a* = {:.6e}, |J|_W11 = {:.6e}",
        system.hypothesis_report.c0,
        system.engine.a_star(),
        system.engine.j_w11()
    );

    let mut csv = CsvWriter::create(&out.join("diagnostics.csv"))?;
    let cadence = rc.sim.snapshot_cadence;
    let phi0 = system.initial_phi()?;
    let mut last_phi = phi0.clone();
    let run_result = system.run_trajectory(&phi0, |n, phi, u, rec| {
        csv.write_record(rec)?;
        last_phi = phi.clone();
        if cadence > 0 && n % cadence == 0 {
            snapshot::write_scalar(&out.join(format!("phi_{n:06}.nlcb")), phi)?;
            snapshot::write_vector(&out.join(format!("u_{n:06}.nlcb")), u)?;
        }
        Ok(())
    });
    csv.flush()?;
    match run_result {
        Ok(traj) => {
            snapshot::write_scalar(&out.join("final_phi.nlcb"), &last_phi)?;
            let first = traj.records.first().expect("nonempty trajectory");
            let last = traj.records.last().expect("nonempty trajectory");
            println!(
                "done: {} samples, E {:.6e} -> {:.6e}, mass drift {:.3e}, sup |u| = {:.3e}",
                traj.records.len(),
                first.e,
                last.e,
                (last.mass - first.mass).abs(),
                traj.records.iter().fold(0.0f64, |m, r| m.max(r.u_linf))
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            // diagnostic dump of the last healthy state
            let _ = snapshot::write_scalar(&out.join("abort_phi.nlcb"), &last_phi);
            eprintln!("aborted: {e}; partial diagnostics and abort_phi.nlcb written");
            Err(e)
        }
    }
}

fn cmd_sweep(config: &Path, out: &Path, seed: Option<u64>) -> Result<ExitCode, Error> {
    let rc = load(config, out, seed)?;
    let nus = rc
        .nu_values
        .clone()
        .ok_or_else(|| Error::Config("sweep-nu needs `nu_values` in [experiment]".into()))?;
    if nus.len() < 4 || nus[0] / nus[nus.len() - 1] < 1e3 {
        return Err(Error::Config(
            "nu_values must hold >= 4 values spanning >= 3 decades".into(),
        ));
    }
    let outcome = run_nu_sweep(&rc.sim, &nus)?;
    write_trajectory_csv(&out.join("diag_reference_chhs.csv"), &outcome.reference)?;
    for (nu, traj) in &outcome.runs {
        write_trajectory_csv(&out.join(format!("diag_nu_{nu:.3e}.csv")), traj)?;
    }
    let report = &outcome.report;
    std::fs::write(
        out.join("sweep_report.json"),
        serde_json::to_string_pretty(report).expect("serializable report"),
    )?;
    println!("nu            err(nu)       sup|dphi|_#^2  sum dt|du|^2");
    for e in &report.entries {
        println!(
            "{:<13.4e} {:<13.6e} {:<13.6e} {:<13.6e}",
            e.nu, e.err, e.sup_sharp_sq, e.vel_l2_sq
        );
    }
    println!(
        "slope = {:.3}, constant = {:.3e}, monotone = {}, sup|phi| = {:.3e}, sup|u| = {:.3e}",
        report.slope,
        report.constant,
        report.monotone_nonincreasing,
        report.phi_linf_max,
        report.u_linf_max
    );
    if report.meets_rate_targets() && report.bounded() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("sweep targets missed (monotone + slope >= 0.8 + bounded fields)");
        Ok(ExitCode::from(5))
    }
}

fn cmd_probe(config: &Path, out: &Path, seed: Option<u64>) -> Result<ExitCode, Error> {
    let rc = load(config, out, seed)?;
    let deltas = rc
        .delta_values
        .clone()
        .ok_or_else(|| Error::Config("probe needs `delta_values` in [experiment]".into()))?;
    let outcome = run_dependence_probe(&rc.sim, &deltas, rc.perturbation)?;
    write_trajectory_csv(&out.join("diag_base.csv"), &outcome.base)?;
    for (delta, traj) in &outcome.runs {
        write_trajectory_csv(&out.join(format!("diag_delta_{delta:.3e}.csv")), traj)?;
    }
    let report = &outcome.report;
    std::fs::write(
        out.join("probe_report.json"),
        serde_json::to_string_pretty(report).expect("serializable report"),
    )?;
    println!("delta         rho(delta)    numerator     denominator");
    for e in &report.entries {
        match e.rho {
            Some(r) => println!(
                "{:<13.4e} {:<13.6e} {:<13.6e} {:<13.6e}",
                e.delta, r, e.numerator, e.denominator
            ),
            None => println!(
                "{:<13.4e} exact-match   {:<13.6e} {:<13.6e}",
                e.delta, e.numerator, e.denominator
            ),
        }
    }
    println!("spread = {:.3}, rho_max = {:.3e}", report.spread, report.rho_max);
    if report.bounded() && report.spread < 10.0 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("probe targets missed (bounded ratio, spread < 10)");
        Ok(ExitCode::from(5))
    }
}

fn cmd_selftest(level: Level, config: Option<&Path>, out: &Path) -> Result<ExitCode, Error> {
    let kernel = match config {
        Some(path) => Some(parse_config(path)?.sim.kernel),
        None => None,
    };
    let level = match level {
        Level::Quick => SelfTestLevel::Quick,
        Level::Full => SelfTestLevel::Full,
    };
    let report = run_selftest(level, kernel.as_ref())?;
    print_selftest(&report);
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("selftest_report.json"),
        serde_json::to_string_pretty(&report).expect("serializable report"),
    )?;
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(5))
    }
}

fn print_selftest(report: &SelfTestReport) {
    for c in &report.checks {
        println!(
            "[{}] {:<38} measured={:<12.4e} tol={:<10.1e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!(
        "selftest: {}/{} checks passed",
        report.checks.len() - failed,
        report.checks.len()
    );
}

fn cmd_info(path: &Path) -> Result<ExitCode, Error> {
    match snapshot::read_any(path)? {
        snapshot::SnapshotData::Scalar(f) => {
            let g = f.grid;
            println!(
                "scalar field: {}x{} cells on ({}, {}) x ({}, {})",
                g.nx, g.ny, 0.0, g.lx, 0.0, g.ly
            );
            let min = f.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "min = {min:.6e}, max = {max:.6e}, mean = {:.6e}, |f|_L2 = {:.6e}",
                f.mean(),
                f.l2_norm()
            );
        }
        snapshot::SnapshotData::Vector(v) => {
            let g = v.grid;
            println!(
                "vector field: {}x{} cells (MAC faces) on ({}, {}) x ({}, {})",
                g.nx, g.ny, 0.0, g.lx, 0.0, g.ly
            );
            println!(
                "|u|_inf = {:.6e}, |u|_L2 = {:.6e}, |div u|_L2 = {:.6e}",
                v.linf(),
                v.l2_norm(),
                nlchb::ops::divergence(&v).l2_norm()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
