//! `pfcontrol <subcommand> --config <path> [--out <dir>] [--seed <int>]`.
//!
//! Exit codes: 0 success, 1 solver or i/o failure, 2 configuration or usage
//! error, 3 a check or probe failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::solve_adjoint;
use crate::config::{load_config, LoadedConfig};
use crate::control::{multistart, OptimizeReport};
use crate::dynamics::{energy, solve_state, solve_tangent};
use crate::error::{Error, Result};
use crate::grid::{mean, SpaceTimeField};
use crate::harness::{gradient_check, random_admissible_control, random_direction, run_probe, GradientCheck, PROBES};
use crate::output::{report_json, series_csv, write, write_snapshots};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "pfcontrol", version, about = "Optimal control of a conserved phase-field system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward state run: snapshots plus mass/energy series.
    Solve(Common),
    /// Tangent run along `control.direction` (or a seeded random direction).
    Tangent(Common),
    /// Backward adjoint run: snapshots of q and p.
    Adjoint(Common),
    /// Adjoint gradient against the tangent chain rule and finite differences.
    Gradcheck(Common),
    /// Projected-gradient optimization from `control.u0`.
    Optimize(Common),
    /// Runs one verification probe.
    Probe {
        /// One of: frechet, lipschitz, yosida, energy, separation, operator-n.
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::Validation(_) | Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (common, task): (&Common, Task) = match &cli.command {
        Command::Solve(c) => (c, Task::Solve),
        Command::Tangent(c) => (c, Task::Tangent),
        Command::Adjoint(c) => (c, Task::Adjoint),
        Command::Gradcheck(c) => (c, Task::Gradcheck),
        Command::Optimize(c) => (c, Task::Optimize),
        Command::Probe { name, common } => (common, Task::Probe(name.clone())),
    };
    match execute(common, task) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

enum Task {
    Solve,
    Tangent,
    Adjoint,
    Gradcheck,
    Optimize,
    Probe(String),
}

fn execute(common: &Common, task: Task) -> Result<bool> {
    if let Task::Probe(name) = &task {
        if !PROBES.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "unknown probe '{name}', expected one of: {}",
                PROBES.join(", ")
            )));
        }
    }
    let mut loaded = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.config.seed = seed;
        loaded.digest = loaded.config.digest();
    }
    let out = common.out.as_path();
    write(out, "effective_config.json", &report_json(&loaded.config, &loaded.digest)?)?;
    match task {
        Task::Solve => solve(&loaded, out),
        Task::Tangent => tangent(&loaded, out),
        Task::Adjoint => adjoint(&loaded, out),
        Task::Gradcheck => gradcheck(&loaded, out),
        Task::Optimize => optimize(&loaded, out),
        Task::Probe(name) => probe(&loaded, out, &name),
    }
}

fn stride(l: &LoadedConfig) -> usize {
    l.config.output.snapshot_stride
}

#[derive(Serialize)]
struct SolveSummary {
    command: &'static str,
    steps: usize,
    cost: f64,
    max_mass_drift: f64,
    newton_iterations: usize,
}

fn solve(l: &LoadedConfig, out: &Path) -> Result<bool> {
    let spec = &l.spec;
    let traj = solve_state(&l.u0, spec)?;
    let d = &l.digest;
    write_snapshots(out, "theta", traj.theta(), 0, stride(l), d)?;
    write_snapshots(out, "phi", traj.phi(), 0, stride(l), d)?;
    write_snapshots(out, "mu", traj.mu(), 1, stride(l), d)?;
    let mut rows = Vec::new();
    for (n, phi) in traj.phi().iter().enumerate() {
        let iterations = if n == 0 { 0 } else { traj.newton_iterations()[n - 1] };
        rows.push(vec![
            n as f64,
            spec.time.time(n),
            mean(phi),
            energy(phi, &spec.potential)?,
            iterations as f64,
        ]);
    }
    write(
        out,
        "series.csv",
        &series_csv(&["level", "time", "mass", "energy", "newton_iterations"], &rows, d),
    )?;
    let summary = SolveSummary {
        command: "solve",
        steps: traj.steps(),
        cost: spec.cost.evaluate(&traj)?,
        max_mass_drift: traj.max_mass_drift(),
        newton_iterations: traj.newton_iterations().iter().sum(),
    };
    write(out, "summary.json", &report_json(&summary, d)?)?;
    println!(
        "solve: {} steps, J = {}, mass drift {:.2e}; output in {}",
        summary.steps,
        summary.cost,
        summary.max_mass_drift,
        out.display()
    );
    Ok(true)
}

fn direction(l: &LoadedConfig) -> Result<SpaceTimeField> {
    match &l.direction {
        Some(d) => Ok(d.clone()),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(l.config.seed);
            random_direction(&l.spec.grid, l.spec.time.steps(), &mut rng)
        }
    }
}

#[derive(Serialize)]
struct TangentSummary {
    command: &'static str,
    cost_derivative: f64,
    max_tangent_mean: f64,
}

fn tangent(l: &LoadedConfig, out: &Path) -> Result<bool> {
    let spec = &l.spec;
    let h = direction(l)?;
    let base = solve_state(&l.u0, spec)?;
    let t = solve_tangent(&h, &base, spec)?;
    let d = &l.digest;
    write_snapshots(out, "tangent_theta", t.theta(), 0, stride(l), d)?;
    write_snapshots(out, "tangent_phi", t.phi(), 0, stride(l), d)?;
    write_snapshots(out, "direction", h.levels(), 1, stride(l), d)?;
    let rows: Vec<Vec<f64>> = t
        .phi()
        .iter()
        .enumerate()
        .map(|(n, f)| vec![n as f64, spec.time.time(n), mean(f)])
        .collect();
    write(out, "series.csv", &series_csv(&["level", "time", "mass"], &rows, d))?;
    let summary = TangentSummary {
        command: "tangent",
        cost_derivative: spec.cost.derivative(&base, &t)?,
        max_tangent_mean: t.max_mass_drift(),
    };
    write(out, "summary.json", &report_json(&summary, d)?)?;
    println!("tangent: DJ[h] = {}; output in {}", summary.cost_derivative, out.display());
    Ok(true)
}

#[derive(Serialize)]
struct AdjointSummary {
    command: &'static str,
    cost: f64,
    gradient_norm: f64,
}

fn adjoint(l: &LoadedConfig, out: &Path) -> Result<bool> {
    let spec = &l.spec;
    let state = solve_state(&l.u0, spec)?;
    let adj = solve_adjoint(&state, &spec.cost, spec)?;
    let d = &l.digest;
    write_snapshots(out, "q", &adj.q, 0, stride(l), d)?;
    write_snapshots(out, "p", &adj.p, 0, stride(l), d)?;
    let summary = AdjointSummary {
        command: "adjoint",
        cost: spec.cost.evaluate(&state)?,
        gradient_norm: adj.gradient().norm_q(spec.time.dt()),
    };
    write(out, "summary.json", &report_json(&summary, d)?)?;
    println!("adjoint: J = {}, |q|_Q = {}; output in {}", summary.cost, summary.gradient_norm, out.display());
    Ok(true)
}

#[derive(Serialize)]
struct GradcheckReport {
    command: &'static str,
    seed: u64,
    passed: bool,
    fd_tolerance: f64,
    duality_tolerance: f64,
    #[serde(flatten)]
    check: GradientCheck,
}

fn gradcheck(l: &LoadedConfig, out: &Path) -> Result<bool> {
    let spec = &l.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(l.config.seed);
    let dirs = (0..l.config.gradcheck.directions)
        .map(|_| random_direction(&spec.grid, spec.time.steps(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let check = gradient_check(&l.u0, &dirs, spec)?;
    let tol = &l.config.gradcheck;
    let passed =
        check.max_fd_relative_error <= tol.fd_tolerance && check.max_duality_relative_error <= tol.duality_tolerance;
    println!(
        "gradcheck: {} directions, max FD error {:.2e}, max duality error {:.2e}: {}",
        dirs.len(),
        check.max_fd_relative_error,
        check.max_duality_relative_error,
        if passed { "pass" } else { "FAIL" }
    );
    let report = GradcheckReport {
        command: "gradcheck",
        seed: l.config.seed,
        passed,
        fd_tolerance: tol.fd_tolerance,
        duality_tolerance: tol.duality_tolerance,
        check,
    };
    write(out, "gradcheck.json", &report_json(&report, &l.digest)?)?;
    Ok(passed)
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    command: &'static str,
    starts: usize,
    best_start: usize,
    final_cost: f64,
    final_residual: f64,
    start_costs: Vec<Option<f64>>,
    #[serde(flatten)]
    report: &'a OptimizeReport,
}

fn optimize(l: &LoadedConfig, out: &Path) -> Result<bool> {
    let spec = &l.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(l.config.seed);
    let mut starts = vec![l.u0.clone()];
    for _ in 1..l.config.optimizer.starts {
        starts.push(random_admissible_control(&spec.bounds, &mut rng)?);
    }
    let (mut reports, best) = multistart(spec, &starts, &l.config.optimizer.options());
    let Some(best) = best else {
        return Err(reports.remove(0).expect_err("no successful start"));
    };
    let start_costs = reports.iter().map(|r| r.as_ref().ok().map(|r| r.final_cost())).collect();
    let report = reports.swap_remove(best)?;
    let d = &l.digest;
    write_snapshots(out, "control", report.control.levels(), 1, stride(l), d)?;
    let rows: Vec<Vec<f64>> = (0..report.cost_history.len())
        .map(|k| {
            let step = if k == 0 { 0.0 } else { report.step_history[k - 1] };
            vec![k as f64, report.cost_history[k], report.residual_history[k], step]
        })
        .collect();
    write(out, "history.csv", &series_csv(&["iteration", "cost", "residual", "step"], &rows, d))?;
    let summary = OptimizeSummary {
        command: "optimize",
        starts: starts.len(),
        best_start: best,
        final_cost: report.final_cost(),
        final_residual: report.final_residual(),
        start_costs,
        report: &report,
    };
    write(out, "optimize_report.json", &report_json(&summary, d)?)?;
    println!(
        "optimize: {} iterations ({:?}), J = {}, residual {:.2e}; output in {}",
        report.iterations,
        report.termination,
        summary.final_cost,
        summary.final_residual,
        out.display()
    );
    Ok(true)
}

fn probe(l: &LoadedConfig, out: &Path, name: &str) -> Result<bool> {
    let report = run_probe(name, &l.spec, &l.u0, l.config.seed)?.with_digest(&l.digest);
    write(out, &format!("probe_{name}.json"), &report_json(&report, &l.digest)?)?;
    let status = match (report.applicable, report.passed) {
        (false, _) => "not applicable",
        (true, true) => "pass",
        (true, false) => "FAIL",
    };
    println!("probe {name}: {status} ({:.2}s)", report.runtime_seconds);
    for (k, v) in &report.measurements {
        println!("  {k} = {v:e}");
    }
    Ok(report.passed)
}
