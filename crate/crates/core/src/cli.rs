//! `regtrack` command line: one subcommand per pipeline stage, JSON reports
//! and CSV traces written to `--out`.
//!
//! Exit codes: 0 ok, 1 controllers differ (`compare`), 2 validation or
//! usage, 3 unsolvable regulator equations, 4 precondition, 5 divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::analysis::{self, RelativeDegrees, SolvabilityVerdict, ZeroReport};
use crate::canonical::{self, BrunovskyForm, CanonicalDecomposition};
use crate::error::{fmt_complex, Error};
use crate::model::{validate_system, Diagnostics, Exosystem, LinearSystem, TrajectorySpec};
use crate::regulator::{self, RegulatorSolution, SolveMethod};
use crate::sim::{self, Reference, TrackingMetrics};
use crate::tracking::{self, ErrorDynamicsSpec, Frame, Gain, TrackingController};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_EQUAL: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SOLVABILITY: u8 = 3;
pub const EXIT_PRECONDITION: u8 = 4;
pub const EXIT_DIVERGENCE: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "regtrack",
    version,
    about = "Regulator-equation solver and tracking-controller workbench"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Controllability, Kronecker indices, relative degrees, invariant zeros.
    Analyze(PlantArgs),
    /// Controllable canonical and Brunovsky forms.
    Canon(PlantArgs),
    /// Solve the regulator equations for a plant and exosystem.
    Solve(SolveArgs),
    /// Synthesize a tracking controller.
    Design(DesignArgs),
    /// Check that the regulator-based and flatness-based laws coincide.
    Compare(CompareArgs),
    /// Simulate a closed loop and write a CSV trace.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for reports and traces.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Relative tolerance override for residual and equivalence verdicts.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlantArgs {
    #[arg(long)]
    pub plant: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Analytic,
    Oracle,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub plant: PathBuf,
    #[arg(long)]
    pub exo: PathBuf,
    #[arg(long, value_enum, default_value = "analytic")]
    pub method: MethodArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Ort,
    Fbt,
    Cancel,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub plant: PathBuf,
    /// Required for `--mode ort`.
    #[arg(long)]
    pub exo: Option<PathBuf>,
    /// Error-dynamics coefficients `{"coeffs": [[..], ..]}`; for `cancel`
    /// the single list holds `k^_1 .. k^_delta`.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub plant: PathBuf,
    #[arg(long)]
    pub exo: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plant: PathBuf,
    /// Controller JSON as written by `design`.
    #[arg(long)]
    pub controller: PathBuf,
    #[arg(long, conflicts_with = "traj", required_unless_present = "traj")]
    pub exo: Option<PathBuf>,
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Initial state, comma separated (default: zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// A failed command: exit code plus message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Dimension(_) | Error::Validation(_) | Error::Uncontrollable { .. } => {
            EXIT_VALIDATION
        }
        Error::Unsolvable { .. } => EXIT_SOLVABILITY,
        Error::RelativeDegreeUndefined { .. }
        | Error::DegeneratePencil
        | Error::NotFlat { .. }
        | Error::SingularDecoupling { .. }
        | Error::NotHurwitz(_)
        | Error::Precondition(_)
        | Error::Numerical(_) => EXIT_PRECONDITION,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

type CmdResult = std::result::Result<u8, Failure>;

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> std::result::Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::validation(format!("{what} {}: {e}", path.display())))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::validation(format!("output directory {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> std::result::Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

fn check_tol(output: &OutputArgs) -> std::result::Result<Option<f64>, Failure> {
    match output.tol {
        Some(t) if !(t > 0.0 && t.is_finite()) => Err(Failure::validation(format!(
            "--tol must be positive, got {t}"
        ))),
        t => Ok(t),
    }
}

#[derive(Serialize)]
struct AnalysisReport {
    #[serde(flatten)]
    diagnostics: Diagnostics,
    kappa: Option<Vec<usize>>,
    flat_outputs: Option<Vec<usize>>,
    relative_degrees: Option<RelativeDegrees>,
    #[serde(flatten)]
    zeros: Option<ZeroReport>,
    notes: Vec<String>,
}

fn analyze(args: &PlantArgs) -> CmdResult {
    check_tol(&args.output)?;
    let sys: LinearSystem = read_json(&args.plant, "plant")?;
    let diagnostics = validate_system(&sys);
    let mut notes = Vec::new();
    let kappa = canonical::kronecker_indices(&sys)
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    let relative_degrees = analysis::relative_degrees(&sys)
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    let zeros = analysis::invariant_zeros(&sys)
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    let passed = diagnostics.passed();
    let report = AnalysisReport {
        diagnostics,
        flat_outputs: kappa.as_deref().map(canonical::flat_output_indices),
        kappa,
        relative_degrees,
        zeros,
        notes,
    };
    write_json(&args.output.out, "analysis.json", &report)?;
    if passed {
        Ok(EXIT_OK)
    } else {
        Err(Failure::validation(format!(
            "plant failed validation: {}",
            report.diagnostics.failures.join("; ")
        )))
    }
}

#[derive(Serialize)]
struct CanonReport {
    canonical: CanonicalDecomposition,
    brunovsky: BrunovskyForm,
    flat_outputs: Vec<usize>,
}

fn canon(args: &PlantArgs) -> CmdResult {
    check_tol(&args.output)?;
    let sys: LinearSystem = read_json(&args.plant, "plant")?;
    let canonical = canonical::to_controllable_canonical(&sys)?;
    let brunovsky = canonical::brunovsky_normalize(&canonical)?;
    let report = CanonReport {
        flat_outputs: canonical::flat_output_indices(&canonical.kappa),
        canonical,
        brunovsky,
    };
    write_json(&args.output.out, "canon.json", &report)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SolveReport {
    #[serde(flatten)]
    solution: RegulatorSolution,
    within_tolerance: bool,
    tolerance: f64,
    solvability: SolvabilityVerdict,
}

fn load_plant_exo(
    plant: &Path,
    exo: &Path,
) -> std::result::Result<(LinearSystem, Exosystem), Failure> {
    let sys: LinearSystem = read_json(plant, "plant")?;
    let exo: Exosystem = read_json(exo, "exosystem")?;
    exo.check_outputs(sys.m())?;
    Ok((sys, exo))
}

fn solvability_failure(verdict: &SolvabilityVerdict) -> Option<Failure> {
    verdict.failures.first().map(|z| Failure {
        code: EXIT_SOLVABILITY,
        message: format!(
            "regulator equations unsolvable: exosystem eigenvalue lambda={} is an invariant zero (rank R(lambda) < n + m)",
            fmt_complex(z)
        ),
    })
}

fn solve(args: &SolveArgs) -> CmdResult {
    let tol = check_tol(&args.output)?.unwrap_or(regulator::RESIDUAL_TOL);
    let (sys, exo) = load_plant_exo(&args.plant, &args.exo)?;
    let solvability = analysis::check_solvability(&sys, exo.s());
    if let Some(f) = solvability_failure(&solvability) {
        return Err(f);
    }
    let method = match args.method {
        MethodArg::Analytic => SolveMethod::Analytic,
        MethodArg::Oracle => SolveMethod::Oracle,
    };
    let solution = regulator::solve(&sys, &exo, method)?;
    let report = SolveReport {
        within_tolerance: solution.within(tol),
        tolerance: tol,
        solution,
        solvability,
    };
    write_json(&args.output.out, "solution.json", &report)?;
    Ok(EXIT_OK)
}

fn design(args: &DesignArgs) -> CmdResult {
    check_tol(&args.output)?;
    let sys: LinearSystem = read_json(&args.plant, "plant")?;
    let spec: ErrorDynamicsSpec = read_json(&args.spec, "spec")?;
    let ctrl = match args.mode {
        Mode::Fbt => tracking::design_fbt(&sys, &spec)?,
        Mode::Cancel => {
            let [hat] = spec.coeffs.as_slice() else {
                return Err(Failure::validation(
                    "cancel mode takes a single coefficient list",
                ));
            };
            tracking::zero_cancel_siso(&sys, hat)?
        }
        Mode::Ort => {
            let path = args
                .exo
                .as_ref()
                .ok_or_else(|| Failure::validation("--mode ort needs --exo"))?;
            let exo: Exosystem = read_json(path, "exosystem")?;
            exo.check_outputs(sys.m())?;
            if let Some(f) = solvability_failure(&analysis::check_solvability(&sys, exo.s())) {
                return Err(f);
            }
            tracking::design_ort(&sys, &exo, Gain::Spec(spec))?
        }
    };
    write_json(&args.output.out, "controller.json", &ctrl)?;
    for w in &ctrl.warnings {
        eprintln!("warning: {}: {}", w.code, w.detail);
    }
    Ok(EXIT_OK)
}

fn compare(args: &CompareArgs) -> CmdResult {
    let tol = check_tol(&args.output)?.unwrap_or(tracking::EQUIVALENCE_TOL);
    let (sys, exo) = load_plant_exo(&args.plant, &args.exo)?;
    let spec: ErrorDynamicsSpec = read_json(&args.spec, "spec")?;
    let report = tracking::verify_equivalence(&sys, &exo, &spec)?.with_tolerance(tol);
    write_json(&args.output.out, "equivalence.json", &report)?;
    Ok(if report.equal() {
        EXIT_OK
    } else {
        EXIT_NOT_EQUAL
    })
}

#[derive(Serialize)]
struct SimulateReport {
    #[serde(flatten)]
    metrics: TrackingMetrics,
    dt: f64,
    horizon: f64,
}

fn simulate(args: &SimulateArgs) -> CmdResult {
    check_tol(&args.output)?;
    if !(args.dt > 0.0 && args.dt.is_finite()) || !(args.horizon > 0.0 && args.horizon.is_finite())
    {
        return Err(Failure::validation(format!(
            "--dt and --horizon must be positive (got {} and {})",
            args.dt, args.horizon
        )));
    }
    let sys: LinearSystem = read_json(&args.plant, "plant")?;
    let ctrl: TrackingController = read_json(&args.controller, "controller")?;
    if ctrl.frame != Frame::Original {
        return Err(Failure {
            code: EXIT_PRECONDITION,
            message: format!(
                "controller is in the {:?} frame; simulation needs original coordinates",
                ctrl.frame
            ),
        });
    }
    let x0 = if args.x0.is_empty() {
        DVector::zeros(sys.n())
    } else {
        DVector::from_vec(args.x0.clone())
    };
    let trace = match (&args.exo, &args.traj) {
        (Some(path), _) => {
            let exo: Exosystem = read_json(path, "exosystem")?;
            sim::simulate(
                &sys,
                &ctrl,
                Reference::Exo(&exo),
                &x0,
                args.horizon,
                args.dt,
            )?
        }
        (None, Some(path)) => {
            let traj: TrajectorySpec = read_json(path, "trajectory")?;
            traj.validate()?;
            sim::simulate(
                &sys,
                &ctrl,
                Reference::Trajectory(&traj),
                &x0,
                args.horizon,
                args.dt,
            )?
        }
        (None, None) => return Err(Failure::validation("one of --exo or --traj is required")),
    };
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).expect("writing to memory");
    write_file(&args.output.out, "trace.csv", &csv)?;
    let metrics = sim::metrics(&trace)?;
    let diverged = metrics.diverged;
    write_json(
        &args.output.out,
        "metrics.json",
        &SimulateReport {
            metrics,
            dt: args.dt,
            horizon: args.horizon,
        },
    )?;
    if diverged {
        Err(Failure {
            code: EXIT_DIVERGENCE,
            message: "state exceeded the overflow guard; trace truncated".into(),
        })
    } else {
        Ok(EXIT_OK)
    }
}

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Canon(a) => canon(a),
        Command::Solve(a) => solve(a),
        Command::Design(a) => design(a),
        Command::Compare(a) => compare(a),
        Command::Simulate(a) => simulate(a),
    }
}

/// Parses `args` (program name first), runs the command and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
