//! Batch front-end: run configuration files, solver runs, tolerance sweeps
//! and the convexity demo, each writing plain CSV/JSON artifacts.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::alm::{outer_loop, AlmConfig, AlmReport, BranchTest, ControlProblem};
use crate::diagnostics::{certify, OptimalityCertificate};
use crate::dp::{push_forward, write_distribution, ControlField};
use crate::error::{Error, Result};
use crate::functionals::{MomentFunctional, Objective};
use crate::lattice::{build_stencils, ControlledDrift, Grid, Lattice};
use crate::measure::{empirical_wasserstein1, DiscreteMeasure};
use crate::simulate::{branching_demo, loglog_slope, simulate_feedback};

/// Spacings used by `--full-grid`.
pub const FULL_GRID_DX: f64 = 1e-3;
pub const FULL_GRID_DU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Minimize the mean subject to `Var ≤ α`.
    VarianceCap,
    /// Minimize the mean subject to `∫ exp(-x²) dm ≥ α`.
    ExpectationFloor,
}

impl ProblemKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "variance_cap" => Some(Self::VarianceCap),
            "expectation_floor" => Some(Self::ExpectationFloor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub dt: f64,
    pub horizon: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub du: f64,
    pub sigma: f64,
    pub problem: ProblemKind,
    pub alpha: f64,
    pub x0: f64,
    pub alm: AlmConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Monte-Carlo paths simulated under the computed feedback; 0 skips.
    pub mc_paths: usize,
    /// Constant controls of the convexity demo branches.
    pub demo_controls: Vec<f64>,
    pub demo_weights: Vec<f64>,
    /// Control applied before branching.
    pub demo_u0: f64,
    pub demo_paths: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            x_min: -5.0,
            x_max: 5.0,
            dx: 1e-2,
            dt: 1e-2,
            horizon: 1.0,
            u_min: -2.0,
            u_max: 2.0,
            du: 0.2,
            sigma: 1.0,
            problem: ProblemKind::VarianceCap,
            alpha: 0.4,
            x0: 0.0,
            alm: AlmConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            mc_paths: 0,
            demo_controls: vec![2.0, -2.0],
            demo_weights: vec![0.5, 0.5],
            demo_u0: 0.0,
            demo_paths: 100_000,
        }
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if !x.is_finite() {
        return Err(format!("`{v}` is not finite"));
    }
    Ok(x)
}

fn parse_positive(v: &str) -> std::result::Result<f64, String> {
    let x = parse_f64(v)?;
    if x <= 0.0 {
        return Err(format!("must be positive (got {v})"));
    }
    Ok(x)
}

fn parse_count(v: &str) -> std::result::Result<usize, String> {
    v.parse()
        .map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_f64)
        .collect()
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Errors carry
    /// `origin:line`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{origin}:{}: {msg}", n + 1));
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(format!("expected `key = value`, found `{line}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key `{key}`")));
            }
            config
                .set(key, value)
                .map_err(|msg| at(format!("{key}: {msg}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "x_min" => self.x_min = parse_f64(v)?,
            "x_max" => self.x_max = parse_f64(v)?,
            "dx" => self.dx = parse_positive(v)?,
            "dt" => self.dt = parse_positive(v)?,
            "horizon" => self.horizon = parse_positive(v)?,
            "u_min" => self.u_min = parse_f64(v)?,
            "u_max" => self.u_max = parse_f64(v)?,
            "du" => self.du = parse_positive(v)?,
            "sigma" => {
                self.sigma = parse_f64(v)?;
                if self.sigma < 0.0 {
                    return Err(format!("must be non-negative (got {v})"));
                }
            }
            "problem" => {
                self.problem = ProblemKind::parse(v).ok_or_else(|| {
                    format!("unknown problem `{v}` (expected variance_cap or expectation_floor)")
                })?
            }
            "alpha" => self.alpha = parse_f64(v)?,
            "x0" => self.x0 = parse_f64(v)?,
            "tolerance" => {
                let t = parse_positive(v)?;
                self.alm.eta_star = t;
                self.alm.omega_star = t;
            }
            "eta_star" => self.alm.eta_star = parse_positive(v)?,
            "omega_star" => self.alm.omega_star = parse_positive(v)?,
            "initial_penalty" => self.alm.initial_penalty = parse_positive(v)?,
            "penalty_growth" => self.alm.penalty_growth = parse_positive(v)?,
            "eta_exponent" => self.alm.eta_exponent = parse_positive(v)?,
            "omega_exponent" => self.alm.omega_exponent = parse_positive(v)?,
            "eta_decay" => self.alm.eta_decay = parse_positive(v)?,
            "omega_decay" => self.alm.omega_decay = parse_positive(v)?,
            "max_outer" => self.alm.max_outer = parse_count(v)?,
            "max_inner" => self.alm.max_inner = parse_count(v)?,
            "theta_step" => self.alm.theta_step = parse_positive(v)?,
            "branch_test" => {
                self.alm.branch_test = match v {
                    "eta" => BranchTest::Eta,
                    "omega" => BranchTest::Omega,
                    _ => return Err(format!("unknown test `{v}` (expected eta or omega)")),
                }
            }
            "omega_floor" => {
                self.alm.omega_floor = v
                    .parse()
                    .map_err(|_| format!("`{v}` is not true or false"))?
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            "seed" => self.seed = v.parse().map_err(|_| format!("`{v}` is not a seed"))?,
            "mc_paths" => self.mc_paths = parse_count(v)?,
            "demo_controls" => self.demo_controls = parse_list(v)?,
            "demo_weights" => self.demo_weights = parse_list(v)?,
            "demo_u0" => self.demo_u0 = parse_f64(v)?,
            "demo_paths" => self.demo_paths = parse_count(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Cross-field checks; single-field checks happen while parsing.
    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max) {
            return Err(Error::Config("x_min must be below x_max".into()));
        }
        if !(self.x_min..=self.x_max).contains(&self.x0) {
            return Err(Error::Config(format!(
                "x0 = {} lies outside the grid",
                self.x0
            )));
        }
        if !(self.u_min <= self.u_max) {
            return Err(Error::Config("u_min must not exceed u_max".into()));
        }
        self.alm.validate()?;
        self.lattice()?;
        Ok(())
    }

    /// Switches to the fine spacings `dx = 1e-3`, `du = 0.1`.
    pub fn use_full_grid(&mut self) {
        self.dx = FULL_GRID_DX;
        self.du = FULL_GRID_DU;
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::with_spacing(self.x_min, self.x_max, self.dx)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::from_steps(
            self.grid()?,
            self.dt,
            self.horizon,
            self.u_min,
            self.u_max,
            self.du,
        )
    }

    pub fn dynamics(&self) -> ControlledDrift {
        ControlledDrift { sigma: self.sigma }
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        let lattice = self.lattice()?;
        let grid = *lattice.grid();
        let stencils = build_stencils(&lattice, &self.dynamics())?;
        let constraints = match self.problem {
            ProblemKind::VarianceCap => MomentFunctional::variance_cap(&grid, self.alpha),
            ProblemKind::ExpectationFloor => MomentFunctional::expectation_floor(&grid, self.alpha),
        };
        let objective = Objective::new(MomentFunctional::mean(&grid), constraints)?;
        ControlProblem::new(stencils, DiscreteMeasure::dirac(&grid, self.x0)?, objective)
    }
}

/// One row of the convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub tolerance: f64,
    pub constraint: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub vi_residual: f64,
    pub penalty: f64,
    pub standard_solves: usize,
    pub converged: bool,
}

impl ConvergenceRow {
    fn from_report(tolerance: f64, report: &AlmReport) -> Self {
        Self {
            tolerance,
            constraint: report.constraint_at_control.clone(),
            multiplier: report.lambda.clone(),
            vi_residual: report.vi_residual,
            penalty: report.final_penalty,
            standard_solves: report.standard_solves,
            converged: report.converged,
        }
    }
}

const CONVERGENCE_HEADER: &str =
    "tolerance,constraint,multiplier,vi_residual,penalty,standard_solves,converged";

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn convergence_line(row: &ConvergenceRow) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        row.tolerance,
        join(&row.constraint),
        join(&row.multiplier),
        row.vi_residual,
        row.penalty,
        row.standard_solves,
        row.converged
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn write_outer_table(path: &Path, report: &AlmReport) -> Result<()> {
    let mut s =
        String::from("k,residual,epsilon,penalty,eta,omega,multiplier,inner_iterations,branch\n");
    for r in &report.outer {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:?}",
            r.k,
            r.residual,
            r.epsilon,
            r.penalty,
            r.eta,
            r.omega,
            join(&r.lambda),
            r.inner_iterations,
            r.branch
        );
    }
    write_text(path, &s)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
    /// Empirical W1 between the paths and the chain's final-time law.
    pub wasserstein_to_chain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub converged: bool,
    pub failure: Option<String>,
    pub row: ConvergenceRow,
    pub cost_at_control: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Certificate at the law generated by the recovered feedback.
    pub certificate: Option<OptimalityCertificate>,
    /// Certificate at the last relaxed iterate `m_k`, a mixture of reachable laws.
    pub relaxed_certificate: Option<OptimalityCertificate>,
    pub monte_carlo: Option<MonteCarloSummary>,
}

/// Solves one configuration, writing every artifact into `out`. On
/// non-convergence the outer-iteration table and the summary are still
/// written before the error is returned.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let problem = config.problem()?;
    let tolerance = config.alm.eta_star.max(config.alm.omega_star);

    let solution = match outer_loop(&problem, &config.alm) {
        Ok(s) => s,
        Err(Error::NotConverged { reason, report }) => {
            write_outer_table(&out.join("outer.csv"), &report)?;
            let row = ConvergenceRow::from_report(tolerance, &report);
            write_text(
                &out.join("convergence.csv"),
                &format!("{CONVERGENCE_HEADER}\n{}\n", convergence_line(&row)),
            )?;
            let summary = RunSummary {
                config: config.clone(),
                converged: false,
                failure: Some(reason.clone()),
                row,
                cost_at_control: report.cost_at_control,
                outer_iterations: report.outer.len(),
                inner_iterations: report.outer.iter().map(|r| r.inner_iterations).sum(),
                certificate: None,
                relaxed_certificate: None,
                monte_carlo: None,
            };
            write_summary(&out.join("summary.json"), &summary)?;
            return Err(Error::NotConverged { reason, report });
        }
        Err(e) => return Err(e),
    };

    let report = &solution.report;
    let row = ConvergenceRow::from_report(tolerance, report);
    write_text(
        &out.join("convergence.csv"),
        &format!("{CONVERGENCE_HEADER}\n{}\n", convergence_line(&row)),
    )?;
    write_outer_table(&out.join("outer.csv"), report)?;
    solution.feedback.write_csv(&out.join("control.csv"))?;
    solution.recovery.values.write_csv(&out.join("value.csv"))?;
    let slices = push_forward(&problem.initial, &solution.feedback, &problem.stencils)?;
    write_distribution(&out.join("distribution.csv"), &slices, config.dt)?;

    let certificate = certify(
        &problem,
        &solution.recovery.terminal,
        &solution.lambda,
        tolerance,
    )?;
    let relaxed_certificate = certify(&problem, &solution.state.m, &solution.lambda, tolerance)?;

    let monte_carlo = if config.mc_paths > 0 {
        let ensemble = simulate_feedback(
            &config.dynamics(),
            problem.stencils.lattice(),
            &solution.feedback,
            config.x0,
            config.mc_paths,
            config.seed,
        )?;
        ensemble.write_csv(&out.join("terminal_samples.csv"))?;
        let reference = solution.recovery.terminal.quantile_samples(config.mc_paths);
        Some(MonteCarloSummary {
            n_paths: ensemble.n_paths,
            seed: ensemble.seed,
            mean: ensemble.mean(),
            variance: ensemble.variance(),
            wasserstein_to_chain: empirical_wasserstein1(&ensemble.sorted_samples(), &reference)?,
        })
    } else {
        None
    };

    let summary = RunSummary {
        config: config.clone(),
        converged: true,
        failure: None,
        row,
        cost_at_control: report.cost_at_control,
        outer_iterations: report.outer.len(),
        inner_iterations: report.outer.iter().map(|r| r.inner_iterations).sum(),
        certificate: Some(certificate),
        relaxed_certificate: Some(relaxed_certificate),
        monte_carlo,
    };
    write_summary(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Evaluation(format!("cannot serialize summary: {e}")))?;
    write_text(path, &(text + "\n"))
}

/// Runs `run` once per tolerance (with `η_* = ω_* = tolerance`) into
/// `out/tol_<i>`; a failed row is recorded and the sweep goes on.
pub fn sweep(config: &RunConfig, tolerances: &[f64], out: &Path) -> Result<Vec<ConvergenceRow>> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(tolerances.len());
    let mut table = format!("{CONVERGENCE_HEADER}\n");
    for (i, &tol) in tolerances.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.alm.eta_star = tol;
        cfg.alm.omega_star = tol;
        let row = match run(&cfg, &out.join(format!("tol_{i}"))) {
            Ok(summary) => summary.row,
            Err(Error::NotConverged { report, .. }) => ConvergenceRow::from_report(tol, &report),
            Err(e @ Error::Io(_)) => return Err(e),
            Err(e) => {
                eprintln!("tolerance {tol}: {e}");
                ConvergenceRow {
                    tolerance: tol,
                    constraint: vec![],
                    multiplier: vec![],
                    vi_residual: f64::NAN,
                    penalty: f64::NAN,
                    standard_solves: 0,
                    converged: false,
                }
            }
        };
        table.push_str(&convergence_line(&row));
        table.push('\n');
        rows.push(row);
    }
    write_text(&out.join("sweep.csv"), &table)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityRow {
    pub epsilon: f64,
    pub d1: f64,
    pub branch_counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub rows: Vec<ConvexityRow>,
    /// Log-log slope of `d1` against `ε`; absent with fewer than two rows.
    pub slope: Option<f64>,
}

/// Delay-and-branch distances to the mixture for each delay.
pub fn demo_convexity(config: &RunConfig, epsilons: &[f64], out: &Path) -> Result<ConvexityReport> {
    std::fs::create_dir_all(out)?;
    let lattice = config.lattice()?;
    let stencils = build_stencils(&lattice, &config.dynamics())?;
    let controls = config
        .demo_controls
        .iter()
        .map(|&u| {
            let idx = lattice
                .controls()
                .iter()
                .position(|c| (c - u).abs() < 1e-9)
                .ok_or_else(|| {
                    Error::Config(format!("demo control {u} is not on the control grid"))
                })?;
            ControlField::constant(&stencils, idx)
        })
        .collect::<Result<Vec<_>>>()?;
    let dynamics = config.dynamics();
    let mut rows = Vec::with_capacity(epsilons.len());
    let mut csv = String::from("epsilon,d1,branch_counts\n");
    for &eps in epsilons {
        let o = branching_demo(
            &dynamics,
            &lattice,
            &controls,
            &config.demo_weights,
            eps,
            config.demo_u0,
            config.x0,
            config.demo_paths,
            config.seed,
        )?;
        let counts: Vec<String> = o.branch_counts.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(csv, "{},{},{}", eps, o.d1, counts.join(";"));
        rows.push(ConvexityRow {
            epsilon: eps,
            d1: o.d1,
            branch_counts: o.branch_counts,
        });
    }
    let slope = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.d1).collect();
        Some(loglog_slope(&xs, &ys)?)
    } else {
        None
    };
    write_text(&out.join("convexity.csv"), &csv)?;
    let report = ConvexityReport { rows, slope };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Evaluation(format!("cannot serialize report: {e}")))?;
    write_text(&out.join("convexity.json"), &(text + "\n"))?;
    Ok(report)
}

/// Comma-separated reals; the empty string is the empty list.
pub fn parse_reals(s: &str) -> Result<Vec<f64>> {
    parse_list(s).map_err(|e| Error::Config(format!("invalid list `{s}`: {e}")))
}

#[derive(Debug, Parser)]
#[command(
    name = "mfcontrol",
    version,
    about = "Distribution-constrained stochastic control solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use dx = 1e-3 and du = 0.1.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one configuration.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Sets both outer tolerances.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Solve once per tolerance and collect a convergence table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, e.g. `1e-3,1e-4`.
        #[arg(long, allow_hyphen_values = true)]
        tolerances: String,
    },
    /// Distance from delay-and-branch laws to the mixture of branch laws.
    DemoConvexity {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        epsilons: String,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut config = RunConfig::load(&common.config)?;
    if common.full_grid {
        config.use_full_grid();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Domain(_) | Error::Shape(_) => 2,
        Error::NotConverged { .. } => 3,
        Error::Io(_) => 4,
        Error::Evaluation(_) | Error::CertificateRefused(_) => 1,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve { common, tolerance } => {
            let (mut config, out) = load(common)?;
            if let Some(t) = tolerance {
                config.alm.eta_star = *t;
                config.alm.omega_star = *t;
            }
            let summary = run(&config, &out)?;
            println!("{CONVERGENCE_HEADER}");
            println!("{}", convergence_line(&summary.row));
        }
        Command::Sweep { common, tolerances } => {
            let (config, out) = load(common)?;
            let rows = sweep(&config, &parse_reals(tolerances)?, &out)?;
            println!("{CONVERGENCE_HEADER}");
            for row in &rows {
                println!("{}", convergence_line(row));
            }
        }
        Command::DemoConvexity { common, epsilons } => {
            let (config, out) = load(common)?;
            let report = demo_convexity(&config, &parse_reals(epsilons)?, &out)?;
            println!("epsilon,d1");
            for r in &report.rows {
                println!("{},{}", r.epsilon, r.d1);
            }
            if let Some(s) = report.slope {
                println!("slope {s}");
            }
        }
    }
    Ok(())
}

/// Entry point shared by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
