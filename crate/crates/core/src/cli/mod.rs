//! Command-line harness: `solve`, `sweep`, `verify`, `gen-scenario`.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 infeasible
//! instance, 3 solver hit its iteration cap, 4 `verify` gap above 1%.

pub mod config;
pub mod sweep;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{solve_scheme, Scheme};
use crate::model::{OffloadingMode, Scenario};
use crate::oracle::{brute_force_binary, brute_force_partial, kkt_residuals, GridSpec, KktReport, OracleError};
use crate::solver_partial::{PartialSolution, SolverConfig, SolverError};
use config::{ConfigError, ScenarioFile};
use sweep::SweepParam;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_VERIFY_GAP: i32 = 4;

/// Largest relative solver-vs-oracle gap `verify` accepts.
pub const VERIFY_TOLERANCE: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(name = "mec-ce", version, about = "Weighted-sum computation-efficiency maximization for OFDMA mobile edge computing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Partial,
    Binary,
}

impl From<ModeArg> for OffloadingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Partial => OffloadingMode::Partial,
            ModeArg::Binary => OffloadingMode::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Proposed,
    Offload,
    Local,
    Cbmax,
    Ecmin,
    All,
}

impl SchemeArg {
    fn scheme(self) -> Option<Scheme> {
        match self {
            SchemeArg::Proposed => Some(Scheme::Proposed),
            SchemeArg::Offload => Some(Scheme::Offload),
            SchemeArg::Local => Some(Scheme::Local),
            SchemeArg::Cbmax => Some(Scheme::Cbmax),
            SchemeArg::Ecmin => Some(Scheme::Ecmin),
            SchemeArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (TOML, or JSON by extension). Defaults to the built-in setup.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Channel seed; overrides the file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "partial")]
    pub mode: ModeArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write the report and trace as JSON.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "proposed")]
        scheme: SchemeArg,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the convergence trace of the first scheme as CSV.
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Sweep the per-user power cap or minimum rate and write CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// First value (W or bit/s; SI suffixes accepted). Default 0.1 W / 0.
        #[arg(long, value_parser = parse_si_arg)]
        from: Option<f64>,
        /// Last value. Default 5 W, or the feasibility boundary for `rth`.
        #[arg(long, value_parser = parse_si_arg)]
        to: Option<f64>,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, value_enum, default_value = "all")]
        scheme: SchemeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the proposed solver with the brute-force oracle.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Oracle grid intervals per dimension.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a fully explicit scenario file (gains included).
    GenScenario {
        #[command(flatten)]
        common: Common,
        /// Number of users; ignored when the base scenario lists users.
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        subchannels: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_si_arg(s: &str) -> Result<f64, String> {
    config::parse_si(s)
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Write { .. } => EXIT_CONFIG,
            CliError::Solver(SolverError::InfeasibleInstance { .. }) => EXIT_INFEASIBLE,
            CliError::Solver(SolverError::InvalidConfig(_) | SolverError::InvalidScenario(_)) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_NOT_CONVERGED,
            CliError::Oracle(OracleError::Infeasible) => EXIT_INFEASIBLE,
            CliError::Oracle(_) => EXIT_CONFIG,
        }
    }
}

/// Loads the scenario (or the built-in default) and the solver settings.
pub fn load_scenario(common: &Common) -> Result<(ScenarioFile, Scenario, SolverConfig), ConfigError> {
    let (file, path) = match &common.scenario {
        Some(p) => (config::load(p)?, p.clone()),
        None => (ScenarioFile::default(), PathBuf::from("<default>")),
    };
    file.solver.validate().map_err(|e| ConfigError::Argument(format!("{}: [solver] {e}", path.display())))?;
    let scenario = file.resolve(common.seed, &path)?;
    let solver = file.solver.clone();
    Ok((file, scenario, solver))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Serialize)]
struct SchemeResult<'a> {
    scheme: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<&'a PartialSolution>,
}

#[derive(Debug, Serialize)]
struct SolveOutput<'a> {
    mode: OffloadingMode,
    scenario: &'a Scenario,
    results: Vec<SchemeResult<'a>>,
}

fn status_of(r: &Result<PartialSolution, SolverError>) -> (&'static str, i32) {
    match r {
        Ok(s) if s.converged => ("ok", EXIT_OK),
        Ok(_) => ("not-converged", EXIT_NOT_CONVERGED),
        Err(SolverError::InfeasibleInstance { .. }) => ("infeasible", EXIT_INFEASIBLE),
        Err(e) => ("error", CliError::Solver(e.clone()).exit_code()),
    }
}

/// Convergence trace as CSV, one row per inner iteration.
pub fn trace_csv(sol: &PartialSolution) -> String {
    let mut out = String::from("outer_iter,inner_iter,weighted_sum_ce,fixed_point_rate_residual,fixed_point_power_residual,constraint_violation\n");
    for r in &sol.trace.records {
        out.push_str(&format!(
            "{},{},{:.11e},{:.11e},{:.11e},{:.11e}\n",
            r.outer_iter, r.inner_iter, r.weighted_sum_ce, r.lemma1_residual.0, r.lemma1_residual.1, r.constraint_violations
        ));
    }
    out
}

fn solve_cmd(common: &Common, scheme: SchemeArg, out: Option<&Path>, trace: Option<&Path>) -> Result<i32, CliError> {
    let (_, s, cfg) = load_scenario(common)?;
    let mode = OffloadingMode::from(common.mode);
    let schemes: Vec<Scheme> = match scheme.scheme() {
        Some(x) => vec![x],
        None => Scheme::ALL.to_vec(),
    };
    let results: Vec<(Scheme, Result<PartialSolution, SolverError>)> =
        schemes.iter().map(|&x| (x, solve_scheme(&s, &cfg, x, mode))).collect();

    // Infeasibility outranks non-convergence.
    let mut code = EXIT_OK;
    let mut entries = Vec::new();
    for (x, r) in &results {
        let (status, c) = status_of(r);
        if c != EXIT_OK && (code == EXIT_OK || c == EXIT_INFEASIBLE) {
            code = c;
        }
        entries.push(SchemeResult {
            scheme: x.name(),
            status,
            error: r.as_ref().err().map(|e| e.to_string()),
            solution: r.as_ref().ok(),
        });
    }
    let output = SolveOutput {
        mode,
        scenario: &s,
        results: entries,
    };
    let mut json = serde_json::to_string_pretty(&output).expect("output serializes");
    json.push('\n');
    match out {
        Some(p) => write(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = trace {
        if let Some((_, Ok(sol))) = results.first() {
            write(p, &trace_csv(sol))?;
        }
    }
    for (x, r) in &results {
        if let Err(e) = r {
            eprintln!("{}: {e}", x.name());
        }
    }
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    common: &Common,
    param: SweepParam,
    from: Option<f64>,
    to: Option<f64>,
    steps: usize,
    scheme: SchemeArg,
    out: Option<&Path>,
) -> Result<i32, CliError> {
    let (_, s, cfg) = load_scenario(common)?;
    if steps < 2 {
        return Err(ConfigError::Argument("--steps must be at least 2".into()).into());
    }
    let from = from.unwrap_or(match param {
        SweepParam::Pth => 0.1,
        SweepParam::Rth => 0.0,
    });
    let to = match (to, param) {
        (Some(t), _) => t,
        (None, SweepParam::Pth) => 5.0,
        (None, SweepParam::Rth) => sweep::rate_boundary(&s, &cfg)?,
    };
    if !(from >= 0.0 && to > from && to.is_finite()) {
        return Err(ConfigError::Argument(format!("sweep bounds must satisfy 0 <= from < to (got {from}, {to})")).into());
    }
    let values = sweep::points(from, to, steps);
    let curves = sweep::curves(scheme.scheme(), common.mode.into());
    let rows = sweep::run_sweep(&s, &cfg, param, &values, &curves);
    let csv = sweep::to_csv(&rows);
    match out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    mode: OffloadingMode,
    grid: usize,
    solver_ce: f64,
    oracle_ce: f64,
    relative_gap: f64,
    converged: bool,
    kkt: KktReport,
}

fn verify_cmd(common: &Common, grid: usize, out: Option<&Path>) -> Result<i32, CliError> {
    let (_, s, cfg) = load_scenario(common)?;
    let mode = OffloadingMode::from(common.mode);
    let spec = GridSpec { points: grid };
    let oracle = match mode {
        OffloadingMode::Partial => brute_force_partial(&s, &spec),
        OffloadingMode::Binary => brute_force_binary(&s, &spec),
    };
    let sol = solve_scheme(&s, &cfg, Scheme::Proposed, mode)?;
    let oracle = oracle?;
    let gap = (sol.report.weighted_sum_ce - oracle.weighted_sum_ce).abs() / oracle.weighted_sum_ce;
    let report = VerifyOutput {
        mode,
        grid,
        solver_ce: sol.report.weighted_sum_ce,
        oracle_ce: oracle.weighted_sum_ce,
        relative_gap: gap,
        converged: sol.converged,
        kkt: kkt_residuals(&s, &sol),
    };
    println!(
        "solver {:.6e} oracle {:.6e} gap {:.4}% stationarity {:.2e}",
        report.solver_ce,
        report.oracle_ce,
        100.0 * gap,
        report.kkt.stationarity
    );
    if let Some(p) = out {
        let mut json = serde_json::to_string_pretty(&report).expect("output serializes");
        json.push('\n');
        write(p, &json)?;
    }
    Ok(if gap > VERIFY_TOLERANCE {
        EXIT_VERIFY_GAP
    } else if !sol.converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    })
}

fn gen_cmd(common: &Common, users: Option<usize>, subchannels: Option<usize>, out: &Path) -> Result<i32, CliError> {
    let mut file = match &common.scenario {
        Some(p) => config::load(p)?,
        None => ScenarioFile::default(),
    };
    if let Some(k) = users {
        file.num_users = Some(k);
    }
    if let Some(n) = subchannels {
        file.system.num_subchannels = Some(n);
    }
    // Explicit gains would pin the old dimensions; resample instead.
    if users.is_some() || subchannels.is_some() {
        file.channel.gains = None;
    }
    let path = common.scenario.clone().unwrap_or_else(|| PathBuf::from("<default>"));
    let s = file.resolve(common.seed, &path)?;
    write(out, &ScenarioFile::from_scenario(&s, &file.solver).to_text(out))?;
    Ok(EXIT_OK)
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Solve {
            common,
            scheme,
            out,
            trace_csv,
        } => solve_cmd(common, *scheme, out.as_deref(), trace_csv.as_deref()),
        Command::Sweep {
            common,
            param,
            from,
            to,
            steps,
            scheme,
            out,
        } => sweep_cmd(common, *param, *from, *to, *steps, *scheme, out.as_deref()),
        Command::Verify { common, grid, out } => verify_cmd(common, *grid, out.as_deref()),
        Command::GenScenario {
            common,
            users,
            subchannels,
            out,
        } => gen_cmd(common, *users, *subchannels, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
