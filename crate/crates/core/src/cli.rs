//! The `elliptope` command-line tool.
//!
//! Exit codes: 0 on success, 1 when no restart converged, 2 for usage and
//! input errors. Every output is a function of the flags and inputs only.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certify::{certify, Certificate, TolProfile};
use crate::error::Error;
use crate::instances::InstanceSpec;
use crate::manifold::{SigmaCsv, SpherePoint};
use crate::refsdp::{sdp_reference, RefConfig, ReferenceValue};
use crate::rng::{self, Tag};
use crate::solver::{multi_restart_with_norm, Method, SolveReportJson, SolverConfig, StopReason};
use crate::symmat::{read_matrix_market, write_matrix_market, PowerOptions, SymMatrix};

/// Column list of `results.csv`.
pub const EXPERIMENT_COLUMNS: [&str; 16] = [
    "family",
    "n",
    "k",
    "restart",
    "seed",
    "objective",
    "sdp_ref",
    "gap",
    "bound8",
    "bound5sqrt2",
    "dual_eps",
    "xi_min",
    "grad_norm",
    "iters",
    "method",
    "holds",
];

/// Largest tolerated row-norm error of a sigma file passed to `certify`.
pub const SIGMA_NORM_TOL: f64 = 1e-6;

pub const THREADS_ENV: &str = "ELLIPTOPE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Unconverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Unconverged(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Defaults shared by the subcommands; `--config` replaces them, flags
/// override both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub restarts: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub tol: TolProfile,
    pub reference: RefConfig,
    pub round_trials: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            restarts: 10,
            seed: 0,
            solver: SolverConfig::default(),
            tol: TolProfile::default(),
            reference: RefConfig::default(),
            round_trials: 100,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "elliptope", version, about = "Low-rank solver and certificates for max <A, X> over the elliptope")]
#[command(after_help = "Set ELLIPTOPE_THREADS to cap the worker threads (0 = all cores).")]
pub struct Cli {
    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// JSON file replacing the default configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum RoundMode {
    SignFirstCol,
    Hyperplane,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an instance and write it as Matrix Market.
    Generate {
        /// Instance spec as inline JSON or a path to a JSON file.
        spec: String,
        out: PathBuf,
    },
    /// Multi-restart low-rank solve.
    Solve {
        matrix: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scale-free gradient tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Report path; the best point goes to `<out>.sigma.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sigma_out: Option<PathBuf>,
    },
    /// Multipliers, local checks, dual bound and gap report for a point.
    Certify {
        matrix: PathBuf,
        sigma: PathBuf,
        /// Reference SDP value, or `auto` to compute one.
        #[arg(long)]
        sdp_ref: Option<String>,
        /// Certified error of a numeric `--sdp-ref`.
        #[arg(long, default_value_t = 0.0)]
        sdp_ref_error: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and certify every cell of a grid.
    Experiment {
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Accept k = 1 cells; their gap rows are flagged inapplicable.
        #[arg(long)]
        allow_k1: bool,
    },
    /// Round a point to a sign vector.
    Round {
        sigma: PathBuf,
        #[arg(long, value_enum, default_value = "hyperplane")]
        mode: RoundMode,
        #[arg(long)]
        trials: Option<usize>,
        /// Planted signs, one `+1`/`-1` per line.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Matrix used to score hyperplane trials and report the cut.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Fail unless an overlap can be reported.
        #[arg(long)]
        overlap: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &[Method::Coordinate, Method::Rgrad]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Sizes the global rayon pool from [`THREADS_ENV`].
pub fn init_threads() -> CliResult<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")))?,
        Err(_) => 0,
    };
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => serde_json::from_str::<Config>(&read_text(p)?)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Config::default(),
    };
    if cli.dump_config {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return Ok(());
    }
    init_threads()?;
    let Some(command) = cli.command else {
        return Err(usage("no subcommand given; see --help"));
    };
    match command {
        Command::Generate { spec, out } => cmd_generate(&spec, &out),
        Command::Solve {
            matrix,
            k,
            method,
            restarts,
            seed,
            tol,
            max_iters,
            out,
            sigma_out,
        } => {
            let mut cfg = config.solver.clone();
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(t) = tol {
                cfg.grad_tol = t;
            }
            if let Some(m) = max_iters {
                cfg.max_iters = m;
            }
            cfg.seed = seed.unwrap_or(config.seed);
            let restarts = restarts.unwrap_or(config.restarts);
            let sigma_out = sigma_out.or_else(|| out.as_ref().map(|o| suffixed(o, ".sigma.csv")));
            cmd_solve(&matrix, k, restarts, &cfg, out.as_deref(), sigma_out.as_deref())
        }
        Command::Certify {
            matrix,
            sigma,
            sdp_ref,
            sdp_ref_error,
            out,
        } => cmd_certify(&matrix, &sigma, sdp_ref.as_deref(), sdp_ref_error, &config, out.as_deref()),
        Command::Experiment {
            grid,
            out,
            restarts,
            seed,
            allow_k1,
        } => {
            let g: ExperimentGrid = serde_json::from_str(&read_text(&grid)?)
                .map_err(|e| usage(format!("{}: {e}", grid.display())))?;
            let mut plan = g.resolve(&config)?;
            if let Some(r) = restarts {
                plan.restarts = r;
            }
            if let Some(s) = seed {
                plan.seed = s;
            }
            plan.allow_k1 |= allow_k1;
            let out = out
                .or(g.out.clone())
                .ok_or_else(|| usage("experiment needs --out or an \"out\" field in the grid"))?;
            plan.validate()?;
            let result = run_experiment(&plan)?;
            write_experiment(&out, &result)?;
            eprintln!(
                "{} rows, {} converged, theorem holds on all converged rows: {}",
                result.summary.rows, result.summary.converged_rows, result.summary.holds_all
            );
            Ok(())
        }
        Command::Round {
            sigma,
            mode,
            trials,
            truth,
            matrix,
            overlap,
            seed,
            out,
        } => {
            let opts = RoundOptions {
                mode,
                trials: trials.unwrap_or(config.round_trials),
                seed: seed.unwrap_or(config.seed),
                require_overlap: overlap,
            };
            cmd_round(&sigma, &opts, truth.as_deref(), matrix.as_deref(), out.as_deref())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

// ---------------------------------------------------------------------------
// generate

/// Reads an instance spec given inline (`{...}`) or as a file path.
pub fn parse_spec(spec: &str) -> CliResult<InstanceSpec> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        read_text(Path::new(spec))?
    };
    let parsed: InstanceSpec = serde_json::from_str(&text).map_err(|e| usage(format!("bad instance spec: {e}")))?;
    parsed.validate()?;
    Ok(parsed)
}

pub fn format_truth(x: &[i8]) -> String {
    let mut s = String::with_capacity(3 * x.len());
    for &v in x {
        s.push_str(if v < 0 { "-1\n" } else { "1\n" });
    }
    s
}

pub fn parse_truth(text: &str) -> std::result::Result<Vec<i8>, (usize, String)> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        match t {
            "1" | "+1" => out.push(1),
            "-1" => out.push(-1),
            other => return Err((no + 1, format!("expected +1 or -1, got '{other}'"))),
        }
    }
    Ok(out)
}

fn read_truth(path: &Path) -> CliResult<Vec<i8>> {
    parse_truth(&read_text(path)?).map_err(|(line, msg)| usage(format!("{}:{line}: {msg}", path.display())))
}

fn cmd_generate(spec: &str, out: &Path) -> CliResult<()> {
    let spec = parse_spec(spec)?;
    let inst = spec.generate()?;
    write_matrix_market(&inst.a, out)?;
    if let Some(x) = &inst.truth {
        write_text(&suffixed(out, ".truth"), &format_truth(x))?;
    }
    eprintln!("wrote {} ({} n={})", out.display(), spec.family(), inst.a.n());
    Ok(())
}

// ---------------------------------------------------------------------------
// solve

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub restart_seed: u64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutput {
    pub n: usize,
    pub k: usize,
    pub method: Method,
    pub restarts: usize,
    pub seed: u64,
    pub op_norm: f64,
    pub best_restart: usize,
    #[serde(flatten)]
    pub best: SolveReportJson,
    pub runs: Vec<RestartSummary>,
}

fn cmd_solve(
    matrix: &Path,
    k: usize,
    restarts: usize,
    cfg: &SolverConfig,
    out: Option<&Path>,
    sigma_out: Option<&Path>,
) -> CliResult<()> {
    if k < 1 {
        return Err(usage("--k must be at least 1"));
    }
    if restarts < 1 {
        return Err(usage("--restarts must be at least 1"));
    }
    cfg.validate()?;
    let a = read_matrix_market(matrix)?;
    let norm = a.op_norm(&PowerOptions {
        seed: cfg.seed,
        ..PowerOptions::default()
    });
    let m = multi_restart_with_norm(&a, k, restarts, cfg, norm.value)?;
    let best = m.best_report();
    if let Some(p) = sigma_out {
        best.sigma.write_csv(p)?;
    }
    let report = SolveOutput {
        n: a.n(),
        k,
        method: cfg.method,
        restarts,
        seed: cfg.seed,
        op_norm: norm.value,
        best_restart: m.best,
        best: best.to_json(sigma_out.map(|p| p.display().to_string())),
        runs: m
            .reports
            .iter()
            .enumerate()
            .map(|(r, rep)| RestartSummary {
                restart: r,
                restart_seed: rep.restart_seed,
                objective: rep.objective,
                grad_norm: rep.grad_norm_final,
                iterations: rep.iterations,
                converged: rep.converged,
                stop_reason: rep.stop_reason,
            })
            .collect(),
    };
    emit_json(&report, out)?;
    if m.any_converged() {
        Ok(())
    } else {
        Err(CliError::Unconverged(format!("none of {restarts} restarts converged")))
    }
}

// ---------------------------------------------------------------------------
// certify

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyOutput {
    #[serde(flatten)]
    pub certificate: Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceValue>,
}

fn cmd_certify(
    matrix: &Path,
    sigma: &Path,
    sdp_ref: Option<&str>,
    sdp_ref_error: f64,
    config: &Config,
    out: Option<&Path>,
) -> CliResult<()> {
    let a = read_matrix_market(matrix)?;
    let csv = SigmaCsv::read(sigma)?;
    let err = csv.max_row_norm_error();
    if !(err <= SIGMA_NORM_TOL) {
        return Err(usage(format!(
            "{}: row norms deviate from 1 by {err:.3e} (limit {SIGMA_NORM_TOL:e})",
            sigma.display()
        )));
    }
    let s = csv.into_point()?;
    if s.n() != a.n() {
        return Err(usage(format!("sigma has {} rows but the matrix has n = {}", s.n(), a.n())));
    }
    let (reference, ref_pair) = match sdp_ref {
        None => (None, None),
        Some("auto") => {
            let r = sdp_reference(&a, &config.reference)?;
            let pair = (r.value, r.certified_error);
            (Some(r), Some(pair))
        }
        Some(v) => {
            let value: f64 = v
                .parse()
                .map_err(|_| usage(format!("--sdp-ref expects a number or 'auto', got '{v}'")))?;
            (None, Some((value, sdp_ref_error)))
        }
    };
    let norm = a.op_norm(&PowerOptions {
        seed: config.tol.seed,
        ..PowerOptions::default()
    });
    let certificate = certify(&a, &s, &norm, &config.tol, ref_pair)?;
    emit_json(&CertifyOutput { certificate, reference }, out)
}

// ---------------------------------------------------------------------------
// experiment

/// Grid file of the `experiment` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub instances: Vec<InstanceSpec>,
    pub k: Vec<usize>,
    #[serde(default)]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub allow_k1: bool,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub tol: Option<TolProfile>,
    #[serde(default)]
    pub reference: Option<RefConfig>,
}

impl ExperimentGrid {
    /// Fills unset fields from `config`.
    pub fn resolve(&self, config: &Config) -> CliResult<ExperimentPlan> {
        Ok(ExperimentPlan {
            instances: self.instances.clone(),
            ks: self.k.clone(),
            restarts: self.restarts.unwrap_or(config.restarts),
            seed: self.seed.unwrap_or(config.seed),
            allow_k1: self.allow_k1,
            solver: self.solver.clone().unwrap_or_else(|| config.solver.clone()),
            tol: self.tol.clone().unwrap_or_else(|| config.tol.clone()),
            reference: self.reference.clone().unwrap_or_else(|| config.reference.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub instances: Vec<InstanceSpec>,
    pub ks: Vec<usize>,
    pub restarts: usize,
    pub seed: u64,
    pub allow_k1: bool,
    pub solver: SolverConfig,
    pub tol: TolProfile,
    pub reference: RefConfig,
}

impl ExperimentPlan {
    pub fn new(instances: Vec<InstanceSpec>, ks: Vec<usize>, restarts: usize, seed: u64) -> Self {
        let c = Config::default();
        ExperimentPlan {
            instances,
            ks,
            restarts,
            seed,
            allow_k1: false,
            solver: c.solver,
            tol: c.tol,
            reference: c.reference,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.instances.is_empty() {
            return Err(usage("the grid lists no instances"));
        }
        if self.ks.is_empty() {
            return Err(usage("the grid lists no k values"));
        }
        if self.restarts < 1 {
            return Err(usage("restarts must be at least 1"));
        }
        for &k in &self.ks {
            if k == 0 || (k == 1 && !self.allow_k1) {
                return Err(usage(format!("k = {k} is not allowed (k >= 2; k = 1 needs --allow-k1)")));
            }
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// One `(instance, k, restart)` result.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub family: String,
    pub instance: usize,
    pub n: usize,
    pub k: usize,
    pub restart: usize,
    pub seed: u64,
    pub objective: f64,
    pub sdp_ref: f64,
    pub sdp_ref_error: f64,
    pub gap: f64,
    pub bound8: f64,
    pub bound5sqrt2: f64,
    pub dual_eps: f64,
    pub xi_min: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub method: Method,
    pub holds: bool,
    pub converged: bool,
    /// `"ok"`, `"unconverged"`, `"inapplicable_k1"` or `"error: ..."`.
    pub status: String,
    pub wall_ms: u128,
    pub certificate: Option<Certificate>,
}

impl ExperimentRow {
    fn failed(family: &str, instance: usize, n: usize, k: usize, restart: usize, method: Method, msg: &str) -> Self {
        ExperimentRow {
            family: family.to_string(),
            instance,
            n,
            k,
            restart,
            seed: 0,
            objective: f64::NAN,
            sdp_ref: f64::NAN,
            sdp_ref_error: f64::NAN,
            gap: f64::NAN,
            bound8: f64::NAN,
            bound5sqrt2: f64::NAN,
            dual_eps: f64::NAN,
            xi_min: f64::NAN,
            grad_norm: f64::NAN,
            iters: 0,
            method,
            holds: false,
            converged: false,
            status: format!("error: {msg}"),
            wall_ms: 0,
            certificate: None,
        }
    }

    fn csv_line(&self) -> String {
        let f = |v: f64| if v.is_finite() { format!("{v:e}") } else { String::new() };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.family,
            self.n,
            self.k,
            self.restart,
            self.seed,
            f(self.objective),
            f(self.sdp_ref),
            f(self.gap),
            f(self.bound8),
            f(self.bound5sqrt2),
            f(self.dual_eps),
            f(self.xi_min),
            f(self.grad_norm),
            self.iters,
            self.method.as_str(),
            self.holds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSummary {
    pub k: usize,
    pub rows: usize,
    pub converged_rows: usize,
    pub max_gap: f64,
    /// Largest `gap / bound8` over converged rows.
    pub max_bound_fraction: f64,
    pub holds_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub rows: usize,
    pub converged_rows: usize,
    pub failed_rows: usize,
    /// The gap bound holds on every converged row with `k >= 2`.
    pub holds_all: bool,
    pub per_k: Vec<KSummary>,
    /// Exponent of the least-squares fit `max_gap ~ C k^-alpha`.
    pub alpha: Option<f64>,
    pub alpha_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub summary: ExperimentSummary,
}

/// Solver seed of cell `(instance, k index)`.
pub fn cell_seed(base: u64, cell: usize) -> u64 {
    rng::derive_seed(base, Tag::Experiment as u64, cell as u64)
}

/// Runs every cell of `plan`. Failures are recorded in the affected rows.
pub fn run_experiment(plan: &ExperimentPlan) -> CliResult<ExperimentResult> {
    plan.validate()?;
    let mut rows = Vec::new();
    for (ii, spec) in plan.instances.iter().enumerate() {
        let family = spec.family();
        let prepared = spec.generate().and_then(|inst| {
            let norm = inst.a.op_norm(&PowerOptions {
                seed: plan.seed,
                ..PowerOptions::default()
            });
            let reference = sdp_reference(&inst.a, &plan.reference)?;
            Ok((inst.a, norm, reference))
        });
        let (a, norm, reference) = match prepared {
            Ok(p) => p,
            Err(e) => {
                eprintln!("instance {ii} ({family}): {e}");
                for &k in &plan.ks {
                    for r in 0..plan.restarts {
                        rows.push(ExperimentRow::failed(family, ii, 0, k, r, plan.solver.method, &e.to_string()));
                    }
                }
                continue;
            }
        };
        for (ki, &k) in plan.ks.iter().enumerate() {
            let cell = ii * plan.ks.len() + ki;
            let cfg = SolverConfig {
                seed: cell_seed(plan.seed, cell),
                ..plan.solver.clone()
            };
            let started = Instant::now();
            match multi_restart_with_norm(&a, k, plan.restarts, &cfg, norm.value) {
                Ok(m) => {
                    let per_restart_ms = started.elapsed().as_millis() / plan.restarts as u128;
                    for (r, rep) in m.reports.iter().enumerate() {
                        let cert = certify(
                            &a,
                            &rep.sigma,
                            &norm,
                            &plan.tol,
                            Some((reference.value, reference.certified_error)),
                        );
                        let row = match cert {
                            Ok(c) => {
                                let th = c.theorem.expect("reference supplied");
                                let status = if !rep.converged {
                                    "unconverged"
                                } else if !th.applicable {
                                    "inapplicable_k1"
                                } else {
                                    "ok"
                                };
                                ExperimentRow {
                                    family: family.to_string(),
                                    instance: ii,
                                    n: a.n(),
                                    k,
                                    restart: r,
                                    seed: rep.restart_seed,
                                    objective: rep.objective,
                                    sdp_ref: reference.value,
                                    sdp_ref_error: reference.certified_error,
                                    gap: th.gap,
                                    bound8: th.bound,
                                    bound5sqrt2: th.bound_sharp,
                                    dual_eps: c.dual.dual_eps,
                                    xi_min: c.lemma2.gram_min_eig,
                                    grad_norm: rep.grad_norm_final,
                                    iters: rep.iterations,
                                    method: rep.method,
                                    holds: th.holds,
                                    converged: rep.converged,
                                    status: status.to_string(),
                                    wall_ms: per_restart_ms,
                                    certificate: Some(c),
                                }
                            }
                            Err(e) => ExperimentRow::failed(family, ii, a.n(), k, r, rep.method, &e.to_string()),
                        };
                        rows.push(row);
                    }
                    let best = m.best_report().objective;
                    eprintln!(
                        "{family} n={} k={k}: best {best:.6}, reference {:.6}, {:?}",
                        a.n(),
                        reference.value,
                        started.elapsed()
                    );
                }
                Err(e) => {
                    for r in 0..plan.restarts {
                        rows.push(ExperimentRow::failed(family, ii, a.n(), k, r, cfg.method, &e.to_string()));
                    }
                }
            }
        }
    }
    rows.sort_by(|x, y| (&x.family, x.n, x.k, x.restart).cmp(&(&y.family, y.n, y.k, y.restart)));
    let summary = summarize(&plan.ks, &rows);
    Ok(ExperimentResult { rows, summary })
}

/// Least-squares slope of `ln y` against `ln x`, negated.
pub fn fit_decay_exponent(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

fn summarize(ks: &[usize], rows: &[ExperimentRow]) -> ExperimentSummary {
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut per_k = Vec::new();
    let mut fit = Vec::new();
    for &k in &ks {
        let sel: Vec<&ExperimentRow> = rows.iter().filter(|r| r.k == k).collect();
        let conv: Vec<&&ExperimentRow> = sel.iter().filter(|r| r.converged).collect();
        let max_gap = conv.iter().map(|r| r.gap).fold(f64::NEG_INFINITY, f64::max);
        let max_frac = conv.iter().map(|r| r.gap / r.bound8).fold(f64::NEG_INFINITY, f64::max);
        // Gaps within the reference's own uncertainty carry no signal.
        let floor = conv
            .iter()
            .map(|r| r.sdp_ref_error.max(0.0) + 1e-6 * r.bound8 * (r.k as f64).sqrt() / 8.0)
            .fold(0.0, f64::max);
        if k >= 2 && !conv.is_empty() && max_gap > floor {
            fit.push((k as f64, max_gap));
        }
        per_k.push(KSummary {
            k,
            rows: sel.len(),
            converged_rows: conv.len(),
            max_gap: if conv.is_empty() { f64::NAN } else { max_gap },
            max_bound_fraction: if conv.is_empty() { f64::NAN } else { max_frac },
            holds_all: conv.iter().all(|r| r.holds || r.k < 2),
        });
    }
    let converged_rows = rows.iter().filter(|r| r.converged).count();
    ExperimentSummary {
        rows: rows.len(),
        converged_rows,
        failed_rows: rows.iter().filter(|r| r.status.starts_with("error")).count(),
        holds_all: rows.iter().filter(|r| r.converged && r.k >= 2).all(|r| r.holds),
        per_k,
        alpha: fit_decay_exponent(&fit),
        alpha_points: fit.len(),
    }
}

/// `results.csv` contents: the fixed header and one line per row.
pub fn results_csv(rows: &[ExperimentRow]) -> String {
    let mut s = EXPERIMENT_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// `status.csv` contents: per-row status and wall time.
pub fn status_csv(rows: &[ExperimentRow]) -> String {
    let mut s = String::from("family,n,k,restart,status,wall_ms\n");
    for r in rows {
        let status = r.status.replace([',', '\n'], ";");
        let _ = writeln!(s, "{},{},{},{},{},{}", r.family, r.n, r.k, r.restart, status, r.wall_ms);
    }
    s
}

/// Writes `results.csv`, `status.csv` and `summary.json` into `dir`.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    write_text(&dir.join("results.csv"), &results_csv(&result.rows))?;
    write_text(&dir.join("status.csv"), &status_csv(&result.rows))?;
    emit_json(&result.summary, Some(&dir.join("summary.json")))
}

// ---------------------------------------------------------------------------
// round

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOptions {
    pub mode: RoundMode,
    pub trials: usize,
    pub seed: u64,
    pub require_overlap: bool,
}

fn sign(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else {
        1
    }
}

/// `x_i = sign(s_i1)`, with zero mapped to `+1`.
pub fn round_sign_first_col(s: &SpherePoint) -> Vec<i8> {
    s.rows().map(|r| sign(r[0])).collect()
}

/// `x_i = sign(<s_i, r>)` for the given direction `r`.
pub fn round_with_direction(s: &SpherePoint, r: &[f64]) -> Vec<i8> {
    s.rows().map(|row| sign(row.iter().zip(r).map(|(a, b)| a * b).sum())).collect()
}

/// `x^T A x`.
pub fn sign_objective(a: &SymMatrix, x: &[i8]) -> f64 {
    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let y = a.matvec(&xf).expect("length checked by caller");
    xf.iter().zip(&y).map(|(u, v)| u * v).sum()
}

/// Weight of the cut under the encoding `A = -W`:
/// `sum_{i<j} -a_ij (1 - x_i x_j) / 2`.
pub fn cut_value(a: &SymMatrix, x: &[i8]) -> f64 {
    a.lower_entries()
        .into_iter()
        .filter(|&(i, j, _)| i != j && x[i] != x[j])
        .map(|(_, _, v)| -v)
        .sum()
}

/// `|<x, truth>| / n`.
pub fn overlap(x: &[i8], truth: &[i8]) -> f64 {
    let s: i64 = x.iter().zip(truth).map(|(&a, &b)| (a as i64) * (b as i64)).sum();
    s.unsigned_abs() as f64 / x.len().max(1) as f64
}

/// Hyperplane rounding: trial `t` draws a Gaussian direction from stream
/// `(seed, t)`; the trial with the largest `x^T A x` wins, ties to the
/// earliest. Without a matrix only one trial can be taken.
pub fn round_hyperplane(s: &SpherePoint, a: Option<&SymMatrix>, trials: usize, seed: u64) -> (Vec<i8>, usize) {
    let mut best: Option<(Vec<i8>, f64, usize)> = None;
    for t in 0..trials.max(1) {
        let mut r = rng::stream(seed, Tag::Rounding, t as u64);
        let dir: Vec<f64> = (0..s.k()).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = round_with_direction(s, &dir);
        let score = a.map_or(0.0, |a| sign_objective(a, &x));
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((x, score, t));
        }
        if a.is_none() {
            break;
        }
    }
    let (x, _, t) = best.expect("at least one trial");
    (x, t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutput {
    pub mode: String,
    pub n: usize,
    pub x: Vec<i8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_trial: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cut_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
}

/// Rounds `s`; `a` scores hyperplane trials and yields the objective and cut.
pub fn round_point(
    s: &SpherePoint,
    opts: &RoundOptions,
    a: Option<&SymMatrix>,
    truth: Option<&[i8]>,
) -> CliResult<RoundOutput> {
    if opts.require_overlap && truth.is_none() {
        return Err(usage("overlap requested but no truth file given"));
    }
    if let Some(a) = a {
        if a.n() != s.n() {
            return Err(usage(format!("sigma has {} rows but the matrix has n = {}", s.n(), a.n())));
        }
    }
    if let Some(t) = truth {
        if t.len() != s.n() {
            return Err(usage(format!("truth has {} entries but sigma has {} rows", t.len(), s.n())));
        }
    }
    let (x, best_trial, mode) = match opts.mode {
        RoundMode::SignFirstCol => (round_sign_first_col(s), None, "sign_first_col"),
        RoundMode::Hyperplane => {
            if a.is_none() && opts.trials > 1 {
                return Err(usage("hyperplane rounding with several trials needs --matrix to score them"));
            }
            let (x, t) = round_hyperplane(s, a, opts.trials, opts.seed);
            (x, Some(t), "hyperplane")
        }
    };
    Ok(RoundOutput {
        mode: mode.to_string(),
        n: s.n(),
        objective: a.map(|a| sign_objective(a, &x)),
        cut_value: a.map(|a| cut_value(a, &x)),
        overlap: truth.map(|t| overlap(&x, t)),
        best_trial,
        x,
    })
}

fn cmd_round(
    sigma: &Path,
    opts: &RoundOptions,
    truth: Option<&Path>,
    matrix: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    if opts.require_overlap && truth.is_none() {
        return Err(usage("overlap requested but no --truth given"));
    }
    let s = SigmaCsv::read(sigma)?.into_point()?;
    let a = matrix.map(read_matrix_market).transpose()?;
    let truth = truth.map(read_truth).transpose()?;
    let res = round_point(&s, opts, a.as_ref(), truth.as_deref())?;
    emit_json(&res, out)
}
