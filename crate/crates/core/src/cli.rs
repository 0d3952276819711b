//! Command-line front end: JSON config in, CSV/JSON files out.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, RateFit, Regime};
use crate::error::Error;
use crate::evolve::{self, EvolutionResult};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::spinsys::{RateConstants, SpinSystem};
use crate::superop::{self, Approach, Superoperator};
use crate::trajectory::{self, TrajectoryConfig, TrajectoryEnsemble, DEFAULT_RECORDS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PHYSICS: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_RESIDUAL: i32 = 5;

pub const SCHEMA_VERSION: u32 = 1;
/// `check` passes when every residual is at or below this value.
pub const CHECK_TOL: f64 = 1e-9;
pub const THREADS_ENV: &str = "RADPAIR_THREADS";

const HELP_FOOTER: &str = "\
Exit codes:
  0  success
  2  config or schema error (the message names the field)
  3  physics validation error (non-Hermitian H, bad projector, invalid rho0)
  4  I/O error
  5  check: a residual exceeded 1e-9

Regime classification (compare report):
  oscillatory     at least 2 strict local maxima of pop_s above 1e-3
  zeno            monotone within 1e-6 and fitted rate < 0.5*min(k_s+k_t, omega)
  monotone_decay  otherwise
  Rates are fitted to ln(pop_s) over samples with 0.05 <= pop_s <= 0.5;
  fits with r^2 < 0.999 are reported with good_fit = false.

Set RADPAIR_THREADS to cap the number of worker threads.";

#[derive(Debug, Parser)]
#[command(name = "radpair", version, about = "Radical-pair spin kinetics simulator", after_help = HELP_FOOTER)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate the density matrix and write populations, yields and coherences.
    Evolve(CommonArgs),
    /// Run both approaches on the same grid and write a comparison report.
    Compare(CommonArgs),
    /// Singlet population surfaces over k_T/omega and t*omega (k_s forced to 0).
    Sweep(CommonArgs),
    /// Monte-Carlo trajectory ensemble for each requested approach.
    Trajectories(CommonArgs),
    /// Print algebraic residuals of the configured system.
    Check(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Evolve(a)
            | Command::Compare(a)
            | Command::Sweep(a)
            | Command::Trajectories(a)
            | Command::Check(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides output.directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress informational messages.
    #[arg(long)]
    pub quiet: bool,
}

// ---------------------------------------------------------------------------
// errors

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(field: &str, message: impl fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: format!("config error at `{field}`: {message}") }
    }

    pub fn physics(message: impl fmt::Display) -> Self {
        Self { code: EXIT_PHYSICS, message: format!("validation error: {message}") }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self { code: EXIT_IO, message: format!("I/O error on {}: {err}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidTrajectoryConfig(m) => CliError::config("trajectory", m),
            Error::InvalidTimeGrid => CliError::config("times", e),
            Error::NegativeRate { name, .. } | Error::NonFinite(name) if name.starts_with("k_") => {
                CliError::config(&format!("rates.{name}"), e)
            }
            other => CliError::physics(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// config schema

pub type ComplexEntry = [f64; 2];
pub type MatrixSpec = Vec<Vec<ComplexEntry>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub system: SystemSpec,
    pub rates: RatesSpec,
    #[serde(default)]
    pub rho0: Rho0Spec,
    pub times: GridSpec,
    #[serde(default)]
    pub approach: ApproachSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectorySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    TwoLevel { omega: f64 },
    Explicit { hamiltonian: MatrixSpec, q_singlet: MatrixSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSpec {
    pub k_s: f64,
    pub k_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rho0Spec {
    Named(String),
    Matrix(MatrixSpec),
}

impl Default for Rho0Spec {
    fn default() -> Self {
        Rho0Spec::Named("singlet".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range { start: f64, stop: f64, count: usize },
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproachSpec {
    Haberkorn,
    Measurement,
    #[default]
    Both,
}

impl ApproachSpec {
    pub fn approaches(self) -> Vec<Approach> {
        match self {
            ApproachSpec::Haberkorn => vec![Approach::Haberkorn],
            ApproachSpec::Measurement => vec![Approach::Measurement],
            ApproachSpec::Both => Approach::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Defaults to a tenth of the stability bound of the configured system.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_max: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default)]
    pub n_records: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log10_kt_over_omega: Option<GridSpec>,
    /// Explicit ratios; allows a `k_T = 0` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kt_over_omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_omega: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_directory() -> PathBuf {
    PathBuf::from(".")
}

fn default_prefix() -> String {
    "radpair".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { directory: default_directory(), prefix: default_prefix() }
    }
}

/// Parses a config document; errors name the offending field.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path.is_empty() || path == "." { "<root>".to_string() } else { path };
        CliError::config(&field, e.into_inner())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

fn finite(field: &str, x: f64) -> CliResult<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(field, format!("must be finite, got {x}")))
    }
}

fn matrix_shape(field: &str, m: &MatrixSpec) -> CliResult<usize> {
    let n = m.len();
    if n == 0 {
        return Err(CliError::config(field, "matrix is empty"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(CliError::config(
                &format!("{field}[{i}]"),
                format!("expected {n} entries in a square matrix, got {}", row.len()),
            ));
        }
        for (j, z) in row.iter().enumerate() {
            finite(&format!("{field}[{i}][{j}]"), z[0])?;
            finite(&format!("{field}[{i}][{j}]"), z[1])?;
        }
    }
    Ok(n)
}

impl GridSpec {
    fn validate(&self, field: &str) -> CliResult<()> {
        match self {
            GridSpec::Range { start, stop, count } => {
                finite(&format!("{field}.start"), *start)?;
                finite(&format!("{field}.stop"), *stop)?;
                if *count < 2 {
                    return Err(CliError::config(&format!("{field}.count"), "must be at least 2"));
                }
                if stop <= start {
                    return Err(CliError::config(&format!("{field}.stop"), "must exceed start"));
                }
            }
            GridSpec::List(xs) => {
                if xs.len() < 2 {
                    return Err(CliError::config(field, "needs at least 2 points"));
                }
                for (i, &x) in xs.iter().enumerate() {
                    finite(&format!("{field}[{i}]"), x)?;
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CliError::config(field, "must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Range { start, stop, count } => analysis::linspace(*start, *stop, *count),
            GridSpec::List(xs) => xs.clone(),
        }
    }
}

impl RunConfig {
    /// Schema-level checks; nothing is computed.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        let dim = match &self.system {
            SystemSpec::TwoLevel { omega } => {
                finite("system.two_level.omega", *omega)?;
                2
            }
            SystemSpec::Explicit { hamiltonian, q_singlet } => {
                let n = matrix_shape("system.explicit.hamiltonian", hamiltonian)?;
                let m = matrix_shape("system.explicit.q_singlet", q_singlet)?;
                if n != m {
                    return Err(CliError::config(
                        "system.explicit.q_singlet",
                        format!("dimension {m} does not match hamiltonian dimension {n}"),
                    ));
                }
                n
            }
        };
        for (name, k) in [("rates.k_s", self.rates.k_s), ("rates.k_t", self.rates.k_t)] {
            finite(name, k)?;
            if k < 0.0 {
                return Err(CliError::config(name, format!("must be non-negative, got {k}")));
            }
        }
        match &self.rho0 {
            Rho0Spec::Named(name) if name == "singlet" => {}
            Rho0Spec::Named(name) => {
                return Err(CliError::config("rho0", format!("unknown state {name:?}, expected \"singlet\"")));
            }
            Rho0Spec::Matrix(m) => {
                let n = matrix_shape("rho0", m)?;
                if n != dim {
                    return Err(CliError::config(
                        "rho0",
                        format!("dimension {n} does not match system dimension {dim}"),
                    ));
                }
            }
        }
        self.times.validate("times")?;
        if self.times.points()[0] < 0.0 {
            return Err(CliError::config("times", "times must be non-negative"));
        }
        if let Some(traj) = &self.trajectory {
            if let Some(dt) = traj.dt {
                finite("trajectory.dt", dt)?;
                if dt <= 0.0 {
                    return Err(CliError::config("trajectory.dt", "must be positive"));
                }
            }
            finite("trajectory.t_max", traj.t_max)?;
            if traj.t_max <= 0.0 {
                return Err(CliError::config("trajectory.t_max", "must be positive"));
            }
            if traj.n_traj == 0 {
                return Err(CliError::config("trajectory.n_traj", "must be at least 1"));
            }
            if traj.n_records.is_some_and(|n| n < 2) {
                return Err(CliError::config("trajectory.n_records", "must be at least 2"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.log10_kt_over_omega.is_some() && sweep.kt_over_omega.is_some() {
                return Err(CliError::config(
                    "sweep",
                    "give either log10_kt_over_omega or kt_over_omega, not both",
                ));
            }
            if let Some(g) = &sweep.log10_kt_over_omega {
                g.validate("sweep.log10_kt_over_omega")?;
            }
            if let Some(ks) = &sweep.kt_over_omega {
                if ks.is_empty() {
                    return Err(CliError::config("sweep.kt_over_omega", "must not be empty"));
                }
                for (i, &k) in ks.iter().enumerate() {
                    let field = format!("sweep.kt_over_omega[{i}]");
                    finite(&field, k)?;
                    if k < 0.0 {
                        return Err(CliError::config(&field, "must be non-negative"));
                    }
                }
            }
            if let Some(g) = &sweep.t_omega {
                g.validate("sweep.t_omega")?;
                if g.points()[0] < 0.0 {
                    return Err(CliError::config("sweep.t_omega", "must be non-negative"));
                }
            }
        }
        let prefix = &self.output.prefix;
        if prefix.is_empty() || prefix.contains(['/', '\\']) || prefix.starts_with('.') {
            return Err(CliError::config(
                "output.prefix",
                "must be a non-empty file name prefix without path separators",
            ));
        }
        Ok(())
    }

    pub fn rates(&self) -> CliResult<RateConstants> {
        Ok(RateConstants::new(self.rates.k_s, self.rates.k_t)?)
    }

    pub fn build_system(&self) -> CliResult<SpinSystem> {
        let sys = match &self.system {
            SystemSpec::TwoLevel { omega } => SpinSystem::minimal_two_level(*omega)?,
            SystemSpec::Explicit { hamiltonian, q_singlet } => {
                SpinSystem::from_matrices(to_matrix(hamiltonian), to_matrix(q_singlet))?
            }
        };
        Ok(sys)
    }

    pub fn build_rho0(&self, sys: &SpinSystem) -> CliResult<ComplexMatrix> {
        let rho = match &self.rho0 {
            Rho0Spec::Named(_) => sys.singlet_state()?,
            Rho0Spec::Matrix(m) => to_matrix(m),
        };
        evolve::validate_density_matrix(&rho, sys.dim())?;
        Ok(rho)
    }

    fn omega(&self) -> CliResult<f64> {
        match &self.system {
            SystemSpec::TwoLevel { omega } => Ok(*omega),
            SystemSpec::Explicit { .. } => {
                Err(CliError::config("system", "sweep requires the two_level system"))
            }
        }
    }
}

fn to_matrix(m: &MatrixSpec) -> ComplexMatrix {
    let n = m.len();
    ComplexMatrix::from_fn(n, n, |i, j| num_complex::Complex64::new(m[i][j][0], m[i][j][1]))
}

// ---------------------------------------------------------------------------
// formatting

/// `%.15g`-style rendering: 15 significant digits, trailing zeros removed.
pub fn format_g15(x: f64) -> String {
    format_g(x, 15)
}

fn format_g(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_row(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

pub const EVOLUTION_HEADER: &str = "t,pop_s,pop_t,yield_s,yield_t,trace,coherence_st";
pub const TRAJECTORY_HEADER: &str =
    "t,surviving_fraction,pop_s_est,pop_s_stderr,pop_t_est,pop_t_stderr";
pub const SURFACE_HEADER: &str = "log10_kt_over_omega,t_omega,pop_s,approach";
pub const RATES_HEADER: &str = "log10_kt_over_omega,approach,rate,r_squared";

pub fn evolution_csv(res: &EvolutionResult) -> String {
    let mut out = format!("{EVOLUTION_HEADER}\n");
    for i in 0..res.len() {
        out += &csv_row(
            &[
                res.times[i],
                res.pop_s[i],
                res.pop_t[i],
                res.yield_s[i],
                res.yield_t[i],
                res.trace[i],
                res.coherence_st[i],
            ]
            .map(format_g15),
        );
    }
    out
}

pub fn trajectory_csv(ens: &TrajectoryEnsemble) -> String {
    let opt = |x: Option<f64>| x.map(format_g15).unwrap_or_default();
    let mut out = format!("{TRAJECTORY_HEADER}\n");
    for i in 0..ens.times.len() {
        out += &csv_row(&[
            format_g15(ens.times[i]),
            format_g15(ens.surviving_fraction[i]),
            format_g15(ens.pop_s_est[i]),
            opt(ens.pop_s_stderr[i]),
            format_g15(ens.pop_t_est[i]),
            opt(ens.pop_t_stderr[i]),
        ]);
    }
    out
}

pub fn surface_csv(sweep: &analysis::SweepResult) -> String {
    let logs = sweep.log10_kt_over_omega();
    let mut out = format!("{SURFACE_HEADER}\n");
    for surface in &sweep.surfaces {
        for (k, column) in surface.pop_s.iter().enumerate() {
            for (t, p) in sweep.t_omega.iter().zip(column) {
                out += &csv_row(&[
                    format_g15(logs[k]),
                    format_g15(*t),
                    format_g15(*p),
                    surface.approach.to_string(),
                ]);
            }
        }
    }
    out
}

pub fn rates_csv(sweep: &analysis::SweepResult) -> String {
    let logs = sweep.log10_kt_over_omega();
    let mut out = format!("{RATES_HEADER}\n");
    for surface in &sweep.surfaces {
        for (k, fit) in surface.fits.iter().enumerate() {
            if let Some(fit) = fit {
                out += &csv_row(&[
                    format_g15(logs[k]),
                    surface.approach.to_string(),
                    format_g15(fit.rate),
                    format_g15(fit.r_squared),
                ]);
            }
        }
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// outputs

/// A file to be written under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// Writes every file to a temporary sibling, then renames them into place;
/// on failure the temporaries are removed and nothing is left behind.
pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let tag = std::process::id();
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(files.len());
    let cleanup = |staged: &[(PathBuf, PathBuf)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for file in files {
        let target = dir.join(&file.name);
        let tmp = dir.join(format!(".{}.{tag}.tmp", file.name));
        let result = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(file.contents.as_bytes())?;
            f.sync_all()
        });
        staged.push((tmp.clone(), target));
        if let Err(e) = result {
            cleanup(&staged);
            return Err(CliError::io(&tmp, e));
        }
    }
    if let Some((_, target)) = staged.iter().find(|(_, t)| t.is_dir()) {
        cleanup(&staged);
        return Err(CliError::io(target, "target exists and is a directory"));
    }
    for (i, (tmp, target)) in staged.iter().enumerate() {
        if let Err(e) = fs::rename(tmp, target) {
            cleanup(&staged[i..]);
            for (_, done) in &staged[..i] {
                let _ = fs::remove_file(done);
            }
            return Err(CliError::io(target, e));
        }
    }
    Ok(staged.into_iter().map(|(_, t)| t).collect())
}

// ---------------------------------------------------------------------------
// commands

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalYields {
    pub yield_s: f64,
    pub yield_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerApproach<T> {
    pub haberkorn: T,
    pub measurement: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub max_abs_pop_diff: f64,
    pub max_abs_coherence_diff: f64,
    /// Worst `|pop_s + pop_t + yield_s + yield_t − 1|` over both runs.
    pub trace_defect_max: f64,
    pub eq18_residual: f64,
    pub yields: PerApproach<FinalYields>,
    pub fitted_rates: PerApproach<Option<RateFit>>,
    pub regimes: PerApproach<Option<Regime>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceComparison {
    pub yield_s: f64,
    pub yield_t: f64,
    /// Fraction of record points within 3 standard errors of the deterministic populations.
    pub agreement_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub scheme: Approach,
    pub n_traj: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub yield_s: f64,
    pub yield_s_stderr: Option<f64>,
    pub yield_t: f64,
    pub yield_t_stderr: Option<f64>,
    pub survivors: u64,
    pub histogram_edges: Vec<f64>,
    pub singlet_histogram: Vec<u64>,
    pub triplet_histogram: Vec<u64>,
    pub deterministic: ReferenceComparison,
}

/// Result of one subcommand: files to write plus lines for standard output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<OutputFile>,
    pub stdout: Vec<String>,
    pub warnings: Vec<String>,
    pub exit_code: i32,
}

struct Prepared {
    sys: SpinSystem,
    rates: RateConstants,
    rho0: ComplexMatrix,
    times: Vec<f64>,
}

fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let rates = cfg.rates()?;
    let sys = cfg.build_system()?;
    let rho0 = cfg.build_rho0(&sys)?;
    let times = cfg.times.points();
    Ok(Prepared { sys, rates, rho0, times })
}

fn run_approach(p: &Prepared, approach: Approach) -> CliResult<EvolutionResult> {
    let s = Superoperator::for_approach(approach, &p.sys, p.rates)?;
    Ok(evolve::propagate(&s, &p.rho0, &p.times)?)
}

fn file(cfg: &RunConfig, suffix: &str, contents: String) -> OutputFile {
    OutputFile { name: format!("{}_{suffix}", cfg.output.prefix), contents }
}

fn echo(cfg: &RunConfig) -> OutputFile {
    file(cfg, "config.json", to_json(cfg))
}

pub fn cmd_evolve(cfg: &RunConfig) -> CliResult<CommandOutput> {
    let p = prepare(cfg)?;
    let mut out = CommandOutput::default();
    for approach in cfg.approach.approaches() {
        let res = run_approach(&p, approach)?;
        out.files.push(file(cfg, &format!("{approach}.csv"), evolution_csv(&res)));
    }
    out.files.push(echo(cfg));
    Ok(out)
}

fn fit_and_regime(
    res: &EvolutionResult,
    rates: RateConstants,
    sys: &SpinSystem,
) -> (Option<RateFit>, Option<Regime>) {
    let fit = analysis::zeno_rate_fit(&res.times, &res.pop_s).ok();
    // mixing frequency from the spread of H's spectrum
    let omega = sys
        .hamiltonian()
        .hermitian_eigen()
        .ok()
        .map(|(w, _)| 0.5 * (w[w.len() - 1] - w[0]))
        .unwrap_or(0.0);
    let regime = analysis::classify_regime(&res.times, &res.pop_s, rates.total(), omega).ok();
    (fit, regime)
}

pub fn compare_results(
    sys: &SpinSystem,
    rates: RateConstants,
    h: &EvolutionResult,
    m: &EvolutionResult,
) -> CliResult<ComparisonReport> {
    let max_diff = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let pop = max_diff(&h.pop_s, &m.pop_s).max(max_diff(&h.pop_t, &m.pop_t));
    let last = |r: &EvolutionResult| FinalYields {
        yield_s: r.yield_s.last().copied().unwrap_or(0.0),
        yield_t: r.yield_t.last().copied().unwrap_or(0.0),
    };
    let (fit_h, reg_h) = fit_and_regime(h, rates, sys);
    let (fit_m, reg_m) = fit_and_regime(m, rates, sys);
    Ok(ComparisonReport {
        max_abs_pop_diff: pop,
        max_abs_coherence_diff: max_diff(&h.coherence_st, &m.coherence_st),
        trace_defect_max: h.conservation_defect().max(m.conservation_defect()),
        eq18_residual: superop::decoherence_gap_residual(sys, rates)?,
        yields: PerApproach { haberkorn: last(h), measurement: last(m) },
        fitted_rates: PerApproach { haberkorn: fit_h, measurement: fit_m },
        regimes: PerApproach { haberkorn: reg_h, measurement: reg_m },
    })
}

pub fn cmd_compare(cfg: &RunConfig) -> CliResult<CommandOutput> {
    let mut cfg = cfg.clone();
    cfg.approach = ApproachSpec::Both;
    let p = prepare(&cfg)?;
    let h = run_approach(&p, Approach::Haberkorn)?;
    let m = run_approach(&p, Approach::Measurement)?;
    let report = compare_results(&p.sys, p.rates, &h, &m)?;
    let mut out = CommandOutput::default();
    out.stdout.push(format!(
        "max_abs_pop_diff {}  max_abs_coherence_diff {}  eq18_residual {}",
        format_g(report.max_abs_pop_diff, 6),
        format_g(report.max_abs_coherence_diff, 6),
        format_g(report.eq18_residual, 3),
    ));
    out.files.push(file(&cfg, "haberkorn.csv", evolution_csv(&h)));
    out.files.push(file(&cfg, "measurement.csv", evolution_csv(&m)));
    out.files.push(file(&cfg, "report.json", to_json(&report)));
    out.files.push(echo(&cfg));
    Ok(out)
}

/// Fills the sweep block with the default grids.
pub fn resolved_sweep(spec: Option<&SweepSpec>) -> SweepSpec {
    let mut s = spec.cloned().unwrap_or_default();
    if s.log10_kt_over_omega.is_none() && s.kt_over_omega.is_none() {
        s.log10_kt_over_omega = Some(GridSpec::Range { start: -2.0, stop: 3.0, count: 51 });
    }
    if s.t_omega.is_none() {
        s.t_omega = Some(GridSpec::Range { start: 0.0, stop: 20.0, count: 401 });
    }
    s
}

pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<CommandOutput> {
    let mut cfg = cfg.clone();
    let mut out = CommandOutput::default();
    let omega = cfg.omega()?;
    if cfg.rates.k_s != 0.0 {
        out.warnings.push(format!(
            "warning: sweep runs with k_s = 0; ignoring configured k_s = {}",
            cfg.rates.k_s
        ));
        cfg.rates.k_s = 0.0;
    }
    let sweep = resolved_sweep(cfg.sweep.as_ref());
    let ratios: Vec<f64> = match (&sweep.kt_over_omega, &sweep.log10_kt_over_omega) {
        (Some(ks), _) => ks.clone(),
        (None, Some(g)) => g.points().iter().map(|l| 10f64.powf(*l)).collect(),
        (None, None) => unreachable!("resolved sweep has a k_T grid"),
    };
    let t_omega = sweep.t_omega.as_ref().expect("resolved t grid").points();
    cfg.sweep = Some(sweep);
    let result = analysis::figure2_sweep(omega, &ratios, &t_omega, &cfg.approach.approaches())?;

    if let Some(d) = result.max_difference() {
        out.stdout.push(format!(
            "max |pop_s difference| {} at log10(k_T/omega) = {}, t*omega = {}",
            format_g(d.value, 6),
            format_g(d.log10_kt_over_omega, 6),
            format_g(d.t_omega, 6)
        ));
    }
    if let (Some(h), Some(m)) =
        (result.surface(Approach::Haberkorn), result.surface(Approach::Measurement))
    {
        let top = (0..ratios.len())
            .rev()
            .find_map(|k| Some((k, h.fits[k]?.rate / m.fits[k]?.rate)));
        if let Some((k, ratio)) = top {
            out.stdout.push(format!(
                "rate ratio haberkorn/measurement {} at log10(k_T/omega) = {}",
                format_g(ratio, 6),
                format_g(ratios[k].log10(), 6)
            ));
        }
    }
    out.files.push(file(&cfg, "surface.csv", surface_csv(&result)));
    out.files.push(file(&cfg, "rates.csv", rates_csv(&result)));
    out.files.push(echo(&cfg));
    Ok(out)
}

/// Trajectory block with `dt` and `n_records` filled in.
pub fn resolved_trajectory(cfg: &RunConfig, sys: &SpinSystem) -> CliResult<TrajectorySpec> {
    let Some(mut spec) = cfg.trajectory else {
        return Err(CliError::config("trajectory", "block is required for this command"));
    };
    if spec.dt.is_none() {
        let Some(dt) = TrajectoryConfig::default_dt(sys, cfg.rates()?)? else {
            return Err(CliError::config(
                "trajectory.dt",
                "required when both H and the rates vanish",
            ));
        };
        spec.dt = Some(dt);
    }
    spec.n_records.get_or_insert(DEFAULT_RECORDS);
    Ok(spec)
}

pub fn cmd_trajectories(cfg: &RunConfig) -> CliResult<CommandOutput> {
    if cfg.trajectory.is_none() {
        return Err(CliError::config("trajectory", "block is required for this command"));
    }
    let p = prepare(cfg)?;
    let spec = resolved_trajectory(cfg, &p.sys)?;
    let mut cfg = cfg.clone();
    cfg.trajectory = Some(spec);
    let mut out = CommandOutput::default();
    for approach in cfg.approach.approaches() {
        let mut tc = TrajectoryConfig::new(
            spec.dt.expect("resolved"),
            spec.t_max,
            spec.n_traj,
            spec.seed,
            approach,
        );
        tc.n_records = spec.n_records.expect("resolved");
        let ens = trajectory::run_ensemble(&p.sys, p.rates, &p.rho0, &tc)
            .map_err(|e| match e {
                Error::InvalidTrajectoryConfig(m) => CliError::config("trajectory", m),
                other => other.into(),
            })?;
        let s = Superoperator::for_approach(approach, &p.sys, p.rates)?;
        let reference = evolve::propagate(&s, &p.rho0, &ens.times)?;
        let summary = TrajectorySummary {
            scheme: approach,
            n_traj: ens.n_traj,
            seed: spec.seed,
            dt: ens.dt,
            t_max: spec.t_max,
            yield_s: ens.yield_s_final(),
            yield_s_stderr: ens.yield_s_stderr(),
            yield_t: ens.yield_t_final(),
            yield_t_stderr: ens.yield_t_stderr(),
            survivors: ens.survivors,
            histogram_edges: ens.histogram_edges.clone(),
            singlet_histogram: ens.singlet_histogram.clone(),
            triplet_histogram: ens.triplet_histogram.clone(),
            deterministic: ReferenceComparison {
                yield_s: *reference.yield_s.last().expect("nonempty"),
                yield_t: *reference.yield_t.last().expect("nonempty"),
                agreement_fraction: ens.agreement_fraction(&reference.pop_s, &reference.pop_t, 3.0),
            },
        };
        out.stdout.push(format!(
            "{approach}: yield_s {} (deterministic {}), agreement {}",
            format_g(summary.yield_s, 6),
            format_g(summary.deterministic.yield_s, 6),
            format_g(summary.deterministic.agreement_fraction, 4)
        ));
        out.files.push(file(&cfg, &format!("trajectories_{approach}.csv"), trajectory_csv(&ens)));
        out.files.push(file(&cfg, &format!("trajectories_{approach}.json"), to_json(&summary)));
    }
    out.files.push(echo(&cfg));
    Ok(out)
}

/// Named algebraic residuals of the configured system and rates.
pub fn check_residuals(
    sys: &SpinSystem,
    rates: RateConstants,
    rho0: &ComplexMatrix,
) -> CliResult<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = vec![(
        "hamiltonian_hermiticity".into(),
        sys.hamiltonian().hermiticity_defect(),
    )];
    out.extend(sys.projector_residuals().into_iter().map(|(n, r)| (n.to_string(), r)));
    out.push(("decoherence_gap".into(), superop::decoherence_gap_residual(sys, rates)?));

    // matrix units span operator space, so agreement on them is agreement of the maps
    let n = sys.dim();
    let units: Vec<ComplexMatrix> = (0..n * n)
        .map(|k| {
            let e = ComplexVector::basis(n, k / n);
            let f = ComplexVector::basis(n, k % n);
            ComplexMatrix::outer(&e, &f)
        })
        .collect();
    let v = superop::haberkorn_superop(sys, rates)?;
    let w = superop::measurement_superop(sys, rates)?;
    let (mut hab, mut forms, mut meas) = (0.0f64, 0.0f64, 0.0f64);
    for u in &units {
        let vu = crate::linalg::vec(u);
        let via_v = crate::linalg::unvec(&v.matrix().mat_vec(&vu))?.scale_real(-1.0);
        let via_w = crate::linalg::unvec(&w.matrix().mat_vec(&vu))?.scale_real(-1.0);
        let direct_h = evolve::rhs_haberkorn(sys, rates, u)?;
        let direct_m = evolve::rhs_measurement(sys, rates, u)?;
        let projective = evolve::rhs_measurement_projective(sys, rates, u)?;
        hab = hab.max((&direct_h - &via_v).max_abs());
        meas = meas.max((&direct_m - &via_w).max_abs());
        forms = forms.max((&direct_m - &projective).max_abs());
    }
    out.push(("haberkorn_rhs_vs_superop".into(), hab));
    out.push(("measurement_projective_vs_rhs".into(), forms));
    out.push(("measurement_rhs_vs_superop".into(), meas));
    for approach in Approach::BOTH {
        let r = evolve::trace_loss_residual(approach, sys, rates, rho0)?;
        out.push((format!("trace_loss_{approach}"), r));
    }
    Ok(out)
}

pub fn cmd_check(cfg: &RunConfig) -> CliResult<CommandOutput> {
    let p = prepare(cfg)?;
    Ok(check_verdict(&check_residuals(&p.sys, p.rates, &p.rho0)?))
}

fn check_verdict(residuals: &[(String, f64)]) -> CommandOutput {
    let mut out = CommandOutput::default();
    let mut failed = false;
    for (name, r) in residuals {
        let ok = *r <= CHECK_TOL;
        failed |= !ok;
        out.stdout.push(format!("{name} {} {}", format_g(*r, 6), if ok { "ok" } else { "FAIL" }));
    }
    out.exit_code = if failed { EXIT_RESIDUAL } else { EXIT_OK };
    out
}

// ---------------------------------------------------------------------------
// entry point

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError {
            code: EXIT_CONFIG,
            message: format!("{THREADS_ENV} must be a positive integer, got {raw:?}"),
        })?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads the config, runs the command and writes its files.
pub fn execute(cli: &Cli) -> CliResult<CommandOutput> {
    configure_threads()?;
    let args = cli.command.args();
    let mut cfg = load_config(&args.config)?;
    if let Some(dir) = &args.out {
        cfg.output.directory = dir.clone();
    }
    let out = match &cli.command {
        Command::Evolve(_) => cmd_evolve(&cfg)?,
        Command::Compare(_) => cmd_compare(&cfg)?,
        Command::Sweep(_) => cmd_sweep(&cfg)?,
        Command::Trajectories(_) => cmd_trajectories(&cfg)?,
        Command::Check(_) => cmd_check(&cfg)?,
    };
    let written = write_outputs(&cfg.output.directory, &out.files)?;
    let mut out = out;
    if !args.quiet {
        out.stdout.extend(written.iter().map(|p| format!("wrote {}", p.display())));
    }
    Ok(out)
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let quiet = cli.command.args().quiet;
    let is_check = matches!(cli.command, Command::Check(_));
    match execute(&cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("{w}");
            }
            if !quiet || is_check {
                for line in &out.stdout {
                    println!("{line}");
                }
            }
            out.exit_code
        }
        Err(e) => {
            eprintln!("radpair: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{"schema":1,"system":{{"two_level":{{"omega":1.0}}}},"rates":{{"k_s":0.5,"k_t":1.0}},
               "times":{{"start":0,"stop":5,"count":11}}{extra}}}"#
        )
    }

    #[test]
    fn g15_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333333"),
            (123456.789, "123456.789"),
            (1e-5, "1e-05"),
            (1.5e-7, "1.5e-07"),
            (0.0001, "0.0001"),
            (1e15, "1e+15"),
            (123456789012345.0, "123456789012345"),
            (2.0f64.sqrt(), "1.4142135623731"),
            (std::f64::consts::PI, "3.14159265358979"),
            (-0.0, "0"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for (x, s) in cases {
            assert_eq!(format_g15(x), s, "{x}");
        }
        assert_eq!(format_g(0.99999996, 6), "1");
        assert_eq!(format_g(9.9999996e-5, 6), "0.0001");
    }

    #[test]
    fn parses_defaults() {
        let cfg = parse_config(&minimal("")).unwrap();
        assert_eq!(cfg.approach, ApproachSpec::Both);
        assert_eq!(cfg.rho0, Rho0Spec::Named("singlet".into()));
        assert_eq!(cfg.output, OutputSpec::default());
        assert_eq!(cfg.times.points().len(), 11);
        let echoed = parse_config(&to_json(&cfg)).unwrap();
        assert_eq!(echoed, cfg);
    }

    fn field_error(text: &str) -> CliError {
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG, "{e}");
        e
    }

    #[test]
    fn config_errors_name_the_field() {
        let neg = minimal("").replace("\"k_t\":1.0", "\"k_t\":-1.0");
        assert!(field_error(&neg).message.contains("rates.k_t"));
        let typo = minimal("").replace("\"k_s\"", "\"ks\"");
        assert!(field_error(&typo).message.contains("rates"));
        let count = minimal("").replace("\"count\":11", "\"count\":1");
        assert!(field_error(&count).message.contains("times.count"));
        let schema = minimal("").replace("\"schema\":1", "\"schema\":2");
        assert!(field_error(&schema).message.contains("schema"));
        let rho = minimal(r#","rho0":"triplet""#);
        assert!(field_error(&rho).message.contains("rho0"));
        let approach = minimal(r#","approach":"lindblad""#);
        assert!(field_error(&approach).message.contains("approach"));
        let prefix = minimal(r#","output":{"prefix":"../x"}"#);
        assert!(field_error(&prefix).message.contains("output.prefix"));
        let ragged = r#"{"schema":1,"system":{"explicit":{"hamiltonian":[[[0,0],[1,0]],[[1,0]]],
            "q_singlet":[[[1,0],[0,0]],[[0,0],[0,0]]]}},"rates":{"k_s":0,"k_t":0},"times":[0,1]}"#;
        assert!(field_error(ragged).message.contains("system.explicit.hamiltonian[1]"));
    }

    #[test]
    fn physics_errors_exit_3() {
        let text = r#"{"schema":1,"system":{"explicit":{"hamiltonian":[[[0,0],[0,1]],[[0,1],[0,0]]],
            "q_singlet":[[[1,0],[0,0]],[[0,0],[0,0]]]}},"rates":{"k_s":0,"k_t":0},"times":[0,1]}"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cmd_evolve(&cfg).unwrap_err().code, EXIT_PHYSICS);

        let bad_rho = minimal(r#","rho0":[[[0.5,0],[0,0]],[[0,0],[0.4,0]]]"#);
        let cfg = parse_config(&bad_rho).unwrap();
        assert_eq!(cmd_evolve(&cfg).unwrap_err().code, EXIT_PHYSICS);
    }

    #[test]
    fn evolve_csv_layout() {
        let cfg = parse_config(&minimal(r#","approach":"measurement""#)).unwrap();
        let out = cmd_evolve(&cfg).unwrap();
        let names: Vec<&str> = out.files.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["radpair_measurement.csv", "radpair_config.json"]);
        let csv = &out.files[0].contents;
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(EVOLUTION_HEADER));
        assert_eq!(csv.lines().count(), 12);
        assert!(!csv.contains('\r'));
        assert!(csv.lines().nth(1).unwrap().starts_with("0,1,0,0,0,1,0"));
    }

    #[test]
    fn trajectories_require_block() {
        let cfg = parse_config(&minimal("")).unwrap();
        let e = cmd_trajectories(&cfg).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        assert!(e.message.contains("trajectory"));
    }

    #[test]
    fn trajectory_defaults_resolve() {
        let cfg = parse_config(&minimal(r#","trajectory":{"t_max":1,"n_traj":10,"seed":3}"#)).unwrap();
        let sys = cfg.build_system().unwrap();
        let spec = resolved_trajectory(&cfg, &sys).unwrap();
        assert!((spec.dt.unwrap() - 0.001 / 1.5).abs() < 1e-15);
        assert_eq!(spec.n_records, Some(DEFAULT_RECORDS));
    }

    #[test]
    fn sweep_forces_zero_singlet_rate() {
        let cfg = parse_config(&minimal(
            r#","sweep":{"kt_over_omega":[0,1,10],"t_omega":{"start":0,"stop":4,"count":41}}"#,
        ))
        .unwrap();
        let out = cmd_sweep(&cfg).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let echoed: RunConfig = serde_json::from_str(&out.files[2].contents).unwrap();
        assert_eq!(echoed.rates.k_s, 0.0);
        let surface = &out.files[0].contents;
        assert_eq!(surface.lines().count(), 1 + 2 * 3 * 41);
        assert!(surface.lines().nth(1).unwrap().starts_with("-inf,0,1,haberkorn"));
        assert!(!out.files[1].contents.contains("-inf"));
    }

    #[test]
    fn check_passes_on_two_level() {
        let cfg = parse_config(&minimal("")).unwrap();
        let out = cmd_check(&cfg).unwrap();
        assert_eq!(out.exit_code, EXIT_OK);
        assert!(out.stdout.iter().all(|l| l.ends_with(" ok")));
        assert!(out.stdout.len() >= 10);
    }

    #[test]
    fn check_fails_above_tolerance() {
        let out = check_verdict(&[("a".into(), 1e-12), ("b".into(), 2e-9)]);
        assert_eq!(out.exit_code, EXIT_RESIDUAL);
        assert_eq!(out.stdout, ["a 1e-12 ok", "b 2e-09 FAIL"]);
    }

    #[test]
    fn staged_writes_leave_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("radpair_b.csv");
        fs::create_dir(&blocker).unwrap();
        let files = vec![
            OutputFile { name: "radpair_a.csv".into(), contents: "a\n".into() },
            OutputFile { name: "radpair_b.csv".into(), contents: "b\n".into() },
        ];
        let e = write_outputs(dir.path(), &files).unwrap_err();
        assert_eq!(e.code, EXIT_IO);
        let left: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(left, vec![std::ffi::OsString::from("radpair_b.csv")]);
    }
}
