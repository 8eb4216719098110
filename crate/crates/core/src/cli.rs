//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from flags, an optional JSON
//! config file (`--config`, keys spelled like the long flags) and the
//! `ONSAGER_QUAD_ORDER` environment variable, in that order of precedence.
//! Validation happens before any computation or file output.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical or I/O failure (an
//! error record is written next to the requested output), 64 unknown command.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bifurcation::{classify_stability, degree_audit_with, uniqueness_thresholds, Stability};
use crate::dynamics::{evolve_with, make_grid, EvolveOptions, Flow};
use crate::error::{Error, Result};
use crate::kernel::{
    build_kernel_spec_with_order, coeff_by_quadrature_with, coeff_by_recurrence, KernelSource, KernelSpec,
    QUADRATURE_TOL,
};
use crate::solver::{multistart_with, AxisymState, Method, SolutionReport, SolveOptions, ZonalModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const QUAD_ORDER_ENV: &str = "ONSAGER_QUAD_ORDER";

#[derive(Debug, Parser)]
#[command(
    name = "onsager",
    version,
    about = "Spectral solvers for the Doi-Onsager model on S^{D-1}"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kernel coefficients k_n by quadrature and/or recurrence.
    Coeffs(RunArgs),
    /// Uniqueness thresholds and critical concentrations.
    Thresholds(RunArgs),
    /// One solve of u = lambda G(u).
    Solve(RunArgs),
    /// Multistart census over a range of lambda.
    Sweep(RunArgs),
    /// Index sum of all solutions at several truncations.
    AuditDegree(RunArgs),
    /// Integrate the axisymmetric Doi flow.
    Evolve(RunArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Coeffs(a) => ("coeffs", a),
            Command::Thresholds(a) => ("thresholds", a),
            Command::Solve(a) => ("solve", a),
            Command::Sweep(a) => ("sweep", a),
            Command::AuditDegree(a) => ("audit-degree", a),
            Command::Evolve(a) => ("evolve", a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CoeffMethod {
    Quadrature,
    Recurrence,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Newton,
    Picard,
}

/// Flags shared by all subcommands; the config file uses the same names.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunArgs {
    /// JSON file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Ambient dimension D (the sphere is S^{D-1}).
    #[arg(long)]
    pub dim: Option<u32>,
    /// Number of kernel modes N.
    #[arg(long, visible_alias = "modes")]
    #[serde(alias = "modes")]
    pub nmax: Option<usize>,
    /// Concentration for solve, audit-degree and evolve.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Number of lambda values in a sweep.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Gauss-Legendre order for the kernel and solver quadratures.
    #[arg(long)]
    pub quad_order: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,

    /// coeffs: quadrature, recurrence or both; solvers: newton or picard.
    #[arg(long)]
    pub method: Option<String>,
    /// Kernel JSON to load instead of building the Onsager kernel.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Also write the kernel used to this path.
    #[arg(long)]
    pub kernel_out: Option<PathBuf>,

    /// solve: initial mode index and amplitude of `a·P_{2n}`.
    #[arg(long)]
    pub init_mode: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub init_amp: Option<f64>,
    /// Picard relaxation factor in (0, 1].
    #[arg(long)]
    pub relaxation: Option<f64>,
    /// Multistart starts per lambda.
    #[arg(long)]
    pub starts: Option<usize>,
    /// audit-degree: comma separated truncations.
    #[arg(long, value_delimiter = ',')]
    pub truncations: Option<Vec<usize>>,
    /// sweep and audit-degree: fill the stability column (Doi flow probe).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stability: Option<bool>,

    /// evolve: grid points, time step and final time.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub perturb_mode: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub perturb_amp: Option<f64>,
    #[arg(long)]
    pub sample_every: Option<usize>,
}

/// Fully resolved and validated run parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dim: u32,
    pub n_max: usize,
    pub lambda: Option<f64>,
    pub lambda_range: Option<(f64, f64, usize)>,
    pub quad_order: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub kernel: Option<PathBuf>,
    pub kernel_out: Option<PathBuf>,
    pub coeff_method: CoeffMethod,
    pub solve_method: SolveMethod,
    pub init_mode: usize,
    pub init_amp: f64,
    pub relaxation: f64,
    pub starts: usize,
    pub truncations: Vec<usize>,
    pub stability: bool,
    pub grid: usize,
    pub dt: Option<f64>,
    pub t_max: f64,
    pub perturb_mode: usize,
    pub perturb_amp: f64,
    pub sample_every: usize,
}

macro_rules! pick {
    ($args:expr, $file:expr, $field:ident) => {
        $args.$field.clone().or_else(|| $file.$field.clone())
    };
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("--{name} must be positive, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(Error::invalid(format!("--{name} must be at least {min}, got {v}")))
    }
}

fn env_quad_order() -> Result<Option<usize>> {
    match std::env::var(QUAD_ORDER_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::invalid(format!("{QUAD_ORDER_ENV} = `{s}` is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    /// Merges flags over the config file and applies defaults.
    pub fn resolve(command: &str, args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<RunArgs>(&text)
                    .map_err(|e| Error::invalid(format!("bad config {}: {e}", path.display())))?
            }
            None => RunArgs::default(),
        };
        let method = pick!(args, file, method);
        let default_format = match command {
            "thresholds" | "solve" | "audit-degree" => Format::Json,
            _ => Format::Csv,
        };

        let quad_order = match pick!(args, file, quad_order) {
            Some(q) => Some(q),
            None => env_quad_order()?,
        };
        if let Some(q) = quad_order {
            at_least("quad-order", q, 8)?;
        }
        let lambda = pick!(args, file, lambda).map(|l| positive("lambda", l)).transpose()?;
        let range = match (pick!(args, file, lambda_min), pick!(args, file, lambda_max)) {
            (Some(lo), Some(hi)) => {
                positive("lambda-min", lo)?;
                positive("lambda-max", hi)?;
                if !(lo < hi) {
                    return Err(Error::invalid(format!("empty lambda range [{lo}, {hi}]")));
                }
                let steps = at_least("steps", pick!(args, file, steps).unwrap_or(20), 1)?;
                Some((lo, hi, steps))
            }
            (None, None) => None,
            _ => return Err(Error::invalid("--lambda-min and --lambda-max go together")),
        };

        let coeff_method = match (command, method.as_deref()) {
            ("coeffs", None) => CoeffMethod::Both,
            ("coeffs", Some(m)) => CoeffMethod::from_str(m, true)
                .map_err(|_| Error::invalid(format!("unknown coefficient method `{m}`")))?,
            _ => CoeffMethod::Both,
        };
        let solve_method = match (command, method.as_deref()) {
            ("coeffs", _) | (_, None) => SolveMethod::Newton,
            (_, Some(m)) => {
                SolveMethod::from_str(m, true).map_err(|_| Error::invalid(format!("unknown solve method `{m}`")))?
            }
        };

        let cfg = RunConfig {
            dim: pick!(args, file, dim).unwrap_or(3),
            n_max: at_least("nmax", pick!(args, file, nmax).unwrap_or(16), 1)?,
            lambda,
            lambda_range: range,
            quad_order,
            tol: positive("tol", pick!(args, file, tol).unwrap_or(crate::solver::DEFAULT_TOL))?,
            max_iter: at_least(
                "max-iter",
                pick!(args, file, max_iter).unwrap_or(crate::solver::DEFAULT_MAX_ITER),
                1,
            )?,
            seed: pick!(args, file, seed).unwrap_or(0),
            output: pick!(args, file, output),
            format: pick!(args, file, format).unwrap_or(default_format),
            kernel: pick!(args, file, kernel),
            kernel_out: pick!(args, file, kernel_out),
            coeff_method,
            solve_method,
            init_mode: at_least("init-mode", pick!(args, file, init_mode).unwrap_or(1), 1)?,
            init_amp: pick!(args, file, init_amp).unwrap_or(0.0),
            relaxation: pick!(args, file, relaxation).unwrap_or(1.0),
            starts: at_least("starts", pick!(args, file, starts).unwrap_or(50), 1)?,
            truncations: pick!(args, file, truncations).unwrap_or_else(|| vec![8, 12, 16]),
            stability: pick!(args, file, stability).unwrap_or(false),
            grid: pick!(args, file, grid).unwrap_or(128),
            dt: pick!(args, file, dt).map(|v| positive("dt", v)).transpose()?,
            t_max: positive("t-max", pick!(args, file, t_max).unwrap_or(50.0))?,
            perturb_mode: at_least("perturb-mode", pick!(args, file, perturb_mode).unwrap_or(1), 1)?,
            perturb_amp: pick!(args, file, perturb_amp).unwrap_or(0.01),
            sample_every: at_least("sample-every", pick!(args, file, sample_every).unwrap_or(1000), 1)?,
        };
        cfg.check(command)?;
        Ok(cfg)
    }

    fn check(&self, command: &str) -> Result<()> {
        crate::polybasis::check_dim(self.dim)?;
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::invalid(format!(
                "--relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if !self.init_amp.is_finite() || !self.perturb_amp.is_finite() {
            return Err(Error::invalid("amplitudes must be finite"));
        }
        let need_lambda = matches!(command, "solve" | "audit-degree" | "evolve");
        if need_lambda && self.lambda.is_none() {
            return Err(Error::invalid(format!("{command} needs --lambda")));
        }
        if command == "sweep" && self.lambda_range.is_none() {
            return Err(Error::invalid("sweep needs --lambda-min and --lambda-max"));
        }
        if command == "audit-degree" {
            if self.truncations.is_empty() || self.truncations.contains(&0) {
                return Err(Error::invalid("--truncations must be positive"));
            }
            let top = *self.truncations.iter().max().expect("nonempty");
            if top > self.n_max {
                return Err(Error::invalid(format!(
                    "truncation {top} exceeds --nmax {}",
                    self.n_max
                )));
            }
        }
        if command == "solve" && self.init_mode > self.n_max {
            return Err(Error::invalid(format!(
                "--init-mode {} exceeds --nmax {}",
                self.init_mode, self.n_max
            )));
        }
        if command == "evolve" {
            if self.grid < crate::dynamics::MIN_GRID_POINTS {
                return Err(Error::Resolution {
                    points: self.grid,
                    min: crate::dynamics::MIN_GRID_POINTS,
                });
            }
            if self.perturb_mode > self.n_max.max(1) * 4 {
                return Err(Error::invalid("--perturb-mode is unreasonably large"));
            }
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            method: match self.solve_method {
                SolveMethod::Newton => Method::Newton,
                SolveMethod::Picard => Method::Picard,
            },
            tol: self.tol,
            max_iter: self.max_iter,
            relaxation: self.relaxation,
        }
    }

    fn model(&self, spec: &KernelSpec) -> Result<ZonalModel> {
        match self.quad_order {
            Some(q) => ZonalModel::with_order(spec, q),
            None => ZonalModel::new(spec),
        }
    }
}

/// A cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) | Cell::Missing => Value::Null,
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<Option<i8>> for Cell {
    fn from(v: Option<i8>) -> Self {
        v.map_or(Cell::Missing, |i| Cell::Int(i as i64))
    }
}

/// Named columns of uniform rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV with a header row, 17 significant digits, LF line endings.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Array of row objects keyed by column name.
    pub fn to_json_value(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let mut m = Map::new();
                    for (c, v) in self.columns.iter().zip(row) {
                        m.insert(c.clone(), v.json());
                    }
                    Value::Object(m)
                })
                .collect(),
        )
    }
}

/// Command output: a table, optionally with a richer JSON document.
#[derive(Debug, Clone)]
pub struct Records {
    pub table: Table,
    pub json: Option<Value>,
}

/// Records plus a failure that still leaves them worth writing, such as an
/// unconverged solve.
#[derive(Debug)]
pub struct Outcome {
    pub records: Records,
    pub failure: Option<Error>,
}

impl From<Records> for Outcome {
    fn from(records: Records) -> Self {
        Outcome { records, failure: None }
    }
}

impl From<Table> for Records {
    fn from(table: Table) -> Self {
        Records { table, json: None }
    }
}

fn render(records: &Records, format: Format) -> Result<String> {
    if records.table.rows.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    match format {
        Format::Csv => records.table.to_csv(),
        Format::Json => {
            let v = records.json.clone().unwrap_or_else(|| records.table.to_json_value());
            let mut s = serde_json::to_string_pretty(&v)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Writes `records` to `path` (or standard output).
pub fn emit_table(records: &Records, path: Option<&Path>, format: Format) -> Result<()> {
    let text = render(records, format)?;
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_kernel(cfg: &RunConfig) -> Result<KernelSpec> {
    let spec = match &cfg.kernel {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::invalid(format!("cannot read kernel {}: {e}", path.display())))?;
            let spec = KernelSpec::from_json(&text)?;
            if spec.dim() != cfg.dim || spec.n_max() < cfg.n_max {
                return Err(Error::invalid(format!(
                    "kernel file has D = {}, N = {} but D = {}, N = {} was requested",
                    spec.dim(),
                    spec.n_max(),
                    cfg.dim,
                    cfg.n_max
                )));
            }
            spec.truncated(cfg.n_max)?
        }
        None => build_kernel_spec_with_order(
            cfg.dim,
            cfg.n_max,
            KernelSource::OnsagerRecurrence,
            None,
            true,
            cfg.quad_order,
        )?,
    };
    if let Some(out) = &cfg.kernel_out {
        fs::write(out, spec.to_json()? + "\n")?;
    }
    Ok(spec)
}

fn mode_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn cmd_coeffs(cfg: &RunConfig) -> Result<Records> {
    let order = |n: usize| cfg.quad_order.unwrap_or_else(|| crate::kernel::coeff_order(cfg.dim, n));
    let quad = || -> Result<Vec<f64>> {
        (1..=cfg.n_max)
            .map(|n| coeff_by_quadrature_with(cfg.dim, n, order(n), QUADRATURE_TOL))
            .collect()
    };
    let rec = || -> Result<Vec<f64>> {
        let k1 = coeff_by_quadrature_with(cfg.dim, 1, order(1), QUADRATURE_TOL)?;
        coeff_by_recurrence(cfg.dim, k1, cfg.n_max)
    };
    let mut table;
    match cfg.coeff_method {
        CoeffMethod::Quadrature => {
            table = Table::new(["n", "k_quadrature"]);
            for (i, k) in quad()?.into_iter().enumerate() {
                table.push(vec![(i + 1).into(), k.into()]);
            }
        }
        CoeffMethod::Recurrence => {
            table = Table::new(["n", "k_recurrence"]);
            for (i, k) in rec()?.into_iter().enumerate() {
                table.push(vec![(i + 1).into(), k.into()]);
            }
        }
        CoeffMethod::Both => {
            table = Table::new(["n", "k_quadrature", "k_recurrence", "rel_diff"]);
            for (i, (q, r)) in quad()?.into_iter().zip(rec()?).enumerate() {
                table.push(vec![
                    (i + 1).into(),
                    q.into(),
                    r.into(),
                    ((q - r).abs() / q.abs()).into(),
                ]);
            }
        }
    }
    if cfg.kernel_out.is_some() {
        load_kernel(cfg)?;
    }
    Ok(table.into())
}

fn cmd_thresholds(cfg: &RunConfig) -> Result<Records> {
    let spec = load_kernel(cfg)?;
    let t = uniqueness_thresholds(&spec)?;
    let mut cols: Vec<String> = [
        "dim",
        "n_max",
        "lambda_tilde0",
        "lambda_0_lower",
        "lambda_0_upper",
        "lambda_contraction",
        "partial_sum",
        "tail_bound",
        "sup_norm_khat",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(mode_columns("lambda_", t.lambda_crit.len()));
    let mut row: Vec<Cell> = vec![
        (t.dim as usize).into(),
        t.n_max.into(),
        t.lambda_tilde0.into(),
        t.lambda_0[0].into(),
        t.lambda_0[1].into(),
        t.lambda_contraction.into(),
        t.partial_sum.into(),
        t.tail_bound.into(),
        t.sup_norm_khat.into(),
    ];
    row.extend(t.lambda_crit.iter().map(|&l| Cell::from(l)));
    let mut table = Table::new(cols);
    table.push(row);
    let json = table.to_json_value()[0].clone();
    Ok(Records {
        table,
        json: Some(json),
    })
}

fn report_row(r: &SolutionReport, stable: Option<Stability>) -> Vec<Cell> {
    let mut row: Vec<Cell> = vec![r.lambda.into()];
    row.extend(r.modes.iter().map(|&c| Cell::from(c)));
    row.push(r.residual_norm.into());
    row.push(r.index.into());
    row.push(match stable {
        Some(s) => Cell::Bool(s == Stability::Stable),
        None => Cell::Missing,
    });
    row
}

fn solution_columns(n: usize, lead: &[&str]) -> Vec<String> {
    let mut cols: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    cols.extend(mode_columns("u_", n));
    cols.extend(["residual", "index", "stable"].iter().map(|s| s.to_string()));
    cols
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let spec = load_kernel(cfg)?;
    let model = cfg.model(&spec)?;
    let lambda = cfg.lambda.expect("validated");
    let init = AxisymState::mode(cfg.dim, cfg.n_max, cfg.init_mode, cfg.init_amp)?;
    let r = model.solve(lambda, &init, &cfg.solve_options())?;
    let mut table = Table::new(
        [
            "lambda",
            "dim",
            "residual_norm",
            "iterations",
            "method",
            "converged",
            "index",
            "sup_norm_u",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain(mode_columns("u_", cfg.n_max)),
    );
    let mut row: Vec<Cell> = vec![
        r.lambda.into(),
        (r.dim as usize).into(),
        r.residual_norm.into(),
        r.iterations.into(),
        Cell::Text(r.method.to_string()),
        r.converged.into(),
        r.index.into(),
        r.sup_norm_u.into(),
    ];
    row.extend(r.modes.iter().map(|&c| Cell::from(c)));
    table.push(row);
    let failure = (!r.converged).then_some(Error::NotConverged {
        lambda,
        residual: r.residual_norm,
        iterations: r.iterations,
    });
    Ok(Outcome {
        records: Records {
            table,
            json: Some(serde_json::to_value(&r)?),
        },
        failure,
    })
}

/// Solutions at one λ with their stability, when requested.
type Census = Vec<(SolutionReport, Option<Stability>)>;

fn cmd_sweep(cfg: &RunConfig) -> Result<Records> {
    let spec = load_kernel(cfg)?;
    let model = cfg.model(&spec)?;
    let (lo, hi, steps) = cfg.lambda_range.expect("validated");
    let lambdas: Vec<f64> = if steps == 1 {
        vec![lo]
    } else {
        (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let opts = cfg.solve_options();
    let censuses: Vec<Result<Census>> = lambdas
        .par_iter()
        .map(|&l| {
            let found = multistart_with(&model, l, cfg.starts, cfg.seed, &opts)?;
            Ok(found
                .into_iter()
                .map(|r| {
                    let s = if cfg.stability {
                        classify_stability(l, &r, &spec).ok()
                    } else {
                        None
                    };
                    (r, s)
                })
                .collect())
        })
        .collect();
    let mut table = Table::new(solution_columns(cfg.n_max, &["lambda", "branch"]));
    for census in censuses {
        for (id, (r, s)) in census?.iter().enumerate() {
            let mut row = report_row(r, *s);
            row.insert(1, id.into());
            table.push(row);
        }
    }
    Ok(table.into())
}

fn cmd_audit(cfg: &RunConfig) -> Result<Records> {
    let spec = load_kernel(cfg)?;
    let lambda = cfg.lambda.expect("validated");
    let report = degree_audit_with(
        &spec,
        lambda,
        cfg.starts,
        cfg.seed,
        &cfg.truncations,
        &cfg.solve_options(),
    )?;
    let n = *report.truncations_checked.last().expect("nonempty");
    let mut table = Table::new(solution_columns(n, &["lambda"]));
    let trunc = spec.truncated(n)?;
    for r in &report.solutions {
        let s = if cfg.stability {
            classify_stability(lambda, r, &trunc).ok()
        } else {
            None
        };
        table.push(report_row(r, s));
    }
    Ok(Records {
        table,
        json: Some(serde_json::to_value(&report)?),
    })
}

fn cmd_evolve(cfg: &RunConfig) -> Result<Records> {
    let spec = load_kernel(cfg)?;
    let lambda = cfg.lambda.expect("validated");
    let grid = make_grid(cfg.dim, cfg.grid)?;
    let flow = Flow::new(&spec, lambda, &grid)?;
    let dt = cfg.dt.unwrap_or_else(|| flow.step_limit());
    let f0 = grid.perturbed(&grid.uniform(), cfg.perturb_mode, cfg.perturb_amp)?;
    let opts = EvolveOptions {
        sample_every: cfg.sample_every,
        ..EvolveOptions::new(dt, cfg.t_max)
    };
    let traj = evolve_with(&flow, &f0, &opts)?;
    let (header, rows) = traj.table();
    let mut table = Table::new(header);
    for r in rows {
        table.push(r.into_iter().map(Cell::from).collect());
    }
    Ok(table.into())
}

/// Runs one command with a resolved configuration.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Coeffs(_) => cmd_coeffs(cfg).map(Outcome::from),
        Command::Thresholds(_) => cmd_thresholds(cfg).map(Outcome::from),
        Command::Solve(_) => cmd_solve(cfg),
        Command::Sweep(_) => cmd_sweep(cfg).map(Outcome::from),
        Command::AuditDegree(_) => cmd_audit(cfg).map(Outcome::from),
        Command::Evolve(_) => cmd_evolve(cfg).map(Outcome::from),
    }
}

/// Exit code for an error: 2 for bad input, 3 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::Domain { .. }
        | Error::Validation { .. }
        | Error::Resolution { .. }
        | Error::StepSize { .. }
        | Error::NearCritical { .. } => EXIT_VALIDATION,
        _ => EXIT_NUMERICAL,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Domain { .. } => "domain",
        Error::Overflow(_) => "overflow",
        Error::NonFinite(_) => "non-finite",
        Error::Accuracy { .. } => "accuracy",
        Error::Validation { .. } => "validation",
        Error::SingularLinearization { .. } => "singular-linearization",
        Error::NotConverged { .. } => "not-converged",
        Error::DegenerateIndex { .. } => "degenerate-index",
        Error::UndefinedCriticalValue { .. } => "undefined-critical-value",
        Error::ThresholdUndefined(_) => "threshold-undefined",
        Error::NearCritical { .. } => "near-critical",
        Error::InconclusiveAudit { .. } => "inconclusive-audit",
        Error::BranchNotFound { .. } => "branch-not-found",
        Error::MarginalStability { .. } => "marginal-stability",
        Error::StepSize { .. } => "step-size",
        Error::Resolution { .. } => "resolution",
        Error::Divergence { .. } => "divergence",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Machine-readable error record written on numerical failures.
pub fn error_record(command: &str, err: &Error) -> Value {
    json!({
        "command": command,
        "error": error_kind(err),
        "exit_code": exit_code(err),
        "message": err.to_string(),
    })
}

fn error_path(output: Option<&Path>) -> Option<PathBuf> {
    output.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".error.json");
        PathBuf::from(s)
    })
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidSubcommand
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = cli.command.parts();
    let cfg = match RunConfig::resolve(name, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("onsager {name}: {e}");
            return EXIT_VALIDATION;
        }
    };
    let result = run(&cli.command, &cfg).and_then(|out| {
        emit_table(&out.records, cfg.output.as_deref(), cfg.format)?;
        out.failure.map_or(Ok(()), Err)
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("onsager {name}: {e}");
            if code == EXIT_NUMERICAL {
                let record = serde_json::to_string_pretty(&error_record(name, &e)).unwrap_or_default();
                match error_path(cfg.output.as_deref()) {
                    Some(p) => {
                        if fs::write(&p, record + "\n").is_err() {
                            eprintln!("onsager {name}: could not write error record to {}", p.display());
                        }
                    }
                    None => eprintln!("{record}"),
                }
            }
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("onsager").chain(list.iter().copied())).unwrap()
    }

    fn resolved(list: &[&str]) -> Result<RunConfig> {
        let cli = args(list);
        let (name, a) = cli.command.parts();
        RunConfig::resolve(name, a)
    }

    #[test]
    fn defaults_are_deterministic() {
        let cfg = resolved(&["thresholds"]).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.dim, 3);
        assert_eq!(cfg.format, Format::Json);
        assert_eq!(resolved(&["coeffs"]).unwrap().format, Format::Csv);
    }

    #[test]
    fn validation_errors() {
        assert!(resolved(&["solve"]).is_err());
        assert!(resolved(&["solve", "--lambda=-1"]).is_err());
        assert!(resolved(&["sweep", "--lambda-min", "3", "--lambda-max", "2"]).is_err());
        assert!(resolved(&["coeffs", "--dim", "2"]).is_err());
        assert!(resolved(&["coeffs", "--method", "magic"]).is_err());
        assert!(resolved(&["audit-degree", "--lambda", "5", "--nmax", "8"]).is_err());
        assert!(resolved(&["evolve", "--lambda", "5", "--grid", "8"]).is_err());
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"dim": 4, "nmax": 6, "lambda": 2.5, "method": "picard"}"#).unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolved(&["solve", "--config", p, "--nmax", "9"]).unwrap();
        assert_eq!(cfg.dim, 4);
        assert_eq!(cfg.n_max, 9);
        assert_eq!(cfg.lambda, Some(2.5));
        assert_eq!(cfg.solve_method, SolveMethod::Picard);
        fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        assert!(resolved(&["solve", "--config", p, "--lambda", "1"]).is_err());
    }

    #[test]
    fn csv_and_json_agree() {
        let mut t = Table::new(["n", "x", "ok"]);
        t.push(vec![1usize.into(), (1.0f64 / 3.0).into(), true.into()]);
        t.push(vec![2usize.into(), 2.5e-300.into(), false.into()]);
        let csv_text = t.to_csv().unwrap();
        assert!(csv_text.starts_with("n,x,ok\n"));
        assert!(!csv_text.contains('\r'));
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let json = t.to_json_value();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.unwrap();
            let x: f64 = rec[1].parse().unwrap();
            assert_eq!(x, json[i]["x"].as_f64().unwrap());
        }
        let empty = Records::from(Table::new(["n"]));
        assert!(render(&empty, Format::Csv).is_err());
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        assert_eq!(main_with_args(["onsager", "frobnicate"]), EXIT_USAGE);
        assert_eq!(main_with_args(["onsager"]), EXIT_USAGE);
        assert_eq!(
            main_with_args(["onsager", "solve", "--lambda", "nan?"]),
            EXIT_VALIDATION
        );
    }
}
