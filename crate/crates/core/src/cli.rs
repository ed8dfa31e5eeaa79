//! The `unbiased-iv` command line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{self, IvDataset};
use crate::error::{Error, Result};
use crate::mc::StreamKey;
use crate::multi::{self, WeightSpec};
use crate::normal;
use crate::risk;
use crate::simulation::{self, Estimator, GridSpec1, MultiEstimator, SingleRow};
use crate::single::{self, SetKind};
use crate::stats::{InstrumentBlock, ReducedFormStats};

pub const SINGLE_SCHEMA: &str = "#schema=unbiased-iv/simulate-single/v1";
pub const GRID_SCHEMA: &str = "#schema=unbiased-iv/grid-bias/v1";
pub const BOUND_SCHEMA: &str = "#schema=unbiased-iv/bound/v1";

/// Split draws for estimates from data.
pub const DEFAULT_DATA_ZETA_DRAWS: usize = 100_000;
/// Split draws per outer draw in simulations.
pub const DEFAULT_SIM_ZETA_DRAWS: usize = 1_000;

#[derive(Debug, Parser)]
#[command(
    name = "unbiased-iv",
    version,
    about = "Unbiased instrumental-variables estimation with a known first-stage sign"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate from a CSV data set.
    Estimate(EstimateArgs),
    /// Monte Carlo study over a canonical single-instrument grid.
    Simulate(SimulateArgs),
    /// Risk lower bound versus Rao–Blackwellized estimators on a multi-instrument design.
    Bound(BoundArgs),
    /// Quadrature bias curves of the unbiased and Fuller estimators.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// CSV with columns y, x, z1..zk and optional w1..wp, cluster.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split draws for the Rao–Blackwellized estimators.
    #[arg(long, default_value_t = DEFAULT_DATA_ZETA_DRAWS)]
    zeta_draws: usize,
    /// Recombination parameter in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    /// zgram, gmm2, or fixed:w1,w2,...
    #[arg(long, default_value = "zgram")]
    weight: String,
    /// Anderson–Rubin confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Column holding cluster ids; a column named `cluster` is used by default.
    #[arg(long)]
    cluster_col: Option<String>,
    /// Do not add an intercept to the controls.
    #[arg(long)]
    no_intercept: bool,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draws per grid point.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    /// Comma-separated first-stage values.
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec1::default().pi_values)]
    pi: Vec<f64>,
    /// Comma-separated correlations in [0, 1).
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec1::default().sigma12_values)]
    sigma12: Vec<f64>,
    /// Gauss–Hermite nodes for the quadrature bias column.
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    /// CSV output path (stdout when omitted); a manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    /// JSON design file.
    #[arg(long, conflicts_with = "input")]
    design: Option<PathBuf>,
    /// Derive the design from a data set (calibrated direction, Z'Z from data).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outer draws per design point.
    #[arg(long, default_value_t = 5_000)]
    draws: usize,
    #[arg(long, default_value_t = DEFAULT_SIM_ZETA_DRAWS)]
    zeta_draws: usize,
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, default_value = "zgram")]
    weight: String,
    #[arg(long)]
    cluster_col: Option<String>,
    #[arg(long)]
    no_intercept: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.16, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0])]
    pi: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 0.95])]
    sigma12: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Weight choice as given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightChoice {
    ZGram,
    Gmm2,
    Fixed(Vec<f64>),
}

impl WeightChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zgram" => Ok(Self::ZGram),
            "gmm2" => Ok(Self::Gmm2),
            _ => {
                let rest = s.strip_prefix("fixed:").ok_or_else(|| {
                    Error::Input(format!("unknown weight '{s}'; use zgram, gmm2 or fixed:w1,w2,..."))
                })?;
                let w = rest
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Input(format!("bad fixed weights '{rest}': {e}")))?;
                Ok(Self::Fixed(w))
            }
        }
    }

    pub fn spec(&self, z_gram: &DMatrix<f64>) -> Result<WeightSpec> {
        match self {
            Self::ZGram => WeightSpec::quadratic(z_gram.clone()),
            Self::Gmm2 => Ok(WeightSpec::GmmTwoStep),
            Self::Fixed(w) => {
                if w.len() != z_gram.nrows() {
                    return Err(Error::Input(format!(
                        "{} fixed weights given for {} instruments",
                        w.len(),
                        z_gram.nrows()
                    )));
                }
                WeightSpec::fixed(DVector::from_column_slice(w))
                    .map_err(|e| Error::Input(e.to_string()))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::ZGram => "zgram".into(),
            Self::Gmm2 => "gmm2".into(),
            Self::Fixed(w) => {
                let parts: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                format!("fixed:{}", parts.join(","))
            }
        }
    }
}

/// Validated settings shared by the commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_path: Option<PathBuf>,
    pub seed: u64,
    pub s_draws: usize,
    pub c: f64,
    pub weight: WeightChoice,
    pub level: f64,
    pub cluster_col: Option<String>,
    pub intercept: bool,
    pub output_path: Option<PathBuf>,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.c) {
            return Err(Error::Input(format!("--c must lie in [0, 1), got {}", self.c)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Input(format!("--level must lie in (0, 1), got {}", self.level)));
        }
        if self.s_draws == 0 {
            return Err(Error::Input("--zeta-draws must be positive".into()));
        }
        Ok(())
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => {
            let cfg = RunConfig {
                input_path: Some(a.input),
                seed: a.seed,
                s_draws: a.zeta_draws,
                c: a.c,
                weight: WeightChoice::parse(&a.weight)?,
                level: a.level,
                cluster_col: a.cluster_col,
                intercept: !a.no_intercept,
                output_path: a.out,
            };
            cmd_estimate(&cfg)
        }
        Command::Simulate(a) => {
            let grid = GridSpec1 { sigma12_values: a.sigma12, pi_values: a.pi };
            grid.validate().map_err(|e| Error::Input(e.to_string()))?;
            if a.draws == 0 {
                return Err(Error::Input("--draws must be positive".into()));
            }
            if a.nodes < 50 {
                return Err(Error::Input("--nodes must be at least 50".into()));
            }
            cmd_simulate(&grid, a.draws, a.seed, a.nodes, a.out.as_deref())
        }
        Command::Bound(a) => {
            let cfg = RunConfig {
                input_path: a.input,
                seed: a.seed,
                s_draws: a.zeta_draws,
                c: a.c,
                weight: WeightChoice::parse(&a.weight)?,
                level: 0.95,
                cluster_col: a.cluster_col,
                intercept: !a.no_intercept,
                output_path: a.out,
            };
            if a.draws < 1000 {
                return Err(Error::Input("--draws must be at least 1000 for the bound".into()));
            }
            let design = match (&a.design, &cfg.input_path) {
                (Some(p), _) => BoundDesign::from_json_file(p)?,
                (None, Some(_)) => design_from_data(&cfg)?,
                (None, None) => {
                    return Err(Error::Input("bound needs --design or --input".into()))
                }
            };
            cmd_bound(&cfg, &design, a.draws)
        }
        Command::Grid(a) => {
            let grid = GridSpec1 { sigma12_values: a.sigma12, pi_values: a.pi };
            grid.validate().map_err(|e| Error::Input(e.to_string()))?;
            if a.nodes < 50 {
                return Err(Error::Input("--nodes must be at least 50".into()));
            }
            cmd_grid(&grid, a.nodes, a.out.as_deref())
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.jsonl");
    PathBuf::from(s)
}

fn write_manifest(out: Option<&Path>, record: &serde_json::Value) -> Result<()> {
    if let Some(p) = out {
        let mut f = BufWriter::new(File::create(manifest_path(p))?);
        writeln!(f, "{record}")?;
        f.flush()?;
    }
    Ok(())
}

fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::WriterBuilder::new().from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("{other:?}")),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- input

/// Reads `y`, `x`, `z1..zk`, optional `w1..wp` and a cluster column.
pub fn read_dataset(path: &Path, cluster_col: Option<&str>, intercept: bool) -> Result<IvDataset> {
    let file = File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Input(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::Input(format!("missing required column '{name}'")))
    };
    let iy = need("y")?;
    let ix = need("x")?;
    let numbered = |prefix: char| -> Result<Vec<usize>> {
        let mut found: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(j, h)| {
                h.strip_prefix(prefix)
                    .and_then(|n| n.parse::<usize>().ok())
                    .map(|n| (n, j))
            })
            .collect();
        found.sort();
        for (want, (n, _)) in (1..).zip(&found) {
            if *n != want {
                return Err(Error::Input(format!("missing required column '{prefix}{want}'")));
            }
        }
        Ok(found.into_iter().map(|(_, j)| j).collect())
    };
    let iz = numbered('z')?;
    if iz.is_empty() {
        return Err(Error::Input("missing required column 'z1'".into()));
    }
    let iw = numbered('w')?;
    let icl = match cluster_col {
        Some(name) => Some(need(name)?),
        None => find("cluster"),
    };

    let (k, p) = (iz.len(), iw.len());
    let (mut y, mut x, mut z, mut w, mut cl) = (vec![], vec![], vec![], vec![], vec![]);
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2; // 1-based, after the header line
        let rec = rec.map_err(|e| Error::Input(format!("row {row}: {e}")))?;
        let get = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("");
            if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
                return Err(Error::Input(format!("row {row}: missing value in column '{}'", headers[j])));
            }
            s.parse::<f64>()
                .map_err(|_| Error::Input(format!("row {row}: cannot parse '{s}' in column '{}'", headers[j])))
        };
        y.push(get(iy)?);
        x.push(get(ix)?);
        for &j in &iz {
            z.push(get(j)?);
        }
        for &j in &iw {
            w.push(get(j)?);
        }
        if let Some(j) = icl {
            let s = rec.get(j).unwrap_or("");
            if s.is_empty() {
                return Err(Error::Input(format!("row {row}: missing cluster id")));
            }
            cl.push(s.to_string());
        }
    }
    let t = y.len();
    let z = DMatrix::from_row_slice(t, k, &z);
    let mut controls = DMatrix::from_row_slice(t, p, &w);
    let mut control_names: Vec<String> = iw.iter().map(|&j| headers[j].clone()).collect();
    if intercept {
        controls = controls.insert_column(0, 1.0);
        control_names.insert(0, "intercept".into());
    }
    // Cluster labels may be arbitrary strings; map them to integers in order
    // of first appearance.
    let cluster_ids = icl.map(|_| {
        let mut seen = std::collections::HashMap::new();
        cl.iter()
            .map(|s| {
                let n = seen.len() as i64;
                *seen.entry(s.clone()).or_insert(n)
            })
            .collect()
    });
    let mut ds = IvDataset::new(DVector::from_vec(y), DVector::from_vec(x), z, controls, cluster_ids)?;
    ds.z_names = iz.iter().map(|&j| headers[j].clone()).collect();
    ds.control_names = control_names;
    Ok(ds)
}

// ------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub seed: u64,
    pub s_draws: usize,
    pub c: f64,
    pub weight: WeightChoice,
    pub level: f64,
}

impl From<&RunConfig> for EstimateOptions {
    fn from(c: &RunConfig) -> Self {
        Self { seed: c.seed, s_draws: c.s_draws, c: c.c, weight: c.weight.clone(), level: c.level }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbReport {
    pub value: f64,
    pub mc_std_error: f64,
    pub draws: u64,
    pub degenerate: u64,
}

impl From<multi::RbEstimate> for RbReport {
    fn from(r: multi::RbEstimate) -> Self {
        Self { value: r.value, mc_std_error: r.mc_std_error, draws: r.draws, degenerate: r.degenerate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArReport {
    pub kind: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub level: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n_obs: usize,
    pub k: usize,
    pub covariance: String,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub first_stage_se: Vec<f64>,
    pub first_stage_f: f64,
    pub beta_2sls: f64,
    pub beta_fuller: Option<f64>,
    pub beta_u: Option<f64>,
    pub ar_set: Option<ArReport>,
    pub weight: Option<String>,
    pub c: Option<f64>,
    pub beta_rb: Option<RbReport>,
    pub beta_rb_c: Option<RbReport>,
    pub seed: u64,
}

/// Sufficient statistics, instrument Gram matrix and covariance label.
pub fn fit_dataset(ds: &IvDataset) -> Result<(ReducedFormStats, DMatrix<f64>, &'static str)> {
    let (y, x, z) = covariance::residualize(ds)?;
    let fit = covariance::reduced_form_fit(&y, &x, &z)?;
    let (sigma, label) = match &ds.cluster_ids {
        Some(ids) => (covariance::clustered_vcov(&z, &fit.residuals_u, &fit.residuals_v, ids)?, "clustered"),
        None => (covariance::robust_vcov(&z, &fit.residuals_u, &fit.residuals_v)?, "robust"),
    };
    let stats = fit.stats(sigma)?;
    let z_gram = z.transpose() * &z;
    Ok((stats, (&z_gram + z_gram.transpose()) * 0.5, label))
}

/// First-stage Wald statistic divided by `k`.
pub fn first_stage_f(stats: &ReducedFormStats) -> Result<f64> {
    let s22 = stats.sigma22();
    let sol = crate::linalg::cholesky(&s22, "first-stage covariance")?.solve(stats.xi2());
    Ok(stats.xi2().dot(&sol) / stats.k() as f64)
}

pub fn estimate(ds: &IvDataset, opts: &EstimateOptions) -> Result<EstimateReport> {
    let (stats, z_gram, label) = fit_dataset(ds)?;
    let k = stats.k();
    let beta_2sls = multi::beta_2sls_multi(&stats, &z_gram)?;
    let sigma = stats.sigma();
    let mut report = EstimateReport {
        n_obs: ds.y.len(),
        k,
        covariance: label.into(),
        xi1: stats.xi1().iter().copied().collect(),
        xi2: stats.xi2().iter().copied().collect(),
        sigma: (0..2 * k).map(|r| (0..2 * k).map(|c| sigma[(r, c)]).collect()).collect(),
        first_stage_se: (0..k).map(|i| sigma[(k + i, k + i)].sqrt()).collect(),
        first_stage_f: first_stage_f(&stats)?,
        beta_2sls,
        beta_fuller: None,
        beta_u: None,
        ar_set: None,
        weight: None,
        c: None,
        beta_rb: None,
        beta_rb_c: None,
        seed: opts.seed,
    };
    if k == 1 {
        let b = InstrumentBlock::try_from(&stats)?;
        report.beta_fuller = Some(single::beta_fuller(&b));
        report.beta_u = Some(single::beta_u(&b));
        let set = single::ar_confidence_set(&b, opts.level)?;
        let finite = |v: f64| v.is_finite().then_some(v);
        report.ar_set = Some(ArReport {
            kind: match set.kind {
                SetKind::Interval => "interval",
                SetKind::UnionOfRays => "union_of_rays",
                SetKind::WholeLine => "whole_line",
                SetKind::Empty => "empty",
            }
            .into(),
            lo: finite(set.lo),
            hi: finite(set.hi),
            level: set.level,
            text: set.to_string(),
        });
    } else {
        if !(0.0..1.0).contains(&opts.c) {
            return Err(Error::Input(format!("--c must lie in [0, 1), got {}", opts.c)));
        }
        let spec = opts.weight.spec(&z_gram)?;
        let key = StreamKey::new(opts.seed, 0x4553_5449);
        report.weight = Some(opts.weight.label());
        report.c = Some(opts.c);
        report.beta_rb = Some(multi::beta_rb(&stats, &spec, &z_gram, opts.s_draws, key)?.into());
        report.beta_rb_c =
            Some(multi::beta_rb_c(&stats, &z_gram, opts.c, &spec, opts.s_draws, key)?.into());
    }
    Ok(report)
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let path = cfg
        .input_path
        .as_deref()
        .ok_or_else(|| Error::Input("estimate needs --input".into()))?;
    let ds = read_dataset(path, cfg.cluster_col.as_deref(), cfg.intercept)?;
    let report = estimate(&ds, &cfg.into())?;
    let mut out = open_out(cfg.output_path.as_deref())?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Input(format!("cannot serialize report: {e}")))?;
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

// ------------------------------------------------------------- simulate

pub fn write_single_rows<W: Write>(out: W, rows: &[SingleRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{SINGLE_SCHEMA}")?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(simulation::SINGLE_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.estimator.label().to_string(),
            r.pi.to_string(),
            r.sigma12.to_string(),
            r.expected_f.to_string(),
            r.draws.to_string(),
            opt(r.quad_bias),
            r.median_bias.to_string(),
            r.absdev_q10.to_string(),
            r.absdev_q50.to_string(),
            r.absdev_q90.to_string(),
            r.mad.to_string(),
            opt(r.ks_dominance),
            opt(r.ar_contain_95),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(grid: &GridSpec1, draws: usize, seed: u64, nodes: usize, out: Option<&Path>) -> Result<()> {
    let rows = simulation::run_single_grid(grid, draws, seed, nodes)?;
    write_single_rows(open_out(out)?, &rows)?;
    write_manifest(
        out,
        &serde_json::json!({
            "command": "simulate",
            "schema": SINGLE_SCHEMA.trim_start_matches("#schema="),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "draws": draws,
            "nodes": nodes,
            "pi": grid.pi_values,
            "sigma12": grid.sigma12_values,
            "rows": rows.len(),
        }),
    )
}

// ----------------------------------------------------------------- grid

pub fn cmd_grid(grid: &GridSpec1, nodes: usize, out: Option<&Path>) -> Result<()> {
    let mut o = open_out(out)?;
    writeln!(o, "{GRID_SCHEMA}")?;
    let mut w = csv_writer(o);
    w.write_record(["estimator", "pi", "sigma12", "expected_f", "nodes", "bias"]).map_err(csv_err)?;
    let mut rows = 0;
    for &s in &grid.sigma12_values {
        for &p in &grid.pi_values {
            for est in [Estimator::BetaU, Estimator::Fuller] {
                let bias = if est == Estimator::BetaU && p < simulation::MIN_QUADRATURE_PI {
                    None
                } else {
                    Some(simulation::bias_quadrature(est, p, s, nodes)?)
                };
                w.write_record([
                    est.label().to_string(),
                    p.to_string(),
                    s.to_string(),
                    (1.0 + p * p).to_string(),
                    nodes.to_string(),
                    opt(bias),
                ])
                .map_err(csv_err)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    write_manifest(
        out,
        &serde_json::json!({
            "command": "grid",
            "schema": GRID_SCHEMA.trim_start_matches("#schema="),
            "version": env!("CARGO_PKG_VERSION"),
            "nodes": nodes,
            "pi": grid.pi_values,
            "sigma12": grid.sigma12_values,
            "rows": rows,
        }),
    )
}

// ---------------------------------------------------------------- bound

/// A multi-instrument design as read from JSON. Exactly one of
/// `pi_norm_values` and `expected_f_values` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDesign {
    pub pi_direction: Vec<f64>,
    pub z_gram: Vec<Vec<f64>>,
    #[serde(default)]
    pub pi_norm_values: Option<Vec<f64>>,
    #[serde(default)]
    pub expected_f_values: Option<Vec<f64>>,
    pub sigma_uv_values: Vec<f64>,
}

impl BoundDesign {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("bad design file: {e}")))
    }

    pub fn z_gram_matrix(&self) -> Result<DMatrix<f64>> {
        let k = self.pi_direction.len();
        if k == 0 || self.z_gram.len() != k || self.z_gram.iter().any(|r| r.len() != k) {
            return Err(Error::Input(format!("z_gram must be {k}x{k}")));
        }
        Ok(DMatrix::from_fn(k, k, |r, c| self.z_gram[r][c]))
    }

    /// The `‖π‖` grid, converting mean F values if those were given.
    pub fn pi_norms(&self) -> Result<Vec<f64>> {
        let d = DVector::from_column_slice(&self.pi_direction);
        match (&self.pi_norm_values, &self.expected_f_values) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some(f)) => {
                let zg = self.z_gram_matrix()?;
                f.iter().map(|&t| simulation::pi_norm_for_expected_f(&d, &zg, t)).collect()
            }
            _ => Err(Error::Input(
                "give exactly one of pi_norm_values and expected_f_values".into(),
            )),
        }
    }
}

/// Calibrated positive direction and `Z′Z` from data.
pub fn design_from_data(cfg: &RunConfig) -> Result<BoundDesign> {
    let path = cfg.input_path.as_deref().ok_or_else(|| Error::Input("missing --input".into()))?;
    let ds = read_dataset(path, cfg.cluster_col.as_deref(), cfg.intercept)?;
    let (stats, z_gram, _) = fit_dataset(&ds)?;
    let k = stats.k();
    let se = DVector::from_fn(k, |i, _| stats.sigma()[(k + i, k + i)].sqrt());
    // Calibrate on the negative orthant and flip back to the positive one.
    let neg = covariance::sign_calibrate(&(-stats.xi2()), &se)?;
    let direction: Vec<f64> = neg.iter().map(|v| -v).collect();
    Ok(BoundDesign {
        pi_direction: direction,
        z_gram: (0..k).map(|r| (0..k).map(|c| z_gram[(r, c)]).collect()).collect(),
        pi_norm_values: None,
        expected_f_values: Some(vec![2.0, 5.0, 11.2]),
        sigma_uv_values: vec![0.1, 0.5, 0.95],
    })
}

pub const BOUND_COLUMNS: [&str; 14] = [
    "pi_norm",
    "sigma_uv",
    "expected_f",
    "draws",
    "zeta_draws",
    "bound",
    "bound_se",
    "mad_rb_star",
    "mad_rb_star_se",
    "mad_rb_c",
    "mad_rb_c_se",
    "mad_beta_u",
    "mad_beta_u_se",
    "c",
];

pub fn cmd_bound(cfg: &RunConfig, design: &BoundDesign, draws: usize) -> Result<()> {
    cfg.validate()?;
    let z_gram = design.z_gram_matrix()?;
    let direction = DVector::from_column_slice(&design.pi_direction);
    let norms = design.pi_norms()?;
    let spec = cfg.weight.spec(&z_gram)?;
    let k = direction.len();
    let root = StreamKey::new(cfg.seed, 0x424F_554E);

    let mut o = open_out(cfg.output_path.as_deref())?;
    writeln!(o, "{BOUND_SCHEMA}")?;
    let mut w = csv_writer(o);
    w.write_record(BOUND_COLUMNS).map_err(csv_err)?;
    let mut pi_stars = Vec::new();
    let mut j = 0u64;
    for &s in &design.sigma_uv_values {
        for &n in &norms {
            let sc = simulation::build_multi_design(&direction, &z_gram, n, s, draws, cfg.seed)
                .map_err(|e| Error::Input(e.to_string()))?;
            let key = root.derive(j);
            j += 1;
            let bound = risk::mad_lower_bound(&sc.pi, sc.beta, &sc.sigma, draws, key.derive(0))?;
            let mut ests = vec![
                MultiEstimator::Rb(spec.clone()),
                MultiEstimator::RbC { c: cfg.c, spec: spec.clone() },
            ];
            if k == 1 {
                ests.push(MultiEstimator::BetaW(DVector::from_element(1, 1.0)));
            }
            let res = simulation::multi_study(&sc, &ests, &z_gram, cfg.s_draws, key.derive(1))?;
            let mad_u = (k == 1).then(|| res[2].abs_error);
            w.write_record([
                n.to_string(),
                s.to_string(),
                sc.expected_f()?.to_string(),
                draws.to_string(),
                cfg.s_draws.to_string(),
                bound.value.to_string(),
                bound.std_error.to_string(),
                res[0].abs_error.mean.to_string(),
                res[0].abs_error.std_error().to_string(),
                res[1].abs_error.mean.to_string(),
                res[1].abs_error.std_error().to_string(),
                opt(mad_u.map(|a| a.mean)),
                opt(mad_u.map(|a| a.std_error())),
                cfg.c.to_string(),
            ])
            .map_err(csv_err)?;
            pi_stars.push(sc.pi.iter().copied().collect::<Vec<f64>>());
        }
    }
    w.flush()?;
    write_manifest(
        cfg.output_path.as_deref(),
        &serde_json::json!({
            "command": "bound",
            "schema": BOUND_SCHEMA.trim_start_matches("#schema="),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "draws": draws,
            "zeta_draws": cfg.s_draws,
            "c": cfg.c,
            "weight": cfg.weight.label(),
            "pi_direction": design.pi_direction,
            "sigma_uv": design.sigma_uv_values,
            "pi_star": pi_stars,
        }),
    )
}

/// Convenience for reports: the χ² critical value used for a level.
pub fn ar_critical_value(level: f64) -> Result<f64> {
    normal::chi2_1_quantile(level)
}
