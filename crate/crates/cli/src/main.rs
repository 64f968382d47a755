use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use iici_core::ci::Geometry;
use iici_core::estimators::{
    constraint_from_spec, iv_gmm_with_endogeneity, ols, Dataset, EstimationMeta, GmmSpec, OlsSpec, VarianceSpec,
};
use iici_core::io::{estimate_to_json, read_estimate};
use iici_core::lr::{lr_interval, lrci, sclr_critical_value};
use iici_core::mc::{grid, panel_a_curves, simulate_grid, write_coverage_csv, write_panel_csv, McConfig};
use iici_core::verify::{self, Check, VerifyConfig};
use iici_core::{validate, CiKind, CiResult, EstimateSummary, Level, LinearConstraint, Problem};

mod report;

use report::{Format, Row};

#[derive(Parser, Debug)]
#[command(name = "iici", version, about = "Confidence intervals under an inequality on nuisance parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Intervals for the target parameter of a saved estimate.
    Compute(ComputeArgs),
    /// Monte Carlo coverage and average length over a grid of true slackness values.
    Simulate(SimulateArgs),
    /// Run the oracle checks.
    Verify(VerifyArgs),
    /// Least squares with robust or clustered variance.
    Ols(OlsArgs),
    /// IV-GMM with endogeneity parameters.
    Iv(IvArgs),
}

#[derive(Args, Debug, Clone)]
struct IntervalOpts {
    /// Miscoverage level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Comma-separated list of UCI, EICI, IICI, IITCI, LRCI, SCLRCI.
    #[arg(long, value_delimiter = ',', default_value = "UCI,EICI,IICI,IITCI,LRCI,SCLRCI")]
    methods: Vec<String>,
    /// Draws for the size-corrected critical value.
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, env = "IICI_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
struct ComputeArgs {
    /// Estimate file (JSON with names, theta_hat, v_hat, n).
    #[arg(long)]
    estimate: PathBuf,
    /// Restriction such as "gamma_x <= 0" or "beta_cash >= 0".
    #[arg(long)]
    constraint: String,
    /// Parameter of interest (defaults to the file's target or the first parameter).
    #[arg(long)]
    target: Option<String>,
    #[command(flatten)]
    opts: IntervalOpts,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Correlation between the target estimate and the constrained estimate.
    #[arg(long, default_value_t = 0.7, allow_hyphen_values = true)]
    rho: f64,
    /// True values of the second parameter, lo:step:hi.
    #[arg(long, default_value = "-5:0.1:0", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, env = "IICI_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "UCI,EICI,IICI,IITCI,LRCI,SCLRCI")]
    methods: Vec<String>,
    /// Draws for the size-corrected critical value.
    #[arg(long, default_value_t = 100_000)]
    sclr_reps: usize,
    /// Also write endpoint curves at a target estimate of 0 over this lo:step:hi grid.
    #[arg(long, allow_hyphen_values = true)]
    panel_a: Option<String>,
    #[arg(long, env = "IICI_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Checks to run (acceptance, rotation, reduction, lemma2, lemma3, stable-c); all by default.
    #[arg(long = "check", value_delimiter = ',')]
    checks: Vec<String>,
    #[arg(long, env = "IICI_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Smaller grids and fewer instances.
    #[arg(long)]
    quick: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct EstimationOpts {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Cluster identifier column.
    #[arg(long)]
    cluster: Option<String>,
    /// Apply n/(n-k) or G/(G-1).
    #[arg(long)]
    small_sample: bool,
    /// Parameter of interest written into the estimate file.
    #[arg(long)]
    target: Option<String>,
    /// Restriction; when given, intervals are printed after estimation.
    #[arg(long)]
    constraint: Option<String>,
    /// Directory for estimate.json (stdout when absent).
    #[arg(long, env = "IICI_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    intervals: IntervalOpts,
}

#[derive(Args, Debug)]
struct OlsArgs {
    #[arg(long)]
    y: String,
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    #[arg(long)]
    intercept: bool,
    #[command(flatten)]
    est: EstimationOpts,
}

#[derive(Args, Debug)]
struct IvArgs {
    #[arg(long)]
    y: String,
    /// Endogenous regressors.
    #[arg(long, value_delimiter = ',', required = true)]
    endog: Vec<String>,
    /// Exogenous regressors.
    #[arg(long, value_delimiter = ',')]
    exog: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    instruments: Vec<String>,
    /// Endogenous regressors that get a gamma parameter (all by default).
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<String>,
    #[arg(long)]
    no_intercept: bool,
    #[command(flatten)]
    est: EstimationOpts,
}

/// Error that maps to exit code 1 rather than 2.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compute(a) => compute(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Ols(a) => ols_cmd(a),
        Command::Iv(a) => iv_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<CiKind>> {
    let mut out = Vec::new();
    for name in names.iter().filter(|s| !s.trim().is_empty()) {
        let kind: CiKind = name.parse()?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        bail!("no methods selected");
    }
    Ok(out)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, step, hi] = parts.as_slice() else { bail!("grid must look like lo:step:hi, got `{spec}`") };
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}` in grid `{spec}`"));
    Ok(grid(num(lo)?, num(step)?, num(hi)?)?)
}

fn interval_rows(problem: &Problem, opts: &IntervalOpts) -> Result<Vec<Row>> {
    let level = Level::new(opts.alpha)?;
    let methods = parse_methods(&opts.methods)?;
    let geo = Geometry::new(problem, level);
    let est = problem.estimate();
    let g = geo.g(est.theta_hat());
    let uci_len = 2.0 * geo.s_hat() * level.z();
    let mut rows = Vec::new();
    for kind in methods {
        let ci: CiResult = match kind {
            CiKind::Lrci => lrci(problem, level)?,
            CiKind::Sclrci => {
                let crit = sclr_critical_value(problem, level, opts.reps, opts.seed)?;
                lr_interval(problem, level, kind, crit.value)?
            }
            _ => geo.interval(kind, est.target_hat(), g)?,
        };
        rows.push(Row::new(&ci, uci_len, &geo, g));
    }
    Ok(rows)
}

fn load_problem(path: &Path, constraint: &str, target: Option<&str>) -> Result<Problem> {
    let (mut est, _) = read_estimate(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(t) = target {
        let idx = est.index_of(t).ok_or_else(|| iici_core::Error::UnknownParameter(t.to_string()))?;
        est = est.with_target(idx)?;
    }
    build_problem(&est, constraint)
}

fn build_problem(est: &EstimateSummary, constraint: &str) -> Result<Problem> {
    let con: LinearConstraint = constraint_from_spec(constraint, est)?;
    Ok(validate(est, &con)?)
}

fn compute(args: ComputeArgs) -> Result<()> {
    let problem = load_problem(&args.estimate, &args.constraint, args.target.as_deref())?;
    let rows = interval_rows(&problem, &args.opts)?;
    let est = problem.estimate();
    print!("{}", report::render(&rows, args.opts.format, &est.names()[est.target()]));
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let mut config = McConfig::with_correlation(args.rho);
    config.theta2_grid = parse_grid(&args.grid)?;
    config.reps = args.reps;
    config.alpha = args.alpha;
    config.seed = args.seed;
    config.methods = methods.clone();
    config.sclr_reps = args.sclr_reps;
    let out = simulate_grid(&config)?;
    let files = write_coverage_csv(&args.out, &out, &methods)?;
    if let Some(spec) = &args.panel_a {
        let curves = panel_a_curves(&config, 0.0, &parse_grid(spec)?)?;
        write_panel_csv(&args.out, &curves)?;
    }
    for f in &files {
        println!("{}", f.display());
    }
    if let Some(c) = out.sclr_critical {
        eprintln!("size-corrected critical value {:.6} (simulated {:.6}, chi2 {:.6})", c.value, c.simulated, c.chi2);
    }
    if out.failures > 0 {
        return Err(CheckFailed(format!("{} draws produced non-finite endpoints", out.failures)).into());
    }
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Result<()> {
    let checks = if args.checks.is_empty() {
        Check::ALL.to_vec()
    } else {
        args.checks
            .iter()
            .map(|c| Check::parse(c).with_context(|| format!("unknown check `{c}`")))
            .collect::<Result<Vec<_>>>()?
    };
    let mut cfg = VerifyConfig { alpha: args.alpha, ..VerifyConfig::default() };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.quick {
        cfg.grid_points = 61;
        cfg.canonical_instances = 6;
        cfg.reduction_instances = 12;
        cfg.reduction_draws = 500;
    }
    let reports = verify::run(&checks, &cfg)?;
    print!("{}", report::render_checks(&reports, args.format));
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CheckFailed(format!("failed checks: {}", failed.join(", "))).into());
    }
    Ok(())
}

fn variance(opts: &EstimationOpts) -> VarianceSpec {
    VarianceSpec { cluster: opts.cluster.clone(), small_sample: opts.small_sample }
}

fn finish_estimation(est: EstimateSummary, meta: &EstimationMeta, opts: &EstimationOpts) -> Result<()> {
    let est = match &opts.target {
        Some(t) => {
            let idx = est.index_of(t).ok_or_else(|| iici_core::Error::UnknownParameter(t.clone()))?;
            est.with_target(idx)?
        }
        None => est,
    };
    for w in &meta.warnings {
        eprintln!("warning: {w}");
    }
    let json = estimate_to_json(&est, Some(serde_json::to_value(meta)?));
    match &opts.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("estimate.json");
            std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
            eprintln!("{}", path.display());
        }
        None => println!("{json}"),
    }
    if let Some(spec) = &opts.constraint {
        let problem = build_problem(&est, spec)?;
        let rows = interval_rows(&problem, &opts.intervals)?;
        print!("{}", report::render(&rows, opts.intervals.format, &est.names()[est.target()]));
    }
    Ok(())
}

fn ols_cmd(args: OlsArgs) -> Result<()> {
    let data = Dataset::from_path(&args.est.data)?;
    let spec = OlsSpec {
        dependent: args.y.clone(),
        regressors: args.x.clone(),
        intercept: args.intercept,
        variance: variance(&args.est),
    };
    let fit = ols(&data, &spec)?;
    let target = args.est.target.clone().unwrap_or_else(|| fit.names[0].clone());
    let est = fit.estimate(&target)?;
    finish_estimation(est, &fit.meta, &args.est)
}

fn iv_cmd(args: IvArgs) -> Result<()> {
    let data = Dataset::from_path(&args.est.data)?;
    let spec = GmmSpec {
        dependent: args.y.clone(),
        endogenous: args.endog.clone(),
        exogenous: args.exog.clone(),
        intercept: !args.no_intercept,
        instruments: args.instruments.clone(),
        endogeneity_targets: if args.gamma.is_empty() { args.endog.clone() } else { args.gamma.clone() },
        variance: variance(&args.est),
    };
    let fit = iv_gmm_with_endogeneity(&data, &spec)?;
    let target = args.est.target.clone().unwrap_or_else(|| fit.names[0].clone());
    let est = fit.estimate(&target)?;
    finish_estimation(est, &fit.meta, &args.est)
}
