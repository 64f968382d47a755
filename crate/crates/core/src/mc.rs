//! Seeded Monte Carlo coverage study over a grid of true slackness values.
//!
//! Draws are generated in fixed-size chunks. Chunk `c` of grid point `i` uses
//! the ChaCha8 stream `(i + 1) << 32 | c` of the base seed, so results do not
//! depend on how chunks are scheduled across threads. Normal variates come from
//! `rand_distr::StandardNormal` (ziggurat) and are mapped through the Cholesky
//! factor of the covariance. All methods see the same draws.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci::{CiKind, Geometry};
use crate::error::{Error, Result};
use crate::lr::{sclr_critical_value, LrGeometry, SclrCritical};
use crate::model::{validate, EstimateSummary, LinearConstraint, Problem};
use crate::normal::Level;

const CHUNK: usize = 2048;
const CONTAINMENT_TOL: f64 = 1e-12;

/// Independent generator for `(domain, chunk)` under `seed`.
pub fn substream(seed: u64, domain: u32, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 32) | (chunk & 0xFFFF_FFFF));
    rng
}

/// `lo, lo + step, …` up to `hi` inclusive (with a half-step tolerance).
pub fn grid(lo: f64, step: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step > 0.0) || hi < lo {
        return Err(Error::Config(format!("bad grid {lo}:{step}:{hi}")));
    }
    let count = ((hi - lo) / step + 0.5).floor() as usize + 1;
    // round to suppress accumulation noise such as -4.8999999
    Ok((0..count).map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub v: Matrix2<f64>,
    pub constraint: LinearConstraint,
    pub theta2_grid: Vec<f64>,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub methods: Vec<CiKind>,
    /// Draws for the size-corrected critical value.
    pub sclr_reps: usize,
}

impl McConfig {
    pub fn with_correlation(rho: f64) -> Self {
        Self { v: Matrix2::new(1.0, rho, rho, 1.0), ..Self::default() }
    }

    pub fn level(&self) -> Result<Level> {
        Level::new(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.theta2_grid.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.constraint.a().len() != 2 {
            return Err(Error::Dimension("simulation constraint must have two entries".into()));
        }
        if self.v.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        self.level()?;
        self.problem()?;
        Ok(())
    }

    /// The design at `θ̂ = 0` with `n = 1`, target first.
    pub fn problem(&self) -> Result<Problem> {
        let v = DMatrix::from_iterator(2, 2, self.v.iter().copied());
        let est = EstimateSummary::new(DVector::zeros(2), v, 1, 0)?;
        validate(&est, &self.constraint)
    }
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            v: Matrix2::new(1.0, 0.7, 0.7, 1.0),
            constraint: LinearConstraint::from_slice(&[0.0, 1.0], 0.0).expect("nonzero"),
            theta2_grid: grid(-5.0, 0.1, 0.0).expect("valid grid"),
            reps: 100_000,
            alpha: 0.05,
            seed: 42,
            methods: CiKind::ALL.to_vec(),
            sclr_reps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub theta2: f64,
    pub method: CiKind,
    pub cp: f64,
    pub al: f64,
}

/// Draw-by-draw comparisons at one grid point (only counted when the methods involved were run).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedChecks {
    pub iici_longer_than_uci: u64,
    pub iici_outside_iitci: u64,
    pub lrci_outside_sclrci: u64,
}

impl PairedChecks {
    fn add(&mut self, other: &Self) {
        self.iici_longer_than_uci += other.iici_longer_than_uci;
        self.iici_outside_iitci += other.iici_outside_iitci;
        self.lrci_outside_sclrci += other.lrci_outside_sclrci;
    }

    pub fn total(&self) -> u64 {
        self.iici_longer_than_uci + self.iici_outside_iitci + self.lrci_outside_sclrci
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutput {
    pub records: Vec<CoverageRecord>,
    /// Draws where some method produced a non-finite endpoint.
    pub failures: u64,
    pub paired: PairedChecks,
    pub sclr_critical: Option<SclrCritical>,
}

impl McOutput {
    pub fn curve(&self, method: CiKind) -> Vec<CoverageRecord> {
        self.records.iter().filter(|r| r.method == method).copied().collect()
    }

    pub fn at(&self, method: CiKind, theta2: f64) -> Option<CoverageRecord> {
        self.records.iter().find(|r| r.method == method && (r.theta2 - theta2).abs() < 1e-9).copied()
    }
}

/// Evaluates every configured interval from `(θ̂ₜ, g(θ̂))`.
#[derive(Debug, Clone)]
pub struct Evaluator {
    geo: Geometry,
    lr: LrGeometry,
    chi2: f64,
    sclr: Option<SclrCritical>,
}

impl Evaluator {
    pub fn new(config: &McConfig) -> Result<Self> {
        let level = config.level()?;
        let problem = config.problem()?;
        let sclr = if config.methods.contains(&CiKind::Sclrci) {
            Some(sclr_critical_value(&problem, level, config.sclr_reps, config.seed)?)
        } else {
            None
        };
        Ok(Self { geo: Geometry::new(&problem, level), lr: LrGeometry::new(&problem), chi2: level.chi2_1(), sclr })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn bounds(&self, kind: CiKind, target_hat: f64, g: f64) -> (f64, f64) {
        match kind {
            CiKind::Uci => self.geo.uci_bounds(target_hat),
            CiKind::Eici => self.geo.eici_bounds(target_hat, g),
            CiKind::Iici => {
                let (l, u, _) = self.geo.iici_bounds(target_hat, g);
                (l, u)
            }
            CiKind::Iitci => self.geo.iitci_bounds(target_hat, g),
            CiKind::Lrci => self.lr.interval(target_hat, g, self.chi2),
            CiKind::Sclrci => {
                let crit = self.sclr.map(|c| c.value).expect("critical value computed for SCLRCI");
                self.lr.interval(target_hat, g, crit)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Tally {
    covered: Vec<u64>,
    length: Vec<f64>,
    failures: u64,
    paired: PairedChecks,
}

fn position(methods: &[CiKind], kind: CiKind) -> Option<usize> {
    methods.iter().position(|&m| m == kind)
}

fn run_chunk(
    eval: &Evaluator,
    config: &McConfig,
    chol: &Matrix2<f64>,
    point: usize,
    chunk: usize,
    truth: &Vector2<f64>,
) -> Tally {
    let methods = &config.methods;
    let m = methods.len();
    let mut tally = Tally { covered: vec![0; m], length: vec![0.0; m], failures: 0, paired: PairedChecks::default() };
    let idx = [CiKind::Uci, CiKind::Iici, CiKind::Iitci, CiKind::Lrci, CiKind::Sclrci].map(|k| position(methods, k));
    let mut rng = substream(config.seed, point as u32 + 1, chunk as u64);
    let len = CHUNK.min(config.reps - chunk * CHUNK);
    let a = config.constraint.a();
    let b = config.constraint.b();
    let mut bounds = vec![(0.0, 0.0); m];
    for _ in 0..len {
        let e = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let draw = truth + chol * e;
        let g = a[0] * draw[0] + a[1] * draw[1] + b;
        let mut failed = false;
        for (j, &kind) in methods.iter().enumerate() {
            let (l, u) = eval.bounds(kind, draw[0], g);
            if !(l.is_finite() && u.is_finite()) {
                failed = true;
            }
            bounds[j] = (l, u);
            if l <= truth[0] && truth[0] <= u {
                tally.covered[j] += 1;
            }
            tally.length[j] += u - l;
        }
        tally.failures += failed as u64;
        let [uci, iici, iitci, lrci, sclrci] = idx;
        if let (Some(i), Some(u)) = (iici, uci) {
            let (il, iu) = bounds[i];
            let (ul, uu) = bounds[u];
            if iu - il > uu - ul + CONTAINMENT_TOL * (1.0 + (uu - ul)) {
                tally.paired.iici_longer_than_uci += 1;
            }
        }
        if let (Some(i), Some(t)) = (iici, iitci) {
            let (il, iu) = bounds[i];
            let (tl, tu) = bounds[t];
            if il < tl - CONTAINMENT_TOL || iu > tu + CONTAINMENT_TOL {
                tally.paired.iici_outside_iitci += 1;
            }
        }
        if let (Some(l), Some(s)) = (lrci, sclrci) {
            let (ll, lu) = bounds[l];
            let (sl, su) = bounds[s];
            if ll < sl - 1e-9 || lu > su + 1e-9 {
                tally.paired.lrci_outside_sclrci += 1;
            }
        }
    }
    tally
}

/// Coverage probability and average length of each method at each grid value.
/// The true parameter is `(0, θ₂)`; coverage means containing 0.
pub fn simulate_grid(config: &McConfig) -> Result<McOutput> {
    config.validate()?;
    let eval = Evaluator::new(config)?;
    let chol = config.v.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    let chunks = config.reps.div_ceil(CHUNK);
    let jobs: Vec<(usize, usize)> =
        (0..config.theta2_grid.len()).flat_map(|p| (0..chunks).map(move |c| (p, c))).collect();
    let tallies: Vec<Tally> = jobs
        .par_iter()
        .map(|&(p, c)| {
            let truth = Vector2::new(0.0, config.theta2_grid[p]);
            run_chunk(&eval, config, &chol, p, c, &truth)
        })
        .collect();

    let m = config.methods.len();
    let reps = config.reps as f64;
    let mut records = Vec::with_capacity(config.theta2_grid.len() * m);
    let mut failures = 0;
    let mut paired = PairedChecks::default();
    for (p, &theta2) in config.theta2_grid.iter().enumerate() {
        let mut covered = vec![0u64; m];
        let mut length = vec![0.0; m];
        for t in &tallies[p * chunks..(p + 1) * chunks] {
            for j in 0..m {
                covered[j] += t.covered[j];
                length[j] += t.length[j];
            }
            failures += t.failures;
            paired.add(&t.paired);
        }
        for (j, &method) in config.methods.iter().enumerate() {
            records.push(CoverageRecord { theta2, method, cp: covered[j] as f64 / reps, al: length[j] / reps });
        }
    }
    Ok(McOutput { records, failures, paired, sclr_critical: eval.sclr })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelPoint {
    pub theta2: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelCurve {
    pub method: CiKind,
    pub points: Vec<PanelPoint>,
}

/// Interval endpoints as functions of the second estimate, holding the target estimate fixed.
pub fn panel_a_curves(config: &McConfig, theta1_hat: f64, theta2_hat_grid: &[f64]) -> Result<Vec<PanelCurve>> {
    config.validate()?;
    let eval = Evaluator::new(config)?;
    let a = config.constraint.a();
    let b = config.constraint.b();
    Ok(config
        .methods
        .iter()
        .map(|&method| PanelCurve {
            method,
            points: theta2_hat_grid
                .iter()
                .map(|&theta2| {
                    let g = a[0] * theta1_hat + a[1] * theta2 + b;
                    let (lower, upper) = eval.bounds(method, theta1_hat, g);
                    PanelPoint { theta2, lower, upper }
                })
                .collect(),
        })
        .collect())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes `<METHOD>_CP_AL.csv` (header `theta2,CP,AL`) per method into `dir`.
pub fn write_coverage_csv(dir: &Path, output: &McOutput, methods: &[CiKind]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    methods
        .iter()
        .map(|&method| {
            let mut body = String::from("theta2,CP,AL\n");
            for r in output.curve(method) {
                writeln!(body, "{:.6},{:.6},{:.6}", r.theta2, r.cp, r.al).expect("write to string");
            }
            let path = dir.join(format!("{method}_CP_AL.csv"));
            write_file(&path, &body)?;
            Ok(path)
        })
        .collect()
}

/// Writes `<METHOD>.csv` (header `theta2,lower,upper`) per curve into `dir`.
pub fn write_panel_csv(dir: &Path, curves: &[PanelCurve]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    curves
        .iter()
        .map(|curve| {
            let mut body = String::from("theta2,lower,upper\n");
            for p in &curve.points {
                writeln!(body, "{:.6},{:.6},{:.6}", p.theta2, p.lower, p.upper).expect("write to string");
            }
            let path = dir.join(format!("{}.csv", curve.method));
            write_file(&path, &body)?;
            Ok(path)
        })
        .collect()
}
