//! Oracle suites that check the interval engine against the canonical-form
//! characterizations in [`crate::canonical`].
//!
//! Each suite returns a [`CheckReport`] with the worst discrepancy found. The
//! interval under test is injectable so that a deliberately broken variant can
//! be shown to fail.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::canonical::{
    canonicalize, coverage_indicator, decorrelate, lemma2_probability, lemma3_check, normalize, permute_target,
    rescale, rotation_indicator, translate, CanonicalProblem, Instance, Rotation,
};
use crate::ci::{iici, CiResult, Geometry};
use crate::error::Result;
use crate::mc::{grid, substream};
use crate::model::{validate, EstimateSummary, LinearConstraint, Problem};
use crate::normal::Level;

/// Interval under test, as a function of the problem at one draw.
pub type IntervalFn = dyn Fn(&Problem, Level) -> CiResult + Sync;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Largest discrepancy (a count for equivalence checks).
    pub worst: f64,
    pub tolerance: f64,
    pub evaluated: usize,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, worst: f64, tolerance: f64, evaluated: usize, detail: String) -> Self {
        Self { name: name.into(), passed: worst <= tolerance, worst, tolerance, evaluated, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Check {
    Acceptance,
    Rotation,
    Reduction,
    Lemma2,
    Lemma3,
    StableThreshold,
}

impl Check {
    pub const ALL: [Check; 6] =
        [Check::Acceptance, Check::Rotation, Check::Reduction, Check::Lemma2, Check::Lemma3, Check::StableThreshold];

    pub fn as_str(&self) -> &'static str {
        match self {
            Check::Acceptance => "acceptance",
            Check::Rotation => "rotation",
            Check::Reduction => "reduction",
            Check::Lemma2 => "lemma2",
            Check::Lemma3 => "lemma3",
            Check::StableThreshold => "stable-c",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub alpha: f64,
    /// Points per axis of the `[−6, 6]²` grid.
    pub grid_points: usize,
    pub canonical_instances: usize,
    pub reduction_instances: usize,
    pub reduction_draws: usize,
    pub lemma2_cases: usize,
    pub lemma3_instances: usize,
    pub lemma3_grid: usize,
    pub rotation_cases: usize,
    pub threshold_cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            alpha: 0.05,
            grid_points: 201,
            canonical_instances: 20,
            reduction_instances: 100,
            reduction_draws: 10_000,
            lemma2_cases: 100,
            lemma3_instances: 10,
            lemma3_grid: 50,
            rotation_cases: 1000,
            threshold_cases: 1000,
        }
    }
}

const SUITE_ACCEPTANCE: u32 = 1 << 20;
const SUITE_REDUCTION: u32 = 2 << 20;
const SUITE_LEMMA2: u32 = 3 << 20;
const SUITE_LEMMA3: u32 = 4 << 20;
const SUITE_ROTATION: u32 = 5 << 20;
const SUITE_THRESHOLD: u32 = 6 << 20;

/// Random canonical problem; every other instance sits at the boundary (`b = 0`).
pub fn random_canonical(rng: &mut ChaCha8Rng, boundary: bool) -> CanonicalProblem {
    let angle = rng.gen_range(0.02..FRAC_PI_2 - 0.02);
    let b = if boundary { 0.0 } else { -rng.gen_range(0.0..3.0) };
    CanonicalProblem::from_angle(angle, b).expect("angle inside the quarter circle")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random `k`-parameter instance with a feasible truth and a draw from `N(θ₀, V/n)`.
pub fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> (EstimateSummary, LinearConstraint, DVector<f64>) {
    loop {
        let m = DMatrix::from_fn(k, k, |_, _| normal(rng));
        let v = &m * m.transpose() + DMatrix::identity(k, k) * 0.1;
        let n = rng.gen_range(1..200usize);
        let target = rng.gen_range(0..k);
        let a = DVector::from_fn(k, |_, _| normal(rng));
        let truth = DVector::from_fn(k, |_, _| 2.0 * normal(rng));
        let slack = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) * (a.dot(&(&v * &a)) / n as f64).sqrt() };
        let b = -a.dot(&truth) - slack;
        let Ok(con) = LinearConstraint::new(a, b) else { continue };
        let Ok(est) = EstimateSummary::new(truth.clone(), v, n, target) else { continue };
        if validate(&est, &con).is_err() {
            continue;
        }
        let va = est.v_hat() * con.a();
        if va[target].abs() < 1e-6 * est.v_hat().norm() {
            continue;
        }
        return (est, con, truth);
    }
}

fn draw_near(rng: &mut ChaCha8Rng, est: &EstimateSummary, chol: &DMatrix<f64>, truth: &DVector<f64>) -> DVector<f64> {
    let e = DVector::from_fn(est.k(), |_, _| normal(rng));
    truth + chol * e / (est.n() as f64).sqrt()
}

fn engine_iici(problem: &Problem, level: Level) -> CiResult {
    iici(problem, level)
}

/// Grid equivalence of the closed-form acceptance region with `0 ∈ IICI`.
pub fn check_acceptance(cfg: &VerifyConfig, interval: &IntervalFn) -> Result<CheckReport> {
    let level = Level::new(cfg.alpha)?;
    let axis = grid_axis(cfg.grid_points)?;
    let disagreements: usize = (0..cfg.canonical_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, SUITE_ACCEPTANCE, i as u64);
            let canon = random_canonical(&mut rng, i % 2 == 0);
            let mut bad = 0;
            for &t1 in &axis {
                for &t2 in &axis {
                    let th = [t1, t2];
                    let engine = interval(&canon.problem(th), level).contains(0.0);
                    if engine != coverage_indicator(&canon, level, th) {
                        bad += 1;
                    }
                }
            }
            bad
        })
        .sum();
    let evaluated = cfg.canonical_instances * axis.len() * axis.len();
    Ok(CheckReport::new(
        Check::Acceptance.as_str(),
        disagreements as f64,
        0.0,
        evaluated,
        format!("{disagreements} disagreements between the acceptance region and the interval"),
    ))
}

fn grid_axis(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return grid(0.0, 1.0, 0.0);
    }
    Ok((0..points).map(|i| -6.0 + 12.0 * i as f64 / (points - 1) as f64).collect())
}

/// Rotation identities and the band test against the acceptance region at `b = 0`.
pub fn check_rotation(cfg: &VerifyConfig) -> Result<CheckReport> {
    let level = Level::new(cfg.alpha)?;
    let mut rng = substream(cfg.seed, SUITE_ROTATION, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.rotation_cases {
        let canon = random_canonical(&mut rng, true);
        let rot = Rotation::new(canon.a2());
        let (x, y) = (rot.x(), rot.y());
        let sq = rot.omega() * rot.omega() - nalgebra::Matrix2::identity();
        worst = worst
            .max(sq.amax())
            .max((x - (canon.a1() * y - canon.a2() * x)).abs())
            .max((y - (canon.a1() * x + canon.a2() * y)).abs());
    }
    let axis = grid_axis(cfg.grid_points)?;
    let disagreements: usize = (0..cfg.canonical_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, SUITE_ROTATION, 1 + i as u64);
            let canon = random_canonical(&mut rng, true);
            let mut bad = 0;
            for &t1 in &axis {
                for &t2 in &axis {
                    let th = [t1, t2];
                    if rotation_indicator(&canon, level, th).expect("b = 0") != coverage_indicator(&canon, level, th) {
                        bad += 1;
                    }
                }
            }
            bad
        })
        .sum();
    let passed = worst <= 1e-12 && disagreements == 0;
    Ok(CheckReport {
        name: Check::Rotation.as_str().into(),
        passed,
        worst: worst.max(disagreements as f64),
        tolerance: 1e-12,
        evaluated: cfg.rotation_cases + cfg.canonical_instances * axis.len() * axis.len(),
        detail: format!("identity error {worst:.3e}; {disagreements} band/region disagreements"),
    })
}

/// Disagreements in the coverage indicator after each reduction step, in order
/// permute, translate, decorrelate, rescale, normalize, canonical region.
pub fn reduction_disagreements(
    cfg: &VerifyConfig,
    interval: &IntervalFn,
    ks: &[usize],
) -> Result<([usize; 6], usize)> {
    let level = Level::new(cfg.alpha)?;
    let counts: Vec<[usize; 6]> = (0..cfg.reduction_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, SUITE_REDUCTION, i as u64);
            let k = ks[i % ks.len()];
            let (est, con, truth) = random_instance(&mut rng, k);
            let chol = est.v_hat().clone().cholesky().expect("positive definite").l();
            let mut bad = [0usize; 6];
            let covers = |inst: &Instance| {
                let t = inst.problem.estimate().target();
                interval(&inst.problem, level).contains(inst.theta_true[t])
            };
            for _ in 0..cfg.reduction_draws {
                let theta_hat = draw_near(&mut rng, &est, &chol, &truth);
                let problem = validate(&est.with_theta_hat(theta_hat).expect("finite"), &con).expect("valid");
                let inst = Instance::new(problem, truth.clone()).expect("dimensions");
                let base = covers(&inst);
                let p = permute_target(&inst).expect("permute");
                let t = translate(&p).expect("translate");
                let d = decorrelate(&t).expect("decorrelate");
                let r = rescale(&d).expect("rescale");
                let nrm = normalize(&r).expect("normalize");
                let (canon, th) = canonicalize(&inst).expect("canonicalize");
                let results = [covers(&p), covers(&t), covers(&d), covers(&r), covers(&nrm), coverage_indicator(&canon, level, th)];
                for (slot, res) in bad.iter_mut().zip(results) {
                    if res != base {
                        *slot += 1;
                    }
                }
            }
            bad
        })
        .collect();
    let mut total = [0usize; 6];
    for c in &counts {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    Ok((total, cfg.reduction_instances * cfg.reduction_draws))
}

pub fn check_reduction(cfg: &VerifyConfig, interval: &IntervalFn) -> Result<CheckReport> {
    let (counts, evaluated) = reduction_disagreements(cfg, interval, &[2, 3, 4])?;
    let total: usize = counts.iter().sum();
    Ok(CheckReport::new(
        Check::Reduction.as_str(),
        total as f64,
        0.0,
        evaluated,
        format!("disagreements per step (permute, translate, decorrelate, rescale, normalize, region): {counts:?}"),
    ))
}

pub fn check_lemma2(cfg: &VerifyConfig) -> Result<CheckReport> {
    let mut rng = substream(cfg.seed, SUITE_LEMMA2, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.lemma2_cases {
        let angle = rng.gen_range(0.01..FRAC_PI_2 - 0.01);
        let alpha = rng.gen_range(0.001..0.999);
        let p = lemma2_probability(angle.cos(), angle.sin(), alpha)?;
        worst = worst.max((p - (1.0 - alpha)).abs());
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let headline = lemma2_probability(h, h, 0.05)?;
    worst = worst.max((headline - 0.95).abs());
    Ok(CheckReport::new(
        Check::Lemma2.as_str(),
        worst,
        1e-6,
        cfg.lemma2_cases + 1,
        format!("|p − 0.95| = {:.3e} at x = y = 1/√2", (headline - 0.95).abs()),
    ))
}

/// `E f(W + μ) ≥ 1 − α` on a grid of shifts, with equality at `μ = 0`.
pub fn check_lemma3(cfg: &VerifyConfig) -> Result<CheckReport> {
    let level = Level::new(cfg.alpha)?;
    let mut rng = substream(cfg.seed, SUITE_LEMMA3, 0);
    let mus: Vec<f64> = (0..cfg.lemma3_grid).map(|i| 6.0 * i as f64 / (cfg.lemma3_grid.max(2) - 1) as f64).collect();
    let mut shortfall: f64 = 0.0;
    let mut at_zero: f64 = 0.0;
    for _ in 0..cfg.lemma3_instances {
        let canon = random_canonical(&mut rng, true);
        let points = lemma3_check(&canon, level, &mus)?;
        at_zero = at_zero.max((points[0].value - level.coverage()).abs());
        for p in &points {
            shortfall = shortfall.max(level.coverage() - p.value);
        }
    }
    let worst = at_zero.max(shortfall);
    Ok(CheckReport::new(
        Check::Lemma3.as_str(),
        worst,
        1e-7,
        cfg.lemma3_instances * mus.len(),
        format!("max shortfall below 1 − α {shortfall:.3e}; |value − (1 − α)| at μ = 0 {at_zero:.3e}"),
    ))
}

/// Branch-free threshold against the textbook formula, relative error scaled by
/// the cancellation in `ŝ − s̈`.
pub fn check_stable_threshold(cfg: &VerifyConfig) -> Result<CheckReport> {
    let level = Level::new(cfg.alpha)?;
    let mut rng = substream(cfg.seed, SUITE_THRESHOLD, 0);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..cfg.threshold_cases {
        let k = 2 + i % 3;
        let (est, con, _) = random_instance(&mut rng, k);
        let problem = validate(&est, &con)?;
        let geo = Geometry::new(&problem, level);
        let va = est.v_hat() * con.a();
        let (e_va, a_va) = (va[est.target()], con.a().dot(&va));
        if e_va.abs() <= 1e-8 * est.v_hat().norm() {
            continue;
        }
        let branch = a_va / e_va * (geo.s_hat() - geo.s_ddot()) * level.z();
        let cond = geo.s_hat() / (geo.s_hat() - geo.s_ddot());
        let allowed = 1e-10 + 64.0 * f64::EPSILON * cond;
        worst = worst.max((geo.c_ddot() - branch).abs() / branch.abs() / allowed);
        count += 1;
    }
    Ok(CheckReport::new(
        Check::StableThreshold.as_str(),
        worst,
        1.0,
        count,
        format!("worst relative error as a fraction of the allowance: {worst:.3e}"),
    ))
}

pub fn run_check(check: Check, cfg: &VerifyConfig, interval: &IntervalFn) -> Result<CheckReport> {
    match check {
        Check::Acceptance => check_acceptance(cfg, interval),
        Check::Rotation => check_rotation(cfg),
        Check::Reduction => check_reduction(cfg, interval),
        Check::Lemma2 => check_lemma2(cfg),
        Check::Lemma3 => check_lemma3(cfg),
        Check::StableThreshold => check_stable_threshold(cfg),
    }
}

/// Runs the selected checks against the production interval.
pub fn run(checks: &[Check], cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    checks.iter().map(|&c| run_check(c, cfg, &engine_iici)).collect()
}
