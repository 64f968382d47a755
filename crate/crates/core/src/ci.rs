//! Usual, equality-imposed and inequality-imposed confidence intervals.
//!
//! All intervals for the target coordinate depend on the draw `θ̂` only through
//! the target estimate `e'θ̂` and the estimated constraint value `g(θ̂)`. The
//! covariance-dependent pieces (`ŝ`, `s̈`, `ċ` and the projection direction) are
//! computed once in [`Geometry`], which then evaluates intervals for any draw
//! in constant time.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, EstimateSummary, LinearConstraint, Problem, SmoothConstraint};
use crate::normal::Level;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CiKind {
    #[serde(rename = "UCI")]
    Uci,
    #[serde(rename = "EICI")]
    Eici,
    #[serde(rename = "IICI")]
    Iici,
    #[serde(rename = "IITCI")]
    Iitci,
    #[serde(rename = "LRCI")]
    Lrci,
    #[serde(rename = "SCLRCI")]
    Sclrci,
}

impl CiKind {
    pub const ALL: [CiKind; 6] = [CiKind::Uci, CiKind::Eici, CiKind::Iici, CiKind::Iitci, CiKind::Lrci, CiKind::Sclrci];

    pub fn as_str(&self) -> &'static str {
        match self {
            CiKind::Uci => "UCI",
            CiKind::Eici => "EICI",
            CiKind::Iici => "IICI",
            CiKind::Iitci => "IITCI",
            CiKind::Lrci => "LRCI",
            CiKind::Sclrci => "SCLRCI",
        }
    }
}

impl std::fmt::Display for CiKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CiKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Which endpoint formulas the inequality-imposed interval used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Both endpoints from the usual interval.
    Slack,
    /// Lower endpoint from the usual interval, upper from the equality-imposed one (`ċ > 0`).
    MixedLower,
    /// Upper endpoint from the usual interval, lower from the equality-imposed one (`ċ < 0`).
    MixedUpper,
    /// Both endpoints from the equality-imposed interval.
    Violated,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Slack => "slack",
            Branch::MixedLower => "mixed_lower",
            Branch::MixedUpper => "mixed_upper",
            Branch::Violated => "violated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiComponents {
    pub s_hat: f64,
    pub s_ddot: f64,
    pub c_ddot: f64,
    pub g_at_hat: f64,
    pub eie_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub kind: CiKind,
    pub lower: f64,
    pub upper: f64,
    pub components: Option<CiComponents>,
    pub branch: Option<Branch>,
    /// Set when the interval does not intersect the usual interval.
    pub disjoint_from_uci: bool,
}

impl CiResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// `self ⊇ other`.
    pub fn contains_interval(&self, other: &CiResult) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }
}

/// Covariance-dependent quantities shared by every interval for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    target: usize,
    z: f64,
    s_hat: f64,
    s_ddot: f64,
    c_ddot: f64,
    /// `V̂a / (a'V̂a)`: the EIE moves `θ̂` by `−shift · g(θ̂)`.
    shift: DVector<f64>,
    a: DVector<f64>,
    b: f64,
}

impl Geometry {
    pub fn new(problem: &Problem, level: Level) -> Self {
        let est = problem.estimate();
        let con = problem.constraint();
        let t = est.target();
        let n = est.n() as f64;
        let v = est.v_hat();
        let va = v * con.a();
        let a_va = con.a().dot(&va);
        let e_va = va[t];
        let v_tt = v[(t, t)];
        let s_hat = (v_tt / n).sqrt();
        let s_ddot = ((v_tt - e_va * e_va / a_va).max(0.0) / n).sqrt();
        let z = level.z();
        // branch-free form of (e'Va)^{-1}(a'Va)(ŝ - s̈)z, using ŝ² - s̈² = (e'Va)²/(n a'Va)
        let c_ddot = z * e_va / (n * (s_hat + s_ddot));
        Self { target: t, z, s_hat, s_ddot, c_ddot, shift: va / a_va, a: con.a().clone(), b: con.b() }
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn s_hat(&self) -> f64 {
        self.s_hat
    }

    pub fn s_ddot(&self) -> f64 {
        self.s_ddot
    }

    pub fn c_ddot(&self) -> f64 {
        self.c_ddot
    }

    /// `e'V̂a / a'V̂a`, the slope of the EIE target coordinate in `g(θ̂)`.
    pub fn target_shift(&self) -> f64 {
        self.shift[self.target]
    }

    pub fn g(&self, theta: &DVector<f64>) -> f64 {
        self.a.dot(theta) + self.b
    }

    pub fn eie(&self, theta_hat: &DVector<f64>) -> DVector<f64> {
        let g = self.g(theta_hat);
        theta_hat - &self.shift * g
    }

    pub fn eie_target(&self, target_hat: f64, g: f64) -> f64 {
        target_hat - self.target_shift() * g
    }

    pub fn components(&self, target_hat: f64, g: f64) -> CiComponents {
        CiComponents {
            s_hat: self.s_hat,
            s_ddot: self.s_ddot,
            c_ddot: self.c_ddot,
            g_at_hat: g,
            eie_target: self.eie_target(target_hat, g),
        }
    }

    pub fn uci_bounds(&self, target_hat: f64) -> (f64, f64) {
        let half = self.s_hat * self.z;
        (target_hat - half, target_hat + half)
    }

    pub fn eici_bounds(&self, target_hat: f64, g: f64) -> (f64, f64) {
        let centre = self.eie_target(target_hat, g);
        let half = self.s_ddot * self.z;
        (centre - half, centre + half)
    }

    pub fn iici_bounds(&self, target_hat: f64, g: f64) -> (f64, f64, Branch) {
        let (ul, uu) = self.uci_bounds(target_hat);
        let (el, eu) = self.eici_bounds(target_hat, g);
        let keep_lower = g <= self.c_ddot;
        let keep_upper = g <= -self.c_ddot;
        let lower = if keep_lower { ul } else { el };
        let upper = if keep_upper { uu } else { eu };
        let branch = match (keep_lower, keep_upper) {
            (true, true) => Branch::Slack,
            (true, false) => Branch::MixedLower,
            (false, true) => Branch::MixedUpper,
            (false, false) => Branch::Violated,
        };
        (lower, upper, branch)
    }

    pub fn iie_target(&self, target_hat: f64, g: f64) -> f64 {
        if g <= 0.0 {
            target_hat
        } else {
            self.eie_target(target_hat, g)
        }
    }

    pub fn iitci_bounds(&self, target_hat: f64, g: f64) -> (f64, f64) {
        self.uci_bounds(self.iie_target(target_hat, g))
    }

    /// Interval of the given kind at a draw. The likelihood-ratio kinds live in
    /// [`crate::lr`] and are rejected here.
    pub fn interval(&self, kind: CiKind, target_hat: f64, g: f64) -> Result<CiResult> {
        let components = Some(self.components(target_hat, g));
        let (lower, upper, branch) = match kind {
            CiKind::Uci => {
                let (l, u) = self.uci_bounds(target_hat);
                (l, u, None)
            }
            CiKind::Eici => {
                let (l, u) = self.eici_bounds(target_hat, g);
                (l, u, None)
            }
            CiKind::Iici => {
                let (l, u, b) = self.iici_bounds(target_hat, g);
                (l, u, Some(b))
            }
            CiKind::Iitci => {
                let (l, u) = self.iitci_bounds(target_hat, g);
                (l, u, None)
            }
            CiKind::Lrci | CiKind::Sclrci => {
                return Err(Error::Unsupported(format!("{kind} is computed by the likelihood-ratio module")))
            }
        };
        let (ul, uu) = self.uci_bounds(target_hat);
        Ok(CiResult { kind, lower, upper, components, branch, disjoint_from_uci: upper < ul || lower > uu })
    }

    fn at(&self, problem: &Problem, kind: CiKind) -> CiResult {
        let est = problem.estimate();
        let g = self.g(est.theta_hat());
        self.interval(kind, est.target_hat(), g).expect("non-LR kind")
    }
}

/// Usual interval `e'θ̂ ∓ ŝ z`; needs no constraint.
pub fn uci(estimate: &EstimateSummary, level: Level) -> CiResult {
    let s = estimate.s_hat();
    let half = s * level.z();
    let centre = estimate.target_hat();
    CiResult {
        kind: CiKind::Uci,
        lower: centre - half,
        upper: centre + half,
        components: None,
        branch: None,
        disjoint_from_uci: false,
    }
}

/// Equality-imposed estimator `θ̈ = θ̂ − V̂a (a'V̂a)⁻¹ g(θ̂)` and the interval components.
pub fn eie(problem: &Problem, level: Level) -> (DVector<f64>, CiComponents) {
    let geo = Geometry::new(problem, level);
    let est = problem.estimate();
    let g = geo.g(est.theta_hat());
    (geo.eie(est.theta_hat()), geo.components(est.target_hat(), g))
}

pub fn eici(problem: &Problem, level: Level) -> CiResult {
    Geometry::new(problem, level).at(problem, CiKind::Eici)
}

pub fn threshold_c(problem: &Problem, level: Level) -> f64 {
    Geometry::new(problem, level).c_ddot()
}

pub fn iici(problem: &Problem, level: Level) -> CiResult {
    Geometry::new(problem, level).at(problem, CiKind::Iici)
}

/// Inequality-imposed estimator: `θ̂` when the estimate satisfies the inequality, the EIE otherwise.
pub fn iie(problem: &Problem) -> DVector<f64> {
    let est = problem.estimate();
    if problem.constraint().value(est.theta_hat()) <= 0.0 {
        est.theta_hat().clone()
    } else {
        eie(problem, Level::default()).0
    }
}

pub fn iitci(problem: &Problem, level: Level) -> CiResult {
    Geometry::new(problem, level).at(problem, CiKind::Iitci)
}

/// Replaces a smooth constraint by its tangent at `θ̂`: `a = ∇g(θ̂)` and
/// `b = g(θ̂) − a'θ̂`, so the linear constraint reproduces `g(θ̂)` exactly.
pub fn linearize(estimate: &EstimateSummary, smooth: &SmoothConstraint) -> Result<LinearConstraint> {
    let theta = estimate.theta_hat();
    let a = smooth.gradient(theta);
    if a.len() != estimate.k() {
        return Err(Error::Dimension(format!("gradient has {} entries for {} parameters", a.len(), estimate.k())));
    }
    let scale = a.amax();
    if !(scale > 1e-12) {
        return Err(Error::ZeroConstraint);
    }
    let g = smooth.value(theta);
    let constraint = LinearConstraint::new(a.clone(), g - a.dot(theta))?;
    if constraint.is_target_only(estimate.target()) {
        return Err(Error::ConstraintOnTargetOnly);
    }
    Ok(constraint)
}

/// Validates the pair and evaluates one of the closed-form intervals.
pub fn compute(estimate: &EstimateSummary, constraint: &LinearConstraint, kind: CiKind, level: Level) -> Result<CiResult> {
    let problem = validate(estimate, constraint)?;
    let geo = Geometry::new(&problem, level);
    let g = geo.g(problem.estimate().theta_hat());
    geo.interval(kind, problem.estimate().target_hat(), g)
}
