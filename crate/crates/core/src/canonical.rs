//! Two-dimensional canonical form of a coverage problem, and the closed-form
//! acceptance region, rotation and integral identities that describe the
//! inequality-imposed interval there.
//!
//! Every instance with `e'V a ≠ 0` reduces to `θ̂ ~ N(0, I₂)` with constraint
//! `a₁θ₁ + a₂θ₂ + b ≤ 0`, `a₁, a₂ > 0`, `a₁² + a₂² = 1`, `b ≤ 0`, via four
//! maps ([`translate`], [`decorrelate`], [`rescale`], [`normalize`]) that each
//! preserve the event "the interval covers the true target value". The
//! functions here are used as independent oracles for [`crate::ci`].

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::ci::iici;
use crate::error::{Error, Result};
use crate::model::{validate, EstimateSummary, LinearConstraint, Problem};
use crate::normal::{norm_cdf, norm_pdf, normal_quantile, Level};
use crate::quadrature::integrate;

const UNIT_TOL: f64 = 1e-12;
const QUAD_TOL: f64 = 1e-11;
const TAIL: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalProblem {
    a1: f64,
    a2: f64,
    b: f64,
}

impl CanonicalProblem {
    pub fn new(a1: f64, a2: f64, b: f64) -> Result<Self> {
        if !(a1 > 0.0 && a2 > 0.0) || !b.is_finite() || b > 0.0 {
            return Err(Error::Config(format!("canonical problem needs a1, a2 > 0 and b <= 0, got ({a1}, {a2}, {b})")));
        }
        let norm = (a1 * a1 + a2 * a2 - 1.0).abs();
        if norm > UNIT_TOL {
            return Err(Error::Config(format!("canonical constraint must have unit norm (off by {norm:.3e})")));
        }
        Ok(Self { a1, a2, b })
    }

    /// Point at angle `angle ∈ (0, π/2)` on the positive quarter circle.
    pub fn from_angle(angle: f64, b: f64) -> Result<Self> {
        Self::new(angle.cos(), angle.sin(), b)
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Threshold in canonical coordinates, `(1 − a₂) z / a₁`.
    pub fn c_ddot(&self, level: Level) -> f64 {
        (1.0 - self.a2) * level.z() / self.a1
    }

    /// The instance as a general problem (`V = I₂`, `n = 1`, target first) at draw `theta_hat`.
    pub fn problem(&self, theta_hat: [f64; 2]) -> Problem {
        let est = EstimateSummary::new(DVector::from_column_slice(&theta_hat), DMatrix::identity(2, 2), 1, 0)
            .expect("identity covariance is valid");
        let con = LinearConstraint::from_slice(&[self.a1, self.a2], self.b).expect("nonzero constraint");
        validate(&est, &con).expect("canonical problems are always valid")
    }

    pub fn acceptance_region(&self, level: Level) -> AcceptanceRegion {
        AcceptanceRegion { slope: self.a1 / self.a2, offset: self.b / self.a2, half: level.z() / self.a2, z: level.z() }
    }
}

/// Set of draws `θ̂` whose interval covers zero: `LB(θ̂₂) ≤ θ̂₁ ≤ UB(θ̂₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceRegion {
    slope: f64,
    offset: f64,
    half: f64,
    z: f64,
}

impl AcceptanceRegion {
    pub fn lb(&self, theta2: f64) -> f64 {
        (self.slope * (theta2 + self.offset) - self.half).max(-self.z)
    }

    pub fn ub(&self, theta2: f64) -> f64 {
        (self.slope * (theta2 + self.offset) + self.half).max(self.z)
    }

    pub fn contains(&self, theta_hat: [f64; 2]) -> bool {
        self.lb(theta_hat[1]) <= theta_hat[0] && theta_hat[0] <= self.ub(theta_hat[1])
    }
}

pub fn acceptance_bounds(canon: &CanonicalProblem, level: Level, theta2: f64) -> (f64, f64) {
    let region = canon.acceptance_region(level);
    (region.lb(theta2), region.ub(theta2))
}

pub fn coverage_indicator(canon: &CanonicalProblem, level: Level, theta_hat: [f64; 2]) -> bool {
    canon.acceptance_region(level).contains(theta_hat)
}

/// `0 ∈ IICI` evaluated through the interval engine on the canonical instance.
pub fn iici_covers_zero(canon: &CanonicalProblem, level: Level, theta_hat: [f64; 2]) -> bool {
    iici(&canon.problem(theta_hat), level).contains(0.0)
}

/// Reflection `Ω = [[x, y], [y, −x]]` with `x = √((1−a₂)/2)`, `y = √((1+a₂)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    x: f64,
    y: f64,
}

impl Rotation {
    pub fn new(a2: f64) -> Self {
        Self { x: ((1.0 - a2) / 2.0).sqrt(), y: ((1.0 + a2) / 2.0).sqrt() }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn omega(&self) -> Matrix2<f64> {
        Matrix2::new(self.x, self.y, self.y, -self.x)
    }

    pub fn apply(&self, theta: [f64; 2]) -> [f64; 2] {
        let z = self.omega() * Vector2::new(theta[0], theta[1]);
        [z[0], z[1]]
    }

    /// Band `−z ≤ x|Z₁| − yZ₂ ≤ z`.
    pub fn in_band(&self, z: f64, rotated: [f64; 2]) -> bool {
        let t = self.x * rotated[0].abs() - self.y * rotated[1];
        -z <= t && t <= z
    }
}

/// Acceptance test after rotating the draw; only defined at the boundary (`b = 0`).
pub fn rotation_indicator(canon: &CanonicalProblem, level: Level, theta_hat: [f64; 2]) -> Result<bool> {
    if canon.b() != 0.0 {
        return Err(Error::Unsupported("the rotation test requires b = 0".into()));
    }
    let rot = Rotation::new(canon.a2());
    Ok(rot.in_band(level.z(), rot.apply(theta_hat)))
}

/// `P(−z ≤ x|Z₁| − yZ₂ ≤ z)` for independent standard normals, by quadrature over `Z₁`.
/// Accepts `alpha = 1`, where the band is a line and the probability is zero.
pub fn lemma2_probability(x: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidLevel(alpha));
    }
    if !(x > 0.0 && y > 0.0) || (x * x + y * y - 1.0).abs() > 1e-10 {
        return Err(Error::Config(format!("(x, y) = ({x}, {y}) is not on the positive unit quarter circle")));
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let band = |z1: f64| norm_pdf(z1) * (norm_cdf((x * z1 + z) / y) - norm_cdf((x * z1 - z) / y));
    // the integrand is even in z₁
    let half = integrate(band, 0.0, TAIL, &[], QUAD_TOL / 2.0)?;
    Ok(2.0 * half.value)
}

/// Conditional coverage given the (shifted, negated) second coordinate `w`.
pub fn translation_integrand(canon: &CanonicalProblem, level: Level, w: f64) -> f64 {
    let r = canon.a1 / canon.a2;
    let z = level.z();
    let h = z / canon.a2;
    norm_cdf((-r * w + h).max(z)) - norm_cdf((-r * w - h).max(-z))
}

/// `E f(W + μ)` for `W ~ N(0, 1)`.
pub fn translation_expectation(canon: &CanonicalProblem, level: Level, mu: f64) -> Result<f64> {
    let c = canon.c_ddot(level);
    let f = |w: f64| translation_integrand(canon, level, w) * norm_pdf(w - mu);
    Ok(integrate(f, mu - TAIL, mu + TAIL, &[-c, c], QUAD_TOL)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationPoint {
    pub mu: f64,
    pub value: f64,
}

/// Evaluates `E f(W + μ)` along a grid of nonnegative shifts.
pub fn lemma3_check(canon: &CanonicalProblem, level: Level, mu_grid: &[f64]) -> Result<Vec<TranslationPoint>> {
    mu_grid
        .iter()
        .map(|&mu| {
            if !(mu >= 0.0) {
                return Err(Error::Config(format!("shift {mu} must be nonnegative")));
            }
            Ok(TranslationPoint { mu, value: translation_expectation(canon, level, mu)? })
        })
        .collect()
}

/// Crossing point `w̄ < −ċ` where the integrand rises through `1 − α`. To its
/// left the integrand is below `1 − α`, to its right at or above.
pub fn crossing_point(canon: &CanonicalProblem, level: Level) -> f64 {
    let target = level.coverage();
    let c = canon.c_ddot(level);
    let (mut lo, mut hi) = (-c - 1.0, -c);
    while translation_integrand(canon, level, lo) >= target {
        lo = -c - 2.0 * (-c - lo + 1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if translation_integrand(canon, level, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A coverage problem at one draw together with the true parameter.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem,
    pub theta_true: DVector<f64>,
}

impl Instance {
    pub fn new(problem: Problem, theta_true: DVector<f64>) -> Result<Self> {
        if theta_true.len() != problem.estimate().k() {
            return Err(Error::Dimension(format!(
                "true parameter has {} entries for {} parameters",
                theta_true.len(),
                problem.estimate().k()
            )));
        }
        Ok(Self { problem, theta_true })
    }

    pub fn covers(&self, level: Level) -> bool {
        let t = self.problem.estimate().target();
        iici(&self.problem, level).contains(self.theta_true[t])
    }

    fn rebuild(
        &self,
        theta_hat: DVector<f64>,
        v: DMatrix<f64>,
        n: usize,
        target: usize,
        a: DVector<f64>,
        b: f64,
        theta_true: DVector<f64>,
    ) -> Result<Self> {
        let est = EstimateSummary::new(theta_hat, v, n, target)?;
        let problem = validate(&est, &LinearConstraint::new(a, b)?)?;
        Ok(Self { problem, theta_true })
    }
}

/// Moves the target parameter to the first coordinate.
pub fn permute_target(inst: &Instance) -> Result<Instance> {
    let est = inst.problem.estimate();
    let t = est.target();
    if t == 0 {
        return Ok(inst.clone());
    }
    let k = est.k();
    let order: Vec<usize> = std::iter::once(t).chain((0..k).filter(|&i| i != t)).collect();
    let pick = |v: &DVector<f64>| DVector::from_iterator(k, order.iter().map(|&i| v[i]));
    let v = DMatrix::from_fn(k, k, |i, j| est.v_hat()[(order[i], order[j])]);
    inst.rebuild(
        pick(est.theta_hat()),
        v,
        est.n(),
        0,
        pick(inst.problem.constraint().a()),
        inst.problem.constraint().b(),
        pick(&inst.theta_true),
    )
}

/// Shifts the truth to the origin: `θ̂ ← θ̂ − θ₀`, `b ← a'θ₀ + b`.
pub fn translate(inst: &Instance) -> Result<Instance> {
    let est = inst.problem.estimate();
    let con = inst.problem.constraint();
    let b = con.value(&inst.theta_true);
    let scale = con.a().abs().dot(&inst.theta_true.abs()) + con.b().abs();
    if b > 64.0 * f64::EPSILON * scale {
        return Err(Error::InfeasibleTruth(b));
    }
    // a truth on the boundary up to rounding is treated as binding
    let b = b.min(0.0);
    let k = est.k();
    inst.rebuild(
        est.theta_hat() - &inst.theta_true,
        est.v_hat().clone(),
        est.n(),
        est.target(),
        con.a().clone(),
        b,
        DVector::zeros(k),
    )
}

/// Collapses to two coordinates: the target and `d'θ̂` with
/// `d = a − e(e'Va)/V₁₁`, which is uncorrelated with the target.
/// Expects the target first and the truth at the origin.
pub fn decorrelate(inst: &Instance) -> Result<Instance> {
    let est = inst.problem.estimate();
    let con = inst.problem.constraint();
    if est.target() != 0 || inst.theta_true.amax() != 0.0 {
        return Err(Error::Config("decorrelate expects the target first and the truth at the origin".into()));
    }
    let v = est.v_hat();
    let va = v * con.a();
    let e_va = va[0];
    if e_va == 0.0 {
        return Err(Error::NotReducible);
    }
    let v11 = v[(0, 0)];
    let mut d = con.a().clone();
    d[0] -= e_va / v11;
    let vdd = con.a().dot(&va) - e_va * e_va / v11;
    let theta_hat = DVector::from_vec(vec![est.theta_hat()[0], d.dot(est.theta_hat())]);
    let v2 = DMatrix::from_row_slice(2, 2, &[v11, 0.0, 0.0, vdd]);
    let a = DVector::from_vec(vec![e_va / v11, 1.0]);
    inst.rebuild(theta_hat, v2, est.n(), 0, a, con.b(), DVector::zeros(2))
}

/// Standardizes a diagonal two-parameter instance to `V = I₂`, `n = 1`.
pub fn rescale(inst: &Instance) -> Result<Instance> {
    let est = inst.problem.estimate();
    let con = inst.problem.constraint();
    let v = est.v_hat();
    if est.k() != 2 || v[(0, 1)] != 0.0 || v[(1, 0)] != 0.0 {
        return Err(Error::Config("rescale expects a diagonal two-parameter instance".into()));
    }
    let n = est.n() as f64;
    let sd = [(v[(0, 0)] / n).sqrt(), (v[(1, 1)] / n).sqrt()];
    let theta_hat = DVector::from_vec(vec![est.theta_hat()[0] / sd[0], est.theta_hat()[1] / sd[1]]);
    let a = DVector::from_vec(vec![con.a()[0] * sd[0], con.a()[1] * sd[1]]);
    let zero = DVector::zeros(2);
    inst.rebuild(theta_hat, DMatrix::identity(2, 2), 1, 0, a, con.b(), zero)
}

/// Makes the constraint a unit vector with positive first entry, flipping the
/// sign of the target coordinate if needed.
pub fn normalize(inst: &Instance) -> Result<Instance> {
    let est = inst.problem.estimate();
    let con = inst.problem.constraint();
    let a = con.a();
    let norm = a.norm();
    let sign = if a[0] < 0.0 { -1.0 } else { 1.0 };
    let theta_hat = DVector::from_vec(vec![sign * est.theta_hat()[0], est.theta_hat()[1]]);
    let a_new = DVector::from_vec(vec![sign * a[0] / norm, a[1] / norm]);
    inst.rebuild(theta_hat, est.v_hat().clone(), est.n(), 0, a_new, con.b() / norm, DVector::zeros(2))
}

/// Runs all reduction steps and returns the canonical problem with the transformed draw.
pub fn canonicalize(inst: &Instance) -> Result<(CanonicalProblem, [f64; 2])> {
    let reduced = normalize(&rescale(&decorrelate(&translate(&permute_target(inst)?)?)?)?)?;
    let a = reduced.problem.constraint().a();
    // renormalize against rounding in the last step
    let norm = a.norm();
    let canon = CanonicalProblem::new(a[0] / norm, a[1] / norm, reduced.problem.constraint().b().min(0.0))?;
    let th = reduced.problem.estimate().theta_hat();
    Ok((canon, [th[0], th[1]]))
}
