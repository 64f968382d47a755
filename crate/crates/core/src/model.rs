//! Estimates, constraints and the validated pair every interval is computed from.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on the covariance estimate.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Point estimate, covariance estimate and sample size.
///
/// `v_hat` estimates the asymptotic covariance of `√n (θ̂ − θ)`, so the
/// covariance of `θ̂` itself is `v_hat / n`. `target` is the zero-based index
/// of the parameter of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    names: Vec<String>,
    theta_hat: DVector<f64>,
    v_hat: DMatrix<f64>,
    n: usize,
    target: usize,
}

impl EstimateSummary {
    pub fn new(theta_hat: DVector<f64>, v_hat: DMatrix<f64>, n: usize, target: usize) -> Result<Self> {
        let k = theta_hat.len();
        if k < 2 {
            return Err(Error::TooFewParameters(k));
        }
        if v_hat.nrows() != k || v_hat.ncols() != k {
            return Err(Error::Dimension(format!(
                "theta_hat has {k} entries but v_hat is {}x{}",
                v_hat.nrows(),
                v_hat.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::ZeroSampleSize);
        }
        if target >= k {
            return Err(Error::TargetOutOfRange { index: target, k });
        }
        if theta_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("theta_hat"));
        }
        if v_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("v_hat"));
        }
        let names = (1..=k).map(|i| format!("theta{i}")).collect();
        Ok(Self { names, theta_hat, v_hat, n, target })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_slices(theta_hat: &[f64], v_rows: &[&[f64]], n: usize, target: usize) -> Result<Self> {
        let k = theta_hat.len();
        if v_rows.len() != k || v_rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!("v_hat must be {k}x{k}")));
        }
        let v = DMatrix::from_fn(k, k, |i, j| v_rows[i][j]);
        Self::new(DVector::from_column_slice(theta_hat), v, n, target)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::Dimension(format!("{} names for {} parameters", names.len(), self.k())));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_target(mut self, target: usize) -> Result<Self> {
        if target >= self.k() {
            return Err(Error::TargetOutOfRange { index: target, k: self.k() });
        }
        self.target = target;
        Ok(self)
    }

    /// Same covariance and sample size, different point estimate.
    pub fn with_theta_hat(&self, theta_hat: DVector<f64>) -> Result<Self> {
        if theta_hat.len() != self.k() {
            return Err(Error::Dimension("replacement theta_hat has the wrong length".into()));
        }
        if theta_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("theta_hat"));
        }
        Ok(Self { theta_hat, ..self.clone() })
    }

    pub fn k(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn v_hat(&self) -> &DMatrix<f64> {
        &self.v_hat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_hat(&self) -> f64 {
        self.theta_hat[self.target]
    }

    /// Standard error of the target estimate, `n^{-1/2} (e'V̂e)^{1/2}`.
    pub fn s_hat(&self) -> f64 {
        (self.v_hat[(self.target, self.target)] / self.n as f64).sqrt()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn relative_asymmetry(&self) -> f64 {
        let scale = self.v_hat.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (&self.v_hat - self.v_hat.transpose()).amax() / scale
    }
}

/// Linear inequality `g(θ) = a'θ + b ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    a: DVector<f64>,
    b: f64,
}

impl LinearConstraint {
    pub fn new(a: DVector<f64>, b: f64) -> Result<Self> {
        if a.iter().any(|x| !x.is_finite()) || !b.is_finite() {
            return Err(Error::NonFinite("constraint"));
        }
        if a.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroConstraint);
        }
        Ok(Self { a, b })
    }

    pub fn from_slice(a: &[f64], b: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(a), b)
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        self.a.dot(theta) + self.b
    }

    /// True iff `a` has no weight outside `target`.
    pub fn is_target_only(&self, target: usize) -> bool {
        let norm = self.a.norm();
        let off: f64 = self
            .a
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(_, x)| x * x)
            .sum::<f64>()
            .sqrt();
        off <= 1e-14 * norm
    }
}

type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Smooth, possibly nonlinear inequality `g(θ) ≤ 0`.
///
/// When no analytic gradient is supplied, central differences are used with a
/// per-coordinate step `fd_step · max(1, |θ_i|)`.
#[derive(Clone)]
pub struct SmoothConstraint {
    g: ScalarFn,
    grad: Option<GradientFn>,
    fd_step: f64,
}

impl fmt::Debug for SmoothConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothConstraint")
            .field("analytic_gradient", &self.grad.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl SmoothConstraint {
    pub fn new(g: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self { g: Arc::new(g), grad: None, fd_step: f64::EPSILON.cbrt() }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
        }
        self.fd_step = step;
        Ok(self)
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        (self.g)(theta)
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        if let Some(grad) = &self.grad {
            return grad(theta);
        }
        let mut out = DVector::zeros(theta.len());
        let mut probe = theta.clone();
        for i in 0..theta.len() {
            let h = self.fd_step * theta[i].abs().max(1.0);
            probe[i] = theta[i] + h;
            let up = (self.g)(&probe);
            probe[i] = theta[i] - h;
            let down = (self.g)(&probe);
            probe[i] = theta[i];
            out[i] = (up - down) / (2.0 * h);
        }
        out
    }
}

/// An estimate and a linear constraint that passed [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    estimate: EstimateSummary,
    constraint: LinearConstraint,
}

impl Problem {
    pub fn estimate(&self) -> &EstimateSummary {
        &self.estimate
    }

    pub fn constraint(&self) -> &LinearConstraint {
        &self.constraint
    }

    pub fn into_parts(self) -> (EstimateSummary, LinearConstraint) {
        (self.estimate, self.constraint)
    }

    /// Same covariance and constraint at a different point estimate. The
    /// covariance-only checks of [`validate`] carry over unchanged.
    pub fn at(&self, theta_hat: DVector<f64>) -> Result<Self> {
        Ok(Self { estimate: self.estimate.with_theta_hat(theta_hat)?, constraint: self.constraint.clone() })
    }
}

/// Checks the estimate/constraint pair and symmetrizes the covariance.
pub fn validate(estimate: &EstimateSummary, constraint: &LinearConstraint) -> Result<Problem> {
    let k = estimate.k();
    if constraint.a.len() != k {
        return Err(Error::Dimension(format!(
            "constraint has {} coefficients for {k} parameters",
            constraint.a.len()
        )));
    }
    let asym = estimate.relative_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    let t = estimate.target;
    if constraint.is_target_only(t) {
        return Err(Error::ConstraintOnTargetOnly);
    }

    let mut estimate = estimate.clone();
    if asym > 0.0 {
        estimate.v_hat = (&estimate.v_hat + estimate.v_hat.transpose()) * 0.5;
    }
    let v = &estimate.v_hat;
    let a = &constraint.a;
    let va = v * a;
    let a_va = a.dot(&va);
    if a_va <= 1e-12 * v.trace().abs() * a.norm_squared() {
        return Err(Error::DegenerateConstraint(a_va));
    }
    let v_tt = v[(t, t)];
    let e_va = va[t];
    let det = v_tt * a_va - e_va * e_va;
    if !(v_tt > 0.0) || det <= 1e-12 * v_tt * a_va {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(Problem { estimate, constraint: constraint.clone() })
}
