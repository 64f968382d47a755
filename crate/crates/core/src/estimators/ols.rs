use nalgebra::{DMatrix, DVector};

use super::{
    check_rank, cluster_ids, score_covariance, small_sample_factor, summary, symmetrize, Dataset, EstimationMeta,
    VarianceSpec, INTERCEPT,
};
use crate::error::{Error, Result};
use crate::model::EstimateSummary;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsSpec {
    pub dependent: String,
    pub regressors: Vec<String>,
    /// Append a constant column named `const`.
    pub intercept: bool,
    pub variance: VarianceSpec,
}

impl OlsSpec {
    pub fn new(dependent: impl Into<String>, regressors: &[&str]) -> Self {
        Self {
            dependent: dependent.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            intercept: false,
            variance: VarianceSpec::robust(),
        }
    }

    pub fn with_intercept(mut self) -> Self {
        self.intercept = true;
        self
    }

    pub fn with_variance(mut self, variance: VarianceSpec) -> Self {
        self.variance = variance;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    /// Sandwich estimate of the asymptotic covariance of `√n(β̂ − β)`.
    pub v_hat: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub design: DMatrix<f64>,
    pub meta: EstimationMeta,
}

impl OlsFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn estimate(&self, target: &str) -> Result<EstimateSummary> {
        let t = self.names.iter().position(|n| n == target).ok_or_else(|| Error::UnknownParameter(target.to_string()))?;
        summary(self.names.clone(), self.coefficients.clone(), self.v_hat.clone(), self.n(), t)
    }
}

pub(super) fn design(data: &Dataset, columns: &[String], intercept: bool) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = data.rows();
    let mut names = columns.to_vec();
    let mut cols = columns.iter().map(|c| data.numeric(c)).collect::<Result<Vec<_>>>()?;
    if intercept {
        names.push(INTERCEPT.to_string());
        cols.push(vec![1.0; n]);
    }
    let k = cols.len();
    Ok((DMatrix::from_fn(n, k, |i, j| cols[j][i]), names))
}

/// Least squares via QR with a heteroskedasticity-robust or clustered sandwich.
pub fn ols(data: &Dataset, spec: &OlsSpec) -> Result<OlsFit> {
    let (x, names) = design(data, &spec.regressors, spec.intercept)?;
    let y = DVector::from_vec(data.numeric(&spec.dependent)?);
    let (n, k) = x.shape();
    if k == 0 {
        return Err(Error::Config("no regressors".into()));
    }
    if n <= k {
        return Err(Error::Data(format!("{n} rows for {k} regressors")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    check_rank(&r, "regressor matrix is rank deficient")?;
    let qty = qr.q().transpose() * &y;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| Error::RankDeficient("triangular solve".into()))?;
    let residuals = &y - &x * &beta;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient("triangular inverse".into()))?;
    // (X'X/n)⁻¹ = n R⁻¹R⁻ᵀ
    let bread = &r_inv * r_inv.transpose() * n as f64;
    let scores = DMatrix::from_fn(n, k, |i, j| x[(i, j)] * residuals[i]);
    let clusters = cluster_ids(data, &spec.variance)?;
    let meat = score_covariance(&scores, clusters.as_ref());
    let factor = small_sample_factor(&spec.variance, n, k, clusters.as_ref())?;
    let v_hat = symmetrize(&bread * meat * &bread * factor);

    let meta = EstimationMeta {
        estimator: "ols".into(),
        variance: spec.variance.label().into(),
        n,
        clusters: clusters.map(|c| c.1),
        warnings: Vec::new(),
    };
    Ok(OlsFit { names, coefficients: beta, v_hat, residuals, design: x, meta })
}
