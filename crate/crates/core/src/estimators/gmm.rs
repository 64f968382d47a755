use nalgebra::{DMatrix, DVector};

use super::ols::design;
use super::{
    check_rank, cluster_ids, score_covariance, small_sample_factor, summary, symmetrize, Dataset, EstimationMeta,
    VarianceSpec, INTERCEPT,
};
use crate::error::{Error, Result};
use crate::model::EstimateSummary;

const WEAK_ID: f64 = 0.01;

/// Linear IV model `Y = β'X + δ'W + ε` with instruments `Z`, plus optional
/// endogeneity parameters `γ = E[X ε]` for selected endogenous regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    pub dependent: String,
    pub endogenous: Vec<String>,
    pub exogenous: Vec<String>,
    pub intercept: bool,
    pub instruments: Vec<String>,
    pub endogeneity_targets: Vec<String>,
    pub variance: VarianceSpec,
}

impl GmmSpec {
    pub fn new(dependent: &str, endogenous: &[&str], exogenous: &[&str], instruments: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            dependent: dependent.into(),
            endogenous: own(endogenous),
            exogenous: own(exogenous),
            intercept: true,
            instruments: own(instruments),
            endogeneity_targets: own(endogenous),
            variance: VarianceSpec::robust(),
        }
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    pub fn with_targets(mut self, targets: &[&str]) -> Self {
        self.endogeneity_targets = targets.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_variance(mut self, variance: VarianceSpec) -> Self {
        self.variance = variance;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    /// `beta_<x>…, delta_<w>…, delta_const, gamma_<x>…`.
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    /// Sandwich estimate of the asymptotic covariance of `√n(φ̂ − φ)` for the stacked vector.
    pub v_hat: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Sample mean of the stacked moment functions at the estimate.
    pub moment_means: DVector<f64>,
    /// Smallest singular value of the standardized first-stage cross moment.
    pub first_stage_min_sv: f64,
    pub meta: EstimationMeta,
}

impl GmmFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn estimate(&self, target: &str) -> Result<EstimateSummary> {
        let t = self.names.iter().position(|n| n == target).ok_or_else(|| Error::UnknownParameter(target.to_string()))?;
        summary(self.names.clone(), self.coefficients.clone(), self.v_hat.clone(), self.n(), t)
    }
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, ka) = a.shape();
    let kb = b.ncols();
    DMatrix::from_fn(n, ka + kb, |i, j| if j < ka { a[(i, j)] } else { b[(i, j - ka)] })
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::RankDeficient(what.to_string()))
}

/// Weighted GMM solution `(G'WG)⁻¹ G'W h` for the linear moments `h − Gθ`.
fn weighted_solve(g: &DMatrix<f64>, w: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
    let gw = g.transpose() * w;
    let lhs = &gw * g;
    let chol = lhs.cholesky().ok_or_else(|| Error::RankDeficient("G'WG is singular".into()))?;
    Ok(chol.solve(&(gw * h)))
}

/// Residualizes the columns of `m` on `w` (no-op when `w` has no columns).
fn partial_out(m: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    if w.ncols() == 0 {
        return m.clone();
    }
    let qr = w.clone().qr();
    let q = qr.q();
    m - &q * (q.transpose() * m)
}

fn first_stage_min_sv(z: &DMatrix<f64>, x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let zt = partial_out(z, w);
    let xt = partial_out(x, w);
    let m = DMatrix::from_fn(zt.ncols(), xt.ncols(), |i, j| {
        let (zc, xc) = (zt.column(i), xt.column(j));
        let denom = zc.norm() * xc.norm();
        if denom > 0.0 {
            zc.dot(&xc) / denom
        } else {
            0.0
        }
    });
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.singular_values().min()
}

/// IV-GMM with two-step weighting when over-identified, and appended
/// moments `E[X ε] − γ = 0` for the endogeneity targets. The weight matrix is
/// block diagonal with the identity on the `γ` block, so `γ̂ = (1/n)Σ Xᵢε̂ᵢ`
/// and the structural estimates and their covariance are unaffected by the
/// extra moments.
pub fn iv_gmm_with_endogeneity(data: &Dataset, spec: &GmmSpec) -> Result<GmmFit> {
    for t in &spec.endogeneity_targets {
        if !spec.endogenous.contains(t) {
            return Err(Error::Config(format!("endogeneity target `{t}` is not an endogenous regressor")));
        }
    }
    if spec.endogenous.is_empty() {
        return Err(Error::Config("no endogenous regressors".into()));
    }
    if spec.instruments.len() < spec.endogenous.len() {
        return Err(Error::RankDeficient(format!(
            "{} instruments for {} endogenous regressors",
            spec.instruments.len(),
            spec.endogenous.len()
        )));
    }
    let (x, _) = design(data, &spec.endogenous, false)?;
    let (w, w_names) = design(data, &spec.exogenous, spec.intercept)?;
    let (z, _) = design(data, &spec.instruments, false)?;
    let (xt, _) = design(data, &spec.endogeneity_targets, false)?;
    let y = DVector::from_vec(data.numeric(&spec.dependent)?);
    let n = data.rows();
    let nf = n as f64;

    let r = hstack(&x, &w);
    let h = hstack(&z, &w);
    let (p, l, q) = (r.ncols(), h.ncols(), xt.ncols());
    if n <= l {
        return Err(Error::Data(format!("{n} rows for {l} instruments")));
    }
    check_rank(&h, "instrument matrix is rank deficient")?;
    let g = h.transpose() * &r / nf;
    check_rank(&g, "instruments do not identify the structural coefficients")?;
    let hy = h.transpose() * &y / nf;

    let clusters = cluster_ids(data, &spec.variance)?;
    let mut w1 = spd_inverse(&(h.transpose() * &h / nf), "H'H is singular")?;
    let mut theta = weighted_solve(&g, &w1, &hy)?;
    if l > p {
        let eps = &y - &r * &theta;
        let scores = DMatrix::from_fn(n, l, |i, j| h[(i, j)] * eps[i]);
        w1 = spd_inverse(&score_covariance(&scores, clusters.as_ref()), "moment covariance is singular")?;
        theta = weighted_solve(&g, &w1, &hy)?;
    }
    let eps = &y - &r * &theta;
    let gamma = xt.transpose() * &eps / nf;

    // stacked moments ψᵢ = (Hᵢεᵢ, X_Tᵢεᵢ − γ) and Jacobian D = ∂ψ̄/∂(θ, γ)
    let m = l + q;
    let k = p + q;
    let psi = DMatrix::from_fn(n, m, |i, j| if j < l { h[(i, j)] * eps[i] } else { xt[(i, j - l)] * eps[i] - gamma[j - l] });
    let moment_means = DVector::from_fn(m, |j, _| psi.column(j).sum() / nf);
    let xtr = xt.transpose() * &r / nf;
    let d = DMatrix::from_fn(m, k, |i, j| match (i < l, j < p) {
        (true, true) => -g[(i, j)],
        (true, false) => 0.0,
        (false, true) => -xtr[(i - l, j)],
        (false, false) => {
            if i - l == j - p {
                -1.0
            } else {
                0.0
            }
        }
    });
    let weight = DMatrix::from_fn(m, m, |i, j| match (i < l, j < l) {
        (true, true) => w1[(i, j)],
        (false, false) if i == j => 1.0,
        _ => 0.0,
    });
    let s = score_covariance(&psi, clusters.as_ref());
    let dw = d.transpose() * &weight;
    let bread = spd_inverse(&(&dw * &d), "D'WD is singular")?;
    let factor = small_sample_factor(&spec.variance, n, p, clusters.as_ref())?;
    let v_hat = symmetrize(&bread * (&dw * s * dw.transpose()) * &bread * factor);

    let mut names: Vec<String> = spec.endogenous.iter().map(|c| format!("beta_{c}")).collect();
    names.extend(w_names.iter().map(|c| if c == INTERCEPT { "delta_const".to_string() } else { format!("delta_{c}") }));
    names.extend(spec.endogeneity_targets.iter().map(|c| format!("gamma_{c}")));
    let coefficients = DVector::from_iterator(k, theta.iter().chain(gamma.iter()).copied());

    let min_sv = first_stage_min_sv(&z, &x, &w);
    let mut warnings = Vec::new();
    if min_sv < WEAK_ID {
        warnings.push(format!("weak identification: smallest first-stage singular value {min_sv:.3e}"));
    }
    if l > p {
        warnings.push("over-identified: two-step weighting".into());
    }
    let meta = EstimationMeta {
        estimator: "iv-gmm".into(),
        variance: spec.variance.label().into(),
        n,
        clusters: clusters.map(|c| c.1),
        warnings,
    };
    Ok(GmmFit { names, coefficients, v_hat, residuals: eps, moment_means, first_stage_min_sv: min_sv, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(n: usize, seed: u64, endog: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let (mut y, mut x, mut w, mut z) = (vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let (zi, wi, u, e) = (draw(), draw(), draw(), draw());
            let xi = 0.8 * zi + 0.3 * wi + u;
            let eps = e + endog * u;
            y.push(1.0 + 0.5 * xi - 0.2 * wi + eps);
            x.push(xi);
            w.push(wi);
            z.push(zi);
        }
        Dataset::from_columns(vec![("y".into(), y), ("x".into(), x), ("w".into(), w), ("z".into(), z)]).unwrap()
    }

    #[test]
    fn just_identified_moments_vanish() {
        let d = synthetic(500, 1, 0.5);
        let fit = iv_gmm_with_endogeneity(&d, &GmmSpec::new("y", &["x"], &["w"], &["z"])).unwrap();
        assert_eq!(fit.names, vec!["beta_x", "delta_w", "delta_const", "gamma_x"]);
        assert!(fit.moment_means.amax() < 1e-10);
        let x = d.numeric("x").unwrap();
        let post: f64 = x.iter().zip(fit.residuals.iter()).map(|(a, b)| a * b).sum::<f64>() / 500.0;
        assert!((fit.coefficients[3] - post).abs() < 1e-12);
    }

    #[test]
    fn too_few_instruments() {
        let d = synthetic(50, 2, 0.0);
        let spec = GmmSpec::new("y", &["x", "w"], &[], &["z"]);
        assert!(matches!(iv_gmm_with_endogeneity(&d, &spec), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn irrelevant_instrument_warns() {
        let mut d = synthetic(400, 3, 0.0);
        let noise: Vec<f64> = (0..400).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        d = d.with_labels("noise", noise.iter().map(|v| format!("{v}")).collect()).unwrap();
        let fit = iv_gmm_with_endogeneity(&d, &GmmSpec::new("y", &["x"], &["w"], &["noise"])).unwrap();
        assert!(fit.first_stage_min_sv < 0.2);
    }
}
