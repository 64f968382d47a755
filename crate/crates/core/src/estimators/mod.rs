//! Least squares and IV-GMM front ends that turn a CSV table into an
//! [`EstimateSummary`](crate::EstimateSummary), plus the parser for textual
//! sign restrictions.

mod data;
mod gmm;
mod ols;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use data::Dataset;
pub use gmm::{iv_gmm_with_endogeneity, GmmFit, GmmSpec};
pub use ols::{ols, OlsFit, OlsSpec};

use crate::error::{Error, Result};
use crate::model::{EstimateSummary, LinearConstraint};

pub const INTERCEPT: &str = "const";
const RANK_TOL: f64 = 1e-10;

/// How the middle of the sandwich is formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct VarianceSpec {
    /// Column whose values identify clusters; `None` for heteroskedasticity-robust.
    pub cluster: Option<String>,
    /// Apply `n/(n−k)` (robust) or `G/(G−1)` (clustered).
    pub small_sample: bool,
}

impl VarianceSpec {
    pub fn robust() -> Self {
        Self::default()
    }

    pub fn clustered(column: impl Into<String>) -> Self {
        Self { cluster: Some(column.into()), small_sample: false }
    }

    pub fn with_small_sample(mut self, on: bool) -> Self {
        self.small_sample = on;
        self
    }

    pub fn label(&self) -> &'static str {
        match (self.cluster.is_some(), self.small_sample) {
            (false, false) => "HC0",
            (false, true) => "HC1",
            (true, false) => "CR0",
            (true, true) => "CR1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationMeta {
    pub estimator: String,
    pub variance: String,
    pub n: usize,
    pub clusters: Option<usize>,
    pub warnings: Vec<String>,
}

/// Cluster index of each row, numbered in order of first appearance.
fn cluster_ids(data: &Dataset, spec: &VarianceSpec) -> Result<Option<(Vec<usize>, usize)>> {
    let Some(col) = &spec.cluster else { return Ok(None) };
    let labels = data.labels(col)?;
    let mut map: HashMap<&str, usize> = HashMap::new();
    let ids: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l.as_str()).or_insert(next)
        })
        .collect();
    let g = map.len();
    if g < 2 {
        return Err(Error::DegenerateClusters(format!("column `{col}` has {g} distinct value(s)")));
    }
    Ok(Some((ids, g)))
}

/// `(1/n) Σ_c s_c s_c'` where `s_c` sums the rows of `scores` (n × m) within cluster `c`,
/// or over single rows when unclustered.
fn score_covariance(scores: &DMatrix<f64>, clusters: Option<&(Vec<usize>, usize)>) -> DMatrix<f64> {
    let n = scores.nrows();
    let summed = match clusters {
        None => scores.clone(),
        Some((ids, g)) => {
            let mut s = DMatrix::zeros(*g, scores.ncols());
            for (i, &c) in ids.iter().enumerate() {
                let mut row = s.row_mut(c);
                row += scores.row(i);
            }
            s
        }
    };
    summed.transpose() * summed / n as f64
}

fn small_sample_factor(spec: &VarianceSpec, n: usize, k: usize, clusters: Option<&(Vec<usize>, usize)>) -> Result<f64> {
    if !spec.small_sample {
        return Ok(1.0);
    }
    Ok(match clusters {
        Some((_, g)) => *g as f64 / (*g as f64 - 1.0),
        None => {
            if n <= k {
                return Err(Error::Data(format!("{n} rows for {k} parameters")));
            }
            n as f64 / (n - k) as f64
        }
    })
}

/// Errors unless the smallest singular value exceeds `RANK_TOL` times the largest.
fn check_rank(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= RANK_TOL * max {
        return Err(Error::RankDeficient(format!("{what} (singular values {min:.3e} / {max:.3e})")));
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn summary(names: Vec<String>, theta: DVector<f64>, v: DMatrix<f64>, n: usize, target: usize) -> Result<EstimateSummary> {
    EstimateSummary::new(theta, v, n, target)?.with_names(names)
}

/// Parses `"<name> <= c"` or `"<name> >= c"` into `g(θ) ≤ 0` form. A `>=`
/// restriction is negated. Naming the target is rejected.
pub fn constraint_from_spec(spec: &str, estimate: &EstimateSummary) -> Result<LinearConstraint> {
    let (name, rest, flip) = if let Some((l, r)) = spec.split_once("<=") {
        (l, r, false)
    } else if let Some((l, r)) = spec.split_once(">=") {
        (l, r, true)
    } else {
        return Err(Error::ConstraintParse(spec.to_string()));
    };
    let name = name.trim();
    let bound: f64 = rest.trim().parse().map_err(|_| Error::ConstraintParse(spec.to_string()))?;
    if name.is_empty() || !bound.is_finite() {
        return Err(Error::ConstraintParse(spec.to_string()));
    }
    let idx = estimate.index_of(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
    if idx == estimate.target() {
        return Err(Error::ConstraintOnTargetOnly);
    }
    let sign = if flip { -1.0 } else { 1.0 };
    let mut a = DVector::zeros(estimate.k());
    a[idx] = sign;
    LinearConstraint::new(a, -sign * bound)
}
