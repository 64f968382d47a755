//! JSON form of an estimate summary:
//!
//! ```json
//! {"names": ["beta_x", "gamma_x"], "theta_hat": [0.1, -0.2],
//!  "v_hat": [[1.0, 0.7], [0.7, 1.0]], "n": 500, "target": "beta_x"}
//! ```
//!
//! `names` and `target` are optional (defaults `theta1…`, first parameter);
//! `meta` is carried through untouched.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::EstimateSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    pub theta_hat: Vec<f64>,
    pub v_hat: Vec<Vec<f64>>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

impl EstimateFile {
    pub fn from_summary(est: &EstimateSummary, meta: Option<Value>) -> Self {
        let k = est.k();
        Self {
            names: Some(est.names().to_vec()),
            theta_hat: est.theta_hat().iter().copied().collect(),
            v_hat: (0..k).map(|i| (0..k).map(|j| est.v_hat()[(i, j)]).collect()).collect(),
            n: est.n(),
            target: Some(est.names()[est.target()].clone()),
            meta,
        }
    }

    pub fn to_summary(&self) -> Result<EstimateSummary> {
        let k = self.theta_hat.len();
        if self.v_hat.len() != k || self.v_hat.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!("field `v_hat` must be {k}×{k} to match `theta_hat`")));
        }
        let v = DMatrix::from_fn(k, k, |i, j| self.v_hat[i][j]);
        let mut est = EstimateSummary::new(DVector::from_column_slice(&self.theta_hat), v, self.n, 0)?;
        if let Some(names) = &self.names {
            est = est.with_names(names.clone())?;
        }
        if let Some(target) = &self.target {
            let t = est.index_of(target).ok_or_else(|| Error::UnknownParameter(target.clone()))?;
            est = est.with_target(t)?;
        }
        Ok(est)
    }
}

pub fn parse_estimate(text: &str) -> Result<(EstimateSummary, Option<Value>)> {
    let file: EstimateFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("estimate file: {e}")))?;
    let est = file.to_summary()?;
    Ok((est, file.meta))
}

pub fn read_estimate(path: impl AsRef<Path>) -> Result<(EstimateSummary, Option<Value>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_estimate(&text)
}

pub fn estimate_to_json(est: &EstimateSummary, meta: Option<Value>) -> String {
    serde_json::to_string_pretty(&EstimateFile::from_summary(est, meta)).expect("estimate serializes")
}

pub fn write_estimate(path: impl AsRef<Path>, est: &EstimateSummary, meta: Option<Value>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, estimate_to_json(est, meta) + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let est = EstimateSummary::from_slices(&[0.1, 1.0 / 3.0], &[&[1.0, 0.7], &[0.7, 1.0]], 25, 1)
            .unwrap()
            .with_names(vec!["a".into(), "b".into()])
            .unwrap();
        let text = estimate_to_json(&est, Some(serde_json::json!({"variance": "HC0"})));
        let (back, meta) = parse_estimate(&text).unwrap();
        assert_eq!(back, est);
        assert_eq!(meta.unwrap()["variance"], "HC0");
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse_estimate(r#"{"theta_hat": [0, 0], "n": 1}"#).unwrap_err();
        assert!(err.to_string().contains("v_hat"), "{err}");
        let err = parse_estimate(r#"{"theta_hat": [0, 0], "v_hat": [[1, 0]], "n": 1}"#).unwrap_err();
        assert!(err.to_string().contains("v_hat"), "{err}");
        let err = parse_estimate(r#"{"theta_hat": [0, 0], "v_hat": [[1,0],[0,1]], "n": 1, "target": "q"}"#).unwrap_err();
        assert!(matches!(err, Error::UnknownParameter(_)));
    }
}
