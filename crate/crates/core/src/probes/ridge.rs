use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_targets, feature_rows, ProbeFamily, ProbeModel, ProbeParams, Standardizer, TrainingMeta};
use crate::embedding::EmbeddingVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    pub alpha: f64,
    #[serde(default)]
    pub standardize: bool,
}

/// Unstandardized ridge fit; see [`fit_ridge_with`].
pub fn fit_ridge(x: &[EmbeddingVector], y: &[f64], alpha: f64) -> Result<ProbeModel> {
    fit_ridge_with(
        x,
        y,
        RidgeParams {
            alpha,
            standardize: false,
        },
    )
}

/// Minimizes `||Xw + b - y||^2 + alpha ||w||^2` with the intercept left
/// unpenalized. Solved on centered data through a Cholesky factorization.
pub fn fit_ridge_with(x: &[EmbeddingVector], y: &[f64], params: RidgeParams) -> Result<ProbeModel> {
    check_targets(x.len(), y, 2)?;
    let alpha = params.alpha;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let (dim, mut rows) = feature_rows(x)?;
    let standardization = params.standardize.then(|| Standardizer::fit(&rows));
    if let Some(s) = &standardization {
        rows.iter_mut().for_each(|r| s.apply(r));
    }
    let (weights, intercept) = solve(&rows, y, alpha)?;

    let mut hyperparameters = BTreeMap::new();
    hyperparameters.insert("alpha".to_string(), format!("{alpha:e}"));
    hyperparameters.insert("standardize".to_string(), params.standardize.to_string());
    Ok(ProbeModel {
        format_version: super::PROBE_FORMAT_VERSION,
        family: ProbeFamily::Ridge,
        dim,
        standardization,
        params: ProbeParams::Linear { weights, intercept },
        meta: TrainingMeta {
            hyperparameters,
            ..TrainingMeta::default()
        },
    })
}

fn solve(rows: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    let d = rows[0].len();
    let nf = n as f64;
    let mut x_mean = vec![0.0; d];
    for r in rows {
        for (m, v) in x_mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);
    let y_mean = y.iter().sum::<f64>() / nf;

    let xc = DMatrix::from_fn(n, d, |i, j| rows[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    let rhs = xc.tr_mul(&yc);

    if alpha == 0.0 {
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if max <= 0.0 || min <= 1e-10 * max {
            return Err(Error::Singular(
                "design is rank-deficient with alpha = 0; use a positive alpha".into(),
            ));
        }
    }
    for i in 0..d {
        gram[(i, i)] += alpha;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Singular("normal equations are not positive definite; use a positive alpha".into())
    })?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("ridge solve produced non-finite weights".into()));
    }
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok((w.iter().copied().collect(), intercept))
}
