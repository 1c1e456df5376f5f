//! Diagnostic probes mapping an entity embedding to a predicted RPS in `[0, 1]`.
//!
//! Families: closed-form ridge regression, a small ReLU MLP with a sigmoid
//! head, and the constant all-one / all-zero baselines. Predictions are always
//! clamped to `[0, 1]`; targets are regressed raw.

mod metrics;
mod mlp;
mod ridge;
mod split;
mod sweep;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{band_confusion, evaluate_probe, pearson, score_predictions, spearman, ProbeReport};
pub use mlp::{fit_mlp, flatten, DenseLayer, DropoutMask, Mlp, MlpParams};
pub use ridge::{fit_ridge, fit_ridge_with, RidgeParams};
pub use split::{DataSplit, SplitFractions};
pub use sweep::{
    baselines, mlp_grid, ridge_grid, sweep_and_select, write_sweep_csv, ProbeSpec, SweepOutcome, SweepRow,
};

use crate::embedding::EmbeddingVector;
use crate::{Error, Result};

pub const PROBE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeFamily {
    Ridge,
    Mlp,
    BaselineAllOne,
    BaselineAllZero,
}

impl ProbeFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeFamily::Ridge => "ridge",
            ProbeFamily::Mlp => "mlp",
            ProbeFamily::BaselineAllOne => "baseline-all-one",
            ProbeFamily::BaselineAllZero => "baseline-all-zero",
        }
    }
}

/// Per-feature affine standardization fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation; constant features keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ProbeParams {
    Linear { weights: Vec<f64>, intercept: f64 },
    Mlp { network: Mlp },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub hyperparameters: BTreeMap<String, String>,
    pub validation_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub early_stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub format_version: u32,
    pub family: ProbeFamily,
    pub dim: usize,
    pub standardization: Option<Standardizer>,
    pub params: ProbeParams,
    pub meta: TrainingMeta,
}

impl ProbeModel {
    pub fn constant(family: ProbeFamily, dim: usize) -> Self {
        let value = match family {
            ProbeFamily::BaselineAllOne => 1.0,
            _ => 0.0,
        };
        ProbeModel {
            format_version: PROBE_FORMAT_VERSION,
            family,
            dim,
            standardization: None,
            params: ProbeParams::Constant { value },
            meta: TrainingMeta::default(),
        }
    }

    /// Unclamped model output (after standardization).
    pub fn predict_raw(&self, v: &EmbeddingVector) -> Result<f64> {
        if v.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        let mut x = v.to_f64();
        if let Some(s) = &self.standardization {
            s.apply(&mut x);
        }
        Ok(match &self.params {
            ProbeParams::Linear { weights, intercept } => {
                intercept + weights.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>()
            }
            ProbeParams::Mlp { network } => network.forward(&x),
            ProbeParams::Constant { value } => *value,
        })
    }

    /// Predicted RPS, clamped to `[0, 1]`.
    pub fn predict(&self, v: &EmbeddingVector) -> Result<f64> {
        let raw = self.predict_raw(v)?;
        if !raw.is_finite() {
            return Err(Error::Numerical(format!("probe produced a non-finite output ({raw})")));
        }
        Ok(raw.clamp(0.0, 1.0))
    }

    pub fn predict_all(&self, xs: &[EmbeddingVector]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: ProbeModel = crate::io::read_json(path)?;
        if model.format_version != PROBE_FORMAT_VERSION {
            return Err(Error::Protocol(format!(
                "probe file version {} is not supported (expected {PROBE_FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Row-major f64 features of a set of embeddings; checks a common dim.
pub(crate) fn feature_rows(xs: &[EmbeddingVector]) -> Result<(usize, Vec<Vec<f64>>)> {
    let dim = xs
        .first()
        .map(EmbeddingVector::dim)
        .ok_or_else(|| Error::Validation("no training points".into()))?;
    let rows = xs
        .iter()
        .map(|x| {
            if x.dim() != dim {
                Err(Error::DimMismatch {
                    expected: dim,
                    got: x.dim(),
                })
            } else {
                Ok(x.to_f64())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dim, rows))
}

pub(crate) fn check_targets(n_x: usize, y: &[f64], min: usize) -> Result<()> {
    if n_x != y.len() {
        return Err(Error::Validation(format!("{n_x} inputs but {} targets", y.len())));
    }
    if n_x < min {
        return Err(Error::Validation(format!("need at least {min} training points, got {n_x}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("targets must be finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constants_predict_their_value() {
        let v = EmbeddingVector::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(ProbeModel::constant(ProbeFamily::BaselineAllOne, 2).predict(&v).unwrap(), 1.0);
        assert_eq!(ProbeModel::constant(ProbeFamily::BaselineAllZero, 2).predict(&v).unwrap(), 0.0);
        let wrong = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(ProbeModel::constant(ProbeFamily::BaselineAllZero, 2).predict(&wrong).is_err());
    }

    #[test]
    fn model_file_roundtrip() {
        let model = ProbeModel {
            format_version: PROBE_FORMAT_VERSION,
            family: ProbeFamily::Ridge,
            dim: 2,
            standardization: Some(Standardizer {
                mean: vec![0.5, 0.25],
                scale: vec![2.0, 1.0],
            }),
            params: ProbeParams::Linear {
                weights: vec![0.1, -0.2],
                intercept: 0.4,
            },
            meta: TrainingMeta::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        model.save(&path).unwrap();
        assert_eq!(ProbeModel::load(&path).unwrap(), model);
    }

    proptest! {
        #[test]
        fn predictions_are_clamped(
            weights in prop::collection::vec(-50.0f64..50.0, 3),
            intercept in -10.0f64..10.0,
            x in prop::collection::vec(-100.0f32..100.0, 3),
        ) {
            prop_assume!(x.iter().any(|v| *v != 0.0));
            let model = ProbeModel {
                format_version: PROBE_FORMAT_VERSION,
                family: ProbeFamily::Ridge,
                dim: 3,
                standardization: None,
                params: ProbeParams::Linear { weights, intercept },
                meta: TrainingMeta::default(),
            };
            let p = model.predict(&EmbeddingVector::new(x).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
