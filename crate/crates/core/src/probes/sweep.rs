use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::gather;
use super::{
    fit_mlp, fit_ridge_with, score_predictions, DataSplit, MlpParams, ProbeFamily, ProbeModel, ProbeReport,
    RidgeParams,
};
use crate::embedding::EmbeddingVector;
use crate::{Error, Result};

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProbeSpec {
    Ridge(RidgeParams),
    Mlp(MlpParams),
    BaselineAllOne,
    BaselineAllZero,
}

impl ProbeSpec {
    pub fn family(&self) -> ProbeFamily {
        match self {
            ProbeSpec::Ridge(_) => ProbeFamily::Ridge,
            ProbeSpec::Mlp(_) => ProbeFamily::Mlp,
            ProbeSpec::BaselineAllOne => ProbeFamily::BaselineAllOne,
            ProbeSpec::BaselineAllZero => ProbeFamily::BaselineAllZero,
        }
    }

    /// `key=value` pairs joined by `;`, sorted by key.
    pub fn describe(&self) -> String {
        let map = match self {
            ProbeSpec::Ridge(p) => {
                format!("alpha={:e};standardize={}", p.alpha, p.standardize)
            }
            ProbeSpec::Mlp(p) => p
                .hyperparameters()
                .into_iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";"),
            _ => String::new(),
        };
        map
    }

    pub fn fit(
        &self,
        x: &[EmbeddingVector],
        y: &[f64],
        validation: Option<(&[EmbeddingVector], &[f64])>,
    ) -> Result<ProbeModel> {
        match self {
            ProbeSpec::Ridge(p) => fit_ridge_with(x, y, *p),
            ProbeSpec::Mlp(p) => fit_mlp(x, y, validation, p),
            ProbeSpec::BaselineAllOne | ProbeSpec::BaselineAllZero => {
                let dim = x
                    .first()
                    .map(EmbeddingVector::dim)
                    .ok_or_else(|| Error::Validation("no training points".into()))?;
                Ok(ProbeModel::constant(self.family(), dim))
            }
        }
    }
}

/// Log-spaced alphas `1e-6 ..= 1e3`, each with and without standardization.
pub fn ridge_grid() -> Vec<ProbeSpec> {
    let mut grid = Vec::new();
    for standardize in [false, true] {
        for e in -6..=3 {
            grid.push(ProbeSpec::Ridge(RidgeParams {
                alpha: 10f64.powi(e),
                standardize,
            }));
        }
    }
    grid
}

/// Full width x depth x dropout x lr x batch product.
pub fn mlp_grid(seed: u64) -> Vec<ProbeSpec> {
    let mut grid = Vec::new();
    for width in [256, 512, 1024] {
        for depth in [1, 2, 3] {
            for dropout in [0.0, 0.1, 0.2] {
                for lr in [1e-4, 3e-4, 1e-3] {
                    for batch in [256, 512, 1024] {
                        grid.push(ProbeSpec::Mlp(MlpParams {
                            width,
                            depth,
                            dropout,
                            lr,
                            batch,
                            seed,
                            ..MlpParams::default()
                        }));
                    }
                }
            }
        }
    }
    grid
}

pub fn baselines() -> Vec<ProbeSpec> {
    vec![ProbeSpec::BaselineAllOne, ProbeSpec::BaselineAllZero]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub family: ProbeFamily,
    pub hyperparameters: String,
    pub validation_rmse: Option<f64>,
    pub test: Option<ProbeReport>,
    pub selected: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub best: ProbeModel,
    pub best_index: usize,
    pub test_report: ProbeReport,
    pub rows: Vec<SweepRow>,
}

/// Fits every grid cell on the train split (in parallel), scores validation
/// RMSE on clamped predictions and keeps the minimum. Ties go to the earlier
/// cell. Failed cells stay in the table with their error.
pub fn sweep_and_select(
    grid: &[ProbeSpec],
    x: &[EmbeddingVector],
    y: &[f64],
    split: &DataSplit,
) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::Validation("probe grid is empty".into()));
    }
    if x.len() != y.len() || split.len() != x.len() {
        return Err(Error::Validation(format!(
            "{} inputs, {} targets and a split over {} entities",
            x.len(),
            y.len(),
            split.len()
        )));
    }
    let (tx, ty) = (gather(x, &split.train), gather(y, &split.train));
    let (vx, vy) = (gather(x, &split.validation), gather(y, &split.validation));
    let (sx, sy) = (gather(x, &split.test), gather(y, &split.test));

    let fitted: Vec<Result<(ProbeModel, f64, ProbeReport)>> = grid
        .par_iter()
        .map(|spec| {
            let mut model = spec.fit(&tx, &ty, Some((&vx, &vy)))?;
            let val = score_predictions(&vy, &model.predict_all(&vx)?)?.rmse;
            model.meta.validation_rmse = Some(val);
            let test = score_predictions(&sy, &model.predict_all(&sx)?)?;
            Ok((model, val, test))
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, r) in fitted.iter().enumerate() {
        if let Ok((_, val, _)) = r {
            let better = match best {
                None => true,
                Some(b) => matches!(&fitted[b], Ok((_, bv, _)) if *val < *bv),
            };
            if better && val.is_finite() {
                best = Some(i);
            }
        }
    }
    let best_index = best.ok_or(Error::SweepFailure(grid.len()))?;

    let rows = grid
        .iter()
        .zip(&fitted)
        .enumerate()
        .map(|(index, (spec, r))| SweepRow {
            index,
            family: spec.family(),
            hyperparameters: spec.describe(),
            validation_rmse: r.as_ref().ok().map(|(_, v, _)| *v),
            test: r.as_ref().ok().map(|(_, _, t)| t.clone()),
            selected: index == best_index,
            error: r.as_ref().err().map(ToString::to_string),
        })
        .collect();
    let (best_model, _, test_report) = fitted.into_iter().nth(best_index).expect("index in range")?;
    Ok(SweepOutcome {
        best: best_model,
        best_index,
        test_report,
        rows,
    })
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(crate::io::create(path)?);
    w.write_record([
        "family",
        "hyperparameters",
        "validation_rmse",
        "rmse",
        "mae",
        "pearson_r",
        "spearman_rho",
        "macro_f1",
        "macro_recall",
        "macro_precision",
        "weighted_precision",
        "weighted_f1",
        "accuracy",
        "selected",
        "error",
    ])?;
    let num = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for r in rows {
        let t = r.test.as_ref();
        w.write_record([
            r.family.as_str().to_string(),
            r.hyperparameters.clone(),
            num(r.validation_rmse),
            num(t.map(|t| t.rmse)),
            num(t.map(|t| t.mae)),
            num(t.map(|t| t.pearson_r)),
            num(t.map(|t| t.spearman_rho)),
            num(t.map(|t| t.macro_f1)),
            num(t.map(|t| t.macro_recall)),
            num(t.map(|t| t.macro_precision)),
            num(t.map(|t| t.weighted_precision)),
            num(t.map(|t| t.weighted_f1)),
            num(t.map(|t| t.accuracy)),
            r.selected.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::SplitFractions;
    use crate::seed::rng_for;
    use rand::Rng;

    fn near_linear(n: usize, seed: u64) -> (Vec<EmbeddingVector>, Vec<f64>) {
        let mut rng = rng_for(seed, "sweep-test", "data");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            xs.push(EmbeddingVector::from_f64(&[a + 0.05, b, 1.0]).unwrap());
            ys.push((0.6 * a + 0.3 * b + 0.01 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0));
        }
        (xs, ys)
    }

    fn ridge(alpha: f64) -> ProbeSpec {
        ProbeSpec::Ridge(RidgeParams {
            alpha,
            standardize: false,
        })
    }

    #[test]
    fn single_cell_grid_returns_that_model() {
        let (x, y) = near_linear(60, 1);
        let split = DataSplit::new(60, SplitFractions::default(), 1).unwrap();
        let out = sweep_and_select(&[ridge(0.1)], &x, &y, &split).unwrap();
        assert_eq!(out.best_index, 0);
        assert_eq!(out.best.family, ProbeFamily::Ridge);
        assert!(out.rows[0].selected);
    }

    #[test]
    fn small_alpha_wins_on_near_linear_data() {
        let (x, y) = near_linear(200, 2);
        let split = DataSplit::new(200, SplitFractions::default(), 2).unwrap();
        let out = sweep_and_select(&[ridge(1e3), ridge(1e-3)], &x, &y, &split).unwrap();
        assert_eq!(out.best_index, 1);
    }

    #[test]
    fn external_rescoring_agrees() {
        let (x, y) = near_linear(150, 3);
        let split = DataSplit::new(150, SplitFractions::default(), 3).unwrap();
        let grid = [ridge(10.0), ridge(1e-2), ProbeSpec::BaselineAllZero];
        let out = sweep_and_select(&grid, &x, &y, &split).unwrap();
        let vx = gather(&x, &split.validation);
        let vy = gather(&y, &split.validation);
        let tx = gather(&x, &split.train);
        let ty = gather(&y, &split.train);
        let scores: Vec<f64> = grid
            .iter()
            .map(|g| {
                let m = g.fit(&tx, &ty, None).unwrap();
                let sse: f64 = vx
                    .iter()
                    .zip(&vy)
                    .map(|(v, t)| (m.predict(v).unwrap() - t).powi(2))
                    .sum();
                (sse / vy.len() as f64).sqrt()
            })
            .collect();
        let winner = (0..scores.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(out.best_index, winner);
    }

    #[test]
    fn all_failures_is_a_sweep_failure() {
        let x: Vec<_> = (0..20).map(|_| EmbeddingVector::new(vec![1.0, 1.0]).unwrap()).collect();
        let y: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let split = DataSplit::new(20, SplitFractions::default(), 0).unwrap();
        let err = sweep_and_select(&[ridge(0.0)], &x, &y, &split).unwrap_err();
        assert!(matches!(err, Error::SweepFailure(1)));
    }

    #[test]
    fn grids_have_expected_sizes_and_csv_writes() {
        assert_eq!(ridge_grid().len(), 20);
        assert_eq!(mlp_grid(0).len(), 243);
        let (x, y) = near_linear(40, 4);
        let split = DataSplit::new(40, SplitFractions::default(), 4).unwrap();
        let mut grid = vec![ridge(0.0)];
        grid.extend(baselines());
        let out = sweep_and_select(&grid, &x, &y, &split).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &out.rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("baseline-all-one"));
    }
}
