use serde::{Deserialize, Serialize};

use super::ProbeModel;
use crate::embedding::EmbeddingVector;
use crate::rps::Band;
use crate::{Error, Result};

/// Regression and three-band classification scores on a held-out set.
/// Undefined correlations are NaN (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub weighted_precision: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// Rows are true bands, columns predicted bands, in low/mid/high order.
    pub confusion: [[usize; 3]; 3],
    pub residuals: Vec<f64>,
}

pub fn evaluate_probe(model: &ProbeModel, x: &[EmbeddingVector], y: &[f64]) -> Result<ProbeReport> {
    let predicted = model.predict_all(x)?;
    score_predictions(y, &predicted)
}

pub fn score_predictions(y: &[f64], predicted: &[f64]) -> Result<ProbeReport> {
    if y.is_empty() {
        return Err(Error::Validation("cannot score an empty test set".into()));
    }
    if y.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "{} labels but {} predictions",
            y.len(),
            predicted.len()
        )));
    }
    let n = y.len() as f64;
    let residuals: Vec<f64> = y.iter().zip(predicted).map(|(t, p)| t - p).collect();
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let mae = residuals.iter().map(|r| r.abs()).sum::<f64>() / n;

    let confusion = band_confusion(y, predicted);
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    let mut support = [0usize; 3];
    let mut correct = 0;
    for c in 0..3 {
        let tp = confusion[c][c];
        correct += tp;
        support[c] = confusion[c].iter().sum();
        let predicted_c: usize = (0..3).map(|r| confusion[r][c]).sum();
        precision[c] = ratio(tp, predicted_c);
        recall[c] = ratio(tp, support[c]);
        f1[c] = if precision[c] + recall[c] > 0.0 {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        } else {
            0.0
        };
    }
    let macro_avg = |m: &[f64; 3]| m.iter().sum::<f64>() / 3.0;
    let weighted = |m: &[f64; 3]| (0..3).map(|c| m[c] * support[c] as f64).sum::<f64>() / n;

    Ok(ProbeReport {
        n: y.len(),
        rmse,
        mae,
        pearson_r: pearson(y, predicted),
        spearman_rho: spearman(y, predicted),
        macro_f1: macro_avg(&f1),
        macro_recall: macro_avg(&recall),
        macro_precision: macro_avg(&precision),
        weighted_precision: weighted(&precision),
        weighted_f1: weighted(&f1),
        accuracy: correct as f64 / n,
        confusion,
        residuals,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn band_confusion(y: &[f64], predicted: &[f64]) -> [[usize; 3]; 3] {
    let mut m = [[0usize; 3]; 3];
    for (t, p) in y.iter().zip(predicted) {
        m[Band::from_score(*t).index()][Band::from_score(*p).index()] += 1;
    }
    m
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 || a[1..n].iter().all(|v| *v == a[0]) || b[1..n].iter().all(|v| *v == b[0]) {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return f64::NAN;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}
