//! Geometric diagnostics over entity embeddings: a two-direction multiclass
//! Fisher LDA of the RPS terciles, and the retrieved-vs-unretrieved
//! max-score association delta.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::rps::Band;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaOptions {
    /// Add `1e-3 * trace(S_w) / h` to the diagonal of the within-class scatter.
    pub shrinkage: bool,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions { shrinkage: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaMeta {
    pub points: usize,
    pub classes: usize,
    /// Ridge added to the within-class scatter diagonal.
    pub shrinkage: f64,
    /// Generalized eigenvalues of the two returned directions, descending.
    pub eigenvalues: [f64; 2],
    /// Number of directions with a non-negligible eigenvalue (at most classes - 1).
    pub discriminant_rank: usize,
    /// Between-class scatter is numerically zero: directions carry no class signal.
    pub between_class_negligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaProjection {
    /// Two orthonormal directions in input space.
    pub basis: [Vec<f64>; 2],
    /// Overall mean, subtracted before projecting.
    pub center: Vec<f64>,
    pub class_means: Vec<(Band, [f64; 2])>,
    pub projected_points: Vec<([f64; 2], Band)>,
    pub meta: LdaMeta,
}

impl LdaProjection {
    pub fn project(&self, v: &EmbeddingVector) -> Result<[f64; 2]> {
        if v.dim() != self.center.len() {
            return Err(Error::DimMismatch {
                expected: self.center.len(),
                got: v.dim(),
            });
        }
        let x = v.to_f64();
        let mut out = [0.0; 2];
        for (o, b) in out.iter_mut().zip(&self.basis) {
            *o = x
                .iter()
                .zip(&self.center)
                .zip(b)
                .map(|((xi, ci), bi)| (xi - ci) * bi)
                .sum();
        }
        Ok(out)
    }

    /// Band of the nearest projected class mean.
    pub fn classify(&self, v: &EmbeddingVector) -> Result<Band> {
        let p = self.project(v)?;
        let dist = |m: &[f64; 2]| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
        Ok(self
            .class_means
            .iter()
            .min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
            .map(|(band, _)| *band)
            .expect("at least two classes"))
    }

    /// Projection CSV with columns `x, y, band, entity_id`.
    pub fn write_csv(&self, path: &Path, ids: &[impl AsRef<str>]) -> Result<()> {
        if ids.len() != self.projected_points.len() {
            return Err(Error::Validation(format!(
                "{} ids for {} projected points",
                ids.len(),
                self.projected_points.len()
            )));
        }
        let mut w = csv::Writer::from_writer(crate::io::create(path)?);
        w.write_record(["x", "y", "band", "entity_id"])?;
        for (([x, y], band), id) in self.projected_points.iter().zip(ids) {
            w.write_record([x.to_string(), y.to_string(), band.to_string(), id.as_ref().to_string()])?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

pub fn fit_lda<V: Borrow<EmbeddingVector>>(points: &[(V, Band)]) -> Result<LdaProjection> {
    fit_lda_with(points, LdaOptions::default())
}

/// Fisher LDA: directions maximizing between-class over within-class scatter,
/// via Cholesky whitening of `S_w + lambda I` and a symmetric eigensolve.
pub fn fit_lda_with<V: Borrow<EmbeddingVector>>(points: &[(V, Band)], opts: LdaOptions) -> Result<LdaProjection> {
    let Some((first, _)) = points.first() else {
        return Err(Error::DegenerateClass("no points".into()));
    };
    let h = first.borrow().dim();
    if h < 2 {
        return Err(Error::Validation("LDA needs embeddings of dim >= 2".into()));
    }
    let mut by_class: BTreeMap<Band, Vec<DVector<f64>>> = BTreeMap::new();
    for (v, band) in points {
        let v = v.borrow();
        if v.dim() != h {
            return Err(Error::DimMismatch { expected: h, got: v.dim() });
        }
        by_class.entry(*band).or_default().push(DVector::from_vec(v.to_f64()));
    }
    if by_class.len() < 2 {
        return Err(Error::DegenerateClass(format!(
            "need at least two bands, got {}",
            by_class.len()
        )));
    }
    let n = points.len() as f64;
    let mut center = DVector::zeros(h);
    for xs in by_class.values() {
        for x in xs {
            center += x;
        }
    }
    center /= n;

    let mut s_w = DMatrix::<f64>::zeros(h, h);
    let mut s_b = DMatrix::<f64>::zeros(h, h);
    let mut means = Vec::new();
    for (band, xs) in &by_class {
        let mut mean = DVector::zeros(h);
        for x in xs {
            mean += x;
        }
        mean /= xs.len() as f64;
        for x in xs {
            let d = x - &mean;
            s_w.ger(1.0, &d, &d, 1.0);
        }
        let d = &mean - &center;
        s_b.ger(xs.len() as f64, &d, &d, 1.0);
        means.push((*band, mean));
    }

    let trace_w = s_w.trace();
    let shrinkage = if !opts.shrinkage {
        0.0
    } else if trace_w > 0.0 {
        1e-3 * trace_w / h as f64
    } else {
        1e-3
    };
    let mut a = s_w.clone();
    for i in 0..h {
        a[(i, i)] += shrinkage;
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::Numerical("within-class scatter is singular; enable shrinkage".into())
    })?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(h, h))
        .ok_or_else(|| Error::Numerical("cannot invert the Cholesky factor".into()))?;
    let mut m = &l_inv * &s_b * l_inv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let l_inv_t = l_inv.transpose();
    let w1 = &l_inv_t * eig.eigenvectors.column(order[0]);
    let w2 = &l_inv_t * eig.eigenvectors.column(order[1]);
    let b1 = canonical_sign(w1.normalize());
    let mut b2 = &w2 - &b1 * b1.dot(&w2);
    if b2.norm() < 1e-12 {
        // fall back to any direction orthogonal to b1
        b2 = DVector::from_fn(h, |i, _| if i == b1.iamax() { 0.0 } else { 1.0 });
        b2 = &b2 - &b1 * b1.dot(&b2);
    }
    let b2 = canonical_sign(b2.normalize());

    let eigenvalues = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
    let negligible = eigenvalues[0] < 1e-9;
    let discriminant_rank = if negligible {
        0
    } else {
        eigenvalues
            .iter()
            .filter(|&&e| e > 1e-9 * eigenvalues[0].max(1.0))
            .count()
            .min(by_class.len() - 1)
    };

    let project = |x: &DVector<f64>| {
        let d = x - &center;
        [b1.dot(&d), b2.dot(&d)]
    };
    let projected_points = points
        .iter()
        .map(|(v, band)| (project(&DVector::from_vec(v.borrow().to_f64())), *band))
        .collect();
    let class_means = means.iter().map(|(band, mu)| (*band, project(mu))).collect();

    Ok(LdaProjection {
        basis: [b1.iter().copied().collect(), b2.iter().copied().collect()],
        center: center.iter().copied().collect(),
        class_means,
        projected_points,
        meta: LdaMeta {
            points: points.len(),
            classes: by_class.len(),
            shrinkage,
            eigenvalues,
            discriminant_rank,
            between_class_negligible: negligible,
        },
    })
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

/// A gold document, whether it was retrieved in the top-k window, and the
/// predicted RPS of every entity it contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldDoc {
    pub doc_id: String,
    pub retrieved: bool,
    pub entity_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationDelta {
    /// Mean max-score of retrieved docs minus that of unretrieved docs.
    pub delta: f64,
    pub retrieved_mean: f64,
    pub unretrieved_mean: f64,
    pub retrieved: usize,
    pub unretrieved: usize,
    /// Docs without any scored entity, left out of both sides.
    pub skipped: usize,
}

pub fn association_delta(docs: &[GoldDoc]) -> Result<AssociationDelta> {
    let mut sides = [(0.0, 0usize), (0.0, 0usize)];
    let mut skipped = 0;
    for doc in docs {
        let Some(max) = doc.entity_scores.iter().copied().reduce(f64::max) else {
            skipped += 1;
            continue;
        };
        let side = &mut sides[usize::from(doc.retrieved)];
        side.0 += max;
        side.1 += 1;
    }
    let [(un_sum, un_n), (re_sum, re_n)] = sides;
    if re_n == 0 || un_n == 0 {
        return Err(Error::Undefined(format!(
            "association delta needs retrieved and unretrieved docs (got {re_n} and {un_n})"
        )));
    }
    let retrieved_mean = re_sum / re_n as f64;
    let unretrieved_mean = un_sum / un_n as f64;
    Ok(AssociationDelta {
        delta: retrieved_mean - unretrieved_mean,
        retrieved_mean,
        unretrieved_mean,
        retrieved: re_n,
        unretrieved: un_n,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, center: &[f64], scale: f64) -> EmbeddingVector {
        let v: Vec<f64> = center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + scale * z
            })
            .collect();
        EmbeddingVector::from_f64(&v).unwrap()
    }

    fn gold(retrieved: bool, scores: &[f64]) -> GoldDoc {
        GoldDoc {
            doc_id: String::new(),
            retrieved,
            entity_scores: scores.to_vec(),
        }
    }

    #[test]
    fn delta_extremes() {
        let docs = [gold(true, &[1.0, 0.2]), gold(true, &[1.0]), gold(false, &[0.0]), gold(false, &[0.0, 0.0])];
        assert_eq!(association_delta(&docs).unwrap().delta, 1.0);
        let docs = [gold(true, &[0.3, 0.6]), gold(false, &[0.6, 0.3])];
        assert_eq!(association_delta(&docs).unwrap().delta, 0.0);
    }

    #[test]
    fn delta_six_docs_by_hand() {
        // retrieved maxes: 0.9, 0.5, 0.7 -> mean 0.7
        // unretrieved maxes: 0.4, 0.1, 0.4 -> mean 0.3
        let docs = [
            gold(true, &[0.9, 0.2]),
            gold(true, &[0.5]),
            gold(true, &[0.1, 0.7, 0.3]),
            gold(false, &[0.4, 0.4]),
            gold(false, &[0.1]),
            gold(false, &[0.0, 0.4]),
        ];
        let d = association_delta(&docs).unwrap();
        assert!((d.delta - 0.4).abs() < 1e-12);
        assert_eq!((d.retrieved, d.unretrieved), (3, 3));
    }

    #[test]
    fn delta_is_antisymmetric() {
        let docs = [gold(true, &[0.9]), gold(false, &[0.2, 0.3]), gold(true, &[0.4])];
        let flipped: Vec<GoldDoc> = docs
            .iter()
            .map(|d| GoldDoc {
                retrieved: !d.retrieved,
                ..d.clone()
            })
            .collect();
        let a = association_delta(&docs).unwrap().delta;
        let b = association_delta(&flipped).unwrap().delta;
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn delta_needs_both_sides() {
        assert!(matches!(association_delta(&[gold(true, &[0.5])]), Err(Error::Undefined(_))));
        assert!(association_delta(&[gold(true, &[0.5]), gold(false, &[])]).is_err());
    }

    #[test]
    fn single_band_is_degenerate() {
        let v = EmbeddingVector::new(vec![1.0, 2.0]).unwrap();
        let err = fit_lda(&[(v.clone(), Band::Low), (v, Band::Low)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateClass(_)));
    }

    #[test]
    fn identical_points_project_to_one_spot() {
        let v = EmbeddingVector::new(vec![0.5, -1.0, 2.0]).unwrap();
        let pts = vec![(v.clone(), Band::Low), (v.clone(), Band::Mid), (v, Band::High)];
        let proj = fit_lda(&pts).unwrap();
        assert!(proj.meta.between_class_negligible);
        let p0 = proj.projected_points[0].0;
        for (p, _) in &proj.projected_points {
            assert!((p[0] - p0[0]).abs() < 1e-12 && (p[1] - p0[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_scatter_without_shrinkage_errors() {
        let a = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        let pts = vec![(a, Band::Low), (b, Band::High)];
        assert!(matches!(
            fit_lda_with(&pts, LdaOptions { shrinkage: false }),
            Err(Error::Numerical(_))
        ));
        assert!(fit_lda(&pts).is_ok());
    }

    #[test]
    fn equal_means_different_covariances_are_flagged() {
        // Both classes are symmetric around the origin: identical means exactly.
        let mut pts = Vec::new();
        for s in [1.0f32, -1.0] {
            pts.push((EmbeddingVector::new(vec![s * 3.0, 0.0]).unwrap(), Band::Low));
            pts.push((EmbeddingVector::new(vec![0.0, s * 0.5]).unwrap(), Band::High));
        }
        let proj = fit_lda(&pts).unwrap();
        assert!(proj.meta.between_class_negligible);
        assert_eq!(proj.meta.discriminant_rank, 0);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let centers = [[0.0; 6], [2.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0, 0.0, 0.0]];
        let pts: Vec<_> = (0..90)
            .map(|i| (gaussian(&mut rng, &centers[i % 3], 0.5), Band::ALL[i % 3]))
            .collect();
        let proj = fit_lda(&pts).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&proj.basis[0], &proj.basis[0]) - 1.0).abs() < 1e-10);
        assert!((dot(&proj.basis[1], &proj.basis[1]) - 1.0).abs() < 1e-10);
        assert!(dot(&proj.basis[0], &proj.basis[1]).abs() < 1e-10);
        assert_eq!(proj.meta.discriminant_rank, 2);
    }

    #[test]
    fn csv_has_expected_columns() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        let proj = fit_lda(&[(a, Band::Low), (b, Band::High)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        proj.write_csv(&path, &["e1", "e2"]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,band,entity_id\n"));
        assert!(text.contains(",low,e1\n") && text.contains(",high,e2\n"));
    }
}
