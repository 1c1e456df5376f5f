//! Retrieval Probability Score: rank a target among `N - 1` KG-disjoint
//! neutrals for each of its related-entity queries, count top-k hits, average.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_neutral_pool, Corpus, NeutralPool, RelatedEntitySet};
use crate::embedding::{embed_entity, EmbedInput, EmbeddingProvider, EmbeddingVector};
use crate::seed::rng_for;
use crate::{Error, Result};

/// Tercile band of an RPS value: low `[0, 0.33)`, mid `[0.33, 0.66)`, high `[0.66, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    Mid,
    High,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Low, Band::Mid, Band::High];

    pub fn from_score(score: f64) -> Band {
        if score < 0.33 {
            Band::Low
        } else if score < 0.66 {
            Band::Mid
        } else {
            Band::High
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Mid => "mid",
            Band::High => "high",
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1-based rank of `target_id` by cosine to `query`.
///
/// Ties rank the target after every equally scored candidate whose id sorts
/// before it, so the result equals the position in a full sort by
/// `(cosine desc, id asc)`.
pub fn rank_target(
    query: &EmbeddingVector,
    target_id: &str,
    candidates: &[(&str, &EmbeddingVector)],
) -> Result<usize> {
    let mut target = None;
    for (id, v) in candidates {
        query.check_dim(v)?;
        if *id == target_id {
            if target.is_some() {
                return Err(Error::Validation(format!("target `{target_id}` appears twice in the pool")));
            }
            target = Some(*v);
        }
    }
    let target = target.ok_or_else(|| Error::MissingTarget(target_id.to_string()))?;
    let target_cos = query.cosine(target)?;
    let mut rank = 1;
    for (id, v) in candidates {
        if *id == target_id {
            continue;
        }
        let c = query.cosine(v)?;
        if c > target_cos || (c == target_cos && *id < target_id) {
            rank += 1;
        }
    }
    Ok(rank)
}

pub fn hit_at_k(rank: usize, k: usize) -> bool {
    rank <= k
}

/// The target plus `N - 1` neutrals drawn from the related entity's pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    pub related_id: String,
    pub target_id: String,
    pub candidate_ids: Vec<String>,
    pub seed: u64,
}

impl CandidatePool {
    pub fn assemble(target_id: &str, pool: &NeutralPool, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!("pool size N must be at least 2, got {n}")));
        }
        if pool.len() < n - 1 {
            return Err(Error::InsufficientPool {
                related_id: pool.related_id().to_string(),
                needed: n - 1,
                available: pool.len(),
            });
        }
        let neutrals = &pool.member_ids()[..n - 1];
        if neutrals.iter().any(|m| m == target_id) {
            return Err(Error::Validation(format!(
                "target `{target_id}` was sampled as a neutral for `{}`; it must be linked to its related entity",
                pool.related_id()
            )));
        }
        let mut candidate_ids = Vec::with_capacity(n);
        candidate_ids.push(target_id.to_string());
        candidate_ids.extend(neutrals.iter().cloned());
        Ok(CandidatePool {
            related_id: pool.related_id().to_string(),
            target_id: target_id.to_string(),
            candidate_ids,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidate_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpsResult {
    pub target_id: String,
    pub k: usize,
    pub n: usize,
    pub hits: Vec<bool>,
    pub rps: f64,
    pub n_queries: usize,
}

impl RpsResult {
    pub fn from_hits(target_id: &str, n: usize, k: usize, hits: Vec<bool>) -> Result<Self> {
        if hits.is_empty() {
            return Err(Error::Validation(format!("`{target_id}` has no queries")));
        }
        let set = hits.iter().filter(|&&h| h).count();
        Ok(RpsResult {
            target_id: target_id.to_string(),
            k,
            n,
            rps: set as f64 / hits.len() as f64,
            n_queries: hits.len(),
            hits,
        })
    }

    pub fn band(&self) -> Band {
        Band::from_score(self.rps)
    }

    pub fn record(&self) -> RpsRecord {
        RpsRecord {
            target_id: self.target_id.clone(),
            k: self.k,
            n: self.n,
            n_queries: self.n_queries,
            rps: self.rps,
            band: self.band(),
        }
    }
}

/// One line of the RPS output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpsRecord {
    pub target_id: String,
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_queries: usize,
    pub rps: f64,
    pub band: Band,
}

pub type EmbeddingTable = HashMap<String, EmbeddingVector>;

/// Embeds every entity from its grounded paragraph pooled at its mention span.
pub fn embed_corpus(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<EmbeddingTable> {
    let vectors = corpus
        .entities()
        .par_iter()
        .map(|e| embed_entity(provider, &EmbedInput::mention(e.id(), e.paragraph(), e.mention_span())))
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus
        .entities()
        .iter()
        .map(|e| e.id().to_string())
        .zip(vectors)
        .collect())
}

pub type PoolSet = HashMap<String, NeutralPool>;

/// Neutral pools of size `n - 1` for each related id, sampled from the whole corpus.
pub fn build_pools(corpus: &Corpus, related_ids: &[&str], n: usize, seed: u64) -> Result<PoolSet> {
    related_ids
        .par_iter()
        .map(|&id| {
            let related = corpus
                .get(id)
                .ok_or_else(|| Error::Validation(format!("related entity `{id}` is not in the corpus")))?;
            build_neutral_pool(related, corpus.entities(), n, seed).map(|p| (id.to_string(), p))
        })
        .collect()
}

fn lookup<'a>(table: &'a EmbeddingTable, id: &str) -> Result<&'a EmbeddingVector> {
    table.get(id).ok_or_else(|| Error::Lookup(id.to_string()))
}

/// Rank of the target under each related query, in related-set order.
pub fn query_ranks(
    target_id: &str,
    related: &[String],
    pools: &PoolSet,
    table: &EmbeddingTable,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let target_vec = lookup(table, target_id)?;
    related
        .iter()
        .map(|t| {
            let pool = pools.get(t).ok_or_else(|| Error::MissingPool(t.clone()))?;
            let cands = CandidatePool::assemble(target_id, pool, n, seed)?;
            let query = lookup(table, t)?;
            let mut entries = Vec::with_capacity(cands.len());
            entries.push((target_id, target_vec));
            for id in &cands.candidate_ids[1..] {
                entries.push((id.as_str(), lookup(table, id)?));
            }
            rank_target(query, target_id, &entries)
        })
        .collect()
}

/// RPS of one target: mean top-k hit over its related queries.
pub fn compute_rps(
    target_id: &str,
    related: &RelatedEntitySet,
    pools: &PoolSet,
    table: &EmbeddingTable,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<RpsResult> {
    let ranks = query_ranks(target_id, related.related_ids(), pools, table, n, seed)?;
    RpsResult::from_hits(target_id, n, k, ranks.iter().map(|&r| hit_at_k(r, k)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub entities: usize,
    pub fraction_above: Option<f64>,
    pub mean_rps: Option<f64>,
    /// Chance hit rate `k / N`.
    pub chance: f64,
    pub error: Option<String>,
}

/// Audits every target of a corpus against precomputed embeddings.
pub struct Auditor<'a> {
    corpus: &'a Corpus,
    table: &'a EmbeddingTable,
    seed: u64,
    query_cap: Option<usize>,
}

impl<'a> Auditor<'a> {
    pub fn new(corpus: &'a Corpus, table: &'a EmbeddingTable, seed: u64) -> Self {
        Auditor {
            corpus,
            table,
            seed,
            query_cap: None,
        }
    }

    /// Averages over a seeded subset of at most `cap` related entities per target.
    pub fn with_query_cap(mut self, cap: Option<usize>) -> Self {
        self.query_cap = cap;
        self
    }

    fn queries(&self, set: &RelatedEntitySet) -> Vec<String> {
        let all = set.related_ids();
        match self.query_cap {
            Some(cap) if all.len() > cap => {
                let mut rng = rng_for(self.seed, "query-cap", set.target_id());
                let mut picked = rand::seq::index::sample(&mut rng, all.len(), cap).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| all[i].clone()).collect()
            }
            _ => all.to_vec(),
        }
    }

    fn query_sets(&self) -> Vec<(&'a str, Vec<String>)> {
        self.corpus
            .targets()
            .iter()
            .map(|t| (t.target_id(), self.queries(t)))
            .collect()
    }

    /// Per-target ranks at pool size `n`, in corpus target order.
    pub fn ranks(&self, n: usize) -> Result<Vec<(String, Vec<usize>)>> {
        let sets = self.query_sets();
        let mut related: Vec<&str> = sets.iter().flat_map(|(_, q)| q.iter().map(String::as_str)).collect();
        related.sort_unstable();
        related.dedup();
        let pools = build_pools(self.corpus, &related, n, self.seed)?;
        sets.par_iter()
            .map(|(target, queries)| {
                query_ranks(target, queries, &pools, self.table, n, self.seed).map(|r| (target.to_string(), r))
            })
            .collect()
    }

    pub fn run(&self, n: usize, k: usize) -> Result<Vec<RpsResult>> {
        check_budget(n, k)?;
        self.ranks(n)?
            .into_iter()
            .map(|(target, ranks)| RpsResult::from_hits(&target, n, k, ranks.iter().map(|&r| hit_at_k(r, k)).collect()))
            .collect()
    }

    /// Fraction of targets with RPS > 0.5 for each pool size. Infeasible sizes
    /// yield a row with an error marker.
    pub fn sweep_n(&self, n_list: &[usize], k: usize) -> Result<Vec<SweepRow>> {
        if n_list.is_empty() {
            return Err(Error::Validation("N list is empty".into()));
        }
        Ok(n_list
            .iter()
            .map(|&n| match self.run(n, k) {
                Ok(results) => summarize(n, k, &results),
                Err(e) => error_row(n, k, e),
            })
            .collect())
    }

    /// Same statistic over retrieval budgets at a fixed pool size; ranks are
    /// computed once and re-thresholded.
    pub fn sweep_k(&self, n: usize, k_list: &[usize]) -> Result<Vec<SweepRow>> {
        if k_list.is_empty() {
            return Err(Error::Validation("k list is empty".into()));
        }
        let ranks = match self.ranks(n) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.to_string();
                return Ok(k_list.iter().map(|&k| error_row(n, k, Error::Validation(msg.clone()))).collect());
            }
        };
        k_list
            .iter()
            .map(|&k| {
                if let Err(e) = check_budget(n, k) {
                    return Ok(error_row(n, k, e));
                }
                let results = ranks
                    .iter()
                    .map(|(t, r)| RpsResult::from_hits(t, n, k, r.iter().map(|&x| hit_at_k(x, k)).collect()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(summarize(n, k, &results))
            })
            .collect()
    }
}

fn check_budget(n: usize, k: usize) -> Result<()> {
    if k == 0 || n < 2 {
        return Err(Error::Validation(format!("need k >= 1 and N >= 2, got k={k}, N={n}")));
    }
    Ok(())
}

/// Sweep row from a set of results.
pub fn summarize(n: usize, k: usize, results: &[RpsResult]) -> SweepRow {
    let count = results.len();
    let (fraction_above, mean_rps) = if count == 0 {
        (None, None)
    } else {
        let above = results.iter().filter(|r| r.rps > 0.5).count();
        let mean = results.iter().map(|r| r.rps).sum::<f64>() / count as f64;
        (Some(above as f64 / count as f64), Some(mean))
    };
    SweepRow {
        n,
        k,
        entities: count,
        fraction_above,
        mean_rps,
        chance: k as f64 / n as f64,
        error: None,
    }
}

fn error_row(n: usize, k: usize, e: Error) -> SweepRow {
    SweepRow {
        n,
        k,
        entities: 0,
        fraction_above: None,
        mean_rps: None,
        chance: k as f64 / n as f64,
        error: Some(e.to_string()),
    }
}

pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(crate::io::create(path)?);
    w.write_record(["N", "k", "entities", "fraction_above", "mean_rps", "chance", "error"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            r.entities.to_string(),
            opt(r.fraction_above),
            opt(r.mean_rps),
            r.chance.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_corpus, RawEntity};
    use crate::embedding::SyntheticProvider;
    use crate::text::NormalizeOptions;
    use proptest::prelude::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn bands_are_half_open() {
        assert_eq!(Band::from_score(0.0), Band::Low);
        assert_eq!(Band::from_score(0.3299), Band::Low);
        assert_eq!(Band::from_score(0.33), Band::Mid);
        assert_eq!(Band::from_score(0.66), Band::High);
        assert_eq!(Band::from_score(1.0), Band::High);
    }

    #[test]
    fn identical_target_ranks_first() {
        let q = v(&[1.0, 0.0, 0.0]);
        let (n1, n2) = (v(&[0.0, 1.0, 0.0]), v(&[0.0, 0.0, 1.0]));
        let pool = [("t", &q), ("a", &n1), ("b", &n2)];
        assert_eq!(rank_target(&q, "t", &pool).unwrap(), 1);
    }

    #[test]
    fn orthogonal_target_behind_matching_neutral() {
        let q = v(&[1.0, 0.0]);
        let t = v(&[0.0, 1.0]);
        let pool = [("t", &t), ("a", &q)];
        assert!(rank_target(&q, "t", &pool).unwrap() >= 2);
    }

    #[test]
    fn ties_are_pessimistic_by_id() {
        let q = v(&[1.0, 0.0]);
        let same = v(&[0.5, 0.5]);
        let pool = [("m", &same), ("a", &same), ("z", &same)];
        assert_eq!(rank_target(&q, "m", &pool).unwrap(), 2);
        assert_eq!(rank_target(&q, "a", &pool).unwrap(), 1);
        assert_eq!(rank_target(&q, "z", &pool).unwrap(), 3);
    }

    #[test]
    fn rank_errors() {
        let q = v(&[1.0, 0.0]);
        let short = v(&[1.0]);
        assert!(matches!(rank_target(&q, "t", &[("a", &q)]), Err(Error::MissingTarget(_))));
        assert!(matches!(rank_target(&q, "t", &[("t", &short)]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn hit_boundaries() {
        assert!(hit_at_k(1, 1));
        assert!(!hit_at_k(51, 50));
        for rank in 1..=10 {
            assert!(hit_at_k(rank, 10));
        }
    }

    #[test]
    fn rps_is_exact_mean() {
        let r = RpsResult::from_hits("x", 10, 2, vec![true, false, false, false, false]).unwrap();
        assert_eq!(r.rps, 0.2);
        assert_eq!(r.n_queries, 5);
        assert_eq!(r.band(), Band::Low);
        assert!(RpsResult::from_hits("x", 10, 2, vec![]).is_err());
    }

    fn tiny_corpus() -> Corpus {
        // x is related to q1, q2 (which are linked to each other); n0..n5 are unrelated.
        let mut raws = vec![RawEntity {
            id: "x".into(),
            label: "X".into(),
            paragraph: "X thing.".into(),
            neighbors: vec![],
            related: vec!["q1".into(), "q2".into()],
        }];
        for id in ["q1", "q2", "n0", "n1", "n2", "n3", "n4", "n5"] {
            let neighbors = match id {
                "q1" => vec!["q2".into()],
                "q2" => vec!["q1".into()],
                _ => vec![],
            };
            raws.push(RawEntity {
                id: id.into(),
                label: id.to_uppercase(),
                paragraph: format!("{} thing.", id.to_uppercase()),
                neighbors,
                related: vec![],
            });
        }
        validate_corpus(raws, NormalizeOptions::default()).0
    }

    #[test]
    fn target_identical_to_queries_scores_one() {
        let corpus = tiny_corpus();
        let provider = SyntheticProvider::new(8, 0).unwrap();
        let mut table = embed_corpus(&corpus, &provider).unwrap();
        let x = table["x"].clone();
        table.insert("q1".into(), x.clone());
        table.insert("q2".into(), x);
        let target = &corpus.targets()[0];
        let pools = build_pools(&corpus, &["q1", "q2"], 5, 1).unwrap();
        let r = compute_rps("x", target, &pools, &table, 5, 1, 1).unwrap();
        assert_eq!(r.rps, 1.0);
    }

    #[test]
    fn missing_pool_names_related_id() {
        let corpus = tiny_corpus();
        let provider = SyntheticProvider::new(8, 0).unwrap();
        let table = embed_corpus(&corpus, &provider).unwrap();
        let pools = build_pools(&corpus, &["q1"], 5, 1).unwrap();
        let err = compute_rps("x", &corpus.targets()[0], &pools, &table, 5, 1, 1).unwrap_err();
        assert!(matches!(err, Error::MissingPool(id) if id == "q2"));
    }

    #[test]
    fn budget_covering_pool_always_hits() {
        let corpus = tiny_corpus();
        let provider = SyntheticProvider::new(8, 0).unwrap();
        let table = embed_corpus(&corpus, &provider).unwrap();
        let results = Auditor::new(&corpus, &table, 3).run(6, 6).unwrap();
        assert!(results.iter().all(|r| r.rps == 1.0));
    }

    #[test]
    fn infeasible_sweep_row_is_marked() {
        let corpus = tiny_corpus();
        let provider = SyntheticProvider::new(8, 0).unwrap();
        let table = embed_corpus(&corpus, &provider).unwrap();
        let rows = Auditor::new(&corpus, &table, 3).sweep_n(&[4, 50], 2).unwrap();
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.as_deref().unwrap().contains("insufficient"));
    }

    #[test]
    fn query_cap_limits_queries() {
        let corpus = tiny_corpus();
        let provider = SyntheticProvider::new(8, 0).unwrap();
        let table = embed_corpus(&corpus, &provider).unwrap();
        let results = Auditor::new(&corpus, &table, 3).with_query_cap(Some(1)).run(4, 2).unwrap();
        assert_eq!(results[0].n_queries, 1);
    }

    proptest! {
        #[test]
        fn rank_is_scale_invariant(
            vecs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 3..12),
            c in prop::sample::select(vec![0.5f32, 2.0, 4.0, 0.25]),
        ) {
            let vecs: Vec<EmbeddingVector> = vecs.into_iter().filter_map(|x| EmbeddingVector::new(x).ok()).collect();
            prop_assume!(vecs.len() >= 3);
            let ids: Vec<String> = (0..vecs.len()).map(|i| format!("c{i:02}")).collect();
            let query = &vecs[0];
            let pool: Vec<(&str, &EmbeddingVector)> = ids[1..].iter().map(String::as_str).zip(&vecs[1..]).collect();
            // powers of two scale every component exactly, so cosines are bit-identical
            let scaled: Vec<EmbeddingVector> = vecs[1..].iter().map(|x| x.scaled(c).unwrap()).collect();
            let spool: Vec<(&str, &EmbeddingVector)> = ids[1..].iter().map(String::as_str).zip(&scaled).collect();
            for id in &ids[1..] {
                prop_assert_eq!(rank_target(query, id, &pool).unwrap(), rank_target(query, id, &spool).unwrap());
            }
        }
    }
}
