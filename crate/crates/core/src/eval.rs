//! Ranked retrieval over original and augmented views, nDCG@k and run
//! comparison.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::{Error, Result};

/// Graded judgments: query id -> doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    map: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    /// TREC layout, `query_id 0 doc_id grade`, tab or space separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut q = Qrels::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::Validation(format!(
                    "qrels line {}: expected 4 columns, found {}",
                    i + 1,
                    cols.len()
                )));
            }
            let grade: u32 = cols[3].parse().map_err(|_| {
                Error::Validation(format!("qrels line {}: grade `{}` is not a non-negative integer", i + 1, cols[3]))
            })?;
            q.insert(cols[0], cols[2], grade);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.map
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.map.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.map
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    crate::io::read_jsonl(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gain {
    #[default]
    Linear,
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// nDCG@k over a ranked list of original doc ids. A doc id repeated further
/// down the list earns nothing the second time.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], qrels: &Qrels, query_id: &str, k: usize, gain: Gain) -> Result<f64> {
    if k == 0 {
        return Err(Error::Validation("cutoff k must be >= 1".into()));
    }
    let judged = qrels
        .judgments(query_id)
        .ok_or_else(|| Error::Undefined(format!("query `{query_id}` has no judgments")))?;
    let mut ideal: Vec<u32> = judged.values().copied().filter(|g| *g > 0).collect();
    if ideal.is_empty() {
        return Err(Error::Undefined(format!("query `{query_id}` has no relevant documents")));
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| gain.apply(*g) * discount(i)).sum();
    let mut seen = BTreeSet::new();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| {
            let d = d.as_ref();
            if seen.insert(d) {
                gain.apply(qrels.grade(query_id, d)) * discount(i)
            } else {
                0.0
            }
        })
        .sum();
    Ok(dcg / idcg)
}

/// Share of relevant documents found in the top `k`.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], qrels: &Qrels, query_id: &str, k: usize) -> Result<f64> {
    let judged = qrels
        .judgments(query_id)
        .ok_or_else(|| Error::Undefined(format!("query `{query_id}` has no judgments")))?;
    let relevant: BTreeSet<&str> = judged.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d.as_str()).collect();
    if relevant.is_empty() {
        return Err(Error::Undefined(format!("query `{query_id}` has no relevant documents")));
    }
    let found: BTreeSet<&str> = ranked
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|d| relevant.contains(d))
        .collect();
    Ok(found.len() as f64 / relevant.len() as f64)
}

/// One embedded index entry; `root_id` is the original it belongs to.
#[derive(Debug, Clone)]
pub struct IndexedView {
    pub view_id: String,
    pub root_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone)]
pub struct ViewIndex {
    views: Vec<IndexedView>,
    dim: usize,
}

impl ViewIndex {
    pub fn new(views: Vec<IndexedView>) -> Result<Self> {
        let dim = views.first().ok_or(Error::EmptyIndex)?.vector.dim();
        for v in &views {
            if v.vector.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.vector.dim(),
                });
            }
        }
        Ok(ViewIndex { views, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn views(&self) -> &[IndexedView] {
        &self.views
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Top-`k` originals by cosine. With `aggregate`, each original scores the
/// max over its views and appears once; without it every view competes on
/// its own and is reported under its parent id.
pub fn retrieve(query: &EmbeddingVector, index: &ViewIndex, k: usize, aggregate: bool) -> Result<Vec<Hit>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.dim() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            got: query.dim(),
        });
    }
    let scored: Vec<(f64, &IndexedView)> = index
        .views
        .iter()
        .map(|v| Ok((query.cosine(&v.vector)?, v)))
        .collect::<Result<_>>()?;
    let mut hits: Vec<(f64, &str, &str)> = if aggregate {
        let mut best: HashMap<&str, f64> = HashMap::new();
        for (s, v) in &scored {
            let e = best.entry(v.root_id.as_str()).or_insert(f64::NEG_INFINITY);
            if *s > *e {
                *e = *s;
            }
        }
        best.into_iter().map(|(d, s)| (s, d, d)).collect()
    } else {
        scored
            .iter()
            .map(|(s, v)| (*s, v.root_id.as_str(), v.view_id.as_str()))
            .collect()
    };
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(b.2)));
    Ok(hits
        .into_iter()
        .take(k)
        .map(|(score, d, _)| Hit {
            doc_id: d.to_string(),
            score,
        })
        .collect())
}

/// Rankings for one (task, system) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub system: String,
    pub rankings: BTreeMap<String, Vec<Hit>>,
}

pub fn run_retrieval(
    task: &str,
    system: &str,
    queries: &[(String, EmbeddingVector)],
    index: &ViewIndex,
    depth: usize,
    aggregate: bool,
) -> Result<RunResult> {
    let ranked: Vec<(String, Vec<Hit>)> = queries
        .par_iter()
        .map(|(qid, v)| Ok((qid.clone(), retrieve(v, index, depth, aggregate)?)))
        .collect::<Result<_>>()?;
    Ok(RunResult {
        task: task.to_string(),
        system: system.to_string(),
        rankings: ranked.into_iter().collect(),
    })
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub system: String,
    pub cutoff: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub task: String,
    pub system: String,
    /// Queries that were scored.
    pub queries: Vec<String>,
    /// Queries skipped because the metric is undefined for them.
    pub excluded: Vec<String>,
    /// `(cutoff, metric) -> query id -> value`.
    pub per_query: BTreeMap<(usize, String), BTreeMap<String, f64>>,
}

impl RunMetrics {
    pub fn mean(&self, cutoff: usize, metric: &str) -> Option<f64> {
        let m = self.per_query.get(&(cutoff, metric.to_string()))?;
        (!m.is_empty()).then(|| m.values().sum::<f64>() / m.len() as f64)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        self.per_query
            .keys()
            .filter_map(|(cutoff, metric)| {
                Some(MetricRow {
                    task: self.task.clone(),
                    system: self.system.clone(),
                    cutoff: *cutoff,
                    metric: metric.clone(),
                    value: self.mean(*cutoff, metric)?,
                })
            })
            .collect()
    }
}

/// nDCG and recall at each cutoff. Queries without relevant documents are
/// excluded and counted.
pub fn score_run(run: &RunResult, qrels: &Qrels, cutoffs: &[usize], gain: Gain) -> Result<RunMetrics> {
    let mut per_query: BTreeMap<(usize, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut queries = Vec::new();
    let mut excluded = Vec::new();
    for (qid, hits) in &run.rankings {
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        let mut row = Vec::new();
        let mut undefined = false;
        for &c in cutoffs {
            match ndcg_at_k(&ids, qrels, qid, c, gain) {
                Ok(v) => row.push(((c, "ndcg".to_string()), v)),
                Err(Error::Undefined(_)) => {
                    undefined = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            row.push(((c, "recall".to_string()), recall_at_k(&ids, qrels, qid, c)?));
        }
        if undefined {
            excluded.push(qid.clone());
            continue;
        }
        queries.push(qid.clone());
        for (key, v) in row {
            per_query.entry(key).or_default().insert(qid.clone(), v);
        }
    }
    Ok(RunMetrics {
        task: run.task.clone(),
        system: run.system.clone(),
        queries,
        excluded,
        per_query,
    })
}

pub const FULL_BENCHMARK_TASK: &str = "full-benchmark-avg";

/// Unweighted mean over `tasks` for every (system, cutoff, metric). Any
/// combination missing a task is an error naming the absent tasks.
pub fn full_benchmark_avg(rows: &[MetricRow], tasks: &[String]) -> Result<Vec<MetricRow>> {
    let mut groups: BTreeMap<(String, usize, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.system.clone(), r.cutoff, r.metric.clone()))
            .or_default()
            .insert(r.task.clone(), r.value);
    }
    let mut missing = BTreeSet::new();
    let mut out = Vec::new();
    for ((system, cutoff, metric), by_task) in groups {
        for t in tasks {
            if !by_task.contains_key(t) {
                missing.insert(t.clone());
            }
        }
        let vals: Vec<f64> = tasks.iter().filter_map(|t| by_task.get(t).copied()).collect();
        if vals.is_empty() {
            continue;
        }
        out.push(MetricRow {
            task: FULL_BENCHMARK_TASK.into(),
            system,
            cutoff,
            metric,
            value: vals.iter().sum::<f64>() / vals.len() as f64,
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingTasks(missing.into_iter().collect()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub task: String,
    pub cutoff: usize,
    pub metric: String,
    pub baseline: f64,
    pub treated: f64,
    pub delta: f64,
}

/// Mean treated minus mean baseline per cutoff and metric.
pub fn compare_runs(baseline: &RunMetrics, treated: &RunMetrics, cutoffs: &[usize]) -> Result<Vec<DeltaRow>> {
    let a: BTreeSet<&String> = baseline.queries.iter().collect();
    let b: BTreeSet<&String> = treated.queries.iter().collect();
    if a != b {
        let only_a = a.difference(&b).count();
        let only_b = b.difference(&a).count();
        return Err(Error::QueryMismatch(format!(
            "{only_a} queries only in the baseline, {only_b} only in the treated run"
        )));
    }
    let mut out = Vec::new();
    for &c in cutoffs {
        for metric in ["ndcg", "recall"] {
            let (Some(x), Some(y)) = (baseline.mean(c, metric), treated.mean(c, metric)) else {
                continue;
            };
            out.push(DeltaRow {
                task: baseline.task.clone(),
                cutoff: c,
                metric: metric.into(),
                baseline: x,
                treated: y,
                delta: y - x,
            });
        }
    }
    Ok(out)
}

pub fn write_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(crate::io::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
