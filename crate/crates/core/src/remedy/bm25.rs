use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::tokenize;
use crate::{Error, Result};

/// A reference-KB record as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub passage_id: String,
    pub text: String,
}

/// A KB passage returned for a lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbPassage {
    pub passage_id: String,
    pub text: String,
    pub bm25_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

/// Okapi BM25 over lowercased alphanumeric tokens. Immutable once built.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    entries: Vec<KbEntry>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_len: Vec<usize>,
    df: HashMap<String, usize>,
    avgdl: f64,
    params: Bm25Params,
}

pub fn load_kb(path: &Path) -> Result<Vec<KbEntry>> {
    crate::io::read_jsonl(path)
}

impl Bm25Index {
    pub fn build(entries: Vec<KbEntry>) -> Result<Self> {
        Self::with_params(entries, Bm25Params::default())
    }

    pub fn with_params(entries: Vec<KbEntry>, params: Bm25Params) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut seen = HashSet::new();
        let mut term_freqs = Vec::with_capacity(entries.len());
        let mut doc_len = Vec::with_capacity(entries.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for e in &entries {
            if e.text.trim().is_empty() {
                return Err(Error::Validation(format!("KB passage `{}` has empty text", e.passage_id)));
            }
            if !seen.insert(e.passage_id.as_str()) {
                return Err(Error::Validation(format!("duplicate KB passage id `{}`", e.passage_id)));
            }
            let tokens = tokenize(&e.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.text.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *df.entry(term.clone()).or_default() += 1;
            }
            doc_len.push(tokens.len());
            term_freqs.push(tf);
        }
        let avgdl = doc_len.iter().sum::<usize>() as f64 / entries.len() as f64;
        Ok(Bm25Index {
            entries,
            term_freqs,
            doc_len,
            df,
            avgdl,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`; always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.entries.len() as f64;
        let df = *self.df.get(term).unwrap_or(&0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of passage `doc` for `query`; repeated query terms count again.
    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let ratio = if self.avgdl > 0.0 {
            self.doc_len[doc] as f64 / self.avgdl
        } else {
            1.0
        };
        tokenize(query)
            .iter()
            .map(|t| {
                let f = *self.term_freqs[doc].get(&t.text).unwrap_or(&0) as f64;
                if f == 0.0 {
                    0.0
                } else {
                    self.idf(&t.text) * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * ratio))
                }
            })
            .sum()
    }

    /// Top `k` passages with a positive score, descending, ties by id.
    pub fn search(&self, query: &str, k: usize) -> Vec<KbPassage> {
        let mut scored: Vec<(f64, usize)> = (0..self.entries.len())
            .map(|i| (self.score(query, i), i))
            .filter(|(s, _)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].passage_id.cmp(&self.entries[b.1].passage_id))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(s, i)| KbPassage {
                passage_id: self.entries[i].passage_id.clone(),
                text: self.entries[i].text.clone(),
                bm25_score: s,
            })
            .collect()
    }
}

/// KB passages for an entity surface form (the query is the surface alone).
pub fn kb_lookup(index: &Bm25Index, surface: &str, k_aug: usize) -> Result<Vec<KbPassage>> {
    if k_aug == 0 {
        return Err(Error::Validation("k_aug must be >= 1".into()));
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    Ok(index.search(surface, k_aug))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb(texts: &[(&str, &str)]) -> Bm25Index {
        Bm25Index::build(
            texts
                .iter()
                .map(|(id, t)| KbEntry {
                    passage_id: id.to_string(),
                    text: t.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn hand(tf: f64, df: f64, n: f64, dl: f64, avgdl: f64) -> f64 {
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        idf * tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * dl / avgdl))
    }

    #[test]
    fn absent_term_gives_nothing() {
        let idx = kb(&[("a", "red apples"), ("b", "green pears")]);
        assert!(kb_lookup(&idx, "banana", 2).unwrap().is_empty());
    }

    #[test]
    fn matching_passage_comes_first() {
        let idx = kb(&[("a", "red apples"), ("b", "a gouda cheese wheel")]);
        let hits = kb_lookup(&idx, "Gouda", 2).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].passage_id, "b");
    }

    #[test]
    fn four_passage_scores_match_hand_arithmetic() {
        let idx = kb(&[
            ("p1", "river bank erosion"),
            ("p2", "the bank of the river"),
            ("p3", "central bank policy and bank rates"),
            ("p4", "mountain trail"),
        ]);
        let avgdl = (3.0 + 5.0 + 6.0 + 2.0) / 4.0;
        let want = [
            ("p3", hand(2.0, 3.0, 4.0, 6.0, avgdl)),
            ("p1", hand(1.0, 3.0, 4.0, 3.0, avgdl)),
            ("p2", hand(1.0, 3.0, 4.0, 5.0, avgdl)),
        ];
        let hits = kb_lookup(&idx, "bank", 4).unwrap();
        assert_eq!(hits.len(), 3);
        for (h, (id, s)) in hits.iter().zip(want) {
            assert_eq!(h.passage_id, id);
            assert!((h.bm25_score - s).abs() < 1e-6);
        }
    }

    #[test]
    fn ties_break_by_passage_id() {
        let idx = kb(&[("z", "alpha beta"), ("m", "alpha beta"), ("a", "alpha beta")]);
        let ids: Vec<_> = idx.search("alpha", 3).into_iter().map(|p| p.passage_id).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn ubiquitous_term_still_has_positive_idf() {
        let idx = kb(&[("a", "x y"), ("b", "x z")]);
        assert!((idx.idf("x") - (1.0 + 0.5 / 2.5f64).ln()).abs() < 1e-12);
        assert!(idx.score("x", 0) > 0.0);
    }

    #[test]
    fn rejects_empty_and_bad_input() {
        assert!(matches!(Bm25Index::build(vec![]), Err(Error::EmptyIndex)));
        let idx = kb(&[("a", "x")]);
        assert!(kb_lookup(&idx, "x", 0).is_err());
        let dup = vec![
            KbEntry {
                passage_id: "a".into(),
                text: "x".into(),
            };
            2
        ];
        assert!(Bm25Index::build(dup).is_err());
    }
}
