//! Synthetic corpora with known answers: pure-chance embeddings, planted
//! visible/blind geometry, and a small retrieval scenario whose gold
//! documents for half the queries hide behind blind entities.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::corpus::{Document, RawEntity};
use crate::embedding::{EmbeddingVector, ProviderSpec, VectorStore};
use crate::eval::Query;
use crate::pipeline::RunConfig;
use crate::remedy::KbEntry;
use crate::seed::rng_for;
use crate::{Error, Result};

/// Pronounceable unique pseudo-words.
pub struct WordSource {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordSource {
    pub fn new(seed: u64, purpose: &str) -> Self {
        WordSource {
            rng: rng_for(seed, "words", purpose),
            used: HashSet::new(),
        }
    }

    pub fn word(&mut self) -> String {
        const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
        const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).expect("non-empty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("non-empty"));
            }
            if self.rng.random_bool(0.5) {
                w.push_str(ONSETS[..14].choose(&mut self.rng).expect("non-empty"));
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    pub fn capitalized(&mut self) -> String {
        let w = self.word();
        let mut c = w.chars();
        let first = c.next().expect("non-empty word").to_uppercase();
        first.chain(c).collect()
    }

    pub fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

/// `targets` entities, each with `queries_per_target` related entities that
/// link only to it. Every paragraph is distinct, so span-hashed synthetic
/// embeddings are independent.
pub fn chance_corpus(targets: usize, queries_per_target: usize) -> Vec<RawEntity> {
    let mut out = Vec::with_capacity(targets * (1 + queries_per_target));
    for t in 0..targets {
        let id = format!("t{t:04}");
        let related: Vec<String> = (0..queries_per_target).map(|q| format!("{id}q{q}")).collect();
        for r in &related {
            out.push(RawEntity {
                id: r.clone(),
                label: format!("Query {r}"),
                paragraph: format!("Query {r} is a related entity of {id}."),
                neighbors: vec![id.clone()],
                related: vec![],
            });
        }
        out.push(RawEntity {
            id: id.clone(),
            label: format!("Target {id}"),
            paragraph: format!("Target {id} is a chance-level entity."),
            neighbors: vec![],
            related,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometryParams {
    pub groups: usize,
    pub queries_per_target: usize,
    pub dim: usize,
    /// Cosine between a visible target and each of its queries.
    pub visible_cos: f64,
    /// Weight of the shared +/- marker axis in every target.
    pub marker: f64,
    pub seed: u64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            groups: 400,
            queries_per_target: 3,
            dim: 64,
            visible_cos: 0.95,
            marker: 0.3,
            seed: 0,
        }
    }
}

pub struct PlantedGeometry {
    pub entities: Vec<RawEntity>,
    pub store: VectorStore,
    pub visible: BTreeSet<String>,
    pub blind: BTreeSet<String>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Random unit vector orthogonal to the unit vector `t`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, t: &[f64]) -> Vec<f64> {
    let mut r = gaussian(rng, t.len());
    let d: f64 = r.iter().zip(t).map(|(a, b)| a * b).sum();
    r.iter_mut().zip(t).for_each(|(a, b)| *a -= d * b);
    normalize(&mut r);
    r
}

/// Alternating visible and blind groups. Axis 0 is the marker: visible
/// targets carry `+marker`, blind ones `-marker`. Visible queries sit at
/// exactly `visible_cos` from their target; blind queries are orthogonal to it.
pub fn planted_geometry(params: GeometryParams) -> Result<PlantedGeometry> {
    let GeometryParams {
        groups,
        queries_per_target,
        dim,
        visible_cos,
        marker,
        seed,
    } = params;
    if dim < 3 || !(0.0..1.0).contains(&marker) || !(0.0..=1.0).contains(&visible_cos) {
        return Err(Error::Validation("planted geometry needs dim >= 3, marker in [0,1), cos in [0,1]".into()));
    }
    let mut rng = rng_for(seed, "planted-geometry", "");
    let mut entities = Vec::new();
    let mut vectors: Vec<(String, EmbeddingVector)> = Vec::new();
    let mut visible = BTreeSet::new();
    let mut blind = BTreeSet::new();
    for g in 0..groups {
        let is_visible = g % 2 == 0;
        let id = format!("{}{g:04}", if is_visible { "v" } else { "b" });
        let mut base = gaussian(&mut rng, dim);
        base[0] = 0.0;
        normalize(&mut base);
        let sign = if is_visible { 1.0 } else { -1.0 };
        let mut t: Vec<f64> = base.iter().map(|x| x * (1.0 - marker * marker).sqrt()).collect();
        t[0] = sign * marker;

        let mut related = Vec::new();
        for q in 0..queries_per_target {
            let qid = format!("{id}q{q}");
            let r = orthogonal_unit(&mut rng, &t);
            let qv: Vec<f64> = if is_visible {
                let s = (1.0 - visible_cos * visible_cos).sqrt();
                t.iter().zip(&r).map(|(a, b)| visible_cos * a + s * b).collect()
            } else {
                r
            };
            entities.push(RawEntity {
                id: qid.clone(),
                label: format!("Probe {qid}"),
                paragraph: format!("Probe {qid} is a planted query."),
                neighbors: vec![id.clone()],
                related: vec![],
            });
            vectors.push((qid.clone(), EmbeddingVector::from_f64(&qv)?));
            related.push(qid);
        }
        entities.push(RawEntity {
            id: id.clone(),
            label: format!("Entity {id}"),
            paragraph: format!("Entity {id} is a planted target."),
            neighbors: vec![],
            related,
        });
        vectors.push((id.clone(), EmbeddingVector::from_f64(&t)?));
        if is_visible {
            visible.insert(id);
        } else {
            blind.insert(id);
        }
    }
    let store = VectorStore::in_memory(dim, vectors.iter().map(|(k, v)| (k.as_str(), v)))?;
    Ok(PlantedGeometry {
        entities,
        store,
        visible,
        blind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioParams {
    pub seed: u64,
    pub dim: usize,
    /// Entities used to train the probe (half visible, half blind).
    pub train_targets: usize,
    pub related_per_target: usize,
    /// Queries in the retrieval task; odd-numbered ones have blind gold docs.
    pub queries: usize,
    pub distractors: usize,
    pub topic_words: usize,
    pub filler_words: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            seed: 0,
            dim: 64,
            train_targets: 200,
            related_per_target: 3,
            queries: 20,
            distractors: 40,
            topic_words: 3,
            filler_words: 8,
        }
    }
}

pub const VISIBLE_MARK: &str = "Clearmark";
pub const BLIND_MARK: &str = "Blindmark";

/// Everything needed to run the pipeline on the planted retrieval scenario.
#[derive(Debug, Clone)]
pub struct BlindSpotScenario {
    pub params: ScenarioParams,
    pub entities: Vec<RawEntity>,
    pub documents: Vec<Document>,
    pub gazetteer: Vec<String>,
    pub kb: Vec<KbEntry>,
    pub queries: Vec<Query>,
    /// `(query_id, doc_id)` gold pairs, grade 1.
    pub qrels: Vec<(String, String)>,
    /// Surfaces of entities planted as blind in the documents.
    pub blind_surfaces: BTreeSet<String>,
}

impl BlindSpotScenario {
    /// Entity labels are `<mark> <Name>`. Visible targets share `Name` with
    /// each related entity; blind targets share nothing, so a token-averaging
    /// encoder ranks the first high and the second at chance. In the
    /// retrieval task the gold document of a blind query holds only a blind
    /// entity and filler, while the KB has a passage tying that entity's name
    /// to the query's topic words.
    pub fn generate(params: ScenarioParams) -> Self {
        let mut words = WordSource::new(params.seed, "scenario");
        let mut rng = rng_for(params.seed, "scenario", "layout");
        let filler_pool = words.words(300);
        let filler = |rng: &mut ChaCha8Rng, n: usize| -> String {
            (0..n)
                .map(|_| filler_pool.choose(rng).expect("non-empty").as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut entities = Vec::new();
        for i in 0..params.train_targets {
            let visible = i % 2 == 0;
            let name = words.capitalized();
            let label = format!("{} {name}", if visible { VISIBLE_MARK } else { BLIND_MARK });
            let id = format!("e{i:04}");
            let mut related = Vec::new();
            for r in 0..params.related_per_target {
                let rid = format!("{id}r{r}");
                let rlabel = if visible {
                    format!("{name} {}", words.capitalized())
                } else {
                    format!("{} {}", words.capitalized(), words.capitalized())
                };
                entities.push(RawEntity {
                    id: rid.clone(),
                    paragraph: format!("{rlabel} {}.", filler(&mut rng, 4)),
                    label: rlabel,
                    neighbors: vec![id.clone()],
                    related: vec![],
                });
                related.push(rid);
            }
            entities.push(RawEntity {
                id,
                paragraph: format!("{label} {}.", filler(&mut rng, 4)),
                label,
                neighbors: vec![],
                related,
            });
        }

        let mut documents = Vec::new();
        let mut gazetteer = Vec::new();
        let mut kb = Vec::new();
        let mut queries = Vec::new();
        let mut qrels = Vec::new();
        let mut blind_surfaces = BTreeSet::new();
        for q in 0..params.queries {
            let blind = q % 2 == 1;
            let topic = words.words(params.topic_words);
            let name = words.capitalized();
            let qid = format!("q{q:03}");
            let did = format!("d{q:03}");
            queries.push(Query {
                query_id: qid.clone(),
                text: topic.join(" "),
            });
            qrels.push((qid, did.clone()));
            if blind {
                let surface = format!("{BLIND_MARK} {name}");
                documents.push(Document::original(&did, format!("{surface} {}.", filler(&mut rng, params.filler_words))));
                kb.push(KbEntry {
                    passage_id: format!("kb-{name}-a").to_lowercase(),
                    text: format!("{name} {}.", topic.join(" ")),
                });
                kb.push(KbEntry {
                    passage_id: format!("kb-{name}-b").to_lowercase(),
                    text: format!("{name} {}.", filler(&mut rng, 10)),
                });
                gazetteer.push(surface.clone());
                blind_surfaces.insert(surface);
            } else {
                let surface = format!("{VISIBLE_MARK} {name}");
                documents.push(Document::original(
                    &did,
                    format!("{surface} {} {}.", topic.join(" "), filler(&mut rng, params.filler_words)),
                ));
                kb.push(KbEntry {
                    passage_id: format!("kb-{name}").to_lowercase(),
                    text: format!("{name} {}.", filler(&mut rng, 6)),
                });
                gazetteer.push(surface);
            }
        }
        for x in 0..params.distractors {
            documents.push(Document::original(
                format!("x{x:03}"),
                format!("{}.", filler(&mut rng, params.filler_words + 2)),
            ));
        }
        BlindSpotScenario {
            params,
            entities,
            documents,
            gazetteer,
            kb,
            queries,
            qrels,
            blind_surfaces,
        }
    }

    pub fn provider(&self) -> ProviderSpec {
        ProviderSpec::HashedTokens {
            dim: self.params.dim,
            seed: self.params.seed,
        }
    }

    /// Pipeline settings sized for this scenario: pools of 200 out of the
    /// generated universe, top-10, expansion with two passages per surface.
    pub fn run_config(&self, files: &ScenarioFiles, output_dir: &Path) -> RunConfig {
        let mut cfg = RunConfig {
            seed: self.params.seed,
            n: 200,
            k: 10,
            provider: self.provider(),
            ..RunConfig::default()
        };
        cfg.paths.corpus = Some(files.corpus.clone());
        cfg.paths.documents = Some(files.documents.clone());
        cfg.paths.gazetteer = Some(files.gazetteer.clone());
        cfg.paths.kb = Some(files.kb.clone());
        cfg.paths.queries = Some(files.queries.clone());
        cfg.paths.qrels = Some(files.qrels.clone());
        cfg.paths.output_dir = output_dir.to_path_buf();
        cfg.eval.task = "planted-blind-spot".into();
        cfg.eval.cutoffs = vec![5, 10];
        cfg
    }

    /// Writes every input file under `dir` and returns their paths.
    pub fn write(&self, dir: &Path) -> Result<ScenarioFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let files = ScenarioFiles::under(dir);
        crate::io::write_jsonl(&files.corpus, &self.entities)?;
        crate::io::write_jsonl(&files.documents, &self.documents)?;
        crate::io::write_jsonl(&files.kb, &self.kb)?;
        crate::io::write_jsonl(&files.queries, &self.queries)?;
        let gaz: String = self.gazetteer.iter().map(|g| format!("{g}\n")).collect();
        std::fs::write(&files.gazetteer, gaz).map_err(|e| Error::io("writing gazetteer", e))?;
        let qrels: String = self.qrels.iter().map(|(q, d)| format!("{q}\t0\t{d}\t1\n")).collect();
        std::fs::write(&files.qrels, qrels).map_err(|e| Error::io("writing qrels", e))?;
        Ok(files)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioFiles {
    pub corpus: PathBuf,
    pub documents: PathBuf,
    pub kb: PathBuf,
    pub queries: PathBuf,
    pub gazetteer: PathBuf,
    pub qrels: PathBuf,
}

impl ScenarioFiles {
    pub fn under(dir: &Path) -> Self {
        ScenarioFiles {
            corpus: dir.join("entities.jsonl"),
            documents: dir.join("documents.jsonl"),
            kb: dir.join("kb.jsonl"),
            queries: dir.join("queries.jsonl"),
            gazetteer: dir.join("gazetteer.txt"),
            qrels: dir.join("qrels.tsv"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;
    use crate::text::NormalizeOptions;

    #[test]
    fn words_are_unique_and_alphabetic() {
        let mut w = WordSource::new(1, "t");
        let ws = w.words(500);
        let set: HashSet<_> = ws.iter().collect();
        assert_eq!(set.len(), 500);
        assert!(ws.iter().all(|x| x.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn chance_corpus_validates() {
        let (corpus, report) = validate_corpus(chance_corpus(10, 5), NormalizeOptions::default());
        assert_eq!(corpus.targets().len(), 10);
        assert_eq!(corpus.len(), 60);
        assert_eq!(report.accepted, 10);
    }

    #[test]
    fn planted_cosines_are_exact() {
        let g = planted_geometry(GeometryParams {
            groups: 6,
            ..GeometryParams::default()
        })
        .unwrap();
        for id in g.visible.iter().chain(&g.blind) {
            let t = g.store.get(id).unwrap();
            for q in 0..3 {
                let c = t.cosine(&g.store.get(&format!("{id}q{q}")).unwrap()).unwrap();
                if g.visible.contains(id) {
                    assert!((c - 0.95).abs() < 1e-5);
                } else {
                    assert!(c.abs() < 1e-5);
                }
            }
            let sign = t.values()[0].signum();
            assert_eq!(sign > 0.0, g.visible.contains(id));
        }
    }

    #[test]
    fn scenario_is_deterministic_and_consistent() {
        let p = ScenarioParams {
            train_targets: 10,
            queries: 6,
            distractors: 4,
            ..ScenarioParams::default()
        };
        let a = BlindSpotScenario::generate(p);
        let b = BlindSpotScenario::generate(p);
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.blind_surfaces.len(), 3);
        for s in &a.blind_surfaces {
            assert!(a.documents.iter().any(|d| d.text.contains(s.as_str())));
        }
        let (corpus, _) = validate_corpus(a.entities.clone(), NormalizeOptions::default());
        assert_eq!(corpus.targets().len(), 10);
    }

    #[test]
    fn scenario_pipeline_recovers_blind_queries() {
        use crate::pipeline::*;
        let dir = tempfile::tempdir().unwrap();
        let s = BlindSpotScenario::generate(ScenarioParams::default());
        let files = s.write(&dir.path().join("in")).unwrap();
        let cfg = s.run_config(&files, &dir.path().join("out"));
        let audit = cmd_audit(&cfg).unwrap();
        eprintln!("{audit:?}");
        let probe = cmd_train_probe(&cfg).unwrap();
        eprintln!("{probe:?}");
        let diag = cmd_diagnose(&cfg).unwrap();
        eprintln!("{diag:?}");
        let flags: Vec<crate::remedy::FlagRecord> =
            crate::io::read_jsonl(&cfg.output(artifacts::FLAGS)).unwrap();
        let flagged: BTreeSet<String> = flags.iter().map(|f| f.surface.clone()).collect();
        assert_eq!(flagged, s.blind_surfaces);
        let aug = cmd_augment(&cfg).unwrap();
        assert_eq!(aug.views, s.documents.len() + 2 * s.blind_surfaces.len());
        let ev = cmd_evaluate(&cfg).unwrap();
        eprintln!("{ev:?}");
        let d5 = ev.comparison.iter().find(|d| d.cutoff == 5 && d.metric == "ndcg").unwrap();
        assert!(d5.delta > 0.0);
        let rep = cmd_report(&cfg).unwrap();
        eprintln!("{rep:?}");
    }
}
