//! Config-driven stages: audit, train-probe, diagnose, augment, evaluate and
//! report. Each stage reads its inputs and the persisted artifacts of earlier
//! stages from the output directory, so any stage can be rerun on its own.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bridge::BridgeClient;
use crate::corpus::{Corpus, Document};
use crate::embedding::{embed_entity, EmbedInput, EmbeddingProvider, ProviderSpec, VectorStore};
use crate::eval::{self, Gain, IndexedView, MetricRow, Qrels, RunResult, ViewIndex};
use crate::geometry::{association_delta, fit_lda, GoldDoc};
use crate::probes::{self, DataSplit, ProbeModel, ProbeReport, ProbeSpec, SplitFractions};
use crate::remedy::{
    expand, extract_mentions, flag_scored, load_kb, score_mentions, synthesize, AugmentedView, Bm25Index,
    BridgeGenerator, BridgeNer, DictionaryTagger, FlagRecord, FlaggedEntity, Generator, MentionOccurrence,
    NerProvider, StubGenerator,
};
use crate::rps::{self, Auditor, RpsRecord};
use crate::text::{self, NormalizeOptions, Span};
use crate::workers::with_workers;
use crate::{Error, Result};

/// File names inside the output directory.
pub mod artifacts {
    pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
    pub const VALIDATION: &str = "validation.json";
    pub const RPS: &str = "rps.jsonl";
    pub const EMBEDDINGS: &str = "entity_embeddings.arge";
    pub const SWEEP_N: &str = "sweep_n.csv";
    pub const SWEEP_K: &str = "sweep_k.csv";
    pub const LDA: &str = "lda_projection.csv";
    pub const PROBE: &str = "probe.json";
    pub const PROBE_SWEEP: &str = "probe_sweep.csv";
    pub const PROBE_REPORT: &str = "probe_report.json";
    pub const SPLIT: &str = "split.json";
    pub const MENTIONS: &str = "mention_scores.jsonl";
    pub const FLAGS: &str = "flags.jsonl";
    pub const AUGMENTED: &str = "augmented.jsonl";
    pub const AUGMENT_SUMMARY: &str = "augment_summary.json";
    pub const RUNS: &str = "runs.jsonl";
    pub const METRICS: &str = "metrics.csv";
    pub const COMPARISON: &str = "comparison.csv";
    pub const FULL_AVG: &str = "full_benchmark_avg.csv";
    pub const ASSOCIATION: &str = "association.csv";
    pub const REPORT: &str = "report.json";
}

pub const DEFAULT_PROMPT: &str = include_str!("../assets/synthesis_prompt.txt");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    #[default]
    Expansion,
    Synthesis,
    Both,
}

impl AugmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentMode::Expansion => "expansion",
            AugmentMode::Synthesis => "synthesis",
            AugmentMode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NerSpec {
    /// Gazetteer matcher over `paths.gazetteer`.
    #[default]
    Dictionary,
    Bridge { command: Vec<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    #[default]
    Stub,
    Bridge { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Explicit grid; when set the family switches below are ignored.
    pub grid: Option<Vec<ProbeSpec>>,
    pub ridge: bool,
    pub mlp: bool,
    pub baselines: bool,
    pub split: SplitFractions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            grid: None,
            ridge: true,
            mlp: false,
            baselines: true,
            split: SplitFractions::default(),
        }
    }
}

impl ProbeConfig {
    pub fn grid(&self, seed: u64) -> Vec<ProbeSpec> {
        if let Some(g) = &self.grid {
            return g.clone();
        }
        let mut g = Vec::new();
        if self.ridge {
            g.extend(probes::ridge_grid());
        }
        if self.mlp {
            g.extend(probes::mlp_grid(seed));
        }
        if self.baselines {
            g.extend(probes::baselines());
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub documents: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Synthesis prompt template; the bundled one is used when unset.
    pub prompt: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            documents: None,
            gazetteer: None,
            kb: None,
            queries: None,
            qrels: None,
            prompt: None,
            output_dir: PathBuf::from("argus-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub task: String,
    pub cutoffs: Vec<usize>,
    pub gain: Gain,
    /// Collapse views onto their original by max score; off only for ablations.
    pub aggregate_views: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            task: "default".into(),
            cutoffs: vec![5, 10, 20, 50],
            gain: Gain::Linear,
            aggregate_views: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Additional metric CSVs (other tasks) merged with this run's.
    pub metrics: Vec<PathBuf>,
    /// Tasks averaged into the full-benchmark row; empty means every task seen.
    pub tasks: Vec<String>,
    /// Top-k window deciding whether a gold document counts as retrieved.
    pub association_k: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            metrics: Vec::new(),
            tasks: Vec::new(),
            association_k: 10,
        }
    }
}

/// One JSON document configuring every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    pub tau: f64,
    pub k_aug: usize,
    /// Thread count (0 = all cores). Never part of the effective config since
    /// outputs do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Fail the audit when any corpus record is invalid.
    pub strict: bool,
    pub normalize: NormalizeOptions,
    pub query_cap: Option<usize>,
    pub sweep_n: Vec<usize>,
    pub sweep_k: Vec<usize>,
    pub provider: ProviderSpec,
    pub probe: ProbeConfig,
    pub paths: Paths,
    pub mode: AugmentMode,
    pub ner: NerSpec,
    pub generator: GeneratorSpec,
    /// Replace a failed synthesis with expansion views instead of aborting.
    pub fallback_to_expansion: bool,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 50,
            n: 800,
            tau: 0.3,
            k_aug: 2,
            workers: 0,
            strict: false,
            normalize: NormalizeOptions::default(),
            query_cap: None,
            sweep_n: Vec::new(),
            sweep_k: Vec::new(),
            provider: ProviderSpec::Synthetic { dim: 64, seed: 0 },
            probe: ProbeConfig::default(),
            paths: Paths::default(),
            mode: AugmentMode::default(),
            ner: NerSpec::default(),
            generator: GeneratorSpec::default(),
            fallback_to_expansion: false,
            eval: EvalConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

fn absolutize(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = crate::io::read_json(path)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(base).map_err(|e| Error::io(format!("resolving {}", base.display()), e))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.corpus,
            &mut p.documents,
            &mut p.gazetteer,
            &mut p.kb,
            &mut p.queries,
            &mut p.qrels,
            &mut p.prompt,
        ]
        .into_iter()
        .flatten()
        {
            absolutize(path, base);
        }
        absolutize(&mut p.output_dir, base);
        for m in &mut self.report.metrics {
            absolutize(m, base);
        }
        if let ProviderSpec::FileStore { path } = &mut self.provider {
            absolutize(path, base);
        }
    }

    /// Sets a dotted key (`paths.kb`, `eval.cutoffs`, `tau`) from a command-line
    /// value. The value is parsed as JSON and falls back to a plain string.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let workers = self.workers;
        let mut root = serde_json::to_value(&*self).map_err(|e| Error::json("serializing config", e))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if !node.is_object() {
                *node = Value::Object(Default::default());
            }
            let obj = node.as_object_mut().expect("object");
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value);
                break;
            }
            node = obj.entry(part.to_string()).or_insert(Value::Null);
        }
        let mut cfg: RunConfig =
            serde_json::from_value(root).map_err(|e| Error::Validation(format!("override `{key}={raw}`: {e}")))?;
        cfg.workers = workers;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(0.0..1.0).contains(&self.tau) {
            return fail(format!("tau must lie in [0, 1), got {}", self.tau));
        }
        if self.k == 0 || self.n < 2 || self.k > self.n {
            return fail(format!("need 1 <= k <= N and N >= 2, got k={} N={}", self.k, self.n));
        }
        if self.k_aug == 0 {
            return fail("k_aug must be at least 1".into());
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return fail("eval.cutoffs must be non-empty and positive".into());
        }
        if self.report.association_k == 0 {
            return fail("report.association_k must be positive".into());
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }

    fn write_effective(&self) -> Result<()> {
        crate::io::write_json(&self.output(artifacts::EFFECTIVE_CONFIG), self)
    }
}

fn log(stage: &str, msg: impl AsRef<str>) {
    eprintln!("[argus {stage}] {}", msg.as_ref());
}

/// Path of a configured input, checked to exist.
fn input<'a>(path: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::Validation(format!("`paths.{field}` is not set")))?;
    if !p.exists() {
        return Err(Error::Validation(format!("`paths.{field}` does not exist: {}", p.display())));
    }
    Ok(p)
}

/// Path of an upstream artifact, or a dependency error naming the stage to run.
fn upstream(cfg: &RunConfig, name: &str, stage: &str) -> Result<PathBuf> {
    let p = cfg.output(name);
    crate::io::require(&p, &format!("run `argus {stage}` first"))?;
    Ok(p)
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.paths.output_dir)
        .map_err(|e| Error::io(format!("creating {}", cfg.paths.output_dir.display()), e))?;
    cfg.write_effective()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub targets: usize,
    pub rejected: usize,
    pub mean_rps: Option<f64>,
    pub fraction_above: Option<f64>,
    pub lda: bool,
}

/// Validates the corpus, embeds every entity, computes RPS for each target and
/// writes labels, target embeddings, optional sweeps and the LDA projection.
pub fn cmd_audit(cfg: &RunConfig) -> Result<AuditSummary> {
    prepare(cfg)?;
    with_workers(cfg.workers, || {
        let corpus_path = input(&cfg.paths.corpus, "corpus")?;
        let (corpus, report) = Corpus::load(corpus_path, cfg.normalize)?;
        let report_path = cfg.output(artifacts::VALIDATION);
        crate::io::write_json(&report_path, &report)?;
        log(
            "audit",
            format!(
                "{} records, {} targets, {} invalid",
                report.total,
                report.accepted,
                report.invalid()
            ),
        );
        if cfg.strict && report.invalid() > 0 {
            return Err(Error::Validation(format!(
                "{} invalid corpus records in strict mode; see {}",
                report.invalid(),
                report_path.display()
            )));
        }
        if corpus.targets().is_empty() {
            return Err(Error::Validation(format!(
                "no auditable targets; see {}",
                report_path.display()
            )));
        }

        let provider = cfg.provider.build()?;
        let table = rps::embed_corpus(&corpus, provider.as_ref())?;
        let auditor = Auditor::new(&corpus, &table, cfg.seed).with_query_cap(cfg.query_cap);
        let results = auditor.run(cfg.n, cfg.k)?;
        let records: Vec<RpsRecord> = results.iter().map(|r| r.record()).collect();
        crate::io::write_jsonl(&cfg.output(artifacts::RPS), &records)?;

        let dim = provider.descriptor().dim;
        let target_vectors: Vec<(&str, &crate::embedding::EmbeddingVector)> = corpus
            .targets()
            .iter()
            .map(|t| (t.target_id(), &table[t.target_id()]))
            .collect();
        VectorStore::write(&cfg.output(artifacts::EMBEDDINGS), dim, target_vectors.iter().copied())?;

        if !cfg.sweep_n.is_empty() {
            rps::write_sweep_csv(&cfg.output(artifacts::SWEEP_N), &auditor.sweep_n(&cfg.sweep_n, cfg.k)?)?;
        }
        if !cfg.sweep_k.is_empty() {
            rps::write_sweep_csv(&cfg.output(artifacts::SWEEP_K), &auditor.sweep_k(cfg.n, &cfg.sweep_k)?)?;
        }

        let points: Vec<_> = target_vectors
            .iter()
            .zip(&results)
            .map(|((_, v), r)| (*v, r.band()))
            .collect();
        let lda = match fit_lda(&points) {
            Ok(proj) => {
                let ids: Vec<&str> = target_vectors.iter().map(|(id, _)| *id).collect();
                proj.write_csv(&cfg.output(artifacts::LDA), &ids)?;
                true
            }
            Err(e) => {
                log("audit", format!("skipping LDA projection: {e}"));
                false
            }
        };

        let summary = rps::summarize(cfg.n, cfg.k, &results);
        Ok(AuditSummary {
            targets: results.len(),
            rejected: report.rejected,
            mean_rps: summary.mean_rps,
            fraction_above: summary.fraction_above,
            lda,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub grid_size: usize,
    pub best_index: usize,
    pub family: probes::ProbeFamily,
    pub hyperparameters: String,
    pub validation_rmse: Option<f64>,
    pub test: ProbeReport,
}

/// Fits the probe grid on the audit labels and persists the best model.
pub fn cmd_train_probe(cfg: &RunConfig) -> Result<ProbeSummary> {
    cfg.validate()?;
    let rps_path = upstream(cfg, artifacts::RPS, "audit")?;
    let emb_path = upstream(cfg, artifacts::EMBEDDINGS, "audit")?;
    prepare(cfg)?;
    with_workers(cfg.workers, || {
        let records: Vec<RpsRecord> = crate::io::read_jsonl(&rps_path)?;
        let store = VectorStore::open(&emb_path)?;
        let x = records
            .iter()
            .map(|r| store.get(&r.target_id))
            .collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = records.iter().map(|r| r.rps).collect();
        let split = DataSplit::new(records.len(), cfg.probe.split, cfg.seed)?;
        let grid = cfg.probe.grid(cfg.seed);
        let outcome = probes::sweep_and_select(&grid, &x, &y, &split)?;

        outcome.best.save(&cfg.output(artifacts::PROBE))?;
        probes::write_sweep_csv(&cfg.output(artifacts::PROBE_SWEEP), &outcome.rows)?;
        let ids = |idx: &[usize]| idx.iter().map(|&i| records[i].target_id.clone()).collect();
        crate::io::write_json(
            &cfg.output(artifacts::SPLIT),
            &SplitRecord {
                seed: split.seed,
                train: ids(&split.train),
                validation: ids(&split.validation),
                test: ids(&split.test),
            },
        )?;
        let row = &outcome.rows[outcome.best_index];
        let summary = ProbeSummary {
            grid_size: grid.len(),
            best_index: outcome.best_index,
            family: row.family,
            hyperparameters: row.hyperparameters.clone(),
            validation_rmse: row.validation_rmse,
            test: outcome.test_report,
        };
        crate::io::write_json(&cfg.output(artifacts::PROBE_REPORT), &summary)?;
        log(
            "train-probe",
            format!(
                "selected {} [{}] of {} cells, test rmse {:.4}",
                summary.family.as_str(),
                summary.hyperparameters,
                summary.grid_size,
                summary.test.rmse
            ),
        );
        Ok(summary)
    })
}

/// One line of the mention score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionScore {
    pub doc_id: String,
    pub surface: String,
    pub span: Span,
    pub predicted_rps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseSummary {
    pub documents: usize,
    pub mentions: usize,
    pub flagged_documents: usize,
    pub flags: usize,
}

fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = crate::io::read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::Validation(format!("duplicate doc_id `{}` in {}", d.doc_id, path.display())));
        }
    }
    Ok(docs)
}

fn build_ner(cfg: &RunConfig) -> Result<Box<dyn NerProvider>> {
    Ok(match &cfg.ner {
        NerSpec::Dictionary => {
            let tagger = DictionaryTagger::from_file(input(&cfg.paths.gazetteer, "gazetteer")?)?;
            if tagger.is_empty() {
                log("diagnose", "gazetteer is empty; nothing will be flagged");
            }
            Box::new(tagger)
        }
        NerSpec::Bridge { command } => {
            let client = BridgeClient::spawn(&crate::bridge::resolve_command(command))?;
            Box::new(BridgeNer::new(Arc::new(client)))
        }
    })
}

/// Tags, embeds and scores every mention, then flags surfaces below `tau`.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnoseSummary> {
    cfg.validate()?;
    let probe_path = upstream(cfg, artifacts::PROBE, "train-probe")?;
    prepare(cfg)?;
    with_workers(cfg.workers, || {
        let probe = ProbeModel::load(&probe_path)?;
        let docs = load_documents(input(&cfg.paths.documents, "documents")?)?;
        let ner = build_ner(cfg)?;
        let provider = cfg.provider.build()?;
        let per_doc: Vec<(Vec<MentionOccurrence>, Vec<FlaggedEntity>)> = docs
            .par_iter()
            .map(|d| {
                let mentions = extract_mentions(ner.as_ref(), &d.text)?;
                let scored = score_mentions(d, &mentions, provider.as_ref(), &probe)?;
                let flags = flag_scored(&d.doc_id, &scored, cfg.tau)?;
                Ok((scored, flags))
            })
            .collect::<Result<_>>()?;

        let scores: Vec<MentionScore> = docs
            .iter()
            .zip(&per_doc)
            .flat_map(|(d, (scored, _))| {
                scored.iter().map(|m| MentionScore {
                    doc_id: d.doc_id.clone(),
                    surface: m.surface.clone(),
                    span: m.span,
                    predicted_rps: m.predicted_rps.unwrap_or(f64::NAN),
                })
            })
            .collect();
        let flags: Vec<FlagRecord> = per_doc.iter().flat_map(|(_, f)| f.iter().map(|x| x.record())).collect();
        crate::io::write_jsonl(&cfg.output(artifacts::MENTIONS), &scores)?;
        crate::io::write_jsonl(&cfg.output(artifacts::FLAGS), &flags)?;
        let summary = DiagnoseSummary {
            documents: docs.len(),
            mentions: scores.len(),
            flagged_documents: per_doc.iter().filter(|(_, f)| !f.is_empty()).count(),
            flags: flags.len(),
        };
        log(
            "diagnose",
            format!(
                "{} flags in {} of {} documents (tau {})",
                summary.flags, summary.flagged_documents, summary.documents, cfg.tau
            ),
        );
        Ok(summary)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub documents: usize,
    pub flagged_documents: usize,
    pub views: usize,
    pub expansion_views: usize,
    pub synthesis_views: usize,
    pub fallbacks: usize,
}

fn build_generator(cfg: &RunConfig) -> Result<Box<dyn Generator>> {
    Ok(match &cfg.generator {
        GeneratorSpec::Stub => Box::new(StubGenerator),
        GeneratorSpec::Bridge { command } => {
            let template = match &cfg.paths.prompt {
                Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?,
                None => DEFAULT_PROMPT.to_string(),
            };
            let client = BridgeClient::spawn(&crate::bridge::resolve_command(command))?;
            Box::new(BridgeGenerator::new(Arc::new(client), template))
        }
    })
}

/// Rebuilds flagged entities from persisted flag records.
fn flags_by_doc(records: Vec<FlagRecord>, docs: &[Document]) -> Result<HashMap<String, Vec<FlaggedEntity>>> {
    let texts: HashMap<&str, &str> = docs.iter().map(|d| (d.doc_id.as_str(), d.text.as_str())).collect();
    let mut out: HashMap<String, Vec<FlaggedEntity>> = HashMap::new();
    for r in records {
        let text = texts
            .get(r.doc_id.as_str())
            .ok_or_else(|| Error::Validation(format!("flag for unknown document `{}`", r.doc_id)))?;
        let occurrences = r
            .spans
            .iter()
            .map(|&span| {
                span.check_within(text::char_len(text))?;
                Ok(MentionOccurrence {
                    surface: text::slice_chars(text, span).to_string(),
                    span,
                    predicted_rps: None,
                })
            })
            .collect::<Result<_>>()?;
        out.entry(r.doc_id.clone()).or_default().push(FlaggedEntity {
            doc_id: r.doc_id,
            surface: r.surface,
            doc_score: r.doc_score,
            occurrences,
        });
    }
    Ok(out)
}

/// Writes every original followed by its views.
pub fn cmd_augment(cfg: &RunConfig) -> Result<AugmentSummary> {
    cfg.validate()?;
    let flags_path = upstream(cfg, artifacts::FLAGS, "diagnose")?;
    prepare(cfg)?;
    with_workers(cfg.workers, || {
        let docs = load_documents(input(&cfg.paths.documents, "documents")?)?;
        let index = Bm25Index::build(load_kb(input(&cfg.paths.kb, "kb")?)?)?;
        let flags = flags_by_doc(crate::io::read_jsonl(&flags_path)?, &docs)?;
        let generator = match cfg.mode {
            AugmentMode::Expansion => None,
            _ => Some(build_generator(cfg)?),
        };
        let no_flags = Vec::new();
        let per_doc: Vec<(Vec<AugmentedView>, bool)> = docs
            .par_iter()
            .map(|d| {
                let flagged = flags.get(&d.doc_id).unwrap_or(&no_flags);
                let mut views = vec![AugmentedView::original(d.clone())];
                let mut fell_back = false;
                if matches!(cfg.mode, AugmentMode::Expansion | AugmentMode::Both) {
                    views.extend(expand(d, flagged, &index, cfg.k_aug)?);
                }
                if let Some(g) = &generator {
                    match synthesize(d, flagged, &index, cfg.k_aug, g.as_ref()) {
                        Ok(v) => views.push(v),
                        Err(e @ Error::Generator { .. }) if cfg.fallback_to_expansion => {
                            log("augment", format!("{e}; falling back to expansion"));
                            fell_back = true;
                            if cfg.mode == AugmentMode::Synthesis {
                                views.extend(expand(d, flagged, &index, cfg.k_aug)?);
                            }
                        }
                        Err(e) => return Err(e),
                    }
                }
                Ok((views, fell_back))
            })
            .collect::<Result<_>>()?;

        let all: Vec<&AugmentedView> = per_doc.iter().flat_map(|(v, _)| v).collect();
        crate::io::write_jsonl(&cfg.output(artifacts::AUGMENTED), all.iter().copied())?;
        let count = |src| all.iter().filter(|v| v.document.source == src).count();
        let summary = AugmentSummary {
            documents: docs.len(),
            flagged_documents: docs.iter().filter(|d| flags.contains_key(&d.doc_id)).count(),
            views: all.len(),
            expansion_views: count(crate::corpus::DocSource::Expansion),
            synthesis_views: count(crate::corpus::DocSource::Synthesis),
            fallbacks: per_doc.iter().filter(|(_, f)| *f).count(),
        };
        crate::io::write_json(&cfg.output(artifacts::AUGMENT_SUMMARY), &summary)?;
        log(
            "augment",
            format!("{} views for {} documents ({})", summary.views, summary.documents, cfg.mode.as_str()),
        );
        Ok(summary)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateSummary {
    pub queries: usize,
    pub excluded: usize,
    pub baseline_views: usize,
    pub augmented_views: usize,
    pub comparison: Vec<eval::DeltaRow>,
}

fn embed_views(docs: &[&Document], provider: &dyn EmbeddingProvider) -> Result<Vec<IndexedView>> {
    docs.par_iter()
        .map(|d| {
            Ok(IndexedView {
                view_id: d.doc_id.clone(),
                root_id: d.root_id().to_string(),
                vector: embed_entity(provider, &EmbedInput::whole(&d.doc_id, &d.text))?,
            })
        })
        .collect()
}

pub const BASELINE_SYSTEM: &str = "baseline";

pub fn treated_system(mode: AugmentMode) -> String {
    format!("argus-{}", mode.as_str())
}

/// Dense retrieval over the originals and over the augmented index, scored
/// against the qrels and compared.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary> {
    cfg.validate()?;
    let aug_path = upstream(cfg, artifacts::AUGMENTED, "augment")?;
    prepare(cfg)?;
    with_workers(cfg.workers, || {
        let views: Vec<AugmentedView> = crate::io::read_jsonl(&aug_path)?;
        let queries = eval::load_queries(input(&cfg.paths.queries, "queries")?)?;
        let qrels = Qrels::load(input(&cfg.paths.qrels, "qrels")?)?;
        let provider = cfg.provider.build()?;

        let all: Vec<&Document> = views.iter().map(|v| &v.document).collect();
        let originals: Vec<&Document> = all.iter().copied().filter(|d| d.is_original()).collect();
        let augmented_index = ViewIndex::new(embed_views(&all, provider.as_ref())?)?;
        let baseline_index = ViewIndex::new(
            augmented_index
                .views()
                .iter()
                .filter(|v| v.view_id == v.root_id)
                .cloned()
                .collect(),
        )?;
        let query_vecs = queries
            .par_iter()
            .map(|q| Ok((q.query_id.clone(), embed_entity(provider.as_ref(), &EmbedInput::whole(&q.query_id, &q.text))?)))
            .collect::<Result<Vec<_>>>()?;

        let depth = *cfg.eval.cutoffs.iter().max().expect("validated non-empty");
        let task = &cfg.eval.task;
        let agg = cfg.eval.aggregate_views;
        let base_run = eval::run_retrieval(task, BASELINE_SYSTEM, &query_vecs, &baseline_index, depth, agg)?;
        let treat_run = eval::run_retrieval(task, &treated_system(cfg.mode), &query_vecs, &augmented_index, depth, agg)?;
        let base = eval::score_run(&base_run, &qrels, &cfg.eval.cutoffs, cfg.eval.gain)?;
        let treat = eval::score_run(&treat_run, &qrels, &cfg.eval.cutoffs, cfg.eval.gain)?;
        let comparison = eval::compare_runs(&base, &treat, &cfg.eval.cutoffs)?;

        crate::io::write_jsonl(&cfg.output(artifacts::RUNS), [&base_run, &treat_run])?;
        let mut rows = base.rows();
        rows.extend(treat.rows());
        eval::write_metric_rows(&cfg.output(artifacts::METRICS), &rows)?;
        eval::write_csv(&cfg.output(artifacts::COMPARISON), &comparison)?;
        if !base.excluded.is_empty() {
            log("evaluate", format!("{} queries without relevant documents excluded", base.excluded.len()));
        }
        for d in comparison.iter().filter(|d| d.metric == "ndcg") {
            log(
                "evaluate",
                format!("nDCG@{}: {:.4} -> {:.4} ({:+.4})", d.cutoff, d.baseline, d.treated, d.delta),
            );
        }
        Ok(EvaluateSummary {
            queries: base.queries.len(),
            excluded: base.excluded.len(),
            baseline_views: originals.len(),
            augmented_views: all.len(),
            comparison,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRow {
    pub k: usize,
    pub delta: f64,
    pub retrieved_mean: f64,
    pub unretrieved_mean: f64,
    pub retrieved: usize,
    pub unretrieved: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub tasks: Vec<String>,
    pub full_benchmark: Vec<MetricRow>,
    pub association: Option<AssociationRow>,
}

fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(
        std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?,
    );
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Max predicted score of each gold document's mentions, split by whether the
/// baseline retrieved the document within `k`.
fn association(cfg: &RunConfig) -> Result<Option<AssociationRow>> {
    let mentions_path = cfg.output(artifacts::MENTIONS);
    let runs_path = cfg.output(artifacts::RUNS);
    if !mentions_path.exists() || !runs_path.exists() {
        return Ok(None);
    }
    let Some(qrels_path) = cfg.paths.qrels.as_deref().filter(|p| p.exists()) else {
        return Ok(None);
    };
    let qrels = Qrels::load(qrels_path)?;
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in crate::io::read_jsonl::<MentionScore>(&mentions_path)? {
        scores.entry(m.doc_id).or_default().push(m.predicted_rps);
    }
    let runs: Vec<RunResult> = crate::io::read_jsonl(&runs_path)?;
    let Some(base) = runs.iter().find(|r| r.system == BASELINE_SYSTEM) else {
        return Ok(None);
    };
    let k = cfg.report.association_k;
    let mut gold = Vec::new();
    for (qid, hits) in &base.rankings {
        let Some(judged) = qrels.judgments(qid) else { continue };
        let top: BTreeSet<&str> = hits.iter().take(k).map(|h| h.doc_id.as_str()).collect();
        for (doc, &grade) in judged {
            if grade > 0 {
                gold.push(GoldDoc {
                    doc_id: doc.clone(),
                    retrieved: top.contains(doc.as_str()),
                    entity_scores: scores.get(doc).cloned().unwrap_or_default(),
                });
            }
        }
    }
    match association_delta(&gold) {
        Ok(a) => Ok(Some(AssociationRow {
            k,
            delta: a.delta,
            retrieved_mean: a.retrieved_mean,
            unretrieved_mean: a.unretrieved_mean,
            retrieved: a.retrieved,
            unretrieved: a.unretrieved,
            skipped: a.skipped,
        })),
        Err(Error::Undefined(msg)) => {
            log("report", format!("association delta skipped: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Benchmark-average rows over tasks and the score/retrieval association.
pub fn cmd_report(cfg: &RunConfig) -> Result<ReportSummary> {
    cfg.validate()?;
    let metrics_path = upstream(cfg, artifacts::METRICS, "evaluate")?;
    prepare(cfg)?;
    let mut rows = read_metric_rows(&metrics_path)?;
    for extra in &cfg.report.metrics {
        crate::io::require(extra, "listed in report.metrics")?;
        rows.extend(read_metric_rows(extra)?);
    }
    let tasks: Vec<String> = if cfg.report.tasks.is_empty() {
        rows.iter().map(|r| r.task.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        cfg.report.tasks.clone()
    };
    let full_benchmark = eval::full_benchmark_avg(&rows, &tasks)?;
    eval::write_metric_rows(&cfg.output(artifacts::FULL_AVG), &full_benchmark)?;
    let association = association(cfg)?;
    if let Some(a) = &association {
        eval::write_csv(&cfg.output(artifacts::ASSOCIATION), std::slice::from_ref(a))?;
        log("report", format!("association delta at k={}: {:+.4}", a.k, a.delta));
    }
    let summary = ReportSummary {
        tasks,
        full_benchmark,
        association,
    };
    crate::io::write_json(&cfg.output(artifacts::REPORT), &summary)?;
    Ok(summary)
}
