//! Entity records, surface-form grounding, related-entity sets, KG-disjoint
//! neutral pools and indexable documents.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::seed::rng_for;
use crate::text::{self, find_normalized, normalize, NormalizeOptions, Span};
use crate::{Error, Result};

/// One line of the entity corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEntity {
    pub id: String,
    pub label: String,
    pub paragraph: String,
    #[serde(default)]
    pub neighbors: Vec<String>,
    #[serde(default)]
    pub related: Vec<String>,
}

/// Grounds `label` in `paragraph`.
///
/// Returns the paragraph (unchanged when the label occurs in it) and the span
/// of the earliest normalized occurrence. When the label does not occur, the
/// paragraph becomes `label + ". " + paragraph` and the span covers the
/// prepended label.
pub fn ground_surface_form(
    label: &str,
    paragraph: &str,
    opts: NormalizeOptions,
) -> Result<(String, Span)> {
    let label = label.trim();
    if label.is_empty() || normalize(label, opts).is_empty() {
        return Err(Error::Validation("label is empty after normalization".into()));
    }
    if paragraph.trim().is_empty() {
        return Err(Error::Validation("paragraph is empty".into()));
    }
    if let Some(span) = find_normalized(paragraph, label, opts) {
        return Ok((paragraph.to_string(), span));
    }
    let grounded = format!("{label}. {paragraph}");
    Ok((grounded, Span::new(0, text::char_len(label))))
}

/// An auditable entity with its grounded canonical paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    id: String,
    label: String,
    paragraph: String,
    mention_span: Span,
    neighbor_ids: BTreeSet<String>,
}

impl EntityRecord {
    /// Builds a record, grounding the label. Self-references in `neighbors`
    /// are dropped.
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        paragraph: &str,
        neighbors: impl IntoIterator<Item = String>,
        opts: NormalizeOptions,
    ) -> Result<Self> {
        let id = id.into();
        let label = label.into();
        if id.trim().is_empty() {
            return Err(Error::Validation("entity id is empty".into()));
        }
        let (paragraph, mention_span) = ground_surface_form(&label, paragraph, opts)?;
        let neighbor_ids = neighbors.into_iter().filter(|n| *n != id).collect();
        Ok(EntityRecord {
            id,
            label: label.trim().to_string(),
            paragraph,
            mention_span,
            neighbor_ids,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn paragraph(&self) -> &str {
        &self.paragraph
    }

    pub fn mention_span(&self) -> Span {
        self.mention_span
    }

    pub fn neighbor_ids(&self) -> &BTreeSet<String> {
        &self.neighbor_ids
    }

    pub fn mention(&self) -> &str {
        text::slice_chars(&self.paragraph, self.mention_span)
    }
}

/// Two-sided KG disjointness: neither entity lists the other as a 1-hop neighbor.
pub fn is_disjoint(a: &EntityRecord, b: &EntityRecord) -> bool {
    a.id != b.id && !a.neighbor_ids.contains(&b.id) && !b.neighbor_ids.contains(&a.id)
}

/// The proxy queries of one target entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelatedEntitySet {
    target_id: String,
    related_ids: Vec<String>,
}

impl RelatedEntitySet {
    pub fn new(target_id: impl Into<String>, related_ids: Vec<String>) -> Result<Self> {
        let target_id = target_id.into();
        if related_ids.is_empty() {
            return Err(Error::Validation(format!("`{target_id}` has no related entities")));
        }
        let mut seen = HashSet::new();
        for id in &related_ids {
            if *id == target_id {
                return Err(Error::Validation(format!("`{target_id}` lists itself as related")));
            }
            if !seen.insert(id) {
                return Err(Error::Validation(format!(
                    "`{target_id}` lists related entity `{id}` twice"
                )));
            }
        }
        Ok(RelatedEntitySet {
            target_id,
            related_ids,
        })
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn related_ids(&self) -> &[String] {
        &self.related_ids
    }
}

/// Randomly sampled entities with no 1-hop KG link to `related_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralPool {
    related_id: String,
    member_ids: Vec<String>,
}

impl NeutralPool {
    pub fn related_id(&self) -> &str {
        &self.related_id
    }

    /// Members in sampling order; any prefix is itself a uniform sample.
    pub fn member_ids(&self) -> &[String] {
        &self.member_ids
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Post-hoc disjointness check against the corpus.
    pub fn is_disjoint_from(&self, related: &EntityRecord, corpus: &Corpus) -> bool {
        self.member_ids.iter().all(|m| match corpus.get(m) {
            Some(z) => is_disjoint(related, z),
            None => false,
        })
    }
}

/// Samples `n - 1` neutrals for `related` uniformly from the eligible part of
/// `universe`, seeded by `(seed, related id)`.
///
/// The result depends only on the set of eligible ids, not on universe order.
pub fn build_neutral_pool(
    related: &EntityRecord,
    universe: &[EntityRecord],
    n: usize,
    seed: u64,
) -> Result<NeutralPool> {
    if n < 2 {
        return Err(Error::Validation(format!("pool size N must be at least 2, got {n}")));
    }
    let needed = n - 1;
    let mut eligible: Vec<&str> = universe
        .iter()
        .filter(|z| is_disjoint(related, z))
        .map(|z| z.id.as_str())
        .collect();
    if eligible.len() < needed {
        return Err(Error::InsufficientPool {
            related_id: related.id.clone(),
            needed,
            available: eligible.len(),
        });
    }
    eligible.sort_unstable();
    eligible.dedup();
    if eligible.len() < needed {
        return Err(Error::InsufficientPool {
            related_id: related.id.clone(),
            needed,
            available: eligible.len(),
        });
    }
    let mut rng = rng_for(seed, "neutral-pool", &related.id);
    let member_ids = rand::seq::index::sample(&mut rng, eligible.len(), needed)
        .into_iter()
        .map(|i| eligible[i].to_string())
        .collect();
    Ok(NeutralPool {
        related_id: related.id.clone(),
        member_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Malformed,
    DuplicateId,
    EmptyParagraph,
    UngroundableLabel,
    NoRelated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: Option<String>,
    pub line: Option<usize>,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    /// Records accepted as audit targets.
    pub accepted: usize,
    pub rejected: usize,
    pub by_reason: BTreeMap<RejectReason, usize>,
    pub rejections: Vec<Rejection>,
}

impl ValidationReport {
    /// Rejections for broken records, excluding entities that are merely
    /// not audit targets because nothing relates to them.
    pub fn invalid(&self) -> usize {
        self.rejected - self.by_reason.get(&RejectReason::NoRelated).copied().unwrap_or(0)
    }

    fn reject(&mut self, rejection: Rejection) {
        self.rejected += 1;
        *self.by_reason.entry(rejection.reason).or_default() += 1;
        self.rejections.push(rejection);
    }
}

/// The grounded entity universe plus the related sets of every audit target.
///
/// Entities rejected only for lacking related entities stay in the universe:
/// they still serve as queries and neutrals.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entities: Vec<EntityRecord>,
    index: HashMap<String, usize>,
    targets: Vec<RelatedEntitySet>,
}

impl Corpus {
    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn targets(&self) -> &[RelatedEntitySet] {
        &self.targets
    }

    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.index.get(id).map(|&i| &self.entities[i])
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Every entity serving as a query for at least one target, sorted.
    pub fn related_ids(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .targets
            .iter()
            .flat_map(|t| t.related_ids.iter().map(String::as_str))
            .collect();
        set.into_iter().collect()
    }

    /// Loads and validates a newline-delimited JSON entity file. Unparseable
    /// lines become `malformed` rejections.
    pub fn load(path: &Path, opts: NormalizeOptions) -> Result<(Corpus, ValidationReport)> {
        let mut raws = Vec::new();
        let mut malformed = Vec::new();
        for (line, content) in crate::io::read_lines(path)? {
            match serde_json::from_str::<RawEntity>(&content) {
                Ok(raw) => raws.push((Some(line), raw)),
                Err(e) => malformed.push(Rejection {
                    id: None,
                    line: Some(line),
                    reason: RejectReason::Malformed,
                    detail: e.to_string(),
                }),
            }
        }
        let (corpus, mut report) = validate_entries(raws, opts);
        report.total += malformed.len();
        for m in malformed {
            report.reject(m);
        }
        report.rejections.sort_by_key(|r| r.line);
        Ok((corpus, report))
    }
}

/// Validates and grounds raw records, discarding malformed ones with a reason.
pub fn validate_corpus(records: Vec<RawEntity>, opts: NormalizeOptions) -> (Corpus, ValidationReport) {
    validate_entries(records.into_iter().map(|r| (None, r)).collect(), opts)
}

fn validate_entries(
    records: Vec<(Option<usize>, RawEntity)>,
    opts: NormalizeOptions,
) -> (Corpus, ValidationReport) {
    let mut report = ValidationReport {
        total: records.len(),
        ..Default::default()
    };
    let mut corpus = Corpus::default();
    let mut pending_related = Vec::new();

    for (line, raw) in records {
        let reject = |reason, detail: String| Rejection {
            id: Some(raw.id.clone()),
            line,
            reason,
            detail,
        };
        if raw.id.trim().is_empty() {
            report.reject(reject(RejectReason::Malformed, "empty id".into()));
            continue;
        }
        if corpus.index.contains_key(&raw.id) {
            report.reject(reject(RejectReason::DuplicateId, format!("id `{}` seen before", raw.id)));
            continue;
        }
        if raw.paragraph.trim().is_empty() {
            report.reject(reject(RejectReason::EmptyParagraph, "paragraph is empty".into()));
            continue;
        }
        if normalize(raw.label.trim(), opts).is_empty() {
            report.reject(reject(
                RejectReason::UngroundableLabel,
                "label is empty after normalization".into(),
            ));
            continue;
        }
        // Related entities are 1-hop neighbors by construction.
        let neighbors = raw.neighbors.iter().chain(raw.related.iter()).cloned();
        match EntityRecord::new(raw.id.clone(), raw.label.clone(), &raw.paragraph, neighbors, opts) {
            Ok(record) => {
                corpus.index.insert(record.id.clone(), corpus.entities.len());
                corpus.entities.push(record);
                pending_related.push((line, raw.id, raw.related));
            }
            Err(e) => report.reject(reject(RejectReason::UngroundableLabel, e.to_string())),
        }
    }

    for (line, id, related) in pending_related {
        let mut seen = HashSet::new();
        let resolved: Vec<String> = related
            .into_iter()
            .filter(|r| *r != id && corpus.index.contains_key(r) && seen.insert(r.clone()))
            .collect();
        match RelatedEntitySet::new(id.clone(), resolved) {
            Ok(set) => corpus.targets.push(set),
            Err(_) => report.reject(Rejection {
                id: Some(id),
                line,
                reason: RejectReason::NoRelated,
                detail: "no related entity present in the corpus".into(),
            }),
        }
    }
    report.accepted = corpus.targets.len();
    (corpus, report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocSource {
    #[default]
    Original,
    Expansion,
    Synthesis,
}

/// An indexable document: an original, or a view derived from one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DocumentFields")]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub source: DocSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

#[derive(Deserialize)]
struct DocumentFields {
    doc_id: String,
    text: String,
    #[serde(default)]
    source: DocSource,
    #[serde(default)]
    parent_id: Option<String>,
}

impl TryFrom<DocumentFields> for Document {
    type Error = Error;

    fn try_from(f: DocumentFields) -> Result<Self> {
        let doc = Document {
            doc_id: f.doc_id,
            text: f.text,
            source: f.source,
            parent_id: f.parent_id,
        };
        doc.check()?;
        Ok(doc)
    }
}

impl Document {
    pub fn original(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            source: DocSource::Original,
            parent_id: None,
        }
    }

    pub fn view(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        source: DocSource,
        parent_id: impl Into<String>,
    ) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            text: text.into(),
            source,
            parent_id: Some(parent_id.into()),
        };
        doc.check()?;
        Ok(doc)
    }

    fn check(&self) -> Result<()> {
        match (self.source, &self.parent_id) {
            (DocSource::Original, None) | (DocSource::Expansion | DocSource::Synthesis, Some(_)) => Ok(()),
            (DocSource::Original, Some(_)) => Err(Error::Validation(format!(
                "original document `{}` must not carry a parent_id",
                self.doc_id
            ))),
            (_, None) => Err(Error::Validation(format!(
                "view `{}` is missing its parent_id",
                self.doc_id
            ))),
        }
    }

    pub fn is_original(&self) -> bool {
        self.source == DocSource::Original
    }

    /// The original this document belongs to (itself for originals).
    pub fn root_id(&self) -> &str {
        self.parent_id.as_deref().unwrap_or(&self.doc_id)
    }
}
