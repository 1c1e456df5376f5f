use serde::{Deserialize, Serialize};

use super::MentionOccurrence;
use crate::corpus::Document;
use crate::embedding::{embed_entity, mention_key, EmbedInput, EmbeddingProvider};
use crate::probes::ProbeModel;
use crate::text::Span;
use crate::{Error, Result};

/// A surface whose lowest predicted score in a document falls below tau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedEntity {
    pub doc_id: String,
    pub surface: String,
    pub doc_score: f64,
    pub occurrences: Vec<MentionOccurrence>,
}

/// One line of the flag report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub doc_id: String,
    pub surface: String,
    pub doc_score: f64,
    pub spans: Vec<Span>,
}

impl FlaggedEntity {
    pub fn record(&self) -> FlagRecord {
        FlagRecord {
            doc_id: self.doc_id.clone(),
            surface: self.surface.clone(),
            doc_score: self.doc_score,
            spans: self.occurrences.iter().map(|o| o.span).collect(),
        }
    }
}

/// Embeds each mention in the context of the full document and attaches the
/// probe's prediction.
pub fn score_mentions(
    document: &Document,
    mentions: &[MentionOccurrence],
    provider: &dyn EmbeddingProvider,
    probe: &ProbeModel,
) -> Result<Vec<MentionOccurrence>> {
    let dim = provider.descriptor().dim;
    if dim != probe.dim {
        return Err(Error::DimMismatch {
            expected: probe.dim,
            got: dim,
        });
    }
    mentions
        .iter()
        .map(|m| {
            let key = mention_key(&document.doc_id, m.span);
            let v = embed_entity(provider, &EmbedInput::mention(&key, &document.text, m.span))?;
            Ok(MentionOccurrence {
                predicted_rps: Some(probe.predict(&v)?),
                ..m.clone()
            })
        })
        .collect()
}

/// Groups scored mentions by casefolded surface, keeps each group's minimum
/// and flags groups below `tau`. Output follows first appearance in the text.
pub fn flag_scored(doc_id: &str, scored: &[MentionOccurrence], tau: f64) -> Result<Vec<FlaggedEntity>> {
    let mut groups: Vec<(String, Vec<MentionOccurrence>)> = Vec::new();
    let mut order: Vec<&MentionOccurrence> = scored.iter().collect();
    order.sort_by_key(|m| (m.span.start, m.span.end));
    for m in order {
        if m.predicted_rps.is_none() {
            return Err(Error::Validation(format!(
                "mention `{}` in `{doc_id}` has no predicted score",
                m.surface
            )));
        }
        let key = m.surface.to_lowercase();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, occ)) => occ.push(m.clone()),
            None => groups.push((key, vec![m.clone()])),
        }
    }
    Ok(groups
        .into_iter()
        .filter_map(|(_, occurrences)| {
            let doc_score = occurrences
                .iter()
                .filter_map(|o| o.predicted_rps)
                .fold(f64::INFINITY, f64::min);
            (doc_score < tau).then(|| FlaggedEntity {
                doc_id: doc_id.to_string(),
                surface: occurrences[0].surface.clone(),
                doc_score,
                occurrences,
            })
        })
        .collect())
}

pub fn diagnose(
    document: &Document,
    mentions: &[MentionOccurrence],
    provider: &dyn EmbeddingProvider,
    probe: &ProbeModel,
    tau: f64,
) -> Result<Vec<FlaggedEntity>> {
    let scored = score_mentions(document, mentions, provider, probe)?;
    flag_scored(&document.doc_id, &scored, tau)
}
