use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeClient;
use crate::text::{self, Span};
use crate::{Error, Result};

/// One entity mention inside a document. `predicted_rps` is filled by diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionOccurrence {
    pub surface: String,
    pub span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_rps: Option<f64>,
}

pub trait NerProvider: Send + Sync {
    /// Candidate spans in char offsets; may overlap.
    fn spans(&self, text: &str) -> Result<Vec<Span>>;
}

/// Runs the tagger and returns non-overlapping mentions in text order.
/// Overlaps resolve to the earlier start, then the longer span.
pub fn extract_mentions(ner: &dyn NerProvider, text: &str) -> Result<Vec<MentionOccurrence>> {
    if text.trim().is_empty() {
        return Err(Error::Validation("cannot extract mentions from an empty document".into()));
    }
    let len = text::char_len(text);
    let mut spans = ner.spans(text)?;
    for s in &spans {
        s.check_within(len)?;
    }
    spans.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end)));
    let mut out: Vec<MentionOccurrence> = Vec::new();
    for s in spans {
        if out.last().is_some_and(|m| m.span.intersects(&s)) {
            continue;
        }
        out.push(MentionOccurrence {
            surface: text::slice_chars(text, s).to_string(),
            span: s,
            predicted_rps: None,
        });
    }
    Ok(out)
}

/// Case-insensitive gazetteer matcher. At each word start the longest entry
/// that ends on a word boundary wins, and scanning resumes after it.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTagger {
    by_first: HashMap<char, Vec<Vec<char>>>,
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

impl DictionaryTagger {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_first: HashMap<char, Vec<Vec<char>>> = HashMap::new();
        for e in entries {
            let chars: Vec<char> = e.as_ref().trim().chars().map(fold).collect();
            if let Some(&first) = chars.first() {
                let bucket = by_first.entry(first).or_default();
                if !bucket.contains(&chars) {
                    bucket.push(chars);
                }
            }
        }
        for bucket in by_first.values_mut() {
            bucket.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        DictionaryTagger { by_first }
    }

    /// One entry per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let lines = crate::io::read_lines(path)?;
        Ok(Self::new(
            lines
                .into_iter()
                .map(|(_, l)| l)
                .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#')),
        ))
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }
}

impl NerProvider for DictionaryTagger {
    fn spans(&self, text: &str) -> Result<Vec<Span>> {
        let chars: Vec<char> = text.chars().collect();
        let folded: Vec<char> = chars.iter().copied().map(fold).collect();
        let boundary = |i: usize| i == 0 || i >= chars.len() || !chars[i - 1].is_alphanumeric() || !chars[i].is_alphanumeric();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = None;
            if boundary(i) {
                if let Some(bucket) = self.by_first.get(&folded[i]) {
                    matched = bucket.iter().find(|e| {
                        let end = i + e.len();
                        end <= chars.len() && folded[i..end] == e[..] && boundary(end)
                    });
                }
            }
            match matched {
                Some(e) => {
                    out.push(Span::new(i, i + e.len()));
                    i += e.len();
                }
                None => i += 1,
            }
        }
        Ok(out)
    }
}

/// NER served by the sidecar.
pub struct BridgeNer {
    client: Arc<BridgeClient>,
}

impl BridgeNer {
    pub fn new(client: Arc<BridgeClient>) -> Self {
        BridgeNer { client }
    }
}

impl NerProvider for BridgeNer {
    fn spans(&self, text: &str) -> Result<Vec<Span>> {
        Ok(self
            .client
            .ner(text)?
            .into_iter()
            .map(|s| Span::new(s.start, s.end))
            .collect())
    }
}
