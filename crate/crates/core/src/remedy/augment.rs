use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{kb_lookup, Bm25Index, FlaggedEntity, KbPassage};
use crate::bridge::{BridgeClient, EntityContext};
use crate::corpus::{DocSource, Document};
use crate::text::{self, NormalizeOptions, Span};
use crate::{Error, Result};

pub const EXPANSION_SEPARATOR: &str = "\n";

/// Where an augmented view's extra text came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Expansion { surface: String, passage_id: String },
    Synthesis { passage_ids: Vec<String> },
}

/// One line of the augmented corpus; originals carry no provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedView {
    #[serde(flatten)]
    pub document: Document,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl AugmentedView {
    pub fn original(document: Document) -> Self {
        AugmentedView {
            document,
            provenance: None,
        }
    }
}

/// One view `d + "\n" + p` per (flagged surface, retrieved passage).
pub fn expand(document: &Document, flagged: &[FlaggedEntity], index: &Bm25Index, k_aug: usize) -> Result<Vec<AugmentedView>> {
    let mut views = Vec::new();
    for f in flagged {
        for p in kb_lookup(index, &f.surface, k_aug)? {
            let id = format!("{}::exp{}", document.doc_id, views.len());
            let text = format!("{}{EXPANSION_SEPARATOR}{}", document.text, p.text);
            views.push(AugmentedView {
                document: Document::view(id, text, DocSource::Expansion, &document.doc_id)?,
                provenance: Some(Provenance::Expansion {
                    surface: f.surface.clone(),
                    passage_id: p.passage_id,
                }),
            });
        }
    }
    Ok(views)
}

pub trait Generator: Send + Sync {
    /// Rewrites `document` using the per-entity KB contexts.
    fn generate(&self, document: &str, contexts: &[EntityContext]) -> Result<String>;
}

/// Deterministic stand-in for an LLM: after the first occurrence of each
/// surface, inserts ` (` + first sentence of its top passage + `)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

/// Text up to the first sentence terminator, without the terminator.
pub fn first_sentence(text: &str) -> &str {
    let t = text.trim();
    let chars: Vec<(usize, char)> = t.char_indices().collect();
    for (i, &(b, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|(_, n)| n.is_whitespace()) {
            return t[..b].trim_end();
        }
    }
    t
}

impl Generator for StubGenerator {
    fn generate(&self, document: &str, contexts: &[EntityContext]) -> Result<String> {
        let opts = NormalizeOptions {
            strip_punctuation: false,
        };
        let mut inserts: Vec<(usize, String)> = contexts
            .iter()
            .filter_map(|c| {
                let top = c.passages.first()?;
                let at = text::find_normalized(document, &c.surface, opts)?;
                Some((at.end, format!(" ({})", first_sentence(top))))
            })
            .collect();
        inserts.sort_by(|a, b| b.0.cmp(&a.0));
        let mut out = document.to_string();
        for (end, insert) in inserts {
            let byte = text::byte_range(&out, Span::new(end, end)).start;
            out.insert_str(byte, &insert);
        }
        Ok(out)
    }
}

/// Generation served by the sidecar with a prompt template.
pub struct BridgeGenerator {
    client: Arc<BridgeClient>,
    template: String,
}

impl BridgeGenerator {
    pub fn new(client: Arc<BridgeClient>, template: impl Into<String>) -> Self {
        BridgeGenerator {
            client,
            template: template.into(),
        }
    }
}

impl Generator for BridgeGenerator {
    fn generate(&self, document: &str, contexts: &[EntityContext]) -> Result<String> {
        self.client.synthesize(document, contexts.to_vec(), &self.template)
    }
}

/// Fills `{document}` and `{entity_contexts}` in a prompt template.
pub fn render_prompt(template: &str, document: &str, contexts: &[EntityContext]) -> String {
    let ctx = contexts
        .iter()
        .map(|c| {
            let passages = c.passages.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n");
            format!("{}:\n{passages}", c.surface)
        })
        .collect::<Vec<_>>()
        .join("\n");
    template.replace("{document}", document).replace("{entity_contexts}", &ctx)
}

/// Exactly one synthesis view. With nothing flagged the view repeats the
/// original text and the generator is not called.
pub fn synthesize(
    document: &Document,
    flagged: &[FlaggedEntity],
    index: &Bm25Index,
    k_aug: usize,
    generator: &dyn Generator,
) -> Result<AugmentedView> {
    let mut contexts = Vec::new();
    let mut passage_ids = Vec::new();
    for f in flagged {
        let hits: Vec<KbPassage> = kb_lookup(index, &f.surface, k_aug)?;
        if hits.is_empty() {
            continue;
        }
        for h in &hits {
            if !passage_ids.contains(&h.passage_id) {
                passage_ids.push(h.passage_id.clone());
            }
        }
        contexts.push(EntityContext {
            surface: f.surface.clone(),
            passages: hits.into_iter().map(|h| h.text).collect(),
        });
    }
    let text = if contexts.is_empty() {
        document.text.clone()
    } else {
        generator
            .generate(&document.text, &contexts)
            .map_err(|e| Error::Generator {
                doc_id: document.doc_id.clone(),
                reason: e.to_string(),
            })?
    };
    if text.trim().is_empty() {
        return Err(Error::Generator {
            doc_id: document.doc_id.clone(),
            reason: "generator returned empty text".into(),
        });
    }
    Ok(AugmentedView {
        document: Document::view(
            format!("{}::syn", document.doc_id),
            text,
            DocSource::Synthesis,
            &document.doc_id,
        )?,
        provenance: Some(Provenance::Synthesis { passage_ids }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{BridgeOp, BridgeRequest, BridgeResponse, LoopbackTransport};
    use crate::remedy::{KbEntry, MentionOccurrence};

    fn index() -> Bm25Index {
        Bm25Index::build(vec![
            KbEntry {
                passage_id: "k1".into(),
                text: "Gouda is a Dutch cheese. It is yellow.".into(),
            },
            KbEntry {
                passage_id: "k2".into(),
                text: "Gouda is also a city in South Holland.".into(),
            },
            KbEntry {
                passage_id: "k3".into(),
                text: "Edam is a Dutch cheese too.".into(),
            },
            KbEntry {
                passage_id: "k4".into(),
                text: "Edam is a town in North Holland.".into(),
            },
        ])
        .unwrap()
    }

    fn flag(surface: &str) -> FlaggedEntity {
        FlaggedEntity {
            doc_id: "d".into(),
            surface: surface.into(),
            doc_score: 0.1,
            occurrences: vec![MentionOccurrence {
                surface: surface.into(),
                span: Span::new(0, surface.len()),
                predicted_rps: Some(0.1),
            }],
        }
    }

    #[test]
    fn expansion_views_append_passages() {
        let doc = Document::original("d", "We ate Gouda with Edam.");
        let views = expand(&doc, &[flag("Gouda"), flag("Edam")], &index(), 2).unwrap();
        assert_eq!(views.len(), 4);
        for v in &views {
            assert!(v.document.text.starts_with("We ate Gouda with Edam.\n"));
            assert_eq!(v.document.parent_id.as_deref(), Some("d"));
            assert_eq!(v.document.source, DocSource::Expansion);
        }
        assert!(expand(&doc, &[], &index(), 2).unwrap().is_empty());
        let single = expand(&doc, &[flag("City")], &index(), 2).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn stub_inserts_after_first_occurrence() {
        let doc = Document::original("d", "Gouda and more Gouda.");
        let view = synthesize(&doc, &[flag("Gouda")], &index(), 2, &StubGenerator).unwrap();
        assert_eq!(view.document.text, "Gouda (Gouda is a Dutch cheese) and more Gouda.");
        assert_eq!(
            view.provenance,
            Some(Provenance::Synthesis {
                passage_ids: vec!["k1".into(), "k2".into()]
            })
        );
    }

    #[test]
    fn nothing_flagged_still_yields_one_view() {
        let doc = Document::original("d", "Plain text.");
        let view = synthesize(&doc, &[], &index(), 2, &StubGenerator).unwrap();
        assert_eq!(view.document.text, "Plain text.");
        assert_eq!(view.document.doc_id, "d::syn");
    }

    #[test]
    fn echo_bridge_generator_returns_document() {
        let transport = LoopbackTransport::new(|line: &str| {
            let req: BridgeRequest = serde_json::from_str(line).unwrap();
            let BridgeOp::Synthesize { document, .. } = req.op else {
                panic!("unexpected op")
            };
            serde_json::to_string(&BridgeResponse::generated(req.id, document)).unwrap()
        });
        let client = Arc::new(BridgeClient::new(Box::new(transport)));
        let generator = BridgeGenerator::new(client, "{document}");
        let doc = Document::original("d", "Gouda text.");
        let view = synthesize(&doc, &[flag("Gouda")], &index(), 2, &generator).unwrap();
        assert_eq!(view.document.text, doc.text);
    }

    struct Failing;
    impl Generator for Failing {
        fn generate(&self, _: &str, _: &[EntityContext]) -> Result<String> {
            Err(Error::Transport("gone".into()))
        }
    }

    #[test]
    fn generator_failure_names_the_document() {
        let doc = Document::original("doc-7", "Gouda.");
        let err = synthesize(&doc, &[flag("Gouda")], &index(), 2, &Failing).unwrap_err();
        assert!(matches!(err, Error::Generator { ref doc_id, .. } if doc_id == "doc-7"));
    }

    #[test]
    fn sentences_and_prompts() {
        assert_eq!(first_sentence("A b. C d."), "A b");
        assert_eq!(first_sentence("No terminator"), "No terminator");
        assert_eq!(first_sentence("Version 2.5 is out! Yes."), "Version 2.5 is out");
        let ctx = [EntityContext {
            surface: "Gouda".into(),
            passages: vec!["p1".into()],
        }];
        assert_eq!(render_prompt("{document}|{entity_contexts}", "D", &ctx), "D|Gouda:\n  - p1");
    }

    #[test]
    fn views_roundtrip_as_json_lines() {
        let doc = Document::original("d", "We ate Gouda.");
        let v = &expand(&doc, &[flag("Gouda")], &index(), 1).unwrap()[0];
        let line = serde_json::to_string(v).unwrap();
        assert!(line.contains("\"parent_id\":\"d\""));
        let back: AugmentedView = serde_json::from_str(&line).unwrap();
        assert_eq!(&back, v);
        let orig = serde_json::to_string(&AugmentedView::original(doc)).unwrap();
        assert!(!orig.contains("provenance"));
    }
}
