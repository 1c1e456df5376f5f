//! Blind-spot diagnosis and document augmentation.
//!
//! Mentions are tagged, embedded in their document context and scored by a
//! probe; surfaces whose lowest score falls below `tau` are flagged. Flagged
//! surfaces are looked up in a reference KB with BM25 and the hits are either
//! appended as extra views (expansion) or woven into one rewritten view
//! (synthesis).

mod augment;
mod bm25;
mod diagnose;
mod ner;

pub use augment::{
    expand, first_sentence, render_prompt, synthesize, AugmentedView, BridgeGenerator, Generator, Provenance,
    StubGenerator, EXPANSION_SEPARATOR,
};
pub use bm25::{kb_lookup, load_kb, Bm25Index, Bm25Params, KbEntry, KbPassage};
pub use diagnose::{diagnose, flag_scored, score_mentions, FlagRecord, FlaggedEntity};
pub use ner::{extract_mentions, BridgeNer, DictionaryTagger, MentionOccurrence, NerProvider};
