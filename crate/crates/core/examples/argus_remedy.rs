//! Tags mentions, flags the low-scoring ones and writes expansion and
//! synthesis views from a small KB.

use argus::corpus::Document;
use argus::remedy::{expand, extract_mentions, flag_scored, synthesize, Bm25Index, DictionaryTagger, KbEntry, StubGenerator};

fn main() -> argus::Result<()> {
    let kb = Bm25Index::build(vec![
        KbEntry {
            passage_id: "kb-1".into(),
            text: "Quillon is a river port known for salt trading.".into(),
        },
        KbEntry {
            passage_id: "kb-2".into(),
            text: "Quillon hosts an annual lantern festival.".into(),
        },
        KbEntry {
            passage_id: "kb-3".into(),
            text: "Marbeth is a mountain village.".into(),
        },
    ])?;
    let doc = Document::original("d1", "Traders from Quillon met in Marbeth.");
    let tagger = DictionaryTagger::new(["Quillon", "Marbeth"]);
    let mut mentions = extract_mentions(&tagger, &doc.text)?;
    // Scores would normally come from a trained probe.
    for (m, score) in mentions.iter_mut().zip([0.1, 0.8]) {
        m.predicted_rps = Some(score);
    }
    let flagged = flag_scored(&doc.doc_id, &mentions, 0.3)?;
    for f in &flagged {
        println!("flagged {} (score {:.2})", f.surface, f.doc_score);
    }

    for view in expand(&doc, &flagged, &kb, 2)? {
        println!("\n[{}]\n{}", view.document.doc_id, view.document.text);
    }
    let synthesis = synthesize(&doc, &flagged, &kb, 2, &StubGenerator)?;
    println!("\n[{}]\n{}", synthesis.document.doc_id, synthesis.document.text);
    Ok(())
}
