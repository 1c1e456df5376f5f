//! Grounds entity labels in their paragraphs, then draws a neutral pool and
//! a candidate pool for one target.

use argus::corpus::{build_neutral_pool, ground_surface_form, validate_corpus};
use argus::planted::chance_corpus;
use argus::rps::CandidatePool;
use argus::text::{slice_chars, NormalizeOptions};

fn main() -> argus::Result<()> {
    let opts = NormalizeOptions::default();
    for (label, paragraph) in [
        ("Marie Curie", "Physicist marie  curie won two Nobel prizes."),
        ("Curie", "Curiepoint is not a word boundary match."),
    ] {
        let (text, span) = ground_surface_form(label, paragraph, opts)?;
        println!("{label:>12} -> {span:?} {:?} in {text:?}", slice_chars(&text, span));
    }

    let (corpus, report) = validate_corpus(chance_corpus(30, 2), opts);
    println!("{} entities, {} targets, {} rejected", corpus.len(), corpus.targets().len(), report.invalid());

    let target = &corpus.targets()[0];
    let related = corpus.get(&target.related_ids()[0]).expect("related entity is in the corpus");
    let pool = build_neutral_pool(related, corpus.entities(), 10, 7)?;
    println!("neutral pool for {}: {} members, disjoint: {}", related.id(), pool.len(), pool.is_disjoint_from(related, &corpus));
    let candidates = CandidatePool::assemble(target.target_id(), &pool, 10, 7)?;
    println!("candidates: {:?}", candidates.candidate_ids);
    Ok(())
}
