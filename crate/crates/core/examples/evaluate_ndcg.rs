//! Dense retrieval over an index with views, scored with nDCG and recall.

use argus::embedding::{embed_entity, EmbedInput, SyntheticProvider};
use argus::eval::{ndcg_at_k, recall_at_k, retrieve, Gain, IndexedView, Qrels, ViewIndex};

fn main() -> argus::Result<()> {
    let provider = SyntheticProvider::new(16, 4)?;
    let texts = [
        ("a", "a", "harbor cranes"),
        ("b", "b", "alpine meadow"),
        ("c", "c", "desert caravan"),
        ("a#exp0", "a", "query one"),
    ];
    let views = texts
        .iter()
        .map(|(view, root, text)| {
            Ok(IndexedView {
                view_id: view.to_string(),
                root_id: root.to_string(),
                vector: embed_entity(&provider, &EmbedInput::whole(view, text))?,
            })
        })
        .collect::<argus::Result<Vec<_>>>()?;
    let index = ViewIndex::new(views)?;
    let query = embed_entity(&provider, &EmbedInput::whole("q1", "query one"))?;

    let mut qrels = Qrels::default();
    qrels.insert("q1", "a", 2);
    qrels.insert("q1", "c", 1);
    for aggregate in [false, true] {
        let hits = retrieve(&query, &index, 3, aggregate)?;
        let ranked: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        println!(
            "aggregate={aggregate}: {ranked:?} nDCG@2 {:.4} (exp gain {:.4}) recall@2 {:.2}",
            ndcg_at_k(&ranked, &qrels, "q1", 2, Gain::Linear)?,
            ndcg_at_k(&ranked, &qrels, "q1", 2, Gain::Exponential)?,
            recall_at_k(&ranked, &qrels, "q1", 2)?
        );
    }
    Ok(())
}
