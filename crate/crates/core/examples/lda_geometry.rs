//! Projects target embeddings of a planted corpus onto two LDA directions
//! and reports how far apart the RPS bands sit.

use argus::corpus::validate_corpus;
use argus::embedding::FileStoreProvider;
use argus::geometry::fit_lda;
use argus::planted::{planted_geometry, GeometryParams};
use argus::rps::{embed_corpus, Auditor};
use argus::text::NormalizeOptions;

fn main() -> argus::Result<()> {
    let g = planted_geometry(GeometryParams {
        groups: 120,
        ..GeometryParams::default()
    })?;
    let (corpus, _) = validate_corpus(g.entities, NormalizeOptions::default());
    let table = embed_corpus(&corpus, &FileStoreProvider::new(g.store))?;
    let results = Auditor::new(&corpus, &table, 0).run(200, 20)?;
    let points: Vec<_> = results.iter().map(|r| (&table[&r.target_id], r.band())).collect();
    let lda = fit_lda(&points)?;
    println!("{:?}", lda.meta);
    for (band, mean) in &lda.class_means {
        println!("{:>5} mean ({:+.3}, {:+.3})", band.as_str(), mean[0], mean[1]);
    }
    let correct = points.iter().filter(|(v, b)| lda.classify(v).is_ok_and(|c| c == *b)).count();
    println!("nearest-mean accuracy in the projection: {correct}/{}", points.len());
    Ok(())
}
