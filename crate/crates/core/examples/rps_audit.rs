//! Audits a small random-embedding corpus and prints per-target RPS.

use argus::corpus::validate_corpus;
use argus::embedding::SyntheticProvider;
use argus::planted::chance_corpus;
use argus::rps::{embed_corpus, summarize, Auditor};
use argus::text::NormalizeOptions;

fn main() -> argus::Result<()> {
    let (corpus, _) = validate_corpus(chance_corpus(40, 5), NormalizeOptions::default());
    let provider = SyntheticProvider::new(32, 1)?;
    let table = embed_corpus(&corpus, &provider)?;
    let (n, k) = (50, 10);
    let results = Auditor::new(&corpus, &table, 1).run(n, k)?;
    for r in results.iter().take(8) {
        println!("{}  hits {:?}  rps {:.2}  band {}", r.target_id, r.hits, r.rps, r.band().as_str());
    }
    let row = summarize(n, k, &results);
    println!(
        "mean RPS {:.3} vs chance k/N = {:.3}; fraction above 0.5: {:.3}",
        row.mean_rps.unwrap_or(f64::NAN),
        row.chance,
        row.fraction_above.unwrap_or(f64::NAN)
    );
    Ok(())
}
