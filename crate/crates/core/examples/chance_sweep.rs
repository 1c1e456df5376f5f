//! Sweeps pool size and cutoff on random embeddings, where RPS tracks k/N.

use argus::corpus::validate_corpus;
use argus::embedding::SyntheticProvider;
use argus::planted::chance_corpus;
use argus::rps::{embed_corpus, Auditor, SweepRow};
use argus::text::NormalizeOptions;

fn show(rows: &[SweepRow]) {
    println!("{:>5} {:>4} {:>8} {:>8} {:>8}", "N", "k", "chance", "mean", ">0.5");
    for r in rows {
        println!(
            "{:>5} {:>4} {:>8.3} {:>8.3} {:>8.3}",
            r.n,
            r.k,
            r.chance,
            r.mean_rps.unwrap_or(f64::NAN),
            r.fraction_above.unwrap_or(f64::NAN)
        );
    }
}

fn main() -> argus::Result<()> {
    let (corpus, _) = validate_corpus(chance_corpus(200, 5), NormalizeOptions::default());
    let table = embed_corpus(&corpus, &SyntheticProvider::new(32, 0)?)?;
    let auditor = Auditor::new(&corpus, &table, 0);
    show(&auditor.sweep_n(&[100, 200, 400, 800], 50)?);
    println!();
    show(&auditor.sweep_k(400, &[1, 10, 50, 200])?);
    Ok(())
}
