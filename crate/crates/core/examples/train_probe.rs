//! Fits ridge and MLP probes that predict RPS from target embeddings and
//! prints the sweep table.

use argus::corpus::validate_corpus;
use argus::embedding::{EmbeddingVector, FileStoreProvider};
use argus::planted::{planted_geometry, GeometryParams};
use argus::probes::{baselines, mlp_grid, ridge_grid, sweep_and_select, DataSplit, SplitFractions};
use argus::rps::{embed_corpus, Auditor};
use argus::text::NormalizeOptions;

fn main() -> argus::Result<()> {
    let g = planted_geometry(GeometryParams {
        groups: 200,
        ..GeometryParams::default()
    })?;
    let (corpus, _) = validate_corpus(g.entities, NormalizeOptions::default());
    let table = embed_corpus(&corpus, &FileStoreProvider::new(g.store))?;
    let results = Auditor::new(&corpus, &table, 0).run(300, 30)?;
    let x: Vec<EmbeddingVector> = results.iter().map(|r| table[&r.target_id].clone()).collect();
    let y: Vec<f64> = results.iter().map(|r| r.rps).collect();

    let mut grid = ridge_grid();
    grid.extend(mlp_grid(0).into_iter().take(4));
    grid.extend(baselines());
    let split = DataSplit::new(x.len(), SplitFractions::default(), 0)?;
    let outcome = sweep_and_select(&grid, &x, &y, &split)?;
    for row in &outcome.rows {
        println!(
            "{} {:<18} {:<40} val rmse {:.4}",
            if row.selected { "*" } else { " " },
            row.family.as_str(),
            row.hyperparameters,
            row.validation_rmse.unwrap_or(f64::NAN)
        );
    }
    let t = &outcome.test_report;
    println!("test: rmse {:.4} pearson {:.3} accuracy {:.3} macro-F1 {:.3}", t.rmse, t.pearson_r, t.accuracy, t.macro_f1);
    Ok(())
}
