//! Runs every stage on a generated corpus with a known blind spot and prints
//! the before/after retrieval metrics.
//!
//! `cargo run --example end_to_end -- [output-dir]`

use std::path::PathBuf;

use argus::pipeline;
use argus::planted::{BlindSpotScenario, ScenarioParams};

fn main() -> argus::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("argus-demo"));
    let scenario = BlindSpotScenario::generate(ScenarioParams::default());
    let files = scenario.write(&root.join("inputs"))?;
    let cfg = scenario.run_config(&files, &root.join("out"));

    let audit = pipeline::cmd_audit(&cfg)?;
    println!("audit: {} targets, mean RPS {:.3}", audit.targets, audit.mean_rps.unwrap_or(f64::NAN));
    let probe = pipeline::cmd_train_probe(&cfg)?;
    println!("probe: {} {} (test pearson {:.3})", probe.family.as_str(), probe.hyperparameters, probe.test.pearson_r);
    let diag = pipeline::cmd_diagnose(&cfg)?;
    println!("diagnose: {} flags in {} of {} documents", diag.flags, diag.flagged_documents, diag.documents);
    let aug = pipeline::cmd_augment(&cfg)?;
    println!("augment: {} views", aug.views);
    let eval = pipeline::cmd_evaluate(&cfg)?;
    for d in &eval.comparison {
        println!("{}@{}: {:.4} -> {:.4} ({:+.4})", d.metric, d.cutoff, d.baseline, d.treated, d.delta);
    }
    pipeline::cmd_report(&cfg)?;
    println!("artifacts in {}", cfg.paths.output_dir.display());
    Ok(())
}
