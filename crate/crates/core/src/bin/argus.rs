use std::path::PathBuf;
use std::process::ExitCode;

use argus::pipeline::{self, RunConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "argus", version, about = "Entity retrievability audits and blind-spot remedies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus, compute RPS labels and sweeps.
    Audit,
    /// Sweep probe hyperparameters on the audit labels.
    TrainProbe,
    /// Score document mentions and flag likely blind spots.
    Diagnose,
    /// Write expansion and/or synthesis views for flagged documents.
    Augment,
    /// Compare retrieval over originals and over the augmented index.
    Evaluate,
    /// Benchmark averages and the score/retrieval association.
    Report,
}

#[derive(Args)]
struct Common {
    /// JSON run config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores); never changes outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override any config key, e.g. `--set eval.cutoffs=[5,10]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(short = 'N', long = "pool-size", global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    k_aug: Option<usize>,
    /// expansion, synthesis or both.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

fn build_config(c: &Common) -> argus::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut sets: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            sets.push((k.to_string(), v));
        }
    };
    push("seed", c.seed.map(|v| v.to_string()));
    push("k", c.k.map(|v| v.to_string()));
    push("N", c.n.map(|v| v.to_string()));
    push("tau", c.tau.map(|v| v.to_string()));
    push("k_aug", c.k_aug.map(|v| v.to_string()));
    push("mode", c.mode.clone());
    push("strict", c.strict.then(|| "true".to_string()));
    push("paths.output_dir", c.output_dir.as_ref().map(|p| p.display().to_string()));
    for s in &c.overrides {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| argus::Error::Validation(format!("`--set {s}` is not KEY=VALUE")))?;
        sets.push((k.to_string(), v.to_string()));
    }
    for (k, v) in sets {
        cfg.apply_override(&k, &v)?;
    }
    let cwd = std::env::current_dir().map_err(|e| argus::Error::Validation(format!("no working directory: {e}")))?;
    cfg.resolve_paths(&cwd);
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn print<T: Serialize>(value: argus::Result<T>) -> argus::Result<()> {
    let v = value?;
    println!("{}", serde_json::to_string(&v).unwrap_or_default());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli.common).and_then(|cfg| match cli.command {
        Command::Audit => print(pipeline::cmd_audit(&cfg)),
        Command::TrainProbe => print(pipeline::cmd_train_probe(&cfg)),
        Command::Diagnose => print(pipeline::cmd_diagnose(&cfg)),
        Command::Augment => print(pipeline::cmd_augment(&cfg)),
        Command::Evaluate => print(pipeline::cmd_evaluate(&cfg)),
        Command::Report => print(pipeline::cmd_report(&cfg)),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
