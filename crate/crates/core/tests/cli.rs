use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use argus::corpus::RawEntity;
use argus::embedding::VectorStore;
use argus::pipeline::{artifacts, ProbeSummary, RunConfig, SplitRecord};
use argus::planted::{chance_corpus, BlindSpotScenario, ScenarioParams};
use argus::probes::{score_predictions, ProbeModel};
use argus::remedy::AugmentedView;
use argus::rps::RpsRecord;

fn argus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_argus")).args(args).output().unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    argus::io::write_json(&path, cfg).unwrap();
    path
}

fn small_audit_config(dir: &Path, entities: &[RawEntity]) -> PathBuf {
    let corpus = dir.join("entities.jsonl");
    argus::io::write_jsonl(&corpus, entities).unwrap();
    let mut cfg = RunConfig {
        n: 8,
        k: 4,
        ..RunConfig::default()
    };
    cfg.provider = argus::embedding::ProviderSpec::Synthetic { dim: 16, seed: 3 };
    cfg.paths.corpus = Some("entities.jsonl".into());
    cfg.paths.output_dir = "out".into();
    write_config(dir, &cfg)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn audit_is_deterministic_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_audit_config(dir.path(), &chance_corpus(10, 3));
    let cfg = config.to_str().unwrap();
    let out = argus(&["audit", "--config", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rps_path = dir.path().join("out").join(artifacts::RPS);
    let first = read(&rps_path);
    let rows: Vec<RpsRecord> = argus::io::read_jsonl(&rps_path).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.n == 8 && r.k == 4 && r.n_queries == 3));

    let out = argus(&["audit", "--config", cfg]);
    assert!(out.status.success());
    assert_eq!(read(&rps_path), first);
}

#[test]
fn strict_mode_rejects_invalid_records() {
    let clean = tempfile::tempdir().unwrap();
    let config = small_audit_config(clean.path(), &chance_corpus(10, 3));
    assert!(argus(&["audit", "--config", config.to_str().unwrap(), "--strict"]).status.success());

    let dir = tempfile::tempdir().unwrap();
    let mut entities = chance_corpus(10, 3);
    entities[0].paragraph = "   ".into();
    let config = small_audit_config(dir.path(), &entities);
    let cfg = config.to_str().unwrap();
    let lenient = argus(&["audit", "--config", cfg]);
    assert!(lenient.status.success());
    let strict = argus(&["audit", "--config", cfg, "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&strict.stderr);
    assert!(stderr.contains(artifacts::VALIDATION), "{stderr}");
}

#[test]
fn exit_codes_for_dependency_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("empty");
    let o = out_dir.to_str().unwrap();
    assert_eq!(argus(&["train-probe", "--output-dir", o]).status.code(), Some(2));
    assert_eq!(argus(&["report", "--output-dir", o]).status.code(), Some(2));
    assert_eq!(argus(&["audit", "--output-dir", o, "--tau", "1.5"]).status.code(), Some(1));
    assert_eq!(argus(&["audit", "--output-dir", o]).status.code(), Some(1));
    let bad_bridge = argus(&[
        "audit",
        "--output-dir",
        o,
        "--set",
        "paths.corpus=/dev/null",
        "--set",
        r#"provider={"kind":"bridge","command":["/nonexistent/bridge"],"dim":8,"granularity":"token"}"#,
    ]);
    assert_eq!(bad_bridge.status.code(), Some(1), "empty corpus fails validation before the bridge starts");
}

fn scenario(dir: &Path, seed: u64) -> (BlindSpotScenario, PathBuf) {
    let s = BlindSpotScenario::generate(ScenarioParams {
        seed,
        train_targets: 120,
        queries: 10,
        distractors: 20,
        ..ScenarioParams::default()
    });
    let files = s.write(&dir.join("inputs")).unwrap();
    let cfg = s.run_config(&files, &dir.join("out"));
    let path = write_config(dir, &cfg);
    (s, path)
}

fn run_all(config: &str, extra: &[&str]) {
    for stage in ["audit", "train-probe", "diagnose", "augment", "evaluate", "report"] {
        let mut args = vec![stage, "--config", config];
        args.extend_from_slice(extra);
        let out = argus(&args);
        assert!(
            out.status.success(),
            "{stage} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn synthesis_with_stub_yields_two_views_per_document() {
    let dir = tempfile::tempdir().unwrap();
    let (s, config) = scenario(dir.path(), 5);
    run_all(config.to_str().unwrap(), &["--mode", "synthesis"]);
    let views: Vec<AugmentedView> = argus::io::read_jsonl(&dir.path().join("out").join(artifacts::AUGMENTED)).unwrap();
    let mut per_root: BTreeMap<String, usize> = BTreeMap::new();
    for v in &views {
        *per_root.entry(v.document.root_id().to_string()).or_default() += 1;
    }
    assert_eq!(per_root.len(), s.documents.len());
    assert!(per_root.values().all(|&c| c == 2));
    for name in [artifacts::METRICS, artifacts::COMPARISON, artifacts::FULL_AVG, artifacts::REPORT] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn probe_report_matches_rescoring_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = scenario(dir.path(), 2);
    let c = config.to_str().unwrap();
    for stage in ["audit", "train-probe"] {
        assert!(argus(&[stage, "--config", c]).status.success());
    }
    let out = dir.path().join("out");
    let probe = ProbeModel::load(&out.join(artifacts::PROBE)).unwrap();
    let split: SplitRecord = argus::io::read_json(&out.join(artifacts::SPLIT)).unwrap();
    let summary: ProbeSummary = argus::io::read_json(&out.join(artifacts::PROBE_REPORT)).unwrap();
    let store = VectorStore::open(&out.join(artifacts::EMBEDDINGS)).unwrap();
    let labels: BTreeMap<String, f64> = argus::io::read_jsonl::<RpsRecord>(&out.join(artifacts::RPS))
        .unwrap()
        .into_iter()
        .map(|r| (r.target_id, r.rps))
        .collect();
    let y: Vec<f64> = split.test.iter().map(|id| labels[id]).collect();
    let pred: Vec<f64> = split
        .test
        .iter()
        .map(|id| probe.predict(&store.get(id).unwrap()).unwrap())
        .collect();
    let rescored = score_predictions(&y, &pred).unwrap();
    assert!((rescored.rmse - summary.test.rmse).abs() < 1e-12);
    assert_eq!(rescored.confusion, summary.test.confusion);

    let before = read(&out.join(artifacts::PROBE));
    assert!(argus(&["train-probe", "--config", c]).status.success());
    assert_eq!(read(&out.join(artifacts::PROBE)), before);
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = scenario(dir.path(), 9);
    let c = config.to_str().unwrap();
    run_all(c, &["--set", "tau=0.25"]);
    let out = dir.path().join("out");
    let names = [artifacts::RPS, artifacts::PROBE, artifacts::FLAGS, artifacts::AUGMENTED, artifacts::METRICS];
    let first: Vec<Vec<u8>> = names.iter().map(|n| read(&out.join(n))).collect();

    let effective = dir.path().join("effective.json");
    std::fs::copy(out.join(artifacts::EFFECTIVE_CONFIG), &effective).unwrap();
    let cfg = RunConfig::load(&effective).unwrap();
    assert_eq!(cfg.tau, 0.25);
    run_all(effective.to_str().unwrap(), &[]);
    let second: Vec<Vec<u8>> = names.iter().map(|n| read(&out.join(n))).collect();
    assert_eq!(first, second);
}
