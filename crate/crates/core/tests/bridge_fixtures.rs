//! Golden request/response fixtures for the sidecar protocol, replayed
//! through the client and checked for lossless round-trips.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use argus::bridge::{
    parse_response, BridgeClient, BridgeOp, BridgeProvider, BridgeRequest, BridgeResponse, LoopbackTransport,
};
use argus::embedding::{embed_entity, EmbedInput, Granularity};
use argus::remedy::{render_prompt, BridgeGenerator, Generator};
use argus::text::Span;
use argus::Error;
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
struct Fixture {
    name: String,
    request: Value,
    response: Value,
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bridge")
}

fn fixtures() -> Vec<Fixture> {
    let mut files: Vec<_> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    files
        .iter()
        .flat_map(|f| argus::io::read_jsonl::<Fixture>(f).unwrap())
        .collect()
}

fn without_id(v: &Value) -> Value {
    let mut v = v.clone();
    v.as_object_mut().unwrap().remove("id");
    v
}

/// Answers any request whose payload matches a fixture, echoing the caller's id.
fn replay_server(fixtures: Vec<Fixture>) -> impl FnMut(&str) -> String + Send {
    move |line| {
        let req: Value = serde_json::from_str(line).unwrap();
        let id = req["id"].clone();
        let mut resp = fixtures
            .iter()
            .find(|f| without_id(&f.request) == without_id(&req))
            .map(|f| f.response.clone())
            .unwrap_or_else(|| serde_json::json!({"status": "error", "reason": "no fixture"}));
        resp["id"] = id;
        resp.to_string()
    }
}

fn client(fixtures: Vec<Fixture>) -> BridgeClient {
    BridgeClient::new(Box::new(LoopbackTransport::new(replay_server(fixtures))))
}

#[test]
fn every_fixture_round_trips() {
    let all = fixtures();
    assert!(all.len() >= 6);
    for f in &all {
        let req: BridgeRequest = serde_json::from_value(f.request.clone()).unwrap();
        assert_eq!(serde_json::to_value(&req).unwrap(), f.request, "{}", f.name);
        let resp = parse_response(&f.response.to_string()).unwrap();
        assert_eq!(serde_json::to_value(&resp).unwrap(), f.response, "{}", f.name);
        assert_eq!(req.id, resp.id, "{}", f.name);
    }
}

#[test]
fn embed_fixtures_through_provider() {
    let provider = BridgeProvider::new(client(fixtures()), 4, Granularity::Token);
    let whole = embed_entity(&provider, &EmbedInput::whole("k", "abc")).unwrap();
    assert_eq!(whole.values(), &[0.5, 0.5, 0.5, 0.5]);
    let text = "Gouda is a cheese.";
    let span = Span::new(0, 5);
    let mention = embed_entity(&provider, &EmbedInput::mention("k", text, span)).unwrap();
    assert_eq!(mention.values(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn wrong_dim_fails_naming_dim() {
    let provider = BridgeProvider::new(client(fixtures()), 8, Granularity::Token);
    let err = embed_entity(&provider, &EmbedInput::whole("k", "abc")).unwrap_err();
    assert!(err.to_string().contains("dim"), "{err}");
}

#[test]
fn ner_and_error_fixtures() {
    let c = client(fixtures());
    let spans = c.ner("Ada Lovelace met Charles Babbage in London.").unwrap();
    assert_eq!(spans.len(), 3);
    assert_eq!((spans[2].start, spans[2].end), (36, 42));
    assert!(c.ner("nothing here").unwrap().is_empty());
    let err = c.ner("").unwrap_err();
    assert!(matches!(err, Error::Protocol(ref m) if m.contains("empty text")), "{err}");
}

#[test]
fn synthesize_echo_with_shipped_prompt() {
    let generator = BridgeGenerator::new(Arc::new(client(fixtures())), "{document}");
    let f = fixtures().into_iter().find(|f| f.name == "synthesize-echo").unwrap();
    let BridgeOp::Synthesize { document, contexts, .. } = serde_json::from_value::<BridgeRequest>(f.request).unwrap().op
    else {
        panic!("not a synthesize fixture")
    };
    assert_eq!(generator.generate(&document, &contexts).unwrap(), document);

    let echo = BridgeClient::new(Box::new(LoopbackTransport::new(|line: &str| {
        let req: BridgeRequest = serde_json::from_str(line).unwrap();
        let BridgeOp::Synthesize { document, .. } = req.op else { panic!() };
        serde_json::to_string(&BridgeResponse::generated(req.id, document)).unwrap()
    })));
    let shipped = argus::pipeline::DEFAULT_PROMPT;
    assert!(render_prompt(shipped, &document, &contexts).contains(&document));
    assert_eq!(echo.synthesize(&document, contexts, shipped).unwrap(), document);
}

#[test]
fn truncated_line_reports_parse_location() {
    let err = parse_response(r#"{"id":1,"status":"o"#).unwrap_err();
    assert!(err.to_string().contains("column"), "{err}");
}

#[cfg(unix)]
#[test]
fn stdio_framing_survives_ten_thousand_requests() {
    let script = r#"i=0; while IFS= read -r line; do i=$((i+1)); printf '{"id":%d,"status":"ok","text":"r%d"}\n' "$i" "$i"; done"#;
    let c = BridgeClient::spawn(&["sh".into(), "-c".into(), script.into()]).unwrap();
    for i in 1..=10_000u64 {
        let text = c.synthesize("d", vec![], "t").unwrap();
        assert_eq!(text, format!("r{i}"));
    }
}

#[test]
fn unreachable_bridge_is_a_transport_error() {
    let err = BridgeClient::spawn(&["/nonexistent/argus-bridge".into()]).err().unwrap();
    assert_eq!(err.exit_code(), 3);
}
